"""Seeded predicate worlds for the three benchmark tasks.

Physics is replaced by a Bernoulli failure model: every skill invocation
draws exactly one uniform double from the world's stream and fails iff
``u < p_fail``.

RNG stream: ``random.Random(seed)`` (MT19937, CPython's stdlib seeding of
an int), draws taken with ``Random.random()`` (53-bit doubles). This stream
is bit-exact across platforms for a given CPython major version line, which
is what the golden-value tests freeze.
"""

from __future__ import annotations

import hashlib
import json
import random
from dataclasses import dataclass, field
from enum import Enum
from types import MappingProxyType
from typing import Mapping

from .errors import UnknownSkill, UnknownTask


class TaskId(str, Enum):
    DUMPLING = "dumpling"
    CLEAN_TABLE = "clean_table"
    FETCH_OBJECT = "fetch_object"

    @classmethod
    def parse(cls, value: "TaskId | str") -> "TaskId":
        if isinstance(value, cls):
            return value
        try:
            return cls(value)
        except ValueError:
            raise UnknownTask(f"unknown task {value!r}; expected one of "
                              f"{[t.value for t in cls]}") from None


# Declaration order matters: it fixes predicate order in snapshots.
TASK_PREDICATES: dict[TaskId, tuple[str, ...]] = {
    TaskId.DUMPLING: ("dough_on_workspace", "filling_on_workspace", "wrapper_aligned",
                      "dumpling_wrapped", "dumpling_cooked"),
    TaskId.CLEAN_TABLE: ("table_wiped", "table_organized"),
    TaskId.FETCH_OBJECT: ("robot_at_target", "object_detected", "object_grasped",
                          "object_delivered"),
}

# wrapper_aligned is auxiliary: a cooked dumpling with a disturbed wrapper
# station still counts as done.
COMPLETION_PREDICATES: dict[TaskId, tuple[str, ...]] = {
    TaskId.DUMPLING: ("dough_on_workspace", "filling_on_workspace", "dumpling_wrapped",
                      "dumpling_cooked"),
    TaskId.CLEAN_TABLE: ("table_wiped", "table_organized"),
    TaskId.FETCH_OBJECT: ("robot_at_target", "object_detected", "object_grasped",
                          "object_delivered"),
}

NAMESPACES: dict[TaskId, str] = {
    TaskId.DUMPLING: "dumpling",
    TaskId.CLEAN_TABLE: "clean",
    TaskId.FETCH_OBJECT: "fetch",
}

# Skill perturbed by the experiments' failure rates, per task.
DESIGNATED_FAILABLE: dict[TaskId, str] = {
    TaskId.DUMPLING: "dumpling.wrap",
    TaskId.CLEAN_TABLE: "clean.wipe",
    TaskId.FETCH_OBJECT: "fetch.grasp",
}


@dataclass(frozen=True)
class SkillEffect:
    sets: tuple[str, ...] = ()
    clears_on_failure: tuple[str, ...] = ()


SKILL_EFFECTS: dict[TaskId, dict[str, SkillEffect]] = {
    TaskId.DUMPLING: {
        "dumpling.prepare": SkillEffect(
            ("dough_on_workspace", "filling_on_workspace", "wrapper_aligned")),
        "dumpling.wrap": SkillEffect(("dumpling_wrapped",), ("wrapper_aligned",)),
        "dumpling.boil": SkillEffect(("dumpling_cooked",)),
        "dumpling.recover": SkillEffect(("wrapper_aligned",)),
    },
    TaskId.CLEAN_TABLE: {
        "clean.wipe": SkillEffect(("table_wiped",)),
        "clean.organize": SkillEffect(("table_organized",)),
        # resets the wiping tool; touches no predicate
        "clean.recover": SkillEffect(()),
    },
    TaskId.FETCH_OBJECT: {
        "fetch.navigate": SkillEffect(("robot_at_target",)),
        "fetch.detect": SkillEffect(("object_detected",)),
        # a failed grasp loses track of the object; a held object is a located one
        "fetch.grasp": SkillEffect(("object_grasped", "object_detected"), ("object_detected",)),
        # re-detect, then fallback grasp
        "fetch.recover": SkillEffect(("object_detected", "object_grasped")),
        "fetch.deliver": SkillEffect(("object_delivered",)),
    },
}


def task_skills(task: TaskId | str) -> tuple[str, ...]:
    return tuple(SKILL_EFFECTS[TaskId.parse(task)])


class FailureModel:
    """Per-skill failure probabilities; skills not listed never fail."""

    def __init__(self, probabilities: Mapping[str, float] | None = None):
        probs = dict(probabilities or {})
        for skill, p in probs.items():
            if not 0.0 <= float(p) <= 1.0:
                raise ValueError(f"failure probability for {skill!r} outside [0, 1]: {p}")
        self._p = MappingProxyType({k: float(v) for k, v in probs.items()})

    @classmethod
    def single(cls, task: TaskId | str, p_fail: float) -> "FailureModel":
        """Perturb only the task's designated stochastic skill."""
        return cls({DESIGNATED_FAILABLE[TaskId.parse(task)]: p_fail})

    @classmethod
    def union(cls, *models: "FailureModel") -> "FailureModel":
        merged: dict[str, float] = {}
        for m in models:
            merged.update(m.probabilities)
        return cls(merged)

    @property
    def probabilities(self) -> Mapping[str, float]:
        return self._p

    def p(self, skill: str) -> float:
        return self._p.get(skill, 0.0)

    def __repr__(self) -> str:
        return f"FailureModel({dict(self._p)!r})"

    def __eq__(self, other: object) -> bool:
        return isinstance(other, FailureModel) and dict(self._p) == dict(other._p)


@dataclass(frozen=True)
class SkillOutcome:
    skill: str
    succeeded: bool
    predicates_set: tuple[str, ...] = ()
    predicates_cleared: tuple[str, ...] = ()


@dataclass(frozen=True)
class Observation:
    """Read-only predicate snapshot handed to the planner."""

    task: TaskId
    items: tuple[tuple[str, bool], ...]

    @property
    def predicates(self) -> Mapping[str, bool]:
        return MappingProxyType(dict(self.items))

    def __getitem__(self, name: str) -> bool:
        return self.predicates[name]


@dataclass(eq=False)
class WorldState:
    task: TaskId
    seed: int
    predicates: dict[str, bool]
    draws: int = 0
    _rng: random.Random = field(default_factory=random.Random, repr=False)

    def observe(self) -> Observation:
        return Observation(self.task, tuple((k, self.predicates[k])
                                            for k in TASK_PREDICATES[self.task]))

    def fingerprint(self) -> bytes:
        """Byte digest of predicates plus full generator state."""
        h = hashlib.sha256()
        h.update(json.dumps([self.task.value, self.seed, self.draws,
                             [[k, self.predicates[k]] for k in TASK_PREDICATES[self.task]]])
                 .encode())
        h.update(repr(self._rng.getstate()).encode())
        return h.digest()

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, WorldState):
            return NotImplemented
        return self.fingerprint() == other.fingerprint()

    def draw(self) -> float:
        self.draws += 1
        return self._rng.random()

    def apply_skill(self, skill: str, model: FailureModel) -> SkillOutcome:
        return apply_skill(self, skill, model)

    def is_complete(self) -> bool:
        return is_complete(self)


def new_world(task: TaskId | str, seed: int) -> WorldState:
    task = TaskId.parse(task)
    if seed < 0:
        raise ValueError("seed must be non-negative")
    preds = {name: False for name in TASK_PREDICATES[task]}
    if task is TaskId.DUMPLING:
        preds["wrapper_aligned"] = True
    return WorldState(task=task, seed=seed, predicates=preds, _rng=random.Random(seed))


def apply_skill(world: WorldState, skill: str, model: FailureModel) -> SkillOutcome:
    effects = SKILL_EFFECTS[world.task]
    if skill not in effects:
        raise UnknownSkill(f"skill {skill!r} is not defined for task {world.task.value}")
    effect = effects[skill]
    succeeded = not (world.draw() < model.p(skill))
    if succeeded:
        for name in effect.sets:
            world.predicates[name] = True
        return SkillOutcome(skill, True, predicates_set=effect.sets)
    for name in effect.clears_on_failure:
        world.predicates[name] = False
    return SkillOutcome(skill, False, predicates_cleared=effect.clears_on_failure)


def is_complete(world: WorldState | Observation) -> bool:
    preds = world.predicates
    return all(preds[name] for name in COMPLETION_PREDICATES[world.task])
