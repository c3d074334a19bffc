"""Comparison execution architectures sharing the same worlds and skills.

The flat pipeline, behavior tree and full-plan-regeneration strategies talk
to the world directly with no policy layer. The agent variants go through
the runtime, except ``no_policy`` which runs with the policy disabled.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Literal

from .agent import Agent, ExecutionConfig, System, TraceEvent, TrialResult, counts_from_trace, linearize, plan
from .ecm import builtin_registry
from .runtime import DISABLED, PolicyConfig
from .worldsim import FailureModel, TaskId, WorldState, apply_skill, is_complete, new_world

Variant = Literal["full", "no_policy", "static_plan", "no_recovery"]
VARIANTS: tuple[str, ...] = ("full", "no_policy", "static_plan", "no_recovery")


@dataclass(frozen=True)
class Strategy:
    kind: Literal["flat", "bt", "replan_k", "agent"]
    k: int = 1
    variant: Variant = "full"

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValueError("k must be at least 1")
        if self.kind == "agent" and self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")

    @property
    def label(self) -> str:
        if self.kind == "flat":
            return "Flat pipeline"
        if self.kind == "bt":
            return f"Behavior tree (retry={self.k})"
        if self.kind == "replan_k":
            return f"Plan regeneration (k={self.k})"
        return "Agent (full)" if self.variant == "full" else f"Agent-{self.variant.replace('_', '-')}"


FLAT = Strategy("flat")
BT3 = Strategy("bt", 3)
REPLAN3 = Strategy("replan_k", 3)
AGENT_FULL = Strategy("agent", variant="full")


class _Recorder:
    def __init__(self) -> None:
        self.trace: list[TraceEvent] = []

    def plan(self, world: WorldState, cycle: int) -> list:
        steps = linearize(plan(world.observe()))
        self.trace.append(TraceEvent("plan", cycle, detail=" ".join(s.skill for s in steps)))
        return steps

    def attempt(self, world: WorldState, skill: str, model: FailureModel, cycle: int) -> bool:
        ok = apply_skill(world, skill, model).succeeded
        kind = "recovery" if skill.endswith(".recover") else "attempt"
        self.trace.append(TraceEvent(kind, cycle, skill, ok))
        return ok

    def result(self, world: WorldState) -> TrialResult:
        success = is_complete(world)
        self.trace.append(TraceEvent("complete", 0) if success else TraceEvent("abort", 0))
        c = counts_from_trace(self.trace)
        return TrialResult(world.task, world.seed, success, c["steps"], c["replans"],
                           c["recoveries"], c["blocked"], tuple(self.trace))


def run_flat(task: TaskId | str, world: WorldState, model: FailureModel) -> TrialResult:
    """The fresh-world plan, each step once, stopping at the first failure."""
    _check(task, world)
    rec = _Recorder()
    for step in rec.plan(world, 0):
        if not rec.attempt(world, step.skill, model, 0):
            break
    return rec.result(world)


# -- behavior tree -----------------------------------------------------------


class Status(str, Enum):
    SUCCESS = "SUCCESS"
    FAILURE = "FAILURE"
    RUNNING = "RUNNING"


class BtNode:
    def tick(self, ctx: "_BtContext") -> Status:
        raise NotImplementedError

    def reset(self) -> None:
        pass


class Leaf(BtNode):
    def __init__(self, skill: str):
        self.skill = skill

    def tick(self, ctx: "_BtContext") -> Status:
        ok = ctx.rec.attempt(ctx.world, self.skill, ctx.model, ctx.ticks)
        return Status.SUCCESS if ok else Status.FAILURE


class RetryDecorator(BtNode):
    """Re-runs its child until success or ``k`` total attempts."""

    def __init__(self, k: int, child: BtNode):
        if k < 1:
            raise ValueError("k must be at least 1")
        self.k = k
        self.child = child
        self.attempts = 0

    def tick(self, ctx: "_BtContext") -> Status:
        status = self.child.tick(ctx)
        if status is Status.FAILURE:
            self.attempts += 1
            if self.attempts < self.k:
                self.child.reset()
                return Status.RUNNING
        return status

    def reset(self) -> None:
        self.attempts = 0
        self.child.reset()


class Sequence(BtNode):
    def __init__(self, children: list[BtNode]):
        self.children = children
        self.index = 0

    def tick(self, ctx: "_BtContext") -> Status:
        while self.index < len(self.children):
            status = self.children[self.index].tick(ctx)
            if status is not Status.SUCCESS:
                return status
            self.index += 1
        return Status.SUCCESS

    def reset(self) -> None:
        self.index = 0
        for c in self.children:
            c.reset()


@dataclass
class _BtContext:
    world: WorldState
    model: FailureModel
    rec: _Recorder
    ticks: int = 0


def build_tree(task: TaskId | str, k: int) -> Sequence:
    """Static tree from the failure-free plan; every action leaf under Retry(k)."""
    fresh = new_world(task, 0)
    return Sequence([RetryDecorator(k, Leaf(s.skill)) for s in linearize(plan(fresh.observe()))])


def run_bt(task: TaskId | str, world: WorldState, model: FailureModel, k: int = 3) -> TrialResult:
    _check(task, world)
    rec = _Recorder()
    rec.trace.append(TraceEvent("plan", 0, detail="static tree"))
    tree = build_tree(world.task, k)
    ctx = _BtContext(world, model, rec)
    status = Status.RUNNING
    while status is Status.RUNNING:
        status = tree.tick(ctx)
        ctx.ticks += 1
    return rec.result(world)


def run_replan_k(task: TaskId | str, world: WorldState, model: FailureModel,
                 k: int = 3) -> TrialResult:
    """Run the whole plan; on a failure regenerate it, up to ``k`` generations."""
    if k < 1:
        raise ValueError("k must be at least 1")
    _check(task, world)
    rec = _Recorder()
    for generation in range(k):
        steps = rec.plan(world, generation)
        if not steps:
            break
        if all(rec.attempt(world, s.skill, model, generation) for s in steps):
            break
    return rec.result(world)


# -- agent variants ----------------------------------------------------------

_VARIANT_CONFIG: dict[str, tuple[ExecutionConfig, bool]] = {
    "full": (ExecutionConfig("dynamic"), True),
    "no_policy": (ExecutionConfig("dynamic"), False),
    "static_plan": (ExecutionConfig("static"), True),
    "no_recovery": (ExecutionConfig("dynamic", recovery=False), True),
}


def variant_config(variant: Variant) -> tuple[ExecutionConfig, PolicyConfig]:
    config, policy_on = _VARIANT_CONFIG[variant]
    return config, (PolicyConfig() if policy_on else DISABLED)


def make_agent(policy: PolicyConfig | None = None, tasks: tuple = ()) -> Agent:
    """A fresh system with the bundled packages Active and its one agent."""
    return Agent(System(builtin_registry(*tasks), policy))


def run_agent(task: TaskId | str, world: WorldState, model: FailureModel,
              variant: Variant = "full", agent: Agent | None = None) -> TrialResult:
    config, policy = variant_config(variant)
    if agent is None:
        agent = make_agent(policy)
    elif agent.system.runtime.policy != policy:
        raise ValueError(f"agent's policy does not match variant {variant!r}")
    return agent.run_closed_loop(task, world, model, config)


def run_strategy(strategy: Strategy, task: TaskId | str, world: WorldState,
                 model: FailureModel, agent: Agent | None = None) -> TrialResult:
    if strategy.kind == "flat":
        return run_flat(task, world, model)
    if strategy.kind == "bt":
        return run_bt(task, world, model, strategy.k)
    if strategy.kind == "replan_k":
        return run_replan_k(task, world, model, strategy.k)
    return run_agent(task, world, model, strategy.variant, agent)


def _check(task: TaskId | str, world: WorldState) -> None:
    if TaskId.parse(task) is not world.task:
        raise ValueError(f"world is a {world.task.value} world, not {TaskId.parse(task).value}")
