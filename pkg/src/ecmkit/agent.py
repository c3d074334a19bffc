"""The single persistent agent: routing, the rule-based planner and the closed loop."""

from __future__ import annotations

import uuid
from collections import Counter
from dataclasses import dataclass, field
from typing import Literal, Mapping, Union

from .ecm import PACKAGE_FOR_TASK, Registry, RiskLevel
from .errors import InactiveEcm, NoMatchingTask, SingleAgentViolation
from .runtime import AuditLog, Blocked, PolicyConfig, Runtime, SkillRequest
from .worldsim import (
    NAMESPACES,
    FailureModel,
    Observation,
    TaskId,
    WorldState,
    is_complete,
)

DEFAULT_REPLAN_CAP = 10

# -- task graphs ---------------------------------------------------------------


@dataclass(frozen=True)
class PlanStep:
    skill: str
    # None means "use the owning skill's declared default"
    retry_budget: int | None = None
    on_failure: str | None = None

    def __str__(self) -> str:
        extras = []
        if self.retry_budget is not None:
            extras.append(f"retry={self.retry_budget}")
        if self.on_failure:
            extras.append(f"on_failure={self.on_failure}")
        return f"{self.skill}({', '.join(extras)})" if extras else self.skill


@dataclass(frozen=True)
class Seq:
    children: tuple["Node", ...] = ()


@dataclass(frozen=True)
class Par:
    """Parallel composition; executed in declaration order here."""

    children: tuple["Node", ...] = ()


@dataclass(frozen=True)
class Cond:
    predicate: str
    then: "Node"
    otherwise: "Node" = Seq()


Node = Union[PlanStep, Seq, Par, Cond]
TaskGraph = Seq


def linearize(node: Node, predicates: Mapping[str, bool] | None = None) -> list[PlanStep]:
    """Flatten a graph into execution order, resolving conditionals."""
    if isinstance(node, PlanStep):
        return [node]
    if isinstance(node, (Seq, Par)):
        out: list[PlanStep] = []
        for child in node.children:
            out.extend(linearize(child, predicates))
        return out
    if isinstance(node, Cond):
        if predicates is None:
            raise ValueError("conditional node needs a predicate snapshot")
        return linearize(node.then if predicates[node.predicate] else node.otherwise, predicates)
    raise TypeError(f"not a task-graph node: {node!r}")


# -- planner -----------------------------------------------------------------


def route_instruction(text: str) -> str:
    """Map an instruction to a plan skill by keyword containment."""
    lowered = text.lower()
    if "dumpling" in lowered:
        return "dumpling.plan"
    if "clean" in lowered or "table" in lowered:
        return "clean.plan"
    if any(word in lowered for word in ("fetch", "bring", "retrieve")):
        return "fetch.plan"
    raise NoMatchingTask(f"no task matches instruction {text!r}")


PLAN_SKILL_TASK = {f"{ns}.plan": task for task, ns in NAMESPACES.items()}


def plan(world: WorldState | Observation) -> TaskGraph:
    """Emit only the steps that remain incomplete. Pure in the predicate snapshot."""
    w = world.predicates
    steps: list[PlanStep] = []
    if world.task is TaskId.DUMPLING:
        if not w["dough_on_workspace"] or not w["filling_on_workspace"]:
            steps.append(PlanStep("dumpling.prepare"))
        if not w["wrapper_aligned"] and not w["dumpling_wrapped"]:
            steps.append(PlanStep("dumpling.recover"))
        if not w["dumpling_wrapped"]:
            steps.append(PlanStep("dumpling.wrap", 2, "dumpling.recover"))
        if not w["dumpling_cooked"]:
            steps.append(PlanStep("dumpling.boil"))
    elif world.task is TaskId.CLEAN_TABLE:
        # retry/recovery for wipe come from the skill declaration at dispatch time
        if not w["table_wiped"]:
            steps.append(PlanStep("clean.wipe"))
        if not w["table_organized"]:
            steps.append(PlanStep("clean.organize"))
    else:
        if not w["robot_at_target"]:
            steps.append(PlanStep("fetch.navigate"))
        if not w["object_detected"]:
            steps.append(PlanStep("fetch.detect"))
        if not w["object_grasped"]:
            steps.append(PlanStep("fetch.grasp", 1, "fetch.recover"))
        if not w["object_delivered"]:
            steps.append(PlanStep("fetch.deliver"))
    return Seq(tuple(steps))


# -- execution ---------------------------------------------------------------


@dataclass(frozen=True)
class ExecutionConfig:
    mode: Literal["dynamic", "static"] = "dynamic"
    # overrides every step's retry budget when set; 0 disables retries
    retry_limit: int | None = None
    recovery: bool = True
    replan_cap: int | None = None

    def __post_init__(self) -> None:
        if self.mode not in ("dynamic", "static"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.retry_limit is not None and self.retry_limit < 0:
            raise ValueError("retry_limit must be non-negative")
        if self.replan_cap is not None and self.replan_cap < 1:
            raise ValueError("replan_cap must be at least 1")


@dataclass(frozen=True)
class TraceEvent:
    kind: str  # plan | attempt | recovery | blocked | abort | complete | cap
    cycle: int
    skill: str | None = None
    ok: bool | None = None
    detail: str = ""


@dataclass(frozen=True)
class TrialResult:
    task: TaskId
    seed: int
    success: bool
    steps: int
    replans: int
    recoveries: int
    blocked: int
    trace: tuple[TraceEvent, ...] = ()

    @property
    def skill_sequence(self) -> tuple[tuple[str, bool], ...]:
        return tuple((e.skill, e.ok) for e in self.trace if e.kind in ("attempt", "recovery"))


def counts_from_trace(trace: tuple[TraceEvent, ...] | list[TraceEvent]) -> dict[str, int]:
    c = Counter(e.kind for e in trace)
    return {"steps": c["attempt"] + c["recovery"], "replans": c["plan"],
            "recoveries": c["recovery"], "blocked": c["blocked"]}


@dataclass(frozen=True)
class MemoryRecord:
    trial: int
    cycle: int
    event: TraceEvent


class System:
    """One robot: a registry of packages, a policy runtime, and at most one agent."""

    def __init__(self, registry: Registry | None = None, policy: PolicyConfig | None = None,
                 audit: AuditLog | None = None):
        self.registry = registry if registry is not None else Registry()
        self.runtime = Runtime(self.registry, policy, audit)
        self.agent: Agent | None = None


class Agent:
    def __init__(self, system: System, identity: str | None = None,
                 replan_cap: int = DEFAULT_REPLAN_CAP):
        if system.agent is not None:
            raise SingleAgentViolation(
                f"system already has agent {system.agent.identity}; a robot has exactly one")
        if replan_cap < 1:
            raise ValueError("replan_cap must be positive")
        self.system = system
        self.identity = identity or str(uuid.uuid4())
        self.replan_cap = replan_cap
        self._memory: list[MemoryRecord] = []
        self._trials = 0
        self.world_view: Observation | None = None
        system.agent = self

    @property
    def memory(self) -> tuple[MemoryRecord, ...]:
        return tuple(self._memory)

    def replay(self, trial: int) -> dict[str, int]:
        return counts_from_trace([r.event for r in self._memory if r.trial == trial])

    def handle(self, instruction: str, world: WorldState, model: FailureModel,
               config: ExecutionConfig = ExecutionConfig()) -> TrialResult:
        task = PLAN_SKILL_TASK[route_instruction(instruction)]
        return self.run_closed_loop(task, world, model, config)

    def run_closed_loop(self, task: TaskId | str, world: WorldState, model: FailureModel,
                        config: ExecutionConfig = ExecutionConfig()) -> TrialResult:
        task = TaskId.parse(task)
        if world.task is not task:
            raise ValueError(f"world is a {world.task.value} world, not {task.value}")
        registry = self.system.registry
        plan_skill = registry.find_skill(f"{NAMESPACES[task]}.plan")
        if plan_skill is None:
            raise InactiveEcm(f"no Active package provides {NAMESPACES[task]}.plan "
                              f"(expected {PACKAGE_FOR_TASK[task]})")
        cap = config.replan_cap or self.replan_cap
        run = _Trial(self, task, world, model, config, plan_skill.package, self._trials)
        self._trials += 1
        self.system.runtime.reset_quotas()
        with registry.executing():
            success = run.dynamic(cap) if config.mode == "dynamic" else run.static()
        trace = tuple(run.trace)
        counts = counts_from_trace(trace)
        return TrialResult(task, world.seed, success, counts["steps"], counts["replans"],
                           counts["recoveries"], counts["blocked"], trace)


@dataclass
class _Trial:
    agent: Agent
    task: TaskId
    world: WorldState
    model: FailureModel
    config: ExecutionConfig
    package: str
    index: int
    trace: list[TraceEvent] = field(default_factory=list)

    def __post_init__(self) -> None:
        found = self.agent.system.registry.discover_skills()
        self.skills = {d.name: d.skill for d in found}
        self.recovery_skills = {d.skill.on_failure for d in found if d.skill.on_failure}

    def log(self, event: TraceEvent) -> None:
        self.trace.append(event)
        self.agent._memory.append(MemoryRecord(self.index, event.cycle, event))

    def perceive(self) -> Observation:
        obs = self.world.observe()
        self.agent.world_view = obs
        return obs

    def make_plan(self, cycle: int) -> list[PlanStep]:
        obs = self.perceive()
        steps = linearize(plan(obs), obs.predicates)
        self.log(TraceEvent("plan", cycle, f"{NAMESPACES[self.task]}.plan", True,
                            " ".join(str(s) for s in steps)))
        return steps

    def resolve(self, step: PlanStep) -> tuple[int, str | None]:
        sd = self.skills.get(step.skill)
        retry = step.retry_budget if step.retry_budget is not None else (
            sd.default_retry if sd else 0)
        on_failure = step.on_failure or (sd.on_failure if sd else None)
        if self.config.retry_limit is not None:
            retry = self.config.retry_limit
        return retry, on_failure

    def attempt(self, skill: str, cycle: int) -> bool:
        sd = self.skills.get(skill)
        request = SkillRequest(self.package, skill,
                               frozenset(sd.actuators) if sd else frozenset(),
                               sd.risk_level if sd else RiskLevel.LOW)
        outcome = self.agent.system.runtime.execute(request, self.world, self.model,
                                                     cycle=cycle, trial=self.index)
        if isinstance(outcome, Blocked):
            self.log(TraceEvent("blocked", cycle, skill, False, str(outcome.verdict)))
            return False
        kind = "recovery" if skill in self.recovery_skills else "attempt"
        self.log(TraceEvent(kind, cycle, skill, outcome.succeeded))
        return outcome.succeeded

    def run_step(self, step: PlanStep, cycle: int) -> bool:
        """Run one step with its retry budget; True if the trial may go on."""
        if step.skill in self.recovery_skills and not self.config.recovery:
            self.log(TraceEvent("abort", cycle, step.skill, False, "recovery disabled"))
            return False
        retry, on_failure = self.resolve(step)
        for _ in range(1 + retry):
            if self.attempt(step.skill, cycle):
                return True
        if on_failure and self.config.recovery:
            if self.attempt(on_failure, cycle):
                return True
        self.log(TraceEvent("abort", cycle, step.skill, False, "retries exhausted"))
        return False

    def dynamic(self, cap: int) -> bool:
        cycle = 0
        while cycle < cap:
            steps = self.make_plan(cycle)
            if not steps:
                self.log(TraceEvent("complete", cycle))
                return True
            if not self.run_step(steps[0], cycle):
                return False
            cycle += 1
        self.log(TraceEvent("cap", cycle, detail=f"replan cap {cap} reached"))
        return False

    def static(self) -> bool:
        for step in self.make_plan(0):
            if not self.run_step(step, 0):
                return False
        done = is_complete(self.world)
        self.log(TraceEvent("complete", 0) if done
                 else TraceEvent("abort", 0, detail="plan finished with task incomplete"))
        return done
