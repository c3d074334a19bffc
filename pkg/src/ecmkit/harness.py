"""Experiments E1-E8: trial loops, aggregation and table emission.

Trial seeds come from ``derive_seed(master_seed, stream, i)``: the first
8 bytes (big-endian) of BLAKE2b over ``"{master_seed}/{stream}/{i}"``.
Conditions get disjoint streams unless an experiment pairs them on purpose
(E1 static vs dynamic, E7 variants within a task).
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Mapping

from . import __version__
from .agent import Agent, ExecutionConfig, System, TrialResult
from .baselines import AGENT_FULL, BT3, FLAT, REPLAN3, VARIANTS, Strategy, make_agent, run_strategy, variant_config
from .ecm import Registry, builtin_manifest, builtin_registry
from .runtime import DISABLED, AuditLog, BatteryReport, PolicyConfig, policy_battery
from .stats import Interval, fisher_one_sided, wilson
from .worldsim import FailureModel, TaskId, new_world

log = logging.getLogger(__name__)

EXPERIMENTS = ("E1", "E2", "E3", "E4", "E5", "E6", "E7", "E8")
TASKS: tuple[TaskId, ...] = (TaskId.DUMPLING, TaskId.CLEAN_TABLE, TaskId.FETCH_OBJECT)
TASK_LABELS = {TaskId.DUMPLING: "Dumpling", TaskId.CLEAN_TABLE: "CleanTbl",
               TaskId.FETCH_OBJECT: "FetchObj"}
TASK_RATES = {TaskId.DUMPLING: 0.30, TaskId.CLEAN_TABLE: 0.40, TaskId.FETCH_OBJECT: 0.35}
SWEEP_GRID = tuple(round(0.1 * i, 1) for i in range(1, 10))

DEFAULT_PARAMS: dict[str, dict[str, Any]] = {
    "E1": {"p_fail": 0.30},
    "E2": {"p_fail": 0.50, "retry_limit": 1},
    "E3": {},
    "E4": {"rates": TASK_RATES, "k": 3},
    "E5": {"rates": TASK_RATES},
    "E6": {"p_wrap": 0.30, "p_wipe": 0.40},
    "E7": {"rates": TASK_RATES},
    "E8": {"grid": SWEEP_GRID, "k": 3},
}


def derive_seed(master_seed: int, stream: str, index: int) -> int:
    digest = hashlib.blake2b(f"{master_seed}/{stream}/{index}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "big")


def retry_theory_check(p_fail: float, attempts: int) -> float:
    """Success probability of ``attempts`` independent tries."""
    if not 0.0 <= p_fail <= 1.0:
        raise ValueError("p_fail must be in [0, 1]")
    if attempts < 1:
        raise ValueError("attempts must be at least 1")
    return 1.0 - p_fail ** attempts


@dataclass(frozen=True)
class ExperimentConfig:
    id: str
    n_trials: int = 100
    master_seed: int = 0
    params: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.id not in EXPERIMENTS:
            raise ValueError(f"unknown experiment {self.id!r}; expected one of {EXPERIMENTS}")
        if self.n_trials < 1:
            raise ValueError("n_trials must be positive")
        unknown = set(self.params) - set(DEFAULT_PARAMS[self.id])
        if unknown:
            raise ValueError(f"{self.id} has no parameters {sorted(unknown)}")

    def param(self, name: str) -> Any:
        return self.params.get(name, DEFAULT_PARAMS[self.id][name])

    def to_dict(self) -> dict[str, Any]:
        merged = {**DEFAULT_PARAMS[self.id], **self.params}
        if "rates" in merged:
            merged["rates"] = {TaskId.parse(t).value: p for t, p in merged["rates"].items()}
        if "grid" in merged:
            merged["grid"] = list(merged["grid"])
        return {"id": self.id, "n_trials": self.n_trials, "master_seed": self.master_seed,
                "params": merged}


@dataclass
class ConditionResult:
    name: str
    outcomes: list[bool]
    trials: list[TrialResult] = field(default_factory=list)
    task: TaskId | None = None
    group: str = ""  # row label in grid tables (architecture / variant)

    @property
    def n(self) -> int:
        return len(self.outcomes)

    @property
    def successes(self) -> int:
        return sum(self.outcomes)

    @property
    def success_rate(self) -> float:
        return self.successes / self.n if self.n else 0.0

    @property
    def interval(self) -> Interval:
        return wilson(self.successes, self.n)

    def _mean(self, attr: str) -> float | None:
        if not self.trials:
            return None
        return sum(getattr(t, attr) for t in self.trials) / len(self.trials)

    @property
    def mean_steps(self) -> float | None:
        return self._mean("steps")

    @property
    def mean_replans(self) -> float | None:
        return self._mean("replans")

    @property
    def mean_recoveries(self) -> float | None:
        return self._mean("recoveries")

    @property
    def mean_blocked(self) -> float | None:
        return self._mean("blocked")


@dataclass
class ExperimentReport:
    config: ExperimentConfig
    conditions: list[ConditionResult] = field(default_factory=list)
    p_values: dict[str, float] = field(default_factory=dict)
    extras: dict[str, Any] = field(default_factory=dict)
    audit: list[str] = field(default_factory=list)
    # wall-clock measurements; excluded from tables and reproducibility checks
    timings: dict[str, float] = field(default_factory=dict)

    @property
    def id(self) -> str:
        return self.config.id

    def condition(self, name: str) -> ConditionResult:
        for c in self.conditions:
            if c.name == name:
                return c
        raise KeyError(name)

    def manifest(self) -> dict[str, Any]:
        return {"experiment": self.id, "config": self.config.to_dict(),
                "master_seed": self.config.master_seed, "code_version": __version__,
                "seed_derivation": "blake2b-64('{master_seed}/{stream}/{index}')"}


# -- trial loops ---------------------------------------------------------------


def _run_condition(name: str, task: TaskId, n: int, seed_of: Callable[[int], int],
                   model: FailureModel, runner: Callable, group: str = "") -> ConditionResult:
    trials = [runner(task, new_world(task, seed_of(i)), model) for i in range(n)]
    return ConditionResult(name, [t.success for t in trials], trials, task, group)


def _agent_runner(agent: Agent, config: ExecutionConfig) -> Callable:
    return lambda task, world, model: agent.run_closed_loop(task, world, model, config)


def _strategy_runner(strategy: Strategy, agent: Agent | None = None) -> Callable:
    return lambda task, world, model: run_strategy(strategy, task, world, model, agent)


def _seeds(cfg: ExperimentConfig, stream: str) -> Callable[[int], int]:
    return lambda i: derive_seed(cfg.master_seed, stream, i)


def _rates(cfg: ExperimentConfig) -> dict[TaskId, float]:
    return {TaskId.parse(t): p for t, p in cfg.param("rates").items()}


def _collect_audit(report: ExperimentReport, agent: Agent | None) -> None:
    if agent is not None:
        report.audit.extend(r.to_json() for r in agent.system.runtime.audit)


def _e1(cfg: ExperimentConfig, report: ExperimentReport) -> None:
    task = TaskId.DUMPLING
    model = FailureModel.single(task, cfg.param("p_fail"))
    paired = _seeds(cfg, "E1/dumpling")
    arms = {"Static": ExecutionConfig("static", retry_limit=0, recovery=False),
            "Dynamic": ExecutionConfig("dynamic", retry_limit=0, recovery=True)}
    for name, ex in arms.items():
        agent = make_agent()
        report.conditions.append(_run_condition(name, task, cfg.n_trials, paired, model,
                                                _agent_runner(agent, ex)))
        _collect_audit(report, agent)


def _e2(cfg: ExperimentConfig, report: ExperimentReport) -> None:
    task = TaskId.DUMPLING
    model = FailureModel.single(task, cfg.param("p_fail"))
    limit = cfg.param("retry_limit")
    arms = {"None": ExecutionConfig("dynamic", retry_limit=0, recovery=False),
            "Retry": ExecutionConfig("dynamic", retry_limit=limit, recovery=False),
            "Retry + Recov.": ExecutionConfig("dynamic", retry_limit=limit, recovery=True)}
    for name, ex in arms.items():
        agent = make_agent()
        report.conditions.append(_run_condition(name, task, cfg.n_trials,
                                                _seeds(cfg, f"E2/{name}"), model,
                                                _agent_runner(agent, ex)))
        _collect_audit(report, agent)


def _e3(cfg: ExperimentConfig, report: ExperimentReport) -> None:
    audit = AuditLog()
    for name, policy in (("Policy Disabled", DISABLED), ("Policy Enabled", PolicyConfig())):
        battery = policy_battery(policy, builtin_registry(), cfg.n_trials, audit=audit)
        report.extras[name] = battery
    report.audit.extend(r.to_json() for r in audit)


def _e4(cfg: ExperimentConfig, report: ExperimentReport) -> None:
    rates = _rates(cfg)
    k = cfg.param("k")
    strategies = [FLAT, Strategy("bt", k), Strategy("replan_k", k), AGENT_FULL]
    _grid(cfg, report, strategies, rates, "E4")
    for task in TASKS:
        a = report.condition(f"{AGENT_FULL.label}/{task.value}")
        b = report.condition(f"{Strategy('bt', k).label}/{task.value}")
        report.p_values[task.value] = fisher_one_sided(a.successes, a.n - a.successes,
                                                       b.successes, b.n - b.successes)


def _grid(cfg: ExperimentConfig, report: ExperimentReport, strategies: Iterable[Strategy],
          rates: Mapping[TaskId, float], exp: str, paired: bool = False) -> None:
    for strategy in strategies:
        agent = None
        if strategy.kind == "agent":
            agent = make_agent(variant_config(strategy.variant)[1])
        for task in TASKS:
            stream = f"{exp}/{task.value}" if paired else f"{exp}/{strategy.label}/{task.value}"
            report.conditions.append(_run_condition(
                f"{strategy.label}/{task.value}", task, cfg.n_trials, _seeds(cfg, stream),
                FailureModel.single(task, rates[task]), _strategy_runner(strategy, agent),
                group=strategy.label))
        _collect_audit(report, agent)


def _e5(cfg: ExperimentConfig, report: ExperimentReport) -> None:
    rates = _rates(cfg)
    arms = {"Static": ExecutionConfig("static", retry_limit=0, recovery=False),
            "Dynamic": ExecutionConfig("dynamic")}
    for name, ex in arms.items():
        agent = make_agent()
        for task in TASKS:
            report.conditions.append(_run_condition(
                f"{name}/{task.value}", task, cfg.n_trials, _seeds(cfg, f"E5/{name}/{task.value}"),
                FailureModel.single(task, rates[task]), _agent_runner(agent, ex), group=name))
        _collect_audit(report, agent)


def _e6(cfg: ExperimentConfig, report: ExperimentReport) -> None:
    p_wrap, p_wipe = cfg.param("p_wrap"), cfg.param("p_wipe")
    wrap_model = FailureModel.single(TaskId.DUMPLING, p_wrap)
    wipe_model = FailureModel.single(TaskId.CLEAN_TABLE, p_wipe)
    clean = builtin_manifest(TaskId.CLEAN_TABLE)
    phase1, phase2, swaps, overall = [], [], [], []
    latencies, trial_times = [], []
    for i in range(cfg.n_trials):
        start = time.perf_counter()
        registry = Registry()
        registry.activate(builtin_manifest(TaskId.DUMPLING))
        agent = Agent(System(registry))
        first = agent.run_closed_loop(TaskId.DUMPLING,
                                      new_world(TaskId.DUMPLING, derive_seed(cfg.master_seed, "E6/dumpling", i)),
                                      wrap_model)
        before = {d.name for d in registry.discover_skills()}
        try:
            latencies.append(registry.hot_swap(clean))
            after = {d.name for d in registry.discover_skills()}
            swaps.append(set(clean.skill_names) <= after and before <= after)
        except Exception as exc:  # recorded as a failed swap, not a crash
            log.warning("hot swap failed in trial %d: %s", i, exc)
            swaps.append(False)
        second = agent.run_closed_loop(TaskId.CLEAN_TABLE,
                                       new_world(TaskId.CLEAN_TABLE, derive_seed(cfg.master_seed, "E6/clean_table", i)),
                                       wipe_model)
        trial_times.append(time.perf_counter() - start)
        phase1.append(first)
        phase2.append(second)
        overall.append(first.success and swaps[-1] and second.success)
        _collect_audit(report, agent)
    report.conditions += [
        ConditionResult("Pre-swap dumpling task", [t.success for t in phase1], phase1, TaskId.DUMPLING),
        ConditionResult("ECM swap success", swaps),
        ConditionResult("Post-swap task success", [t.success for t in phase2], phase2, TaskId.CLEAN_TABLE),
        ConditionResult("Overall (both tasks)", overall),
    ]
    report.timings["mean_swap_latency_s"] = sum(latencies) / len(latencies) if latencies else float("nan")
    report.timings["max_swap_latency_s"] = max(latencies) if latencies else float("nan")
    report.timings["mean_trial_time_s"] = sum(trial_times) / len(trial_times)


def _e7(cfg: ExperimentConfig, report: ExperimentReport) -> None:
    # variants share seeds within a task so traces can be compared pairwise
    _grid(cfg, report, [Strategy("agent", variant=v) for v in VARIANTS], _rates(cfg), "E7",
          paired=True)


def _e8(cfg: ExperimentConfig, report: ExperimentReport) -> None:
    k = cfg.param("k")
    strategies = [FLAT, Strategy("bt", k), Strategy("replan_k", k), AGENT_FULL]
    sweep: dict[str, dict[str, float]] = {}
    for p in cfg.param("grid"):
        row = {}
        for strategy in strategies:
            agent = make_agent() if strategy.kind == "agent" else None
            per_task = []
            for task in TASKS:
                cond = _run_condition(
                    f"p={p:.1f}/{strategy.label}/{task.value}", task, cfg.n_trials,
                    _seeds(cfg, f"E8/{p:.1f}/{strategy.label}/{task.value}"),
                    FailureModel.single(task, p), _strategy_runner(strategy, agent),
                    group=strategy.label)
                report.conditions.append(cond)
                per_task.append(cond.success_rate)
            row[strategy.label] = sum(per_task) / len(per_task)
        sweep[f"{p:.1f}"] = row
    report.extras["sweep"] = sweep


_RUNNERS: dict[str, Callable[[ExperimentConfig, ExperimentReport], None]] = {
    "E1": _e1, "E2": _e2, "E3": _e3, "E4": _e4, "E5": _e5, "E6": _e6, "E7": _e7, "E8": _e8,
}


def run_experiment(config: ExperimentConfig) -> ExperimentReport:
    report = ExperimentReport(config)
    start = time.perf_counter()
    _RUNNERS[config.id](config, report)
    report.timings["wall_s"] = time.perf_counter() - start
    log.info("%s finished in %.2fs", config.id, report.timings["wall_s"])
    return report


# -- tables ------------------------------------------------------------------

STANDARD_COLUMNS = ("condition", "success_pct", "ci_low", "ci_high", "steps", "replans",
                    "recoveries", "p_value")
BATTERY_COLUMNS = ("setting", "checks", "block_pct", "false_accept_pct", "false_reject_pct")


def _fmt(x: float | None, digits: int) -> str:
    return "" if x is None else f"{x:.{digits}f}"


def _fmt_p(p: float | None) -> str:
    if p is None:
        return ""
    return "<0.001" if p < 0.001 else f"{p:.4f}"


def _p_for(report: ExperimentReport, cond: ConditionResult) -> float | None:
    if report.id == "E4" and cond.group.startswith("Agent") and cond.task is not None:
        return report.p_values.get(cond.task.value)
    return None


def standard_rows(report: ExperimentReport) -> list[tuple[str, ...]]:
    rows = []
    for c in report.conditions:
        if c.n == 0:
            continue
        lo, hi = c.interval.as_percent()
        rows.append((c.name, _fmt(100 * c.success_rate, 1), _fmt(lo, 1), _fmt(hi, 1),
                     _fmt(c.mean_steps, 2), _fmt(c.mean_replans, 2), _fmt(c.mean_recoveries, 2),
                     _fmt_p(_p_for(report, c))))
    return rows


def battery_rows(report: ExperimentReport) -> list[tuple[str, ...]]:
    rows = []
    for name, b in report.extras.items():
        if isinstance(b, BatteryReport):
            rows.append((name, str(b.checks), _fmt(b.blocked_pct, 1), _fmt(b.false_accept_pct, 1),
                         _fmt(b.false_reject_pct, 1)))
    return rows


def _csv(header: tuple[str, ...], rows: list[tuple[str, ...]]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def _markdown(header: Iterable[str], rows: Iterable[Iterable[str]]) -> str:
    header = list(header)
    lines = ["| " + " | ".join(header) + " |", "|" + "|".join("---" for _ in header) + "|"]
    lines += ["| " + " | ".join(row) + " |" for row in rows]
    return "\n".join(lines) + "\n"


def _grid_markdown(report: ExperimentReport) -> str:
    groups: dict[str, dict[TaskId, ConditionResult]] = {}
    for c in report.conditions:
        groups.setdefault(c.group, {})[c.task] = c
    rows = []
    for group, cells in groups.items():
        row = [group]
        rates = []
        for task in TASKS:
            c = cells.get(task)
            if c is None:
                row.append("")
                continue
            lo, hi = c.interval.as_percent()
            row.append(f"{100 * c.success_rate:.1f} [{lo:.1f}, {hi:.1f}]")
            rates.append(100 * c.success_rate)
        row.append(f"{sum(rates) / len(rates):.1f}" if rates else "")
        rows.append(row)
    label = "Architecture" if report.id == "E4" else "Variant"
    text = _markdown([label, *(TASK_LABELS[t] + " (%)" for t in TASKS), "Mean"], rows)
    if report.id == "E4" and report.p_values:
        notes = ", ".join(f"{t} p={_fmt_p(p)}" for t, p in report.p_values.items())
        text += f"\nCI = 95% Wilson score interval. One-sided Fisher's exact test (agent vs. behavior tree): {notes}.\n"
    return text


def _sweep_markdown(report: ExperimentReport) -> str:
    sweep = report.extras.get("sweep", {})
    labels = list(next(iter(sweep.values())).keys()) if sweep else []
    rows = [[p, *(f"{100 * row[label]:.1f}" for label in labels)] for p, row in sweep.items()]
    return _markdown(["p_fail", *labels], rows)


def emit_table(report: ExperimentReport, fmt: str = "markdown") -> str:
    if fmt not in ("csv", "markdown"):
        raise ValueError(f"unknown format {fmt!r}")
    if report.id == "E3":
        rows = battery_rows(report)
        return _csv(BATTERY_COLUMNS, rows) if fmt == "csv" else _markdown(BATTERY_COLUMNS, rows)
    if fmt == "csv":
        return _csv(STANDARD_COLUMNS, standard_rows(report))
    if report.id in ("E4", "E7") and report.conditions:
        return _grid_markdown(report)
    if report.id == "E8" and report.extras.get("sweep"):
        return _sweep_markdown(report)
    return _markdown(STANDARD_COLUMNS, standard_rows(report))


def report_digest(report: ExperimentReport) -> str:
    """Hash of everything deterministic in a report (timings excluded)."""
    payload = {
        "manifest": {k: v for k, v in report.manifest().items() if k != "code_version"},
        "conditions": [[c.name, c.outcomes,
                        [[t.seed, t.success, t.steps, t.replans, t.recoveries, t.blocked,
                          [[e.kind, e.cycle, e.skill, e.ok, e.detail] for e in t.trace]]
                         for t in c.trials]] for c in report.conditions],
        "p_values": report.p_values,
        "extras": json.loads(json.dumps(report.extras, default=lambda o: o.__dict__)),
        "audit": report.audit,
        "tables": [emit_table(report, "csv"), emit_table(report, "markdown")],
    }
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()
