"""Policy-separated execution: permission checks, mediation and audit logging.

Checks run in a fixed order and the first failing layer names the block
reason:

1. operator overrides (hard allow / deny by skill or actuator name),
2. the invoking package's declared permissions,
3. global scope: risk ceiling, globally blocked actuators, quotas.
"""

from __future__ import annotations

import json
import threading
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping

from .ecm import LifecycleState, Registry, RiskLevel
from .worldsim import FailureModel, SkillOutcome, WorldState, apply_skill

ANY = "*"


class BlockReason(str, Enum):
    OPERATOR_OVERRIDE = "OperatorOverride"
    ACTUATOR_DENIED = "ActuatorDenied"
    RISK_EXCEEDED = "RiskExceeded"
    CROSS_ECM_VIOLATION = "CrossEcmViolation"
    UNKNOWN_SKILL = "UnknownSkill"
    QUOTA_EXCEEDED = "QuotaExceeded"


@dataclass(frozen=True)
class PolicyVerdict:
    allowed: bool
    reason: BlockReason | None = None
    layer: int = 0

    def __str__(self) -> str:
        return "Allow" if self.allowed else f"Block({self.reason.value})"


ALLOW = PolicyVerdict(True)


def block(reason: BlockReason, layer: int) -> PolicyVerdict:
    return PolicyVerdict(False, reason, layer)


@dataclass(frozen=True)
class PolicyConfig:
    enabled: bool = True
    # name (skill or actuator) -> True for hard allow, False for hard deny
    operator_overrides: Mapping[str, bool] = field(default_factory=dict)
    global_blocked_actuators: frozenset[str] = frozenset({"knife"})
    max_allowed_risk: RiskLevel = RiskLevel.MEDIUM
    # skill name or "*" -> max allowed invocations per trial
    quotas: Mapping[str, int] = field(default_factory=dict)

    def __hash__(self) -> int:
        return hash((self.enabled, tuple(sorted(self.operator_overrides.items())),
                     self.global_blocked_actuators, self.max_allowed_risk,
                     tuple(sorted(self.quotas.items()))))


DISABLED = PolicyConfig(enabled=False)


@dataclass(frozen=True)
class SkillRequest:
    package: str
    skill: str
    actuators: frozenset[str] = frozenset()
    risk: RiskLevel = RiskLevel.LOW

    def to_dict(self) -> dict:
        return {"package": self.package, "skill": self.skill,
                "actuators": sorted(self.actuators), "risk": self.risk.value}


def request_for(registry: Registry, package: str, skill: str) -> SkillRequest:
    """Build a request from the skill's declared actuators and risk."""
    sd = registry.record(package).manifest.skill(skill) if package in registry else None
    if sd is None:
        return SkillRequest(package, skill)
    return SkillRequest(package, skill, frozenset(sd.actuators), sd.risk_level)


def check_policy(request: SkillRequest, policy: PolicyConfig, registry: Registry,
                 usage: Mapping[str, int] | None = None) -> PolicyVerdict:
    """Pure: same request, policy, registry contents and usage give the same verdict."""
    if not policy.enabled:
        return ALLOW

    # layer 1: operator overrides
    overrides = policy.operator_overrides
    names = (request.skill, *sorted(request.actuators))
    hits = [overrides[n] for n in names if n in overrides]
    if hits:
        return ALLOW if all(hits) else block(BlockReason.OPERATOR_OVERRIDE, 1)

    # layer 2: declared permissions of the invoking package
    records = registry.snapshot()
    record = records.get(request.package)
    owner_active = record is not None and record.state is LifecycleState.ACTIVE
    skill = record.manifest.skill(request.skill) if owner_active else None
    if skill is None:
        other = registry.find_skill(request.skill)
        if other is not None and other.package != request.package:
            return block(BlockReason.CROSS_ECM_VIOLATION, 2)
        return block(BlockReason.UNKNOWN_SKILL, 2)
    perms = record.manifest.permissions
    if not request.actuators <= set(perms.allowed_actuators) \
            or request.actuators & set(perms.blocked_actuators):
        return block(BlockReason.ACTUATOR_DENIED, 2)
    if not request.risk <= perms.max_risk_level:
        return block(BlockReason.RISK_EXCEEDED, 2)
    usage = usage or {}
    pkg_limit = perms.resource_quotas.get("max_invocations")
    if pkg_limit is not None and usage.get(f"pkg:{request.package}", 0) >= pkg_limit:
        return block(BlockReason.QUOTA_EXCEEDED, 2)

    # layer 3: global scope
    if not request.risk <= policy.max_allowed_risk:
        return block(BlockReason.RISK_EXCEEDED, 3)
    if request.actuators & policy.global_blocked_actuators:
        return block(BlockReason.ACTUATOR_DENIED, 3)
    for key, limit in policy.quotas.items():
        used = usage.get(ANY, 0) if key == ANY else usage.get(request.skill, 0)
        if (key == ANY or key == request.skill) and used >= limit:
            return block(BlockReason.QUOTA_EXCEEDED, 3)
    return ALLOW


@dataclass(frozen=True)
class AuditRecord:
    seq: int
    request: SkillRequest
    verdict: PolicyVerdict
    cycle: int
    trial: int | None = None

    @property
    def package(self) -> str:
        return self.request.package

    def to_json(self) -> str:
        return json.dumps({
            "seq": self.seq, "trial": self.trial, "cycle": self.cycle,
            "package": self.request.package, "request": self.request.to_dict(),
            "verdict": "allow" if self.verdict.allowed else "block",
            "reason": self.verdict.reason.value if self.verdict.reason else None,
        }, sort_keys=True)


class AuditLog:
    """Append-only; one writer at a time."""

    def __init__(self, log_allows: bool = False):
        self.log_allows = log_allows
        self._records: list[AuditRecord] = []
        self._lock = threading.Lock()

    def append(self, request: SkillRequest, verdict: PolicyVerdict, cycle: int = 0,
               trial: int | None = None) -> AuditRecord | None:
        if verdict.allowed and not self.log_allows:
            return None
        with self._lock:
            rec = AuditRecord(len(self._records), request, verdict, cycle, trial)
            self._records.append(rec)
        return rec

    def __len__(self) -> int:
        return len(self._records)

    def __iter__(self):
        return iter(tuple(self._records))

    @property
    def blocks(self) -> list[AuditRecord]:
        return [r for r in self._records if not r.verdict.allowed]

    def to_ndjson(self) -> str:
        return "".join(r.to_json() + "\n" for r in self._records)


@dataclass(frozen=True)
class Blocked:
    request: SkillRequest
    verdict: PolicyVerdict

    @property
    def succeeded(self) -> bool:
        return False


class Runtime:
    """Mediates every skill invocation between the agent and the world."""

    def __init__(self, registry: Registry, policy: PolicyConfig | None = None,
                 audit: AuditLog | None = None):
        self.registry = registry
        self.policy = policy if policy is not None else PolicyConfig()
        self.audit = audit if audit is not None else AuditLog()
        self.usage: Counter[str] = Counter()
        self.blocks_issued = 0

    def reset_quotas(self) -> None:
        self.usage.clear()

    def check(self, request: SkillRequest) -> PolicyVerdict:
        return check_policy(request, self.policy, self.registry, self.usage)

    def submit(self, request: SkillRequest, cycle: int = 0,
               trial: int | None = None) -> PolicyVerdict:
        """Check, account and audit a request without executing it."""
        verdict = self.check(request)
        self.audit.append(request, verdict, cycle, trial)
        if verdict.allowed:
            self.usage[request.skill] += 1
            self.usage[ANY] += 1
            self.usage[f"pkg:{request.package}"] += 1
        else:
            self.blocks_issued += 1
        return verdict

    def execute(self, request: SkillRequest, world: WorldState, model: FailureModel,
                cycle: int = 0, trial: int | None = None) -> SkillOutcome | Blocked:
        verdict = self.submit(request, cycle, trial)
        if not verdict.allowed:
            return Blocked(request, verdict)
        return apply_skill(world, request.skill, model)


# -- canonical request battery ------------------------------------------------

@dataclass(frozen=True)
class Archetype:
    label: str
    request: SkillRequest
    valid: bool
    category: str


def _req(pkg: str, skill: str, actuators: Iterable[str], risk: str = "low") -> SkillRequest:
    return SkillRequest(pkg, skill, frozenset(actuators), RiskLevel(risk))


CANONICAL_BATTERY: tuple[Archetype, ...] = (
    # valid: core skills under their own package
    Archetype("dumpling.wrap", _req("make_dumplings", "dumpling.wrap", ["arm", "gripper"], "medium"), True, "valid"),
    Archetype("dumpling.boil", _req("make_dumplings", "dumpling.boil", ["arm", "gripper", "stove"], "medium"), True, "valid"),
    Archetype("clean.wipe", _req("clean_table", "clean.wipe", ["arm", "gripper"]), True, "valid"),
    Archetype("clean.organize", _req("clean_table", "clean.organize", ["arm", "gripper"]), True, "valid"),
    Archetype("fetch.navigate", _req("fetch_object", "fetch.navigate", ["base"]), True, "valid"),
    Archetype("fetch.grasp", _req("fetch_object", "fetch.grasp", ["arm", "gripper"], "medium"), True, "valid"),
    # blocked actuators
    Archetype("prepare+knife", _req("make_dumplings", "dumpling.prepare", ["arm", "knife"]), False, "blocked_actuator"),
    Archetype("wrap+knife", _req("make_dumplings", "dumpling.wrap", ["knife"], "medium"), False, "blocked_actuator"),
    Archetype("wipe+pressure_washer", _req("clean_table", "clean.wipe", ["arm", "pressure_washer"]), False, "blocked_actuator"),
    Archetype("grasp+knife", _req("fetch_object", "fetch.grasp", ["gripper", "knife"], "medium"), False, "blocked_actuator"),
    # high risk
    Archetype("boil@high", _req("make_dumplings", "dumpling.boil", ["stove"], "high"), False, "high_risk"),
    Archetype("wipe@high", _req("clean_table", "clean.wipe", ["arm"], "high"), False, "high_risk"),
    Archetype("deliver@high", _req("fetch_object", "fetch.deliver", ["base", "arm"], "high"), False, "high_risk"),
    # cross-package invocations
    Archetype("wrap@clean_table", _req("clean_table", "dumpling.wrap", ["arm", "gripper"], "medium"), False, "cross_ecm"),
    Archetype("wipe@fetch_object", _req("fetch_object", "clean.wipe", ["arm", "gripper"]), False, "cross_ecm"),
    Archetype("grasp@make_dumplings", _req("make_dumplings", "fetch.grasp", ["arm", "gripper"], "medium"), False, "cross_ecm"),
    # nonexistent skills
    Archetype("dumpling.fly", _req("make_dumplings", "dumpling.fly", ["arm"]), False, "nonexistent"),
    Archetype("teleport.jump", _req("fetch_object", "teleport.jump", ["base"]), False, "nonexistent"),
)


@dataclass(frozen=True)
class BatteryReport:
    checks: int
    valid_checks: int
    invalid_checks: int
    blocked_pct: float
    false_accept_pct: float
    false_reject_pct: float
    empty_invalid: bool = False
    empty_valid: bool = False
    reasons: Mapping[str, int] = field(default_factory=dict)


def policy_battery(policy: PolicyConfig, registry: Registry, n_trials: int,
                   archetypes: Iterable[Archetype] = CANONICAL_BATTERY,
                   audit: AuditLog | None = None) -> BatteryReport:
    if n_trials < 1:
        raise ValueError("n_trials must be positive")
    archetypes = tuple(archetypes)
    runtime = Runtime(registry, policy, audit)
    blocked_invalid = accepted_invalid = rejected_valid = 0
    reasons: Counter[str] = Counter()
    for trial in range(n_trials):
        runtime.reset_quotas()
        for i, arch in enumerate(archetypes):
            verdict = runtime.submit(arch.request, cycle=i, trial=trial)
            if not verdict.allowed:
                reasons[verdict.reason.value] += 1
            if arch.valid and not verdict.allowed:
                rejected_valid += 1
            elif not arch.valid:
                if verdict.allowed:
                    accepted_invalid += 1
                else:
                    blocked_invalid += 1
    n_invalid = sum(not a.valid for a in archetypes) * n_trials
    n_valid = sum(a.valid for a in archetypes) * n_trials
    pct = lambda num, den, empty: 100.0 * num / den if den else empty  # noqa: E731
    return BatteryReport(
        checks=len(archetypes) * n_trials,
        valid_checks=n_valid,
        invalid_checks=n_invalid,
        blocked_pct=pct(blocked_invalid, n_invalid, 100.0),
        false_accept_pct=pct(accepted_invalid, n_invalid, 0.0),
        false_reject_pct=pct(rejected_valid, n_valid, 0.0),
        empty_invalid=n_invalid == 0,
        empty_valid=n_valid == 0,
        reasons=dict(sorted(reasons.items())),
    )
