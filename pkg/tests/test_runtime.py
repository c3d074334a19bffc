import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ecmkit.ecm import RiskLevel, builtin_registry
from ecmkit.runtime import (
    CANONICAL_BATTERY,
    DISABLED,
    AuditLog,
    Archetype,
    Blocked,
    BlockReason,
    PolicyConfig,
    Runtime,
    SkillRequest,
    check_policy,
    policy_battery,
    request_for,
)
from ecmkit.worldsim import FailureModel, new_world

REG = builtin_registry()


def test_knife_globally_blocked():
    req = SkillRequest("make_dumplings", "dumpling.prepare", frozenset({"arm", "knife"}))
    verdict = check_policy(req, PolicyConfig(), REG)
    assert not verdict.allowed and verdict.reason is BlockReason.ACTUATOR_DENIED


def test_global_scope_catches_what_the_package_allows():
    # the package would allow a stove skill; the operator-level scope forbids stoves
    req = request_for(REG, "make_dumplings", "dumpling.boil")
    policy = PolicyConfig(global_blocked_actuators=frozenset({"stove"}))
    verdict = check_policy(req, policy, REG)
    assert verdict.reason is BlockReason.ACTUATOR_DENIED and verdict.layer == 3


def test_cross_package_invocation():
    req = request_for(REG, "make_dumplings", "dumpling.wrap")
    req = SkillRequest("clean_table", req.skill, req.actuators, req.risk)
    assert check_policy(req, PolicyConfig(), REG).reason is BlockReason.CROSS_ECM_VIOLATION


def test_unknown_skill():
    req = SkillRequest("fetch_object", "fetch.teleport")
    assert check_policy(req, PolicyConfig(), REG).reason is BlockReason.UNKNOWN_SKILL


def test_high_risk_blocked():
    req = SkillRequest("make_dumplings", "dumpling.boil", frozenset({"stove"}), RiskLevel.HIGH)
    assert check_policy(req, PolicyConfig(), REG).reason is BlockReason.RISK_EXCEEDED


def test_operator_override_first():
    req = request_for(REG, "clean_table", "clean.wipe")
    deny = PolicyConfig(operator_overrides={"clean.wipe": False})
    assert check_policy(req, deny, REG) == check_policy(req, deny, REG)
    verdict = check_policy(req, deny, REG)
    assert verdict.reason is BlockReason.OPERATOR_OVERRIDE and verdict.layer == 1
    knife = SkillRequest("clean_table", "clean.wipe", frozenset({"knife"}))
    assert check_policy(knife, PolicyConfig(operator_overrides={"knife": True}), REG).allowed


@pytest.mark.parametrize("arch", CANONICAL_BATTERY, ids=lambda a: a.label)
def test_disabled_policy_allows_everything(arch):
    assert check_policy(arch.request, DISABLED, REG).allowed


@pytest.mark.parametrize("arch", CANONICAL_BATTERY, ids=lambda a: a.label)
def test_enabled_policy_matches_label(arch):
    assert check_policy(arch.request, PolicyConfig(), REG).allowed == arch.valid


def test_battery_shape():
    assert len(CANONICAL_BATTERY) == 18
    cats = [a.category for a in CANONICAL_BATTERY]
    assert cats.count("valid") == 6


def test_allowed_wrap_executes():
    rt = Runtime(builtin_registry("dumpling"))
    world = new_world("dumpling", 0)
    out = rt.execute(request_for(rt.registry, "make_dumplings", "dumpling.wrap"), world,
                     FailureModel.single("dumpling", 0.0))
    assert out.succeeded and world.predicates["dumpling_wrapped"]
    assert len(rt.audit) == 0


def test_blocked_request_leaves_world_alone():
    rt = Runtime(builtin_registry("dumpling"))
    world = new_world("dumpling", 0)
    before = world.fingerprint()
    req = SkillRequest("make_dumplings", "dumpling.wrap", frozenset({"knife"}), RiskLevel.MEDIUM)
    out = rt.execute(req, world, FailureModel())
    assert isinstance(out, Blocked)
    assert world.fingerprint() == before
    assert len(rt.audit) == 1
    rec = json.loads(rt.audit.to_ndjson())
    assert rec["verdict"] == "block" and rec["reason"] == "ActuatorDenied"


def test_quota_of_one():
    rt = Runtime(builtin_registry("clean_table"), PolicyConfig(quotas={"clean.wipe": 1}))
    req = request_for(rt.registry, "clean_table", "clean.wipe")
    assert rt.submit(req).allowed
    verdict = rt.submit(req)
    assert verdict.reason is BlockReason.QUOTA_EXCEEDED
    rt.reset_quotas()
    assert rt.submit(req).allowed


def test_battery_enabled_and_disabled():
    on = policy_battery(PolicyConfig(), REG, 100)
    assert on.checks == 1800
    assert (on.blocked_pct, on.false_accept_pct, on.false_reject_pct) == (100.0, 0.0, 0.0)
    off = policy_battery(DISABLED, REG, 100)
    assert (off.blocked_pct, off.false_accept_pct, off.false_reject_pct) == (0.0, 100.0, 0.0)


def test_battery_without_invalid_archetypes():
    valid_only = [a for a in CANONICAL_BATTERY if a.valid]
    report = policy_battery(PolicyConfig(), REG, 3, valid_only)
    assert report.empty_invalid and report.blocked_pct == 100.0


def test_audit_log_is_append_only_sequence():
    log = AuditLog(log_allows=True)
    req = SkillRequest("p", "x.y")
    for i in range(5):
        log.append(req, check_policy(req, PolicyConfig(), REG), cycle=i)
    assert [r.seq for r in log] == list(range(5))


requests = st.builds(
    SkillRequest,
    package=st.sampled_from(["make_dumplings", "clean_table", "fetch_object", "ghost"]),
    skill=st.sampled_from([d.name for d in REG.discover_skills()] + ["x.unknown"]),
    actuators=st.frozensets(st.sampled_from(["arm", "gripper", "stove", "base", "camera", "knife", "laser"]),
                            max_size=3),
    risk=st.sampled_from(list(RiskLevel)),
)


@settings(max_examples=300, deadline=None)
@given(req=requests, quota=st.integers(0, 3), used=st.integers(0, 5))
def test_policy_deterministic_and_non_interfering(req, quota, used):
    policy = PolicyConfig(quotas={"*": quota})
    usage = {"*": used}
    before = REG.fingerprint()
    first = check_policy(req, policy, REG, usage)
    assert all(check_policy(req, policy, REG, usage) == first for _ in range(3))
    assert REG.fingerprint() == before and usage == {"*": used}
    assert check_policy(req, DISABLED, REG, usage).allowed


@settings(max_examples=200, deadline=None)
@given(req=requests)
def test_no_allow_for_undeclared_actuators(req):
    verdict = check_policy(req, PolicyConfig(), REG)
    if verdict.allowed:
        perms = REG.record(req.package).manifest.permissions
        assert req.actuators <= set(perms.allowed_actuators)
        assert "knife" not in req.actuators
        assert req.risk <= RiskLevel.MEDIUM


def test_archetype_labels_unique():
    assert len({a.label for a in CANONICAL_BATTERY}) == len(CANONICAL_BATTERY)
    assert all(isinstance(a, Archetype) for a in CANONICAL_BATTERY)
