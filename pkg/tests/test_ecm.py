import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ecmkit.ecm import (
    AGENT_CONSTRUCTS,
    LEGAL_TRANSITIONS,
    Category,
    LifecycleState,
    Manifest,
    ManifestFormatError,
    Registry,
    builtin_manifest,
    builtin_registry,
    is_legal,
    load_manifest,
    validate,
    write_package,
)
from ecmkit.ecm.schema import version_satisfies
from ecmkit.errors import IllegalTransition, UnknownPackage, ValidationFailed

S = LifecycleState


def edited(manifest: Manifest, **changes) -> Manifest:
    data = manifest.to_dict()
    data.update(changes)
    return Manifest.from_dict(data)


def with_skill_change(manifest: Manifest, skill: str, **changes) -> Manifest:
    data = manifest.to_dict()
    for s in data["skills"]:
        if s["name"] == skill:
            s.update(changes)
    return Manifest.from_dict(data)


def tiny(name: str, deps=()) -> Manifest:
    return Manifest.from_dict({
        "name": name, "version": "1.0.0", "capabilities": ["thing"],
        "skills": [{"name": f"{name}.plan", "provides": ["thing"]}],
        "dependencies": [{"name": d, "version": "^1.0.0"} for d in deps],
    })


def test_bundled_packages_valid():
    for task in ("dumpling", "clean_table", "fetch_object"):
        assert validate(builtin_manifest(task)).valid


def test_dumpling_skill_set():
    m = builtin_manifest("dumpling")
    assert set(m.skill_names) == {"dumpling.plan", "dumpling.prepare", "dumpling.wrap",
                                  "dumpling.recover", "dumpling.boil"}


def test_dangling_on_failure_is_interface_violation():
    bad = with_skill_change(builtin_manifest("dumpling"), "dumpling.wrap",
                            on_failure="dumpling.nonexistent")
    report = validate(bad)
    assert not report.valid
    assert report.by_category(Category.INTERFACE)
    assert not report.by_category(Category.DEPENDENCY)


def test_duplicate_skill_names_flagged():
    data = builtin_manifest("clean_table").to_dict()
    data["skills"].append(dict(data["skills"][1]))
    report = validate(Manifest.from_dict(data))
    assert any("duplicate" in v.message for v in report.by_category(Category.INTERFACE))


def test_mutual_dependency_cycle():
    a, b = tiny("alpha", ["beta"]), tiny("beta", ["alpha"])
    report = validate(a, pending=(b,))
    assert report.by_category(Category.DEPENDENCY)
    assert any("cycle" in v.message for v in report.violations)


def test_unsatisfied_dependency():
    report = validate(tiny("alpha", ["ghost"]))
    assert report.by_category(Category.DEPENDENCY)


def test_structural_problems():
    m = builtin_manifest("clean_table")
    assert validate(edited(m, name="")).by_category(Category.STRUCTURAL)
    assert validate(edited(m, version="one")).by_category(Category.STRUCTURAL)
    assert validate(edited(m, capabilities=["table_cleaning", "flying"])).by_category(Category.STRUCTURAL)
    no_plan = m.to_dict()
    no_plan["skills"] = [s for s in no_plan["skills"] if s["name"] != "clean.plan"]
    assert validate(Manifest.from_dict(no_plan)).by_category(Category.STRUCTURAL)


@pytest.mark.parametrize("key", sorted(AGENT_CONSTRUCTS))
def test_agent_constructs_rejected(key):
    data = builtin_manifest("clean_table").to_dict()
    data[key] = {}
    with pytest.raises(ManifestFormatError):
        Manifest.from_dict(data)


def test_manifest_roundtrip(tmp_path):
    m = builtin_manifest("fetch_object")
    path = write_package(m, tmp_path)
    assert load_manifest(path) == m
    assert load_manifest(path / "manifest.json") == m
    assert Manifest.from_dict(json.loads(m.to_json())) == m


def test_versions():
    assert version_satisfies("1.2.3", "^1.0.0")
    assert not version_satisfies("2.0.0", "^1.0.0")
    assert version_satisfies("1.0.0", "1.0.0")
    assert not version_satisfies("1.0.1", "1.0.0")


# -- lifecycle -----------------------------------------------------------------


def test_happy_path_makes_skills_discoverable():
    reg = Registry()
    m = builtin_manifest("dumpling")
    reg.install(m)
    assert reg.discover_skills() == []
    reg.transition(m.name, S.CONFIGURED, {})
    reg.transition(m.name, S.ACTIVE)
    assert {d.name for d in reg.discover_skills()} == set(m.skill_names)


def test_reactivation_loop():
    reg = builtin_registry("dumpling")
    reg.transition("make_dumplings", S.DEACTIVATED)
    assert reg.discover_skills() == []
    reg.transition("make_dumplings", S.ACTIVE)
    assert len(reg.discover_skills()) == 5


def test_skip_configured_is_illegal():
    reg = Registry()
    reg.install(builtin_manifest("dumpling"))
    with pytest.raises(IllegalTransition):
        reg.transition("make_dumplings", S.ACTIVE)


def test_unknown_package():
    with pytest.raises(UnknownPackage):
        Registry().transition("nothing", S.ACTIVE)


def test_discovery_visibility():
    assert Registry().discover_skills() == []
    reg = builtin_registry("dumpling", "clean_table")
    reg.transition("clean_table", S.DEACTIVATED)
    names = {d.name for d in reg.discover_skills()}
    assert names == set(builtin_manifest("dumpling").skill_names)
    assert not any(n.startswith("clean.") for n in names)


def test_hot_swap_adds_skills_atomically():
    reg = builtin_registry("dumpling")
    latency = reg.hot_swap(builtin_manifest("clean_table"))
    assert latency >= 0
    assert reg.state("clean_table") is S.ACTIVE
    assert len(reg.discover_skills()) >= 7
    with pytest.raises(IllegalTransition):
        reg.hot_swap(builtin_manifest("clean_table"))


def test_rejected_swap_leaves_registry_unchanged():
    reg = builtin_registry("dumpling")
    before = reg.fingerprint()
    bad = with_skill_change(builtin_manifest("clean_table"), "clean.wipe", on_failure="clean.gone")
    with pytest.raises(ValidationFailed):
        reg.hot_swap(bad)
    with pytest.raises(ValidationFailed):
        reg.install(bad)
    assert reg.fingerprint() == before


def test_transitions_refused_while_executing():
    reg = builtin_registry("dumpling")
    with reg.executing():
        with pytest.raises(IllegalTransition):
            reg.transition("make_dumplings", S.DEACTIVATED)
    reg.transition("make_dumplings", S.DEACTIVATED)


def test_snapshot_is_read_only():
    reg = builtin_registry()
    snap = reg.snapshot()
    with pytest.raises(TypeError):
        snap["x"] = None  # type: ignore[index]


def test_save_load_roundtrip(tmp_path):
    reg = builtin_registry("dumpling")
    reg.hot_swap(builtin_manifest("fetch_object"))
    reg.save(tmp_path)
    again = Registry.load(tmp_path)
    assert again.fingerprint() == reg.fingerprint()
    assert again.replay_states() == {n: r.state for n, r in again.snapshot().items()}


STATES = list(S)


@settings(max_examples=300, deadline=None)
@given(st.lists(st.sampled_from(STATES), max_size=30))
def test_lifecycle_fsm_legality(targets):
    reg = Registry()
    m = builtin_manifest("clean_table")
    state = None
    for target in targets:
        legal = is_legal(state, target)
        try:
            if target is S.INSTALLED:
                reg.install(m)
            else:
                reg.transition(m.name, target, {})
        except (IllegalTransition, UnknownPackage):
            assert not legal
            continue
        assert legal, f"{state} -> {target} should have been refused"
        state = target
        skills_visible = bool(reg.discover_skills())
        assert skills_visible == (state is S.ACTIVE)
    if state is not None:
        assert reg.replay_states() == {m.name: state}


def test_legal_transition_table():
    assert LEGAL_TRANSITIONS[S.INSTALLED] == {S.CONFIGURED}
    assert LEGAL_TRANSITIONS[S.DEACTIVATED] == {S.ACTIVE, S.REMOVED}
    assert is_legal(None, S.INSTALLED) and is_legal(S.REMOVED, S.INSTALLED)
    assert not is_legal(S.ACTIVE, S.REMOVED)
