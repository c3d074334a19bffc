"""Capability packages: schema, validation, registry and the bundled task packages."""

from __future__ import annotations

import json
from functools import lru_cache
from importlib import resources

from ..worldsim import TaskId
from .registry import (
    LEGAL_TRANSITIONS,
    DiscoveredSkill,
    LifecycleEvent,
    LifecycleState,
    PackageRecord,
    Registry,
    is_legal,
)
from .schema import (
    AGENT_CONSTRUCTS,
    Dependency,
    Manifest,
    ManifestFormatError,
    PermissionProfile,
    RiskLevel,
    SkillDef,
    load_manifest,
    write_package,
)
from .validation import Category, ValidationReport, Violation, validate

PACKAGE_FOR_TASK: dict[TaskId, str] = {
    TaskId.DUMPLING: "make_dumplings",
    TaskId.CLEAN_TABLE: "clean_table",
    TaskId.FETCH_OBJECT: "fetch_object",
}


@lru_cache(maxsize=None)
def builtin_manifest(task: TaskId | str) -> Manifest:
    """Bundled package for one of the three benchmark tasks."""
    name = PACKAGE_FOR_TASK[TaskId.parse(task)]
    ref = resources.files("ecmkit") / "packages" / f"{name}-1.0.0" / "manifest.json"
    return Manifest.from_dict(json.loads(ref.read_text(encoding="utf-8")))


def builtin_registry(*tasks: TaskId | str) -> Registry:
    """Registry with the given tasks' packages Active (all three by default)."""
    reg = Registry()
    for task in tasks or tuple(TaskId):
        reg.activate(builtin_manifest(task))
    return reg


__all__ = [
    "AGENT_CONSTRUCTS", "Category", "Dependency", "DiscoveredSkill", "LEGAL_TRANSITIONS",
    "LifecycleEvent", "LifecycleState", "Manifest", "ManifestFormatError", "PACKAGE_FOR_TASK",
    "PackageRecord", "PermissionProfile", "Registry", "RiskLevel", "SkillDef",
    "ValidationReport", "Violation", "builtin_manifest", "builtin_registry", "is_legal",
    "load_manifest", "validate", "write_package",
]
