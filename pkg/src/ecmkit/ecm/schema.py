"""Capability package manifest: capabilities, skills, model stubs, permissions, dependencies.

On disk a package is a directory ``<name>-<version>/`` holding one
``manifest.json``. Top-level keys are exactly ``MANIFEST_KEYS``; anything
else (in particular identity, memory, planner or goal fields) is rejected by
the validator. Agent-level state never lives inside a package.
"""

from __future__ import annotations

import json
import re
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any

from ..errors import EcmKitError

MANIFEST_FILE = "manifest.json"
MANIFEST_KEYS = frozenset({"name", "version", "capabilities", "skills", "models_tools",
                           "permissions", "dependencies", "interfaces"})
SKILL_KEYS = frozenset({"name", "inputs", "outputs", "effects", "risk_level", "actuators",
                        "default_retry", "on_failure", "provides"})
PERMISSION_KEYS = frozenset({"readable_observations", "allowed_actuators",
                             "blocked_actuators", "max_risk_level", "resource_quotas"})
AGENT_CONSTRUCTS = frozenset({"identity", "memory", "planner", "goal"})

MAX_DEFAULT_RETRY = 5

_SEMVER = re.compile(r"^(0|[1-9]\d*)\.(0|[1-9]\d*)\.(0|[1-9]\d*)$")
_IDENT = re.compile(r"^[a-z][a-z0-9_]*$")
_SKILL_NAME = re.compile(r"^[a-z][a-z0-9_]*\.[a-z][a-z0-9_]*$")


class RiskLevel(str, Enum):
    LOW = "low"
    MEDIUM = "medium"
    HIGH = "high"

    @property
    def rank(self) -> int:
        return _RISK_RANK[self]

    def __le__(self, other: "RiskLevel") -> bool:  # type: ignore[override]
        return self.rank <= RiskLevel(other).rank

    def __lt__(self, other: "RiskLevel") -> bool:  # type: ignore[override]
        return self.rank < RiskLevel(other).rank


_RISK_RANK = {RiskLevel.LOW: 0, RiskLevel.MEDIUM: 1, RiskLevel.HIGH: 2}


def parse_version(text: str) -> tuple[int, int, int]:
    m = _SEMVER.match(text or "")
    if not m:
        raise ValueError(f"not a MAJOR.MINOR.PATCH version: {text!r}")
    return int(m[1]), int(m[2]), int(m[3])


def version_satisfies(version: str, constraint: str) -> bool:
    """Exact (``1.2.3``) or caret (``^1.2.3``) matching."""
    have = parse_version(version)
    if constraint.startswith("^"):
        want = parse_version(constraint[1:])
        if have < want:
            return False
        if want[0] > 0:
            return have[0] == want[0]
        if want[1] > 0:
            return have[:2] == want[:2]
        return have == want
    return have == parse_version(constraint)


def is_identifier(text: Any) -> bool:
    return isinstance(text, str) and bool(_IDENT.match(text))


def is_skill_name(text: Any) -> bool:
    return isinstance(text, str) and bool(_SKILL_NAME.match(text))


def namespace_of(skill: str) -> str:
    return skill.split(".", 1)[0]


@dataclass(frozen=True)
class SkillDef:
    """A typed executable unit ``inputs -> outputs`` with declared effects."""

    name: str
    inputs: dict[str, str] = field(default_factory=dict)
    outputs: dict[str, str] = field(default_factory=dict)
    effects: tuple[str, ...] = ()
    risk_level: RiskLevel = RiskLevel.LOW
    actuators: tuple[str, ...] = ()
    default_retry: int = 0
    on_failure: str | None = None
    provides: tuple[str, ...] = ()

    def __hash__(self) -> int:
        return hash(self.name)

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["risk_level"] = self.risk_level.value
        d["effects"] = list(self.effects)
        d["actuators"] = list(self.actuators)
        d["provides"] = list(self.provides)
        return d


@dataclass(frozen=True)
class PermissionProfile:
    readable_observations: tuple[str, ...] = ()
    allowed_actuators: tuple[str, ...] = ()
    blocked_actuators: tuple[str, ...] = ()
    max_risk_level: RiskLevel = RiskLevel.MEDIUM
    resource_quotas: dict[str, int] = field(default_factory=dict)

    def __hash__(self) -> int:
        return hash((self.allowed_actuators, self.blocked_actuators, self.max_risk_level))

    def to_dict(self) -> dict[str, Any]:
        return {
            "readable_observations": list(self.readable_observations),
            "allowed_actuators": list(self.allowed_actuators),
            "blocked_actuators": list(self.blocked_actuators),
            "max_risk_level": self.max_risk_level.value,
            "resource_quotas": dict(self.resource_quotas),
        }


@dataclass(frozen=True)
class Dependency:
    name: str
    version: str  # exact "1.0.0" or caret "^1.0.0"


@dataclass(frozen=True)
class Manifest:
    name: str
    version: str
    capabilities: tuple[str, ...]
    skills: tuple[SkillDef, ...]
    models_tools: tuple[dict[str, Any], ...] = ()
    permissions: PermissionProfile = field(default_factory=PermissionProfile)
    dependencies: tuple[Dependency, ...] = ()
    interfaces: dict[str, str] = field(default_factory=dict)

    def __hash__(self) -> int:
        return hash((self.name, self.version))

    @property
    def key(self) -> str:
        return f"{self.name}-{self.version}"

    def skill(self, name: str) -> SkillDef | None:
        for s in self.skills:
            if s.name == name:
                return s
        return None

    @property
    def skill_names(self) -> tuple[str, ...]:
        return tuple(s.name for s in self.skills)

    def to_dict(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "version": self.version,
            "capabilities": list(self.capabilities),
            "skills": [s.to_dict() for s in self.skills],
            "models_tools": [dict(m) for m in self.models_tools],
            "permissions": self.permissions.to_dict(),
            "dependencies": [{"name": d.name, "version": d.version} for d in self.dependencies],
            "interfaces": dict(self.interfaces),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=False) + "\n"

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "Manifest":
        """Lenient construction; structural problems are left for the validator.

        Raises ``ManifestFormatError`` only when the payload cannot be shaped
        into a Manifest at all (wrong container types, bad enum values).
        """
        problems = raw_structure_problems(data)
        if problems:
            raise ManifestFormatError(problems)
        perms = data.get("permissions") or {}
        return cls(
            name=data.get("name", ""),
            version=data.get("version", ""),
            capabilities=tuple(data.get("capabilities") or ()),
            skills=tuple(_skill_from_dict(s) for s in data.get("skills") or ()),
            models_tools=tuple(dict(m) for m in data.get("models_tools") or ()),
            permissions=PermissionProfile(
                readable_observations=tuple(perms.get("readable_observations") or ()),
                allowed_actuators=tuple(perms.get("allowed_actuators") or ()),
                blocked_actuators=tuple(perms.get("blocked_actuators") or ()),
                max_risk_level=RiskLevel(perms.get("max_risk_level", "medium")),
                resource_quotas=dict(perms.get("resource_quotas") or {}),
            ),
            dependencies=tuple(Dependency(d["name"], d["version"])
                               for d in data.get("dependencies") or ()),
            interfaces=dict(data.get("interfaces") or {}),
        )


class ManifestFormatError(EcmKitError, ValueError):
    def __init__(self, problems: list[str]):
        self.problems = problems
        super().__init__("; ".join(problems))


def _skill_from_dict(d: dict[str, Any]) -> SkillDef:
    return SkillDef(
        name=d.get("name", ""),
        inputs=dict(d.get("inputs") or {}),
        outputs=dict(d.get("outputs") or {}),
        effects=tuple(d.get("effects") or ()),
        risk_level=RiskLevel(d.get("risk_level", "low")),
        actuators=tuple(d.get("actuators") or ()),
        default_retry=d.get("default_retry", 0),
        on_failure=d.get("on_failure"),
        provides=tuple(d.get("provides") or ()),
    )


def raw_structure_problems(data: Any) -> list[str]:
    """Shape checks on the raw JSON object, before dataclass construction."""
    if not isinstance(data, dict):
        return ["manifest must be a JSON object"]
    problems = []
    for key in sorted(set(data) - MANIFEST_KEYS):
        if key in AGENT_CONSTRUCTS:
            problems.append(f"agent-level construct {key!r} is not allowed in a package")
        else:
            problems.append(f"unknown top-level key {key!r}")
    for key in ("capabilities", "skills", "models_tools", "dependencies"):
        if key in data and not isinstance(data[key], list):
            problems.append(f"{key!r} must be a list")
    for key in ("permissions", "interfaces"):
        if key in data and not isinstance(data[key], dict):
            problems.append(f"{key!r} must be an object")
    for i, s in enumerate(data.get("skills") or [] if isinstance(data.get("skills"), list) else []):
        if not isinstance(s, dict):
            problems.append(f"skills[{i}] must be an object")
            continue
        for key in sorted(set(s) - SKILL_KEYS):
            problems.append(f"skills[{i}]: unknown key {key!r}")
        if s.get("risk_level", "low") not in {r.value for r in RiskLevel}:
            problems.append(f"skills[{i}]: bad risk_level {s.get('risk_level')!r}")
        for key in ("inputs", "outputs"):
            if key in s and not isinstance(s[key], dict):
                problems.append(f"skills[{i}]: {key!r} must be an object")
    perms = data.get("permissions")
    if isinstance(perms, dict):
        for key in sorted(set(perms) - PERMISSION_KEYS):
            problems.append(f"permissions: unknown key {key!r}")
        if perms.get("max_risk_level", "medium") not in {r.value for r in RiskLevel}:
            problems.append(f"permissions: bad max_risk_level {perms.get('max_risk_level')!r}")
    deps = data.get("dependencies")
    if isinstance(deps, list):
        for i, d in enumerate(deps):
            if not (isinstance(d, dict) and isinstance(d.get("name"), str)
                    and isinstance(d.get("version"), str)):
                problems.append(f"dependencies[{i}] must be {{name, version}} strings")
    return problems


def load_manifest(path: str | Path) -> Manifest:
    """Load from a package directory or directly from a manifest file."""
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST_FILE
    with path.open(encoding="utf-8") as fh:
        return Manifest.from_dict(json.load(fh))


def write_package(manifest: Manifest, root: str | Path) -> Path:
    directory = Path(root) / manifest.key
    directory.mkdir(parents=True, exist_ok=True)
    (directory / MANIFEST_FILE).write_text(manifest.to_json(), encoding="utf-8")
    return directory
