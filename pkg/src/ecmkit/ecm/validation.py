"""Pre-install checks: structure, dependency consistency, interface correctness."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import TYPE_CHECKING, Iterable

from .schema import (
    MAX_DEFAULT_RETRY,
    Manifest,
    is_identifier,
    is_skill_name,
    namespace_of,
    parse_version,
    version_satisfies,
)

if TYPE_CHECKING:
    from .registry import Registry


class Category(str, Enum):
    STRUCTURAL = "structural"
    DEPENDENCY = "dependency"
    INTERFACE = "interface"


@dataclass(frozen=True)
class Violation:
    category: Category
    message: str

    def __str__(self) -> str:
        return f"[{self.category.value}] {self.message}"


@dataclass
class ValidationReport:
    package: str
    violations: list[Violation] = field(default_factory=list)

    @property
    def valid(self) -> bool:
        return not self.violations

    def by_category(self, category: Category) -> list[Violation]:
        return [v for v in self.violations if v.category is category]

    def add(self, category: Category, message: str) -> None:
        self.violations.append(Violation(category, message))

    def describe(self) -> str:
        return "\n".join(f"  {v}" for v in self.violations) or "  ok"


def validate(package: Manifest, registry: "Registry | None" = None, *,
             pending: Iterable[Manifest] = ()) -> ValidationReport:
    """Check ``package`` against itself and the packages already in ``registry``.

    ``pending`` holds manifests being installed together with ``package``;
    they take part in dependency resolution and cycle detection.
    """
    report = ValidationReport(package.name or "<unnamed>")
    _structural(package, report)
    _interface(package, registry, report)
    _dependencies(package, registry, tuple(pending), report)
    return report


def _structural(m: Manifest, report: ValidationReport) -> None:
    add = lambda msg: report.add(Category.STRUCTURAL, msg)  # noqa: E731
    if not is_identifier(m.name):
        add(f"package name {m.name!r} must be a nonempty lowercase identifier")
    try:
        parse_version(m.version)
    except ValueError as exc:
        add(str(exc))
    if not m.skills:
        add("package declares no skills")
    namespaces = set()
    for s in m.skills:
        if not is_skill_name(s.name):
            add(f"skill name {s.name!r} must be namespaced as '<ns>.<action>'")
            continue
        namespaces.add(namespace_of(s.name))
        if not isinstance(s.default_retry, int) or isinstance(s.default_retry, bool) \
                or not 0 <= s.default_retry <= MAX_DEFAULT_RETRY:
            add(f"{s.name}: default_retry must be an integer in [0, {MAX_DEFAULT_RETRY}]")
        for label, sig in (("inputs", s.inputs), ("outputs", s.outputs)):
            if not all(isinstance(k, str) and isinstance(v, str) for k, v in sig.items()):
                add(f"{s.name}: {label} must map field names to type names")
        for cap in s.provides:
            if cap not in m.capabilities:
                add(f"{s.name}: provides undeclared capability {cap!r}")
    if len(namespaces) > 1:
        add(f"skills span several namespaces: {sorted(namespaces)}")
    elif namespaces:
        (ns,) = namespaces
        if f"{ns}.plan" not in m.skill_names:
            add(f"missing entry point '{ns}.plan'")
    provided = {c for s in m.skills for c in s.provides}
    for cap in m.capabilities:
        if cap not in provided:
            add(f"capability {cap!r} is not provided by any skill")
    overlap = set(m.permissions.allowed_actuators) & set(m.permissions.blocked_actuators)
    if overlap:
        add(f"actuators both allowed and blocked: {sorted(overlap)}")
    for stub in m.models_tools:
        if not isinstance(stub.get("name"), str) or not stub.get("name"):
            add("models_tools entries need a nonempty 'name'")


def _interface(m: Manifest, registry: "Registry | None", report: ValidationReport) -> None:
    add = lambda msg: report.add(Category.INTERFACE, msg)  # noqa: E731
    seen: set[str] = set()
    for s in m.skills:
        if s.name in seen:
            add(f"duplicate skill name {s.name!r}")
        seen.add(s.name)
    names = set(m.skill_names)
    for s in m.skills:
        if s.on_failure is not None and s.on_failure not in names:
            add(f"{s.name}: on_failure target {s.on_failure!r} is not a skill of this package")
        if s.on_failure == s.name:
            add(f"{s.name}: on_failure may not point at itself")
    dep_names = {d.name for d in m.dependencies}
    for binding, target in m.interfaces.items():
        if target not in dep_names:
            add(f"interface {binding!r} bound to {target!r}, which is not a declared dependency")
    if registry is not None:
        for other in registry.live_manifests():
            if other.name == m.name:
                continue
            clash = names & set(other.skill_names)
            if clash:
                add(f"skill names already provided by {other.name}: {sorted(clash)}")


def _dependencies(m: Manifest, registry: "Registry | None", pending: tuple[Manifest, ...],
                  report: ValidationReport) -> None:
    universe: dict[str, Manifest] = {}
    if registry is not None:
        universe.update({o.name: o for o in registry.live_manifests()})
    universe.update({p.name: p for p in pending})
    universe[m.name] = m
    for dep in m.dependencies:
        if dep.name == m.name:
            report.add(Category.DEPENDENCY, "package depends on itself")
            continue
        target = universe.get(dep.name)
        if target is None:
            report.add(Category.DEPENDENCY, f"unsatisfied dependency {dep.name} {dep.version}")
            continue
        try:
            ok = version_satisfies(target.version, dep.version)
        except ValueError as exc:
            report.add(Category.DEPENDENCY, f"bad constraint for {dep.name}: {exc}")
            continue
        if not ok:
            report.add(Category.DEPENDENCY,
                       f"{dep.name} {target.version} does not satisfy {dep.version}")
    cycle = _find_cycle(m.name, universe)
    if cycle:
        report.add(Category.DEPENDENCY, "dependency cycle: " + " -> ".join(cycle))


def _find_cycle(start: str, universe: dict[str, Manifest]) -> list[str] | None:
    """Return a cycle through ``start`` if one exists (iterative DFS)."""
    stack = [(start, [start])]
    visited: set[str] = set()
    while stack:
        node, path = stack.pop()
        manifest = universe.get(node)
        if manifest is None:
            continue
        for dep in manifest.dependencies:
            if dep.name == start:
                return path + [start]
            if dep.name not in visited:
                visited.add(dep.name)
                stack.append((dep.name, path + [dep.name]))
    return None
