"""Package registry with a lifecycle state machine and discovery.

Writers are serialized behind one lock and publish a fresh immutable
mapping on every change, so readers always see a complete pre- or
post-transition view.
"""

from __future__ import annotations

import contextlib
import hashlib
import json
import threading
import time
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from types import MappingProxyType
from typing import Any, Iterator, Mapping

from ..errors import IllegalTransition, UnknownPackage, ValidationFailed
from .schema import Manifest, SkillDef
from .validation import ValidationReport, validate


class LifecycleState(str, Enum):
    INSTALLED = "Installed"
    CONFIGURED = "Configured"
    ACTIVE = "Active"
    DEACTIVATED = "Deactivated"
    REMOVED = "Removed"


LEGAL_TRANSITIONS: dict[LifecycleState, frozenset[LifecycleState]] = {
    LifecycleState.INSTALLED: frozenset({LifecycleState.CONFIGURED}),
    LifecycleState.CONFIGURED: frozenset({LifecycleState.ACTIVE}),
    LifecycleState.ACTIVE: frozenset({LifecycleState.DEACTIVATED}),
    LifecycleState.DEACTIVATED: frozenset({LifecycleState.ACTIVE, LifecycleState.REMOVED}),
    LifecycleState.REMOVED: frozenset(),
}


def is_legal(src: LifecycleState | None, dst: LifecycleState) -> bool:
    if src is None or src is LifecycleState.REMOVED:
        return dst is LifecycleState.INSTALLED
    return dst in LEGAL_TRANSITIONS[src]


@dataclass(frozen=True)
class PackageRecord:
    manifest: Manifest
    state: LifecycleState
    config: Mapping[str, Any] = field(default_factory=dict)


@dataclass(frozen=True)
class LifecycleEvent:
    seq: int
    timestamp: float
    package: str
    version: str
    from_state: LifecycleState | None
    to_state: LifecycleState

    def to_json(self) -> str:
        return json.dumps({
            "seq": self.seq,
            "timestamp": self.timestamp,
            "package": self.package,
            "version": self.version,
            "from": self.from_state.value if self.from_state else None,
            "to": self.to_state.value,
        }, sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "LifecycleEvent":
        d = json.loads(line)
        return cls(d["seq"], d["timestamp"], d["package"], d["version"],
                   LifecycleState(d["from"]) if d["from"] else None, LifecycleState(d["to"]))


@dataclass(frozen=True)
class DiscoveredSkill:
    name: str
    skill: SkillDef
    package: str


class Registry:
    def __init__(self) -> None:
        self._lock = threading.RLock()
        self._records: Mapping[str, PackageRecord] = MappingProxyType({})
        self._events: list[LifecycleEvent] = []
        self._executing = 0

    # -- reads -----------------------------------------------------------

    def snapshot(self) -> Mapping[str, PackageRecord]:
        return self._records

    def __contains__(self, name: str) -> bool:
        return name in self._records

    def record(self, name: str) -> PackageRecord:
        try:
            return self._records[name]
        except KeyError:
            raise UnknownPackage(f"package {name!r} is not registered") from None

    def state(self, name: str) -> LifecycleState:
        return self.record(name).state

    def live_manifests(self) -> list[Manifest]:
        """Manifests of every package that has not been removed."""
        return [r.manifest for r in self._records.values()
                if r.state is not LifecycleState.REMOVED]

    def active_packages(self) -> list[str]:
        return sorted(n for n, r in self._records.items() if r.state is LifecycleState.ACTIVE)

    @property
    def events(self) -> tuple[LifecycleEvent, ...]:
        return tuple(self._events)

    def discover_skills(self) -> list[DiscoveredSkill]:
        """Skills of Active packages, ordered by namespaced name."""
        records = self._records
        found = [DiscoveredSkill(s.name, s, name)
                 for name, r in records.items() if r.state is LifecycleState.ACTIVE
                 for s in r.manifest.skills]
        return sorted(found, key=lambda d: (d.name, d.package))

    def find_skill(self, skill: str) -> DiscoveredSkill | None:
        for r_name, r in self._records.items():
            if r.state is LifecycleState.ACTIVE:
                sd = r.manifest.skill(skill)
                if sd is not None:
                    return DiscoveredSkill(skill, sd, r_name)
        return None

    def fingerprint(self) -> bytes:
        payload = {
            "records": {n: {"manifest": r.manifest.to_dict(), "state": r.state.value,
                            "config": dict(r.config)}
                        for n, r in sorted(self._records.items())},
            "events": [e.to_json() for e in self._events],
        }
        return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).digest()

    def replay_states(self) -> dict[str, LifecycleState]:
        """Rebuild current states from the event log alone."""
        states: dict[str, LifecycleState] = {}
        for e in self._events:
            states[e.package] = e.to_state
        return states

    # -- writes ----------------------------------------------------------

    @contextlib.contextmanager
    def executing(self) -> Iterator[None]:
        """Hold while a trial runs; lifecycle changes are refused meanwhile."""
        with self._lock:
            self._executing += 1
        try:
            yield
        finally:
            with self._lock:
                self._executing -= 1

    def _check_unlocked(self) -> None:
        if self._executing:
            raise IllegalTransition("lifecycle changes are not allowed while a trial is executing")

    def _publish(self, records: dict[str, PackageRecord], events: list[LifecycleEvent]) -> None:
        # one reference assignment: readers see all of it or none of it
        self._events.extend(events)
        self._records = MappingProxyType(records)

    def _event(self, seq_offset: int, manifest: Manifest, src: LifecycleState | None,
               dst: LifecycleState, stamp: float | None = None) -> LifecycleEvent:
        return LifecycleEvent(len(self._events) + seq_offset,
                              time.time() if stamp is None else stamp,
                              manifest.name, manifest.version, src, dst)

    def install(self, manifest: Manifest, *, pending: tuple[Manifest, ...] = ()) -> ValidationReport:
        with self._lock:
            self._check_unlocked()
            current = self._records.get(manifest.name)
            if current is not None and current.state is not LifecycleState.REMOVED:
                raise IllegalTransition(
                    f"{manifest.name} is already registered ({current.state.value}, "
                    f"version {current.manifest.version})")
            report = validate(manifest, self, pending=pending)
            if not report.valid:
                raise ValidationFailed(report)
            records = dict(self._records)
            records[manifest.name] = PackageRecord(manifest, LifecycleState.INSTALLED)
            self._publish(records, [self._event(0, manifest, None, LifecycleState.INSTALLED)])
            return report

    def transition(self, name: str, to: LifecycleState | str,
                   config: Mapping[str, Any] | None = None) -> LifecycleState:
        to = LifecycleState(to)
        with self._lock:
            self._check_unlocked()
            record = self.record(name)
            if not is_legal(record.state, to) or to is LifecycleState.INSTALLED:
                raise IllegalTransition(f"{name}: {record.state.value} -> {to.value} is not allowed")
            new_config = dict(config) if (config is not None and to is LifecycleState.CONFIGURED) \
                else record.config
            records = dict(self._records)
            records[name] = PackageRecord(record.manifest, to, new_config)
            self._publish(records, [self._event(0, record.manifest, record.state, to)])
            return to

    def hot_swap(self, manifest: Manifest) -> float:
        """Install, configure and activate ``manifest`` in one atomic update.

        Returns the wall time of the registry update itself in seconds
        (validation happens before the clock starts).
        """
        with self._lock:
            self._check_unlocked()
            current = self._records.get(manifest.name)
            if current is not None and current.state is not LifecycleState.REMOVED:
                raise IllegalTransition(
                    f"{manifest.name} {current.manifest.version} is already "
                    f"{current.state.value.lower()}")
            report = validate(manifest, self)
            if not report.valid:
                raise ValidationFailed(report)
            start = time.perf_counter()
            records = dict(self._records)
            records[manifest.name] = PackageRecord(manifest, LifecycleState.ACTIVE)
            # one update, one timestamp for all three transitions
            stamp = time.time()
            self._publish(records, [
                self._event(0, manifest, None, LifecycleState.INSTALLED, stamp),
                self._event(1, manifest, LifecycleState.INSTALLED, LifecycleState.CONFIGURED, stamp),
                self._event(2, manifest, LifecycleState.CONFIGURED, LifecycleState.ACTIVE, stamp),
            ])
            return time.perf_counter() - start

    def activate(self, manifest: Manifest, config: Mapping[str, Any] | None = None) -> None:
        """Convenience: install -> configure -> activate as three logged steps."""
        self.install(manifest)
        self.transition(manifest.name, LifecycleState.CONFIGURED, config or {})
        self.transition(manifest.name, LifecycleState.ACTIVE)

    # -- persistence -----------------------------------------------------

    STATE_FILE = "registry.json"
    EVENTS_FILE = "events.log"

    def save(self, directory: str | Path) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        state = {"packages": [{"manifest": r.manifest.to_dict(), "state": r.state.value,
                               "config": dict(r.config)}
                              for _, r in sorted(self._records.items())]}
        (directory / self.STATE_FILE).write_text(json.dumps(state, indent=2) + "\n",
                                                 encoding="utf-8")
        (directory / self.EVENTS_FILE).write_text(
            "".join(e.to_json() + "\n" for e in self._events), encoding="utf-8")

    @classmethod
    def load(cls, directory: str | Path) -> "Registry":
        directory = Path(directory)
        reg = cls()
        state_path = directory / cls.STATE_FILE
        if not state_path.exists():
            return reg
        state = json.loads(state_path.read_text(encoding="utf-8"))
        reg._records = MappingProxyType({
            p["manifest"]["name"]: PackageRecord(Manifest.from_dict(p["manifest"]),
                                                 LifecycleState(p["state"]), p.get("config", {}))
            for p in state["packages"]})
        events_path = directory / cls.EVENTS_FILE
        if events_path.exists():
            reg._events = [LifecycleEvent.from_json(line)
                           for line in events_path.read_text(encoding="utf-8").splitlines()
                           if line.strip()]
        return reg
