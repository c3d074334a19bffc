"""Exception hierarchy shared by every layer."""

from __future__ import annotations


class EcmKitError(Exception):
    """Base class for domain errors (mapped to exit code 1 by the CLI)."""


class UnknownTask(EcmKitError, ValueError):
    pass


class UnknownSkill(EcmKitError, KeyError):
    def __str__(self) -> str:  # KeyError quotes its message otherwise
        return str(self.args[0]) if self.args else "unknown skill"


class NoMatchingTask(EcmKitError, ValueError):
    pass


class UnknownPackage(EcmKitError, KeyError):
    def __str__(self) -> str:
        return str(self.args[0]) if self.args else "unknown package"


class IllegalTransition(EcmKitError):
    pass


class ValidationFailed(EcmKitError):
    """Raised when a package is rejected; carries the full report."""

    def __init__(self, report):
        self.report = report
        super().__init__(f"package {report.package!r} failed validation:\n{report.describe()}")


class InactiveEcm(EcmKitError):
    pass


class SingleAgentViolation(EcmKitError):
    pass
