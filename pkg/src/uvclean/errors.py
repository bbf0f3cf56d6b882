"""Exception hierarchy shared across the toolkit.

The CLI maps these onto distinct exit codes, so keep transport failures,
validation failures, and "target not found" as separate classes.
"""

from __future__ import annotations


class UvcleanError(Exception):
    """Base class for all toolkit errors."""


class ValidationError(UvcleanError):
    """A bundle, config, or scene spec failed structural validation."""

    def __init__(self, findings: list[str] | str):
        if isinstance(findings, str):
            findings = [findings]
        self.findings = list(findings)
        super().__init__("; ".join(self.findings))


class BackendError(UvcleanError):
    """Base class for detection backend failures."""


class TransportError(BackendError):
    """The remote backend could not be reached (timeout, refused, DNS)."""


class ServerError(BackendError):
    """The remote backend answered with a non-2xx status."""

    def __init__(self, status: int, message: str = ""):
        self.status = status
        super().__init__(f"backend returned HTTP {status}: {message}")


class MalformedMaskError(BackendError):
    """A run-length encoded mask failed structural validation."""


class FixtureError(BackendError):
    """The fixture backend is missing a file or a prompt entry."""


class TargetNotFoundError(UvcleanError):
    """The target prompt produced no detections."""


class StageError(UvcleanError):
    """A pipeline stage failed; carries the stage name for diagnostics."""

    def __init__(self, stage: str, message: str):
        self.stage = stage
        super().__init__(f"[{stage}] {message}")
