"""Exception hierarchy for the membundle toolkit.

Every error raised by this package derives from :class:`MembundleError`,
grouped by subsystem so callers can catch at whatever granularity they need.
"""

from __future__ import annotations


class MembundleError(Exception):
    """Base class for all membundle errors."""


# --- archive ---------------------------------------------------------------

class ArchiveError(MembundleError):
    """Base class for in-memory ZIP archive errors."""


class NotAnArchive(ArchiveError):
    """No end-of-central-directory signature in the trailing search window."""


class CorruptDirectory(ArchiveError):
    """Central directory disagrees with the end record or with itself."""


class UnsupportedArchiveFeature(ArchiveError):
    """Archive uses a feature we reject: ZIP64, encryption, spanning, or a
    compression method other than stored/deflate."""


class EntryNotFound(ArchiveError):
    """Requested entry path is not in the archive directory."""


class ChecksumMismatch(ArchiveError):
    """Recorded CRC-32 differs from the CRC-32 of the decompressed bytes."""


class DecompressFailure(ArchiveError):
    """Deflate stream is damaged or inflates to the wrong size."""


# --- resolver / frozen -----------------------------------------------------

class InvalidName(MembundleError):
    """Dotted module name is malformed."""


class ModuleNotFound(MembundleError):
    """No finder in the chain could provide a loader for the name."""


class ExecutionError(MembundleError):
    """The module executor rejected a payload (bad directive, import cycle,
    failed nested import)."""


class PositionOutOfRange(MembundleError):
    """Finder insertion position is outside the chain."""


class TableSealed(MembundleError):
    """Frozen table mutation attempted after seal."""


class NativeNotFreezable(MembundleError):
    """Native extensions may not be placed in the frozen table."""


# --- nativeload ------------------------------------------------------------

class NativeLoadError(MembundleError):
    """Base class for native image loading errors."""


class MalformedImage(NativeLoadError):
    """Bytes do not parse as a loadable shared object for this host, or use
    format features outside the supported subset."""


class UnresolvedImport(NativeLoadError):
    """A dependency or imported symbol is neither aliased nor resolvable
    through the system loader."""

    def __init__(self, name: str, detail: str = ""):
        self.name = name
        super().__init__(f"unresolved import {name!r}" + (f": {detail}" if detail else ""))


class MapFailure(NativeLoadError):
    """Memory mapping or protection change failed."""


class InitializerFailure(NativeLoadError):
    """An image initializer raised or crashed during load."""


class SymbolNotFound(NativeLoadError):
    """Export table has no symbol by that name."""


class ImageUnloaded(NativeLoadError):
    """Operation on a handle that has already been unloaded."""


class AlreadyRegistered(NativeLoadError):
    """Alias name registered twice."""


class OsLoaderFailure(NativeLoadError):
    """The operating system's own loader rejected the object (oracle path)."""


# --- runtime ---------------------------------------------------------------

class BootstrapFailure(MembundleError):
    """Runtime bootstrap failed; ``stage`` names the stage that failed."""

    def __init__(self, stage: str, detail: str = ""):
        self.stage = stage
        super().__init__(f"bootstrap failed at stage {stage!r}" + (f": {detail}" if detail else ""))


class GateMisuse(MembundleError):
    """Execution gate released without acquire, or with a foreign token."""


class PhaseViolation(MembundleError):
    """Runtime operation attempted in the wrong lifecycle phase."""


# --- bundler ---------------------------------------------------------------

class UnreadableTree(MembundleError):
    """Bundle source root does not exist or cannot be read."""


class AuditViolation(MembundleError):
    """Native dependency audit found forbidden dynamic dependencies."""

    def __init__(self, findings):
        self.findings = list(findings)
        names = ", ".join(f"{f.extension}->{f.dependency}" for f in self.findings)
        super().__init__(f"dependency audit violations: {names}")


class InvalidSymbol(MembundleError):
    """Requested array symbol is not a valid C identifier."""


class IoFailure(MembundleError):
    """Filesystem write failed while emitting bundle outputs."""
