"""Domain error types shared across the package.

Every error that crosses a module boundary lives here so the CLI and the
service can map them to exit codes / HTTP statuses in one place.
"""


class LivorlabError(Exception):
    """Base class for all domain errors."""


# --- spectral -----------------------------------------------------------

class GridMismatch(LivorlabError):
    """Two spectra that must share a wavelength grid do not."""


class DegenerateReference(LivorlabError):
    """white - dark is not strictly positive at every wavelength."""


class MissingChromophore(LivorlabError):
    """A concentration refers to a chromophore with no extinction record."""


class GridOutOfRange(LivorlabError):
    """A wavelength grid extends beyond tabulated data; no extrapolation."""


class ZeroTotalHemoglobin(LivorlabError):
    """CO-Hb fraction is undefined when all hemoglobin species are zero."""


class CsvFormatError(LivorlabError):
    """A spectrum CSV file does not parse; carries the offending line number."""

    def __init__(self, message: str, line: int | None = None):
        super().__init__(message)
        self.line = line


# --- extinction data ----------------------------------------------------

class ChecksumMismatch(LivorlabError):
    """Extinction table content does not match its manifest hash."""


class CoverageGap(LivorlabError):
    """Extinction table does not cover a required chromophore or range."""


# --- mie ----------------------------------------------------------------

class NonConvergent(LivorlabError):
    """Mie series produced non-finite terms for the given input."""


# --- mcrt ---------------------------------------------------------------

class InvalidStack(LivorlabError):
    """Layer stack violates a structural invariant."""


class GridTooLarge(LivorlabError):
    """Requested LUT grid exceeds the configured node cap."""


class OutOfGrid(LivorlabError):
    """LUT lookup outside the tabulated axis ranges."""

    def __init__(self, message: str, coords: dict | None = None):
        super().__init__(message)
        self.coords = coords or {}


class LutFormatError(LivorlabError):
    """A LUT file is malformed or has an unsupported version."""


# --- inverse ------------------------------------------------------------

class InfeasibleStart(LivorlabError):
    """Initial guess cannot be evaluated (outside LUT coverage)."""


class NonFiniteResidual(LivorlabError):
    """Objective evaluation produced NaN or infinity."""


class ConfigInvalid(LivorlabError):
    """Fit or analysis configuration violates its invariants."""


# --- eln / api ----------------------------------------------------------

class Unauthorized(LivorlabError):
    """Caller lacks the role or session required for the operation."""


class ValidationFailed(LivorlabError):
    """Request payload fails domain validation."""


class CaseNotFound(LivorlabError):
    """No case with the given identifier."""


class CaseClosed(LivorlabError):
    """Operation not permitted on a closed case."""


class MeasurementNotFound(LivorlabError):
    """No measurement with the given identifier."""


class IllegalTransition(LivorlabError):
    """Requested case state transition is not an edge of the state machine."""


class ImmutableRecord(LivorlabError):
    """Attempted mutation of an immutable record."""


class JobNotFound(LivorlabError):
    """No analysis job with the given identifier."""


class StoreError(LivorlabError):
    """Underlying store failure (I/O, lock, corruption)."""


class StoreLocked(LivorlabError):
    """Store is locked by another process (running service)."""
