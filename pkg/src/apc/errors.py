"""Exception hierarchy for the toolkit.

Every error raised on purpose derives from ApcError so callers (CLI, HTTP
service) can map failures to exit codes / status codes in one place.
"""


class ApcError(Exception):
    """Base class for all toolkit errors."""


class ParameterError(ApcError, ValueError):
    """A model parameter or function argument is outside its domain."""


class ConfigError(ApcError, ValueError):
    """A configuration object violates its invariants."""


class DegeneratePosteriorError(ApcError):
    """An observation drove every particle weight to zero.

    Only possible with lapse = 0 and contradictory extreme data; the
    posterior that raised this is left unchanged.
    """


class NoEstimateError(ApcError):
    """Not enough data to produce the requested estimate."""


class SequencingError(ApcError):
    """A session operation arrived out of order."""


class SessionCompleteError(ApcError):
    """The session has recorded all scheduled trials."""


class StateError(ApcError):
    """A session operation is invalid in the current state."""


class IntegrityError(ApcError):
    """A replayed event log diverges from the reconstructed session."""

    def __init__(self, message: str, trial_index: int | None = None, seq: int | None = None):
        super().__init__(message)
        self.trial_index = trial_index
        self.seq = seq


class IngestError(ApcError):
    """Input data failed validation on load."""

    def __init__(self, message: str, rows: list[int] | None = None):
        super().__init__(message)
        self.rows = rows or []


class CoverageError(ApcError):
    """A target bitrate falls outside every resolution's measured range."""


class IdentifiabilityError(ApcError):
    """The pairwise comparison graph is disconnected."""

    def __init__(self, message: str, components: list[list[int]] | None = None):
        super().__init__(message)
        self.components = components or []


class DegenerateScaleError(ApcError):
    """The fitted perceptual curve is flat; no resampling is possible."""


class UndefinedMetricError(ApcError):
    """A metric is undefined for this input (e.g. zero variance)."""


class InsufficientDataError(ApcError):
    """Fewer data points than the operation requires."""


class UndefinedEffectError(ApcError):
    """Effect size is 0/0 (zero variance of paired differences)."""


class PairingError(ApcError):
    """A rating record lacks its required hidden-reference partner."""
