"""Exception taxonomy shared by all simulator components.

Every error carries a stable machine-readable ``code`` so the CLI can emit
one-line diagnostics (``error: code=<code> msg="..."``) without string
matching on messages.
"""


class SimError(Exception):
    code = "sim-error"


class InvalidArgument(SimError, ValueError):
    code = "invalid-argument"


class ShapeMismatch(InvalidArgument):
    code = "shape-mismatch"


class InvalidDistribution(InvalidArgument):
    code = "invalid-distribution"


class InvalidAction(InvalidArgument):
    code = "invalid-action"


class BudgetExceeded(SimError):
    code = "budget-exceeded"


class NanDetected(SimError):
    code = "nan-detected"


class MissingTrace(SimError):
    code = "missing-trace"


class ConfigInvalid(SimError):
    code = "config-invalid"


class IoFailure(SimError):
    code = "io-failure"


class CheckpointError(IoFailure):
    code = "checkpoint-invalid"


class DegenerateChannelWarning(UserWarning):
    """Raised as a warning when a beamformer is requested for an all-zero channel."""


class SearchBudgetWarning(UserWarning):
    """Raised as a warning when the exhaustive searcher falls back to greedy."""
