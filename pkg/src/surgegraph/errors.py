"""Exception and warning types shared across the package."""


class SurgeGraphError(Exception):
    """Base class for all package errors."""


class ShapeMismatch(SurgeGraphError, ValueError):
    """Operand shapes are incompatible for the requested operation."""


class EmptyNeighborhood(SurgeGraphError, ValueError):
    """A masked softmax row has no unmasked entries."""


class DetachedTensor(SurgeGraphError, RuntimeError):
    """backward() was called on a tensor that was not recorded on any tape."""


class ZeroVariance(SurgeGraphError, ValueError):
    """A series is constant, so its Pearson correlation is undefined."""


class LengthMismatch(SurgeGraphError, ValueError):
    """Paired series have different lengths."""


class DegenerateDataset(SurgeGraphError, ValueError):
    """A dataset statistic (std, min/max range) collapsed to zero."""


class UnknownStorm(SurgeGraphError, ValueError):
    """A named storm is missing from the corpus, or split roles collide."""


class InvalidVariant(SurgeGraphError, ValueError):
    """Requested component set is not a supported model variant."""


class CorruptCheckpoint(SurgeGraphError, ValueError):
    """Checkpoint file is unreadable or structurally invalid."""


class VersionMismatch(SurgeGraphError, ValueError):
    """Checkpoint format version is not supported by this build."""


class GraphMismatch(SurgeGraphError, ValueError):
    """Checkpoint was trained against a different station graph."""


class NonFiniteLoss(SurgeGraphError, ArithmeticError):
    """Training produced a NaN/inf loss."""


class EmptyDataset(SurgeGraphError, ValueError):
    """A dataset holds no windows."""


class AlignmentError(SurgeGraphError, ValueError):
    """Series timestamps do not line up."""


class EmptyWindow(SurgeGraphError, ValueError):
    """An evaluation window selects no samples."""


class StationMismatch(SurgeGraphError, ValueError):
    """Two reports cover different station sets."""


class InvalidSpec(SurgeGraphError, ValueError):
    """Synthetic-dataset spec fails validation."""


class NotPSD(SurgeGraphError, ValueError):
    """Target correlation matrix is not positive semidefinite."""


class DisconnectedNodeWarning(UserWarning):
    """Graph construction left one or more stations without edges."""


class StormTooShortWarning(UserWarning):
    """A storm is shorter than one input+prediction window and was skipped."""
