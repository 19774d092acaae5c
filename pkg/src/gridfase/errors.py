"""Exception types shared across the package."""


class GridFaseError(Exception):
    """Base class for all package errors."""


class ParseError(GridFaseError):
    """Malformed input file; message carries file/line context."""


class ValidationError(GridFaseError):
    """Structurally valid input that violates a model invariant."""


class NonConvergence(GridFaseError):
    """Iterative solver hit its iteration cap.

    Attributes
    ----------
    worst_mismatch : float
        Largest residual at the final iterate.
    """

    def __init__(self, message: str, worst_mismatch: float = float("nan")):
        super().__init__(message)
        self.worst_mismatch = worst_mismatch


class RankDeficient(GridFaseError):
    """Gain matrix is singular: the measurement set cannot pin down the state."""


class SingularInnovation(GridFaseError):
    """Innovation covariance numerically singular (degenerate R/Sigma)."""


class DimensionMismatch(GridFaseError):
    """Vector/network dimensions inconsistent with the scenario."""


class ChecksumMismatch(GridFaseError):
    """Checkpoint payload does not match its stored digest."""


class EmptyReplay(GridFaseError):
    """Training asked for a batch before the replay warm-up threshold."""
