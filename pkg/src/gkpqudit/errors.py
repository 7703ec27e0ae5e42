"""Exception and warning types raised across the package."""


class GkpError(Exception):
    """Base class for all package errors."""


class TruncationWarning(UserWarning):
    """The Fock truncation is probably too small for the requested operation."""


class TruncationError(GkpError):
    """A state has too much weight near the Fock cutoff."""


class ConvergenceError(GkpError):
    """A numerical routine did not converge."""


class NonHermitianError(GkpError, ValueError):
    """An operator expected to be Hermitian is not."""


class DimensionMismatch(GkpError, ValueError):
    """Operand dimensions are incompatible."""


class DegenerateSpectrumError(GkpError, ValueError):
    """A logical operator has a degenerate spectrum and no unique eigenbasis."""


class WrongDimension(GkpError, ValueError):
    """The operation is only defined for a specific qudit dimension."""


class UnsupportedDimension(GkpError, ValueError):
    """The qudit dimension is outside the supported range."""


class NormCollapseError(GkpError):
    """A post-measurement state has (numerically) zero norm."""


class BasisNotOrthogonal(GkpError, ValueError):
    """A supplied operator basis is not trace-orthogonal."""


class IncompleteTable(GkpError, ValueError):
    """A decay-rate or survival table is missing required entries."""


class StepTooLarge(GkpError, ValueError):
    """A Kraus time step is too large for the first-order expansion."""


class NonlinearRegime(GkpError):
    """Short-time fidelity data is dominated by higher-order terms."""


class FitDiverged(GkpError):
    """A curve fit failed or returned unphysical parameters."""


class GridTooCoarse(GkpError, ValueError):
    """A phase-space grid is too coarse for finite differences."""


class Underdetermined(GkpError, ValueError):
    """Too few samples to determine the unknowns."""


class BudgetExhausted(GkpError):
    """An optimizer ran out of evaluations before meeting its target."""


class ResourceLimit(GkpError):
    """A computation would exceed the configured memory cap."""


class NotConverged(GkpError):
    """An iterated map did not reach its fixed point."""


class ConfigError(GkpError, ValueError):
    """A run configuration is invalid."""
