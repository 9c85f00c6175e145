"""Exception hierarchy shared by every blab module."""


class BlabError(Exception):
    """Base class for all errors raised by blab."""


class ValidationError(BlabError, ValueError):
    """Inputs violate a documented precondition."""


class BoundViolation(ValidationError):
    """A sampled potential exceeds its declared sup-bound M."""


class GridMismatch(ValidationError):
    """Two objects live on different grids."""


class ResonanceError(BlabError):
    """The spectral shift is (numerically) an eigenvalue of A_q."""

    def __init__(self, lam, nearest=None, distance=None):
        self.lam = lam
        self.nearest = nearest
        self.distance = distance
        msg = f"shift {lam} is resonant"
        if nearest is not None:
            msg += f": nearest eigenvalue {nearest} at distance {distance:.3e}"
        super().__init__(msg)


class EigensolverError(BlabError):
    """Eigensolver failed to converge or produced large residuals."""

    def __init__(self, message, residuals=None):
        self.residuals = residuals
        super().__init__(message)


class UnderResolvedError(ValidationError):
    """The grid cannot resolve the oscillation of a probe."""


class AlignmentError(BlabError):
    """Eigenbasis alignment failed for a multiplicity cluster."""

    def __init__(self, message, cluster=None):
        self.cluster = cluster
        super().__init__(message)


class SpectraDiffer(AlignmentError):
    """Two boundary spectral data sets do not share the same eigenvalues."""


class KernelVanishes(BlabError):
    """A theta kernel is numerically zero on the requested boundary patch."""


class InstabilityError(BlabError):
    """Time stepping produced unbounded growth."""
