"""Exception hierarchy shared by every solver in the package."""


class MmwPoseError(Exception):
    """Base class for all package errors.

    Errors raised inside a pipeline phase carry that phase's name in ``phase``.
    """

    phase: str | None = None


class FrontalityError(MmwPoseError):
    """A point lies on or behind an array's virtual plane."""

    def __init__(self, message: str = "point is not in front of the virtual plane", index=None):
        super().__init__(message)
        self.index = index


class DegeneracyError(MmwPoseError):
    """Input geometry makes the requested quantity undefined."""


class ConfigError(MmwPoseError):
    """Invalid configuration; ``field`` names the offending key path when known."""

    def __init__(self, message: str, field: str | None = None):
        super().__init__(f"{field}: {message}" if field else message)
        self.field = field


class RankError(MmwPoseError):
    """Sample covariance has fewer significant eigenvalues than requested sources."""


class AssociationError(MmwPoseError):
    """Two angle estimates claim the same transmitter with high confidence."""


class InsufficientDataError(MmwPoseError):
    """Fewer measurements than the identifiability minimum."""


class NonConvergenceError(MmwPoseError):
    """Iterative solver failed; ``best`` holds the best iterate seen."""

    def __init__(self, message: str, best=None):
        super().__init__(message)
        self.best = best


class CheiralityError(MmwPoseError):
    """No pose candidate places a majority of points in front of both arrays."""


class ParallelRaysError(MmwPoseError):
    """The two viewing rays are parallel; the point is at infinity."""


class DivisionDegeneracyError(MmwPoseError):
    """A differenced path length vanished during scale recovery."""


class NoIntersectionError(MmwPoseError):
    """A line does not meet the unit circle."""


class AmbiguityError(MmwPoseError):
    """A sign test could not separate two candidate solutions."""


class SingularNormalMatrixError(MmwPoseError):
    """The Gauss-Newton normal matrix is singular (under-determined geometry)."""


class GeometryError(MmwPoseError):
    """A point is not on the surface it is required to lie on."""


class MixingError(MmwPoseError):
    """MCMC acceptance rate left the admissible band after adaptation."""


class EmptyInputError(MmwPoseError):
    """An aggregate was requested over an empty collection."""

