"""Exceptions raised by the fdstokes library."""


class FDStokesError(Exception):
    """Base class for every error raised by this package."""


class ParameterError(FDStokesError, ValueError):
    pass


class DomainError(FDStokesError, ValueError):
    pass


class ShapeError(FDStokesError, ValueError):
    pass


class SizeGuardError(FDStokesError):
    pass


class FactorizationError(FDStokesError):
    pass


class PencilError(FactorizationError):
    """The mass matrix of a generalized eigenproblem is not SPD."""


class SingularOperatorError(FDStokesError):
    pass


class WeightError(FDStokesError, ValueError):
    pass


class GeometryError(FDStokesError):
    pass


class UnsupportedConfigurationError(FDStokesError):
    pass


class BoundaryDataError(FDStokesError, ValueError):
    pass


class SeparableFitError(FDStokesError):
    pass


class NotSPDError(FDStokesError):
    pass
