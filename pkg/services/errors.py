"""
Exception hierarchy shared by the solver services.
"""
from typing import Optional


class WGError(Exception):
    """Base class for every error raised by the solver."""


class MeshError(WGError):
    """Invalid mesh input."""


class MeshParseError(MeshError):
    """Mesh text does not follow the wgmesh format."""

    def __init__(self, message: str, line_number: Optional[int] = None):
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)
        self.line_number = line_number


class MeshTopologyError(MeshError):
    """Mesh parses but violates a topological or geometric invariant."""


class QuadratureError(WGError):
    """No quadrature rule is available for the request."""


class SingularGramError(WGError):
    """A local Gram matrix could not be factorized."""

    def __init__(self, message: str, element_id: Optional[int] = None):
        if element_id is not None:
            message = f"element {element_id}: {message}"
        super().__init__(message)
        self.element_id = element_id


class DimensionMismatchError(WGError, ValueError):
    """Vector length does not match an operator."""


class BoundaryDataError(WGError):
    """Boundary data could not be evaluated."""


class CondensationError(WGError):
    """An element interior block is not invertible."""

    def __init__(self, message: str, element_id: Optional[int] = None):
        if element_id is not None:
            message = f"element {element_id}: {message}"
        super().__init__(message)
        self.element_id = element_id


class SolverError(WGError):
    """Linear solve failed."""


class ConfigError(WGError):
    """Invalid study configuration."""


class ReportSchemaError(WGError):
    """Report or baseline CSV does not follow the expected schema."""


class StudyError(WGError):
    """Error raised while running one refinement level of a study."""

    def __init__(self, message: str, level: Optional[int] = None):
        if level is not None:
            message = f"refinement n={level}: {message}"
        super().__init__(message)
        self.level = level
