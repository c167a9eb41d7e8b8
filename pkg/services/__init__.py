"""Weak Galerkin biharmonic solver services."""
from .errors import WGError
from .mesh import PolyMesh, load_mesh, load_mesh_file, uniform_rectangles, uniform_triangles
from .weak_deriv import WeakFunction, WeakSpace, project_Qh
from .wg_solver import BiharmonicProblem, solve_problem
from .error_norms import ErrorQuadruple, error_quadruple, observed_order

__all__ = [
    'WGError',
    'PolyMesh',
    'load_mesh',
    'load_mesh_file',
    'uniform_rectangles',
    'uniform_triangles',
    'WeakFunction',
    'WeakSpace',
    'project_Qh',
    'BiharmonicProblem',
    'solve_problem',
    'ErrorQuadruple',
    'error_quadruple',
    'observed_order',
]
