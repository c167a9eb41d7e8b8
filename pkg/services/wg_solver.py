"""
Assembly and solution of the weak Galerkin biharmonic scheme.

Find u_h = {u0, ub, ug} in V_h with ub = Q_b xi and
ug = (Q_b nu) n + (Q_b (grad xi . tau)) tau on boundary edges such that

    sum_T sum_ij (d2_{ij,w} u_h, d2_{ij,w} v)_T + s(u_h, v) = (f, v0)    for all v in V_h^0

where s is the h_T^-1 / h_T^-3 weighted stabilizer. The scheme has no
tunable penalty parameter.
"""
import logging
import math
from dataclasses import dataclass
from typing import Callable, Optional, Tuple

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import cg, splu

from config.settings import settings
from services.basis_quadrature import Field, edge_rule, evaluate_field, project_Qb
from services.errors import BoundaryDataError, CondensationError, SolverError, WGError
from services.mesh import PolyMesh
from services.weak_deriv import WeakFunction, WeakSpace, edge_degree

logger = logging.getLogger(__name__)

try:
    from sksparse.cholmod import CholmodError, cholesky as cholmod_cholesky
    HAS_CHOLMOD = True
except ImportError:  # optional backend
    HAS_CHOLMOD = False


@dataclass(frozen=True)
class BiharmonicProblem:
    """
    Data of Delta^2 u = f with u = xi and du/dn = nu on the boundary.

    `nu(x, y, n1, n2)` receives the outward unit normal of the boundary edge;
    `grad_xi_tau(x, y, t1, t2)` the edge's unit tangent. Without
    `grad_xi_tau`, the tangential derivative of xi is taken numerically
    along each edge.
    """
    f: Field
    xi: Field
    nu: Callable
    grad_xi_tau: Optional[Callable] = None

    @property
    def tangential_source(self) -> str:
        return "analytic" if self.grad_xi_tau is not None else "finite-difference"

    @classmethod
    def homogeneous(cls, f: Optional[Field] = None) -> "BiharmonicProblem":
        """Zero boundary data, and zero load unless `f` is given."""
        zero = lambda x, y: 0.0
        return cls(f=f or zero, xi=zero, nu=lambda x, y, n1, n2: 0.0,
                   grad_xi_tau=lambda x, y, t1, t2: 0.0)


class DofMap:
    """
    Global DOF numbering of a `WeakSpace`.

    Interior (condensable) DOFs come first, element by element; skeleton
    DOFs follow as (vb, vg1, vg2) blocks edge by edge. Every DOF of a
    boundary edge is constrained.
    """

    def __init__(self, space: WeakSpace):
        self.space = space
        self.n_dofs = space.n_dofs
        self.interior = np.arange(space.n_interior)
        self.skeleton = np.arange(space.n_interior, space.n_dofs)
        block = 3 * space.me
        boundary = [np.arange(space.edge_offset(e), space.edge_offset(e) + block)
                    for e in space.mesh.boundary_edge_ids]
        self.constrained = np.concatenate(boundary) if boundary else np.zeros(0, dtype=int)
        mask = np.ones(self.n_dofs, dtype=bool)
        mask[self.constrained] = False
        self.free = np.flatnonzero(mask)

    @property
    def n_free(self) -> int:
        return len(self.free)

    @property
    def n_free_skeleton(self) -> int:
        return self.n_free - len(self.interior)

    def to_weak(self, x: np.ndarray) -> WeakFunction:
        return self.space.from_vector(x)


@dataclass
class GlobalSystem:
    """Full symmetric system on all DOFs, before boundary elimination."""
    matrix: sp.csr_matrix
    rhs: np.ndarray
    space: WeakSpace


@dataclass
class ConstrainedSystem:
    """System on the free DOFs after symmetric elimination of boundary DOFs."""
    matrix: sp.csr_matrix
    rhs: np.ndarray
    dofmap: DofMap
    boundary_values: np.ndarray

    def expand(self, x_free: np.ndarray) -> np.ndarray:
        """Full DOF vector from free values plus the prescribed boundary values."""
        x = self.boundary_values.copy()
        x[self.dofmap.free] = x_free
        return x


@dataclass
class CondensedSystem:
    """
    Schur complement on the free skeleton DOFs.

    Free DOFs of the parent system are ordered interior first, so the
    interior block is the leading (n_interior x n_interior) block-diagonal part.
    """
    matrix: sp.csr_matrix
    rhs: np.ndarray
    parent: ConstrainedSystem
    interior_inverse: sp.csr_matrix
    coupling: sp.csr_matrix

    @property
    def n_condensed(self) -> int:
        return self.interior_inverse.shape[0]

    def reduce_rhs(self, rhs_free: np.ndarray) -> np.ndarray:
        n = self.n_condensed
        return rhs_free[n:] - self.coupling.T @ (self.interior_inverse @ rhs_free[:n])

    def recover(self, x_skeleton: np.ndarray, rhs_free: Optional[np.ndarray] = None) -> np.ndarray:
        """Back-substitute the interior DOFs; returns the free DOF vector."""
        rhs_free = self.parent.rhs if rhs_free is None else rhs_free
        n = self.n_condensed
        x_interior = self.interior_inverse @ (rhs_free[:n] - self.coupling @ x_skeleton)
        return np.concatenate([x_interior, x_skeleton])


@dataclass
class SolveResult:
    u_h: WeakFunction
    residual: float
    method: str
    n_free: int
    n_skeleton: int
    n_condensed: int
    residual_target: float = 0.0


def assemble_matrix(space: WeakSpace) -> sp.csr_matrix:
    """Global stiffness matrix of the weak Galerkin bilinear form on all DOFs."""
    rows, cols, data = [], [], []
    for group in space.groups:
        n_local = group.local.n_local
        dofs = group.dofs
        rows.append(np.repeat(dofs, n_local, axis=1).ravel())
        cols.append(np.tile(dofs, (1, n_local)).ravel())
        data.append(np.broadcast_to(group.local.matrix.ravel(), (len(dofs), n_local * n_local)).ravel())
    matrix = sp.coo_matrix(
        (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
        shape=(space.n_dofs, space.n_dofs),
    ).tocsr()
    matrix.sum_duplicates()
    return ((matrix + matrix.T) * 0.5).tocsr()


def assemble_load(space: WeakSpace, f: Field) -> np.ndarray:
    """Load vector (f, v0) by element quadrature."""
    rhs = np.zeros(space.n_dofs)
    for group in space.groups:
        local = group.local
        rule = local.data_rule
        pts = rule.points[None, :, :] + group.centroids[:, None, :]
        values = evaluate_field(f, pts.reshape(-1, 2)).reshape(len(group.element_ids), -1)
        rhs[group.dofs[:, :local.dk]] = (values * rule.weights) @ local.basis.eval(rule.points)
    if not np.all(np.isfinite(rhs)):
        raise WGError("source term produced non-finite values")
    return rhs


def assemble(mesh: PolyMesh, k: int, problem: BiharmonicProblem,
             space: Optional[WeakSpace] = None) -> Tuple[GlobalSystem, DofMap]:
    """Global matrix and load vector on all DOFs, plus their numbering."""
    space = space if space is not None else WeakSpace(mesh, k)
    matrix = assemble_matrix(space)
    rhs = assemble_load(space, problem.f)
    logger.debug("Assembled %d x %d system with %d nonzeros", matrix.shape[0], matrix.shape[1], matrix.nnz)
    return GlobalSystem(matrix, rhs, space), DofMap(space)


def _tangential_derivative(xi: Field, tangent: np.ndarray, step: float) -> Field:
    """Five-point central difference of xi along `tangent`."""
    def derivative(x, y):
        def at(offset):
            pts = np.column_stack([x + offset * tangent[0], y + offset * tangent[1]])
            return evaluate_field(xi, pts)
        return (-at(2 * step) + 8 * at(step) - 8 * at(-step) + at(-2 * step)) / (12 * step)
    return derivative


def boundary_values(space: WeakSpace, problem: BiharmonicProblem) -> np.ndarray:
    """
    Full DOF vector holding the prescribed boundary blocks (zeros elsewhere).

    Raises:
        BoundaryDataError: a boundary field raised or returned non-finite values.
    """
    mesh = space.mesh
    degree = space.me - 1
    values = np.zeros(space.n_dofs)
    for gid in mesh.boundary_edge_ids:
        edge = mesh.edges[gid]
        start, end = mesh.edge_points(gid)
        rule = edge_rule(start, end, edge_degree(space.k) + settings.DATA_QUADRATURE_EXTRA)
        n = np.array(edge.normals[0])
        tau = np.array(edge.unit_tangent)
        if problem.grad_xi_tau is not None:
            tangential = lambda x, y: problem.grad_xi_tau(x, y, tau[0], tau[1])
        else:
            tangential = _tangential_derivative(problem.xi, tau, settings.TANGENT_FD_STEP * edge.length)
        try:
            trace = project_Qb(problem.xi, start, end, degree, rule)
            normal_part = project_Qb(lambda x, y: problem.nu(x, y, n[0], n[1]), start, end, degree, rule)
            tangential_part = project_Qb(tangential, start, end, degree, rule)
        except WGError:
            raise
        except Exception as exc:
            raise BoundaryDataError(f"edge {gid}: boundary data evaluation failed: {exc}") from exc
        block = np.concatenate([trace, normal_part * n[0] + tangential_part * tau[0],
                                normal_part * n[1] + tangential_part * tau[1]])
        if not np.all(np.isfinite(block)):
            raise BoundaryDataError(f"edge {gid}: boundary data is not finite")
        offset = space.edge_offset(gid)
        values[offset:offset + len(block)] = block
    return values


def apply_boundary_conditions(system: GlobalSystem, dofmap: DofMap,
                              problem: BiharmonicProblem) -> ConstrainedSystem:
    """Eliminate boundary DOFs symmetrically: known columns move to the right-hand side."""
    values = boundary_values(system.space, problem)
    free, fixed = dofmap.free, dofmap.constrained
    rows = system.matrix[free]
    matrix = rows[:, free].tocsr()
    rhs = system.rhs[free] - rows[:, fixed] @ values[fixed]
    return ConstrainedSystem(matrix, rhs, dofmap, values)


def _interior_blocks(matrix: sp.csr_matrix, n_elements: int, dk: int) -> np.ndarray:
    coo = matrix.tocoo()
    element = coo.row // dk
    if np.any(coo.col // dk != element):
        raise CondensationError("interior block is not block diagonal")
    blocks = np.zeros((n_elements, dk, dk))
    np.add.at(blocks, (element, coo.row % dk, coo.col % dk), coo.data)
    return blocks


def condense(system: ConstrainedSystem) -> CondensedSystem:
    """
    Eliminate every element's interior DOFs through its own dense block.

    Raises:
        CondensationError: an interior block is not positive definite.
    """
    space = system.dofmap.space
    n = space.n_interior
    matrix = system.matrix.tocsr()
    blocks = _interior_blocks(matrix[:n, :n], space.mesh.n_elements, space.dk)
    try:
        np.linalg.cholesky(blocks)
    except np.linalg.LinAlgError:
        for eid, block in enumerate(blocks):
            try:
                np.linalg.cholesky(block)
            except np.linalg.LinAlgError as exc:
                raise CondensationError("interior block is not positive definite", element_id=eid) from exc
    inverse = np.linalg.inv(blocks)
    inverse = 0.5 * (inverse + np.transpose(inverse, (0, 2, 1)))
    n_el = space.mesh.n_elements
    interior_inverse = sp.bsr_matrix((inverse, np.arange(n_el), np.arange(n_el + 1)), shape=(n, n)).tocsr()

    coupling = matrix[:n, n:].tocsr()
    schur = matrix[n:, n:] - coupling.T @ interior_inverse @ coupling
    schur = ((schur + schur.T) * 0.5).tocsr()
    condensed = CondensedSystem(schur, np.zeros(schur.shape[0]), system, interior_inverse, coupling)
    condensed.rhs = condensed.reduce_rhs(system.rhs)
    logger.debug("Condensed %d interior DOFs; %d skeleton DOFs remain", n, schur.shape[0])
    return condensed


def relative_residual(matrix: sp.spmatrix, rhs: np.ndarray, x: np.ndarray) -> float:
    """||b - A x|| / ||b||, or the absolute residual when b = 0."""
    r = np.linalg.norm(rhs - matrix @ x)
    scale = np.linalg.norm(rhs)
    return float(r / scale) if scale > 0 else float(r)


def rounding_residual(matrix: sp.spmatrix, rhs: np.ndarray, x: np.ndarray) -> float:
    """
    Relative residual that rounding alone can leave on x.

    gamma * || |A| |x| + |b| || / ||b|| with gamma = 10 (nnz_row + 1) eps,
    the componentwise bound a backward stable solve followed by refinement
    reaches. Below SOLVER_RTOL on well scaled systems.
    """
    if matrix.shape[0] == 0:
        return 0.0
    csr = sp.csr_matrix(matrix)
    row_nnz = int(np.diff(csr.indptr).max())
    gamma = 10.0 * (row_nnz + 1) * np.finfo(float).eps
    bound = np.linalg.norm(abs(csr) @ np.abs(x) + np.abs(rhs))
    scale = np.linalg.norm(rhs)
    return float(gamma * bound / scale) if scale > 0 else float(gamma * bound)


def residual_target(matrix: sp.spmatrix, rhs: np.ndarray, x: np.ndarray) -> float:
    """max(SOLVER_RTOL, rounding_residual): the residual a solve must reach."""
    return max(settings.SOLVER_RTOL, rounding_residual(matrix, rhs, x))


class SPDSolver:
    """
    Factorization of a sparse SPD matrix.

    `auto` uses CHOLMOD when scikit-sparse is installed and SuperLU otherwise.
    SuperLU runs in symmetric mode without pivoting, so the fill follows the
    symmetric minimum degree ordering as a Cholesky factor would; a
    non-positive pivot means the matrix is not SPD. `cg` defers all work to
    Jacobi-preconditioned conjugate gradients.
    """

    def __init__(self, matrix: sp.spmatrix, method: Optional[str] = None):
        self.matrix = matrix.tocsc()
        method = (method or settings.LINEAR_SOLVER).lower()
        if method == "auto":
            method = "cholmod" if HAS_CHOLMOD else "direct"
        if method == "cholmod" and not HAS_CHOLMOD:
            logger.warning("scikit-sparse is not installed; falling back to SuperLU")
            method = "direct"
        self.method = method
        self._solve = None
        self.factor_nnz = 0
        if self.matrix.shape[0] == 0 or method == "cg":
            return
        if method == "cholmod":
            try:
                factor = cholmod_cholesky(self.matrix)
            except CholmodError as exc:
                raise SolverError(f"Cholesky factorization failed, matrix is not SPD: {exc}") from exc
            except MemoryError as exc:
                raise SolverError(f"out of memory factorizing {self.matrix.shape[0]} DOFs") from exc
            self._solve = factor
        elif method == "direct":
            self._solve = self._symmetric_lu().solve
        else:
            raise SolverError(f"unknown linear solver '{method}'")

    def _symmetric_lu(self):
        try:
            lu = splu(self.matrix, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                      options={"SymmetricMode": True})
        except RuntimeError as exc:
            raise SolverError(f"LU factorization failed, matrix is singular: {exc}") from exc
        except (SystemError, MemoryError) as exc:
            raise SolverError(f"SuperLU ran out of memory factorizing {self.matrix.shape[0]} DOFs: {exc}") from exc
        if np.any(lu.U.diagonal() <= 0):
            raise SolverError("LU factorization met a non-positive pivot, matrix is not SPD")
        self.factor_nnz = int(lu.L.nnz + lu.U.nnz)
        logger.debug("SuperLU factor of %d DOFs: nnz(L+U)=%d", self.matrix.shape[0], self.factor_nnz)
        return lu

    def solve(self, rhs: np.ndarray, x0: Optional[np.ndarray] = None) -> np.ndarray:
        if self.matrix.shape[0] == 0:
            return np.zeros(0)
        if self._solve is None:
            return conjugate_gradient(self.matrix, rhs, x0)
        x = np.asarray(self._solve(rhs)).ravel()
        if not np.all(np.isfinite(x)):
            raise SolverError("direct solve produced non-finite values, matrix is not SPD")
        return x


def conjugate_gradient(matrix: sp.spmatrix, rhs: np.ndarray, x0: Optional[np.ndarray] = None,
                       rtol: Optional[float] = None) -> np.ndarray:
    """Jacobi-preconditioned CG with at most CG_MAXITER_FACTOR * sqrt(N) iterations."""
    rtol = settings.SOLVER_RTOL if rtol is None else rtol
    diagonal = matrix.diagonal()
    if np.any(diagonal <= 0):
        raise SolverError("matrix has a non-positive diagonal entry, it is not SPD")
    maxiter = max(1, int(settings.CG_MAXITER_FACTOR * math.sqrt(matrix.shape[0])))
    x, info = cg(matrix, rhs, x0=x0, rtol=rtol, atol=0.0, maxiter=maxiter, M=sp.diags(1.0 / diagonal))
    if info < 0:
        raise SolverError(f"conjugate gradients broke down (info={info})")
    if info > 0:
        logger.warning("CG stopped after %d iterations above rtol=%g", maxiter, rtol)
    return x


def spd_solve(matrix: sp.spmatrix, rhs: np.ndarray, method: Optional[str] = None) -> Tuple[np.ndarray, str]:
    """
    Solve A x = b for sparse SPD A to relative residual SOLVER_RTOL.

    Direct solutions get a few refinement sweeps, then CG warm-started at
    the direct solution if the target is still missed.

    Raises:
        SolverError: the residual stays above `residual_target`.
    """
    solver = SPDSolver(matrix, method)
    x = solver.solve(rhs)
    x, used = _refine(matrix, rhs, x, solver.solve, solver.method)
    _check_residual(matrix, rhs, x, used)
    return x, used


def _refine(matrix, rhs, x, correction_solve, method: str) -> Tuple[np.ndarray, str]:
    if len(x) == 0:
        return x, method
    if method != "cg":
        for _ in range(settings.REFINEMENT_STEPS):
            if relative_residual(matrix, rhs, x) <= residual_target(matrix, rhs, x):
                return x, method
            x = x + correction_solve(rhs - matrix @ x)
    residual = relative_residual(matrix, rhs, x)
    if residual <= residual_target(matrix, rhs, x):
        return x, method
    logger.info("Residual %.3e of %s above %.1e, refining with CG", residual, method, settings.SOLVER_RTOL)
    refined = conjugate_gradient(matrix.tocsr(), rhs, x0=x)
    if relative_residual(matrix, rhs, refined) >= residual:
        return x, method
    return refined, method if method == "cg" else f"{method}+cg"


def _check_residual(matrix, rhs, x, method: str) -> Tuple[float, float]:
    residual = relative_residual(matrix, rhs, x)
    target = residual_target(matrix, rhs, x)
    if not residual <= target:
        raise SolverError(f"{method} solve stopped at relative residual {residual:.3e}, target {target:.3e}")
    if residual > settings.SOLVER_RTOL:
        logger.info("Residual %.3e is at rounding level %.3e, above %.1e", residual, target, settings.SOLVER_RTOL)
    return residual, target


def solve(system: ConstrainedSystem, use_condensation: bool = True,
          method: Optional[str] = None) -> SolveResult:
    """
    Solve the constrained system and return u_h with diagnostics.

    With condensation the skeleton Schur complement is factorized once and
    reused for the refinement sweeps on the full free system.

    Raises:
        SolverError: factorization failed or the residual stays above
            `residual_target`.
    """
    dofmap = system.dofmap
    n_condensed = 0
    if use_condensation:
        condensed = condense(system)
        solver = SPDSolver(condensed.matrix, method)
        x_skeleton = solver.solve(condensed.rhs)
        x_free = condensed.recover(x_skeleton)

        def correction(r):
            return condensed.recover(solver.solve(condensed.reduce_rhs(r)), r)

        x_free, used = _refine(system.matrix, system.rhs, x_free, correction, solver.method)
        n_condensed = condensed.n_condensed
        n_skeleton = condensed.matrix.shape[0]
    else:
        x_free, used = spd_solve(system.matrix, system.rhs, method)
        n_skeleton = dofmap.n_free_skeleton

    residual, target = _check_residual(system.matrix, system.rhs, x_free, used)
    logger.debug("Solved %d free DOFs with %s, residual %.3e", dofmap.n_free, used, residual)
    u_h = dofmap.to_weak(system.expand(x_free))
    return SolveResult(u_h=u_h, residual=residual, method=used, n_free=dofmap.n_free,
                       n_skeleton=n_skeleton, n_condensed=n_condensed, residual_target=target)


def solve_problem(mesh: PolyMesh, k: int, problem: BiharmonicProblem,
                  space: Optional[WeakSpace] = None, use_condensation: bool = True,
                  method: Optional[str] = None) -> SolveResult:
    """assemble -> apply_boundary_conditions -> solve."""
    system, dofmap = assemble(mesh, k, problem, space=space)
    constrained = apply_boundary_conditions(system, dofmap, problem)
    return solve(constrained, use_condensation=use_condensation, method=method)


def is_positive_definite(matrix: sp.spmatrix) -> bool:
    """Dense Cholesky test; intended for test-sized matrices."""
    if matrix.shape[0] == 0:
        return True
    try:
        np.linalg.cholesky(matrix.toarray())
    except np.linalg.LinAlgError:
        return False
    return True
