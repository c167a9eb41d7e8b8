"""
Weak functions and discrete weak second derivatives.

A weak function v = {v0, vb, vg} stores v0 in P_k(T) on every element and
vb in P_{k-2}(e), vg in [P_{k-2}(e)]^2 on every edge. On one element the
local DOF vector is the v0 block followed, for each local edge in
counterclockwise order, by the (vb, vg1, vg2) blocks of that edge.

The discrete weak second derivative d2_{ij,w} v in P_{k-2}(T) satisfies,
for every test polynomial phi in P_{k-2}(T),

    (d2_{ij,w} v, phi)_T = (v0, d2_{ji} phi)_T - <vb n_i, d_j phi>_dT + <vg_i, phi n_j>_dT
"""
import logging
import math
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import cho_solve

from config.settings import settings
from services.basis_quadrature import (
    EdgeBasis,
    ElementBasis,
    Field,
    QuadratureRule,
    edge_projector,
    edge_rule,
    element_rule,
    evaluate_field,
    factor_gram,
    polynomial_dimension,
    project_calQh,
    project_Q0,
    project_Qb,
)
from services.errors import ConfigError, DimensionMismatchError, SingularGramError
from services.mesh import PolyMesh, polygon_signed_area

logger = logging.getLogger(__name__)

DERIVATIVE_PAIRS = ((1, 1), (1, 2), (2, 1), (2, 2))


def stiffness_degree(k: int) -> int:
    """Exactness of element rules used for local matrices."""
    return max(2 * k, k + 4)


def edge_degree(k: int) -> int:
    """Exactness of edge rules used for local matrices."""
    return 2 * k


def _check_pair(i: int, j: int) -> Tuple[int, int]:
    if i not in (1, 2) or j not in (1, 2):
        raise ValueError(f"derivative indices must be 1 or 2, got ({i}, {j})")
    return i - 1, j - 1


@dataclass(frozen=True)
class LocalEdge:
    """Geometry of one local edge, with its rule in the edge's global orientation."""
    index: int
    normal: np.ndarray
    length: float
    flipped: bool
    rule: QuadratureRule
    psi: np.ndarray
    gram: np.ndarray


class LocalWeakSpace:
    """
    Bases, rules and local operators of one element shape.

    Geometry is given relative to the element centroid, so translated
    copies of an element share one instance. `h` (the diameter) scales the
    bases; `size` = sqrt(2|T|) weights the stabilizer, which is 1/n on the
    uniform triangulations and the diagonal on the uniform squares.
    """

    def __init__(self, vertices: np.ndarray, h: float, k: int, flips: Sequence[bool]):
        self.vertices = np.asarray(vertices, dtype=float)
        self.h = float(h)
        self.size = math.sqrt(2.0 * abs(polygon_signed_area(self.vertices)))
        self.k = int(k)
        self.flips = tuple(bool(f) for f in flips)
        self.n_edges = len(self.vertices)

        self.basis = ElementBasis((0.0, 0.0), self.h, self.k)
        self.test_basis = ElementBasis((0.0, 0.0), self.h, self.k - 2)
        self.edge_basis = EdgeBasis(self.k - 2)
        self.dk = polynomial_dimension(self.k)
        self.dr = polynomial_dimension(self.k - 2)
        self.me = self.k - 1
        self.n_local = self.dk + 3 * self.me * self.n_edges

        self.rule = element_rule(self.vertices, stiffness_degree(self.k))
        self.data_rule = element_rule(self.vertices, stiffness_degree(self.k) + settings.DATA_QUADRATURE_EXTRA)
        self.edges = [self._local_edge(index) for index in range(self.n_edges)]

        phi = self.basis.eval(self.rule.points)
        self.gram = (phi * self.rule.weights[:, None]).T @ phi
        self.gram_factor = factor_gram(self.gram, "element")
        test = self.test_basis.eval(self.rule.points)
        self.test_gram = (test * self.rule.weights[:, None]).T @ test
        self.test_factor = factor_gram(self.test_gram, "weak-derivative")

        self.weak_derivs: Dict[Tuple[int, int], np.ndarray] = {
            pair: self._weak_deriv_matrix(pair[0] - 1, pair[1] - 1) for pair in DERIVATIVE_PAIRS
        }
        self.stabilizer = self._stabilizer_matrix()
        matrix = sum(D.T @ self.test_gram @ D for D in self.weak_derivs.values()) + self.stabilizer
        self.matrix = 0.5 * (matrix + matrix.T)

    def _local_edge(self, index: int) -> LocalEdge:
        start = self.vertices[index]
        end = self.vertices[(index + 1) % self.n_edges]
        tangent = end - start
        length = float(np.linalg.norm(tangent))
        tangent = tangent / length
        normal = np.array([tangent[1], -tangent[0]])
        flipped = self.flips[index]
        rule = edge_rule(end, start, edge_degree(self.k)) if flipped else edge_rule(start, end, edge_degree(self.k))
        psi = self.edge_basis.eval(rule.params)
        gram = (psi * rule.weights[:, None]).T @ psi
        return LocalEdge(index, normal, length, flipped, rule, psi, gram)

    def edge_block(self, local_edge: int, component: int) -> slice:
        """Local DOF slice of vb (component 0), vg1 (1) or vg2 (2) on a local edge."""
        start = self.dk + 3 * self.me * local_edge + component * self.me
        return slice(start, start + self.me)

    def _weak_deriv_matrix(self, i: int, j: int) -> np.ndarray:
        w = self.rule.weights
        moments = np.zeros((self.dr, self.n_local))
        hess = self.test_basis.hessian(self.rule.points)[:, :, j, i]
        moments[:, :self.dk] = (hess * w[:, None]).T @ self.basis.eval(self.rule.points)
        for edge in self.edges:
            pts, we = edge.rule.points, edge.rule.weights
            dphi = self.test_basis.grad(pts)[:, :, j]
            phi = self.test_basis.eval(pts)
            moments[:, self.edge_block(edge.index, 0)] -= edge.normal[i] * (dphi * we[:, None]).T @ edge.psi
            moments[:, self.edge_block(edge.index, 1 + i)] += edge.normal[j] * (phi * we[:, None]).T @ edge.psi
        return cho_solve(self.test_factor, moments)

    def trace_maps(self, edge: LocalEdge) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Matrices taking v0 coefficients to Q_b v0, Q_b d_x v0 and Q_b d_y v0 on an edge."""
        proj = cho_solve(factor_gram(edge.gram, "edge"), (edge.psi * edge.rule.weights[:, None]).T)
        pts = edge.rule.points
        grad = self.basis.grad(pts)
        return proj @ self.basis.eval(pts), proj @ grad[:, :, 0], proj @ grad[:, :, 1]

    def _stabilizer_matrix(self) -> np.ndarray:
        stab = np.zeros((self.n_local, self.n_local))
        identity = np.eye(self.me)
        for edge in self.edges:
            q0, qx, qy = self.trace_maps(edge)
            jumps = []
            for component, trace_map in enumerate((q0, qx, qy)):
                jump = np.zeros((self.me, self.n_local))
                jump[:, :self.dk] = trace_map
                jump[:, self.edge_block(edge.index, component)] -= identity
                jumps.append(jump)
            stab += self.size ** -3 * jumps[0].T @ edge.gram @ jumps[0]
            stab += self.size ** -1 * (jumps[1].T @ edge.gram @ jumps[1] + jumps[2].T @ edge.gram @ jumps[2])
        return stab


@dataclass(frozen=True)
class LocalWeakDerivOp:
    """Matrix of d2_{ij,w} on one element (i, j are 1-based)."""
    element_id: int
    i: int
    j: int
    matrix: np.ndarray

    @property
    def shape(self) -> Tuple[int, int]:
        return self.matrix.shape


def build_weak_deriv(local: LocalWeakSpace, i: int, j: int, element_id: int = -1) -> LocalWeakDerivOp:
    """Discrete weak second partial d2_{ij,w} as a dense local matrix."""
    _check_pair(i, j)
    return LocalWeakDerivOp(element_id, i, j, local.weak_derivs[(i, j)])


def apply_weak_deriv(op: LocalWeakDerivOp, v: np.ndarray) -> np.ndarray:
    """P_{k-2}(T) coefficients of d2_{ij,w} v for local DOFs v."""
    v = np.asarray(v, dtype=float)
    if v.shape[0] != op.matrix.shape[1]:
        raise DimensionMismatchError(
            f"local DOF vector has length {v.shape[0]}, operator expects {op.matrix.shape[1]}")
    return op.matrix @ v


def _identity_residual(local: LocalWeakSpace, v: np.ndarray, i: int, j: int, projected: bool) -> float:
    i0, j0 = _check_pair(i, j)
    v = np.asarray(v, dtype=float)
    if v.shape[0] != local.n_local:
        raise DimensionMismatchError(f"local DOF vector has length {v.shape[0]}, expected {local.n_local}")
    v0 = v[:local.dk]

    lhs = local.test_gram @ (local.weak_derivs[(i, j)] @ v)

    pts, w = local.rule.points, local.rule.weights
    d2v0 = local.basis.hessian(pts)[:, :, i0, j0] @ v0
    rhs = local.test_basis.eval(pts).T @ (w * d2v0)
    for edge in local.edges:
        epts, we = edge.rule.points, edge.rule.weights
        vb = edge.psi @ v[local.edge_block(edge.index, 0)]
        vgi = edge.psi @ v[local.edge_block(edge.index, 1 + i0)]
        if projected:
            q0, qx, qy = local.trace_maps(edge)
            trace = edge.psi @ (q0 @ v0)
            dtrace = edge.psi @ ((qx, qy)[i0] @ v0)
        else:
            trace = local.basis.eval(epts) @ v0
            dtrace = local.basis.grad(epts)[:, :, i0] @ v0
        dphi = local.test_basis.grad(epts)[:, :, j0]
        phi = local.test_basis.eval(epts)
        rhs += edge.normal[i0] * dphi.T @ (we * (trace - vb))
        rhs -= edge.normal[j0] * phi.T @ (we * (dtrace - vgi))
    return float(np.max(np.abs(lhs - rhs))) if lhs.size else 0.0


def check_identity_A001(local: LocalWeakSpace, v: np.ndarray, i: int, j: int) -> float:
    """
    Residual of the integration-by-parts form of d2_{ij,w}:

        (d2_{ij,w} v, phi) = (d2_ij v0, phi) + <v0 - vb, d_j phi n_i> - <d_i v0 - vg_i, phi n_j>

    maximized over the test basis.
    """
    return _identity_residual(local, v, i, j, projected=False)


def check_identity_A002(local: LocalWeakSpace, v: np.ndarray, i: int, j: int) -> float:
    """Same as `check_identity_A001` with v0 and d_i v0 replaced by their Q_b traces."""
    return _identity_residual(local, v, i, j, projected=True)


@dataclass
class WeakFunction:
    """Coefficients of a weak function over a whole mesh."""
    k: int
    interior: np.ndarray
    trace: np.ndarray
    gradient: np.ndarray

    def __post_init__(self):
        self.interior = np.asarray(self.interior, dtype=float)
        self.trace = np.asarray(self.trace, dtype=float)
        self.gradient = np.asarray(self.gradient, dtype=float)
        dk, me = polynomial_dimension(self.k), self.k - 1
        if self.interior.ndim != 2 or self.interior.shape[1] != dk:
            raise DimensionMismatchError(f"interior block must have {dk} columns for k={self.k}")
        if self.trace.ndim != 2 or self.trace.shape[1] != me:
            raise DimensionMismatchError(f"trace block must have {me} columns for k={self.k}")
        if self.gradient.shape != (self.trace.shape[0], 2, me):
            raise DimensionMismatchError(f"gradient block must have shape (n_edges, 2, {me})")

    @classmethod
    def zeros(cls, n_elements: int, n_edges: int, k: int) -> "WeakFunction":
        me = k - 1
        return cls(k, np.zeros((n_elements, polynomial_dimension(k))),
                   np.zeros((n_edges, me)), np.zeros((n_edges, 2, me)))

    @classmethod
    def from_vector(cls, vector: np.ndarray, n_elements: int, n_edges: int, k: int) -> "WeakFunction":
        """Inverse of `to_vector`."""
        dk, me = polynomial_dimension(k), k - 1
        vector = np.asarray(vector, dtype=float)
        expected = n_elements * dk + 3 * me * n_edges
        if vector.shape != (expected,):
            raise DimensionMismatchError(f"vector has shape {vector.shape}, expected ({expected},)")
        interior = vector[:n_elements * dk].reshape(n_elements, dk)
        skeleton = vector[n_elements * dk:].reshape(n_edges, 3, me)
        return cls(k, interior.copy(), skeleton[:, 0, :].copy(), skeleton[:, 1:, :].copy())

    def to_vector(self) -> np.ndarray:
        """Global layout: all interior blocks, then (vb, vg1, vg2) per edge."""
        skeleton = np.concatenate([self.trace[:, None, :], self.gradient], axis=1)
        return np.concatenate([self.interior.ravel(), skeleton.ravel()])

    @property
    def n_elements(self) -> int:
        return self.interior.shape[0]

    @property
    def n_edges(self) -> int:
        return self.trace.shape[0]

    def _check_compatible(self, other: "WeakFunction"):
        if (self.k != other.k or self.interior.shape != other.interior.shape
                or self.trace.shape != other.trace.shape):
            raise DimensionMismatchError("weak functions live on different spaces")

    def __add__(self, other: "WeakFunction") -> "WeakFunction":
        self._check_compatible(other)
        return WeakFunction(self.k, self.interior + other.interior, self.trace + other.trace,
                            self.gradient + other.gradient)

    def __sub__(self, other: "WeakFunction") -> "WeakFunction":
        self._check_compatible(other)
        return WeakFunction(self.k, self.interior - other.interior, self.trace - other.trace,
                            self.gradient - other.gradient)

    def __mul__(self, alpha: float) -> "WeakFunction":
        return WeakFunction(self.k, alpha * self.interior, alpha * self.trace, alpha * self.gradient)

    __rmul__ = __mul__

    def __neg__(self) -> "WeakFunction":
        return self * -1.0

    def vanishes_on_boundary(self, mesh: PolyMesh, atol: float = 0.0) -> bool:
        """Membership test for V_h^0."""
        ids = mesh.boundary_edge_ids
        return bool(np.all(np.abs(self.trace[ids]) <= atol) and np.all(np.abs(self.gradient[ids]) <= atol))


@dataclass(frozen=True)
class ElementGroup:
    """Elements sharing one `LocalWeakSpace`."""
    local: LocalWeakSpace
    element_ids: np.ndarray
    dofs: np.ndarray
    centroids: np.ndarray


class WeakSpace:
    """
    The weak finite element space V_h of degree k on a mesh.

    Holds one `LocalWeakSpace` per element (shared between translated
    congruent elements when the operator cache is on) and the global DOF
    layout of `WeakFunction.to_vector`.
    """

    def __init__(self, mesh: PolyMesh, k: int, use_cache: Optional[bool] = None):
        if int(k) != k or k < 2:
            raise ConfigError(f"polynomial degree k must be an integer >= 2, got {k!r}")
        self.mesh = mesh
        self.k = int(k)
        self.dk = polynomial_dimension(self.k)
        self.dr = polynomial_dimension(self.k - 2)
        self.me = self.k - 1
        self.n_interior = mesh.n_elements * self.dk
        self.n_dofs = self.n_interior + 3 * self.me * mesh.n_edges
        use_cache = settings.OPERATOR_CACHE if use_cache is None else use_cache

        cache: Dict[tuple, LocalWeakSpace] = {}
        self.local_spaces: List[LocalWeakSpace] = []
        self.element_dofs: List[np.ndarray] = []
        for eid, element in enumerate(mesh.elements):
            coords = mesh.element_vertices(eid)
            relative = coords - np.array(element.centroid)
            ids = element.vertex_ids
            flips = tuple(ids[a] > ids[(a + 1) % len(ids)] for a in range(len(ids)))
            key = (self.k, flips, _round_key(relative / element.diameter), _round_key(element.diameter))
            local = cache.get(key) if use_cache else None
            if local is None:
                try:
                    local = LocalWeakSpace(relative, element.diameter, self.k, flips)
                except SingularGramError as exc:
                    raise SingularGramError(str(exc), element_id=eid) from exc
                if use_cache:
                    cache[key] = local
            self.local_spaces.append(local)
            self.element_dofs.append(self._element_dofs(eid))

        self.groups = self._group_elements()
        logger.debug("Weak space k=%d: %d DOFs, %d distinct element shapes",
                     self.k, self.n_dofs, len(self.groups))

    def _element_dofs(self, element_id: int) -> np.ndarray:
        element = self.mesh.elements[element_id]
        blocks = [np.arange(element_id * self.dk, (element_id + 1) * self.dk)]
        for gid in element.edge_ids:
            start = self.edge_offset(gid)
            blocks.append(np.arange(start, start + 3 * self.me))
        return np.concatenate(blocks)

    def _group_elements(self) -> List[ElementGroup]:
        members: Dict[int, List[int]] = {}
        order: List[LocalWeakSpace] = []
        for eid, local in enumerate(self.local_spaces):
            if id(local) not in members:
                members[id(local)] = []
                order.append(local)
            members[id(local)].append(eid)
        groups = []
        for local in order:
            ids = np.array(members[id(local)], dtype=int)
            groups.append(ElementGroup(
                local=local,
                element_ids=ids,
                dofs=np.stack([self.element_dofs[e] for e in ids]),
                centroids=np.array([self.mesh.elements[e].centroid for e in ids]),
            ))
        return groups

    def edge_offset(self, edge_id: int) -> int:
        return self.n_interior + 3 * self.me * edge_id

    def local_vector(self, v: WeakFunction, element_id: int) -> np.ndarray:
        """Stacked local DOFs of v on one element."""
        return v.to_vector()[self.element_dofs[element_id]]

    def zeros(self) -> WeakFunction:
        return WeakFunction.zeros(self.mesh.n_elements, self.mesh.n_edges, self.k)

    def from_vector(self, vector: np.ndarray) -> WeakFunction:
        return WeakFunction.from_vector(vector, self.mesh.n_elements, self.mesh.n_edges, self.k)

    def project(self, w: Field, grad_w: Field) -> WeakFunction:
        return project_Qh(self, w, grad_w)


def _round_key(values) -> tuple:
    return tuple(float(x) for x in np.round(np.atleast_1d(values).ravel(), 12))


def project_Qh(space: WeakSpace, w: Field, grad_w: Field) -> WeakFunction:
    """
    Q_h w = {Q_0 w, Q_b w, Q_b grad w} on every element and edge.

    `w` maps (x, y) arrays to values; `grad_w` returns a pair (w_x, w_y).
    """
    mesh = space.mesh
    interior = np.zeros((mesh.n_elements, space.dk))
    for group in space.groups:
        local = group.local
        rule = local.data_rule
        pts = rule.points[None, :, :] + group.centroids[:, None, :]
        values = evaluate_field(w, pts.reshape(-1, 2)).reshape(len(group.element_ids), -1)
        moments = (values * rule.weights) @ local.basis.eval(rule.points)
        interior[group.element_ids] = cho_solve(local.gram_factor, moments.T).T

    ref, projector = edge_projector(space.me - 1, edge_degree(space.k) + settings.DATA_QUADRATURE_EXTRA)
    pts = _edge_points(mesh, ref.params)
    values = evaluate_field(w, pts.reshape(-1, 2)).reshape(mesh.n_edges, -1)
    grads = evaluate_field(grad_w, pts.reshape(-1, 2)).reshape(2, mesh.n_edges, -1)
    trace = values @ projector.T
    gradient = np.einsum("cen,mn->ecm", grads, projector)
    return WeakFunction(space.k, interior, trace, gradient)


def _edge_points(mesh: PolyMesh, params: np.ndarray) -> np.ndarray:
    """Physical points at normalized arclength `params` on every edge, shape (n_edges, len(params), 2)."""
    ends = np.array([e.endpoint_ids for e in mesh.edges])
    starts = mesh.vertices[ends[:, 0]]
    stops = mesh.vertices[ends[:, 1]]
    return starts[:, None, :] + params[None, :, None] * (stops - starts)[:, None, :]


def check_commutativity(space: WeakSpace, element_id: int, w: Field, grad_w: Field,
                        hess_w: Callable, i: int, j: int,
                        quad_degree: Optional[int] = None) -> float:
    """
    Max coefficient difference between d2_{ij,w}(Q_h w) and the P_{k-2}
    projection of d2_ij w on one element.

    `hess_w(x, y)` returns the nested pairs ((w_xx, w_xy), (w_yx, w_yy)).
    Both sides use the same quadrature of degree `quad_degree`.
    """
    i0, j0 = _check_pair(i, j)
    local = space.local_spaces[element_id]
    element = space.mesh.elements[element_id]
    coords = space.mesh.element_vertices(element_id)
    degree = quad_degree if quad_degree is not None else 2 * stiffness_degree(space.k)
    rule = element_rule(coords, degree)

    v = np.zeros(local.n_local)
    v[:local.dk] = project_Q0(w, coords, space.k, rule)
    for index, gid in enumerate(element.edge_ids):
        start, end = space.mesh.edge_points(gid)
        erule = edge_rule(start, end, degree)
        v[local.edge_block(index, 0)] = project_Qb(w, start, end, space.me - 1, erule)
        grads = project_Qb(grad_w, start, end, space.me - 1, erule)
        v[local.edge_block(index, 1)] = grads[0]
        v[local.edge_block(index, 2)] = grads[1]

    lhs = local.weak_derivs[(i, j)] @ v
    rhs = project_calQh(lambda x, y: hess_w(x, y)[i0][j0], coords, space.k, rule)
    return float(np.max(np.abs(lhs - rhs)))
