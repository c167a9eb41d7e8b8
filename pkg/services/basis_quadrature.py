"""
Polynomial bases, quadrature rules and L2 projections.

Element polynomials use scaled monomials ((x - x_c)/h)^a ((y - y_c)/h)^b
ordered by total degree. Edge polynomials use Legendre polynomials P_j(2s - 1)
in the normalized arclength s in [0, 1] measured along the edge's global
orientation.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.polynomial.legendre import leggauss, legvander
from scipy.linalg import LinAlgError, cho_factor, cho_solve
from scipy.special import roots_jacobi

from config.settings import settings
from services.errors import QuadratureError, SingularGramError
from services.mesh import polygon_centroid, polygon_diameter, polygon_signed_area

logger = logging.getLogger(__name__)

MAX_QUADRATURE_DEGREE = 40

# Symmetric rules on the reference triangle (0,0),(1,0),(0,1); weights sum to 1/2.
# Entries: (barycentric orbit generator, weight, orbit size)
_TRIANGLE_TABLES = {
    1: [((1 / 3, 1 / 3, 1 / 3), 0.5, 1)],
    2: [((2 / 3, 1 / 6, 1 / 6), 1 / 6, 3)],
    4: [
        ((0.108103018168070, 0.445948490915965, 0.445948490915965), 0.1116907948390055, 3),
        ((0.816847572980459, 0.091576213509771, 0.091576213509771), 0.054975871827661, 3),
    ],
    5: [
        ((1 / 3, 1 / 3, 1 / 3), 0.1125, 1),
        ((0.797426985353087, 0.101286507323456, 0.101286507323456), 0.5 * 0.125939180544827, 3),
        ((0.059715871789770, 0.470142064105115, 0.470142064105115), 0.5 * 0.132394152788506, 3),
    ],
}


@dataclass(frozen=True)
class QuadratureRule:
    """
    Nodes and positive weights.

    For edge rules `params` holds the normalized arclength s in [0, 1] of each
    node; for element rules it is None.
    """
    points: np.ndarray
    weights: np.ndarray
    exactness_degree: int
    params: Optional[np.ndarray] = field(default=None)

    def integrate(self, values: np.ndarray) -> np.ndarray:
        """Integrate sampled values; the node axis is the last one."""
        return np.asarray(values) @ self.weights

    def __len__(self) -> int:
        return len(self.weights)


def _check_degree(target_degree: int) -> int:
    if target_degree < 0:
        raise QuadratureError(f"quadrature degree must be non-negative, got {target_degree}")
    if target_degree > MAX_QUADRATURE_DEGREE:
        raise QuadratureError(
            f"quadrature degree {target_degree} exceeds the supported maximum {MAX_QUADRATURE_DEGREE}")
    return int(target_degree)


def _orbit(generator: Tuple[float, float, float], size: int) -> List[Tuple[float, float]]:
    a, b, c = generator
    if size == 1:
        return [(b, c)]
    # barycentric (a,b,b) and its two rotations, returned as (x, y) = (l2, l3)
    return [(b, c), (a, b), (c, a)]


def _collapsed_triangle_rule(degree: int) -> Tuple[np.ndarray, np.ndarray]:
    """Conical product rule: Gauss-Jacobi(1, 0) x Gauss-Legendre on the collapsed square."""
    n = max(1, math.ceil((degree + 1) / 2))
    b, wb = roots_jacobi(n, 1.0, 0.0)
    a, wa = leggauss(n)
    A, B = np.meshgrid(a, b, indexing="ij")
    WA, WB = np.meshgrid(wa, wb, indexing="ij")
    x = 0.25 * (1.0 + A) * (1.0 - B)
    y = 0.5 * (1.0 + B)
    points = np.column_stack([x.ravel(), y.ravel()])
    weights = (WA * WB).ravel() / 8.0
    return points, weights


def reference_triangle_rule(target_degree: int) -> QuadratureRule:
    """Rule on the reference triangle exact to `target_degree`."""
    degree = _check_degree(target_degree)
    table_degree = next((d for d in sorted(_TRIANGLE_TABLES) if d >= degree), None)
    if table_degree is not None:
        pts, wts = [], []
        for generator, weight, size in _TRIANGLE_TABLES[table_degree]:
            for point in _orbit(generator, size):
                pts.append(point)
                wts.append(weight)
        return QuadratureRule(np.array(pts), np.array(wts), table_degree)
    points, weights = _collapsed_triangle_rule(degree)
    exactness = 2 * max(1, math.ceil((degree + 1) / 2)) - 1
    return QuadratureRule(points, weights, exactness)


def triangle_rule(p0, p1, p2, target_degree: int) -> QuadratureRule:
    """Map the reference rule onto the triangle p0, p1, p2."""
    ref = reference_triangle_rule(target_degree)
    p0, p1, p2 = (np.asarray(p, dtype=float) for p in (p0, p1, p2))
    jac = np.column_stack([p1 - p0, p2 - p0])
    det = float(np.linalg.det(jac))
    points = p0 + ref.points @ jac.T
    return QuadratureRule(points, ref.weights * abs(det), ref.exactness_degree)


def element_rule(vertices: np.ndarray, target_degree: int) -> QuadratureRule:
    """
    Quadrature on a polygon exact to `target_degree`.

    Triangles use the reference rule directly; other polygons are fanned from
    the centroid, which requires every fan triangle to have positive area.

    Raises:
        QuadratureError: unsupported degree or polygon not star-shaped from its centroid.
    """
    coords = np.asarray(vertices, dtype=float)
    if len(coords) == 3:
        return triangle_rule(coords[0], coords[1], coords[2], target_degree)

    center = polygon_centroid(coords)
    scale = polygon_diameter(coords)
    pts, wts = [], []
    exactness = None
    for a, b in zip(coords, np.roll(coords, -1, axis=0)):
        if polygon_signed_area(np.array([center, a, b])) <= 1e-14 * scale * scale:
            raise QuadratureError("polygon is not star-shaped with respect to its centroid")
        sub = triangle_rule(center, a, b, target_degree)
        pts.append(sub.points)
        wts.append(sub.weights)
        exactness = sub.exactness_degree
    return QuadratureRule(np.vstack(pts), np.concatenate(wts), exactness)


def reference_edge_rule(target_degree: int) -> QuadratureRule:
    """Gauss-Legendre on [0, 1]; `points` and `params` both hold s."""
    degree = _check_degree(target_degree)
    n = max(1, math.ceil((degree + 1) / 2))
    t, w = leggauss(n)
    s = 0.5 * (t + 1.0)
    return QuadratureRule(s, 0.5 * w, 2 * n - 1, params=s)


def edge_rule(start, end, target_degree: int) -> QuadratureRule:
    """Gauss-Legendre rule on the segment start -> end, weights summing to its length."""
    ref = reference_edge_rule(target_degree)
    start = np.asarray(start, dtype=float)
    end = np.asarray(end, dtype=float)
    length = float(np.linalg.norm(end - start))
    points = start + np.outer(ref.params, end - start)
    return QuadratureRule(points, ref.weights * length, ref.exactness_degree, params=ref.params)


def polynomial_dimension(degree: int) -> int:
    """dim P_r in two variables; zero for negative r."""
    return (degree + 1) * (degree + 2) // 2 if degree >= 0 else 0


class ElementBasis:
    """
    Scaled monomial basis of P_r on one element.

    Basis function m is ((x - x_c)/h)^a ((y - y_c)/h)^b with (a, b) =
    exponents[m], ordered by total degree then by increasing b.
    """

    def __init__(self, center, h: float, degree: int):
        self.center = np.asarray(center, dtype=float)
        self.h = float(h)
        self.degree = int(degree)
        self.exponents = np.array(
            [(d - b, b) for d in range(self.degree + 1) for b in range(d + 1)], dtype=int
        ).reshape(-1, 2)

    @property
    def dim(self) -> int:
        return len(self.exponents)

    def _scaled(self, points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        rel = (np.atleast_2d(points) - self.center) / self.h
        return rel[:, 0], rel[:, 1]

    @staticmethod
    def _power(values: np.ndarray, exponents: np.ndarray, shift: int) -> Tuple[np.ndarray, np.ndarray]:
        """values^(e - shift) with the falling-factorial coefficient e!/(e-shift)!."""
        coef = np.ones(len(exponents))
        for s in range(shift):
            coef = coef * (exponents - s)
        powers = np.clip(exponents - shift, 0, None)
        return np.power.outer(values, powers), coef

    def eval(self, points: np.ndarray) -> np.ndarray:
        """Basis values, shape (N, dim)."""
        X, Y = self._scaled(points)
        px, _ = self._power(X, self.exponents[:, 0], 0)
        py, _ = self._power(Y, self.exponents[:, 1], 0)
        return px * py

    def grad(self, points: np.ndarray) -> np.ndarray:
        """First partials, shape (N, dim, 2)."""
        X, Y = self._scaled(points)
        ax, bx = self.exponents[:, 0], self.exponents[:, 1]
        px0, _ = self._power(X, ax, 0)
        py0, _ = self._power(Y, bx, 0)
        px1, cx = self._power(X, ax, 1)
        py1, cy = self._power(Y, bx, 1)
        dx = cx * px1 * py0 / self.h
        dy = cy * px0 * py1 / self.h
        return np.stack([dx, dy], axis=-1)

    def hessian(self, points: np.ndarray) -> np.ndarray:
        """Second partials, shape (N, dim, 2, 2)."""
        X, Y = self._scaled(points)
        ax, bx = self.exponents[:, 0], self.exponents[:, 1]
        px0, _ = self._power(X, ax, 0)
        py0, _ = self._power(Y, bx, 0)
        px1, cx1 = self._power(X, ax, 1)
        py1, cy1 = self._power(Y, bx, 1)
        px2, cx2 = self._power(X, ax, 2)
        py2, cy2 = self._power(Y, bx, 2)
        h2 = self.h * self.h
        dxx = cx2 * px2 * py0 / h2
        dxy = cx1 * cy1 * px1 * py1 / h2
        dyy = cy2 * px0 * py2 / h2
        return np.stack([np.stack([dxx, dxy], axis=-1), np.stack([dxy, dyy], axis=-1)], axis=-1)

    def values(self, coefficients: np.ndarray, points: np.ndarray) -> np.ndarray:
        """Evaluate the polynomial with the given coefficients."""
        return self.eval(points) @ np.asarray(coefficients)


class EdgeBasis:
    """Legendre basis P_j(2s - 1), j = 0..r, in the normalized arclength s."""

    def __init__(self, degree: int):
        self.degree = int(degree)

    @property
    def dim(self) -> int:
        return self.degree + 1

    def eval(self, s: np.ndarray) -> np.ndarray:
        """Basis values at parameters s, shape (N, dim)."""
        return legvander(2.0 * np.asarray(s, dtype=float) - 1.0, self.degree)


Field = Callable[[np.ndarray, np.ndarray], Union[np.ndarray, float, Sequence]]


def evaluate_field(f: Field, points: np.ndarray) -> np.ndarray:
    """
    Evaluate a scalar or 2-vector field f(x, y) at points.

    Returns shape (N,) for scalars and (2, N) for vectors; constants are broadcast.
    """
    pts = np.atleast_2d(points)
    x, y = pts[:, 0], pts[:, 1]
    raw = f(x, y)
    if isinstance(raw, (tuple, list)):
        return np.stack([np.broadcast_to(np.asarray(c, dtype=float), x.shape) for c in raw])
    return np.broadcast_to(np.asarray(raw, dtype=float), x.shape).copy()


def factor_gram(gram: np.ndarray, what: str):
    """Cholesky factor of a Gram matrix, raising SingularGramError on failure."""
    try:
        return cho_factor(gram)
    except (LinAlgError, ValueError) as exc:
        raise SingularGramError(f"{what} Gram matrix is not positive definite: {exc}") from exc


def _element_projection(f: Field, vertices: np.ndarray, degree: int,
                        rule: Optional[QuadratureRule]) -> np.ndarray:
    coords = np.asarray(vertices, dtype=float)
    basis = ElementBasis(polygon_centroid(coords), polygon_diameter(coords), degree)
    if rule is None:
        rule = element_rule(coords, 2 * max(degree, 0) + settings.DATA_QUADRATURE_EXTRA)
    phi = basis.eval(rule.points)
    weighted = phi * rule.weights[:, None]
    gram = weighted.T @ phi
    moments = weighted.T @ evaluate_field(f, rule.points)
    return cho_solve(factor_gram(gram, "element"), moments)


def project_Q0(f: Field, vertices: np.ndarray, k: int,
               rule: Optional[QuadratureRule] = None) -> np.ndarray:
    """L2 projection of f onto P_k(T), as coefficients of `ElementBasis(centroid, h_T, k)`."""
    return _element_projection(f, vertices, k, rule)


def project_calQh(g: Field, vertices: np.ndarray, k: int,
                  rule: Optional[QuadratureRule] = None) -> np.ndarray:
    """L2 projection of g onto P_{k-2}(T) (the weak-derivative range space)."""
    return _element_projection(g, vertices, k - 2, rule)


def edge_projector(degree: int, quad_degree: int) -> Tuple[QuadratureRule, np.ndarray]:
    """
    Reference edge rule and the matrix P with Q_b g = P @ g(s_q).

    Q_b coefficients do not depend on the edge length because the basis is
    defined in normalized arclength.
    """
    basis = EdgeBasis(degree)
    ref = reference_edge_rule(quad_degree)
    psi = basis.eval(ref.params)
    weighted = psi * ref.weights[:, None]
    gram = weighted.T @ psi
    return ref, cho_solve(factor_gram(gram, "edge"), weighted.T)


def project_Qb(g: Field, start, end, degree: int,
               rule: Optional[QuadratureRule] = None) -> np.ndarray:
    """
    L2 projection of g onto P_degree(e) on the segment start -> end.

    Returns coefficients of shape (degree+1,) for scalar g and (2, degree+1)
    for vector g.
    """
    if rule is None:
        rule = edge_rule(start, end, 2 * degree + 2 + settings.DATA_QUADRATURE_EXTRA)
    psi = EdgeBasis(degree).eval(rule.params)
    weighted = psi * rule.weights[:, None]
    gram = weighted.T @ psi
    values = evaluate_field(g, rule.points)
    return cho_solve(factor_gram(gram, "edge"), weighted.T @ values.T).T
