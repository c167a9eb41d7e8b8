"""
Error measures of a discrete solution against the projection Q_h u of the
exact solution:

    l2     ||u0 - Q_0 u||
    h2     |||u_h - Q_h u|||
    ubinf  max over edges of |ub - Q_b u|
    uginf  max over edges of |ug - Q_b grad u|   (Euclidean length)
"""
import logging
import math
from dataclasses import asdict, dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np

from services.basis_quadrature import EdgeBasis, reference_edge_rule
from services.weak_deriv import DERIVATIVE_PAIRS, WeakFunction, WeakSpace, build_weak_deriv, edge_degree

logger = logging.getLogger(__name__)

MEASURES = ("l2", "h2", "ubinf", "uginf")


@dataclass(frozen=True)
class ErrorQuadruple:
    l2: float
    h2: float
    ub_inf: float
    ug_inf: float
    h: float

    def measure(self, name: str) -> float:
        """Value of one of MEASURES."""
        return {"l2": self.l2, "h2": self.h2, "ubinf": self.ub_inf, "uginf": self.ug_inf}[name]

    def to_dict(self) -> Dict[str, float]:
        return asdict(self)


def triple_bar_norm(space: WeakSpace, v: WeakFunction) -> float:
    """
    Discrete H2 norm

        sum_T [ sum_ij ||d2_{ij,w} v||_T^2 + h_T^-1 ||Q_b grad v0 - vg||_dT^2
                + h_T^-3 ||Q_b v0 - vb||_dT^2 ]

    with h_T = sqrt(2|T|), evaluated pointwise by quadrature rather than
    through the stiffness matrix.
    """
    x = v.to_vector()
    total = 0.0
    for group in space.groups:
        local = group.local
        values = x[group.dofs]
        v0 = values[:, :local.dk]

        test = local.test_basis.eval(local.rule.points)
        for i, j in DERIVATIVE_PAIRS:
            coeffs = values @ build_weak_deriv(local, i, j).matrix.T
            total += float(np.sum((coeffs @ test.T) ** 2 @ local.rule.weights))

        for edge in local.edges:
            pts, weights = edge.rule.points, edge.rule.weights
            projector = np.linalg.solve(edge.gram, (edge.psi * weights[:, None]).T)
            trace = v0 @ local.basis.eval(pts).T
            jump = (trace @ projector.T) @ edge.psi.T - values[:, local.edge_block(edge.index, 0)] @ edge.psi.T
            total += local.size ** -3 * float(np.sum(jump ** 2 @ weights))
            grad = local.basis.grad(pts)
            for c in (0, 1):
                dtrace = v0 @ grad[:, :, c].T
                jump = ((dtrace @ projector.T) @ edge.psi.T
                        - values[:, local.edge_block(edge.index, 1 + c)] @ edge.psi.T)
                total += local.size ** -1 * float(np.sum(jump ** 2 @ weights))
    return math.sqrt(max(total, 0.0))


def l2_norm(space: WeakSpace, v: WeakFunction) -> float:
    """||v0|| over the whole domain."""
    total = 0.0
    for group in space.groups:
        rule = group.local.data_rule
        values = v.interior[group.element_ids] @ group.local.basis.eval(rule.points).T
        total += float(np.sum(values ** 2 @ rule.weights))
    return math.sqrt(total)


def _edge_samples(k: int) -> np.ndarray:
    """Edge Gauss points plus both endpoints, in normalized arclength."""
    params = reference_edge_rule(edge_degree(k)).params
    return EdgeBasis(k - 2).eval(np.concatenate([[0.0], params, [1.0]]))


def ub_linf(space: WeakSpace, v: WeakFunction) -> float:
    """max over edges and sample points of |vb|."""
    if v.n_edges == 0:
        return 0.0
    return float(np.max(np.abs(v.trace @ _edge_samples(space.k).T)))


def ug_linf(space: WeakSpace, v: WeakFunction) -> float:
    """max over edges and sample points of the Euclidean length of vg."""
    if v.n_edges == 0:
        return 0.0
    values = np.einsum("ecm,nm->ecn", v.gradient, _edge_samples(space.k))
    return float(np.max(np.sqrt(np.sum(values ** 2, axis=1))))


def error_quadruple(space: WeakSpace, u_h: WeakFunction, exact: WeakFunction,
                    h: Optional[float] = None) -> ErrorQuadruple:
    """All four measures of u_h - exact, where `exact` is Q_h u."""
    error = u_h - exact
    return ErrorQuadruple(
        l2=l2_norm(space, error),
        h2=triple_bar_norm(space, error),
        ub_inf=ub_linf(space, error),
        ug_inf=ug_linf(space, error),
        h=space.mesh.h if h is None else h,
    )


def order_between(coarse: float, fine: float, h_coarse: float, h_fine: float) -> Optional[float]:
    """log(e_c / e_f) / log(h_c / h_f), or None when undefined."""
    values = (coarse, fine, h_coarse, h_fine)
    if not all(math.isfinite(x) and x > 0 for x in values) or h_coarse == h_fine:
        return None
    return math.log(coarse / fine) / math.log(h_coarse / h_fine)


def observed_order(errs: Sequence[ErrorQuadruple]) -> List[Dict[str, Optional[float]]]:
    """Per-row orders for every measure; the first row has no order."""
    orders: List[Dict[str, Optional[float]]] = []
    for index, current in enumerate(errs):
        if index == 0:
            orders.append({name: None for name in MEASURES})
            continue
        previous = errs[index - 1]
        orders.append({
            name: order_between(previous.measure(name), current.measure(name), previous.h, current.h)
            for name in MEASURES
        })
    return orders
