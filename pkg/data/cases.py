"""
Manufactured solutions of the biharmonic equation on the unit square.

Every case carries u with its gradient and Hessian in closed form and the
matching source f = Delta^2 u. Boundary data are derived from u.
"""
from dataclasses import dataclass
from typing import Callable, Dict, List

import numpy as np
import pandas as pd

from services.errors import ConfigError
from services.wg_solver import BiharmonicProblem


@dataclass(frozen=True)
class ManufacturedSolution:
    name: str
    formula: str
    u: Callable
    grad: Callable
    hessian: Callable
    f: Callable

    def to_problem(self, analytic_tangent: bool = True) -> BiharmonicProblem:
        """Problem data: f, xi = u, nu = grad u . n, and grad u . tau when analytic."""
        grad = self.grad

        def nu(x, y, n1, n2):
            gx, gy = grad(x, y)
            return gx * n1 + gy * n2

        def grad_xi_tau(x, y, t1, t2):
            gx, gy = grad(x, y)
            return gx * t1 + gy * t2

        return BiharmonicProblem(f=self.f, xi=self.u, nu=nu,
                                 grad_xi_tau=grad_xi_tau if analytic_tangent else None)


# quad: x^2 + y^2 + xy + x + y + 1
def _quad_u(x, y):
    return x ** 2 + y ** 2 + x * y + x + y + 1.0


def _quad_grad(x, y):
    return 2 * x + y + 1.0, 2 * y + x + 1.0


def _quad_hessian(x, y):
    return (2.0, 1.0), (1.0, 2.0)


# bubble: p(x) p(y) with p(t) = t^2 (1 - t)^2
def _p(t):
    return t ** 2 * (1 - t) ** 2


def _dp(t):
    return 2 * t - 6 * t ** 2 + 4 * t ** 3


def _d2p(t):
    return 2 - 12 * t + 12 * t ** 2


def _bubble_u(x, y):
    return _p(x) * _p(y)


def _bubble_grad(x, y):
    return _dp(x) * _p(y), _p(x) * _dp(y)


def _bubble_hessian(x, y):
    xy = _dp(x) * _dp(y)
    return (_d2p(x) * _p(y), xy), (xy, _p(x) * _d2p(y))


def _bubble_f(x, y):
    return 24.0 * (_p(x) + _p(y)) + 2.0 * _d2p(x) * _d2p(y)


# trig: sin(x) sin(y)
def _trig_u(x, y):
    return np.sin(x) * np.sin(y)


def _trig_grad(x, y):
    return np.cos(x) * np.sin(y), np.sin(x) * np.cos(y)


def _trig_hessian(x, y):
    cc = np.cos(x) * np.cos(y)
    return (-_trig_u(x, y), cc), (cc, -_trig_u(x, y))


def _trig_f(x, y):
    return 4.0 * _trig_u(x, y)


# biquad: q(x) q(y) with q(t) = t (1 - t)
def _q(t):
    return t * (1 - t)


def _biquad_u(x, y):
    return _q(x) * _q(y)


def _biquad_grad(x, y):
    return (1 - 2 * x) * _q(y), _q(x) * (1 - 2 * y)


def _biquad_hessian(x, y):
    xy = (1 - 2 * x) * (1 - 2 * y)
    return (-2.0 * _q(y), xy), (xy, -2.0 * _q(x))


CASES: Dict[str, ManufacturedSolution] = {
    "quad": ManufacturedSolution("quad", "x^2+y^2+xy+x+y+1", _quad_u, _quad_grad, _quad_hessian,
                                 lambda x, y: 0.0),
    "bubble": ManufacturedSolution("bubble", "x^2(1-x)^2 y^2(1-y)^2", _bubble_u, _bubble_grad,
                                   _bubble_hessian, _bubble_f),
    "trig": ManufacturedSolution("trig", "sin(x) sin(y)", _trig_u, _trig_grad, _trig_hessian, _trig_f),
    "biquad": ManufacturedSolution("biquad", "x(1-x) y(1-y)", _biquad_u, _biquad_grad, _biquad_hessian,
                                   lambda x, y: 8.0),
}


def get_case(name: str) -> ManufacturedSolution:
    """Look up a built-in case by name."""
    try:
        return CASES[name]
    except KeyError:
        raise ConfigError(f"unknown case '{name}', expected one of {', '.join(CASES)}") from None


def list_cases() -> List[str]:
    return list(CASES)


def cases_table() -> pd.DataFrame:
    """Name, exact solution and whether the boundary data vanish, one row per case."""
    return pd.DataFrame({
        "case": list(CASES),
        "u": [case.formula for case in CASES.values()],
        "homogeneous_bc": [name in ("bubble",) for name in CASES],
    })
