import math

import numpy as np
import pytest

from services.basis_quadrature import (
    MAX_QUADRATURE_DEGREE,
    EdgeBasis,
    ElementBasis,
    edge_rule,
    element_rule,
    evaluate_field,
    polynomial_dimension,
    project_calQh,
    project_Q0,
    project_Qb,
    reference_edge_rule,
    reference_triangle_rule,
    triangle_rule,
)
from services.errors import QuadratureError
from services.mesh import polygon_centroid, polygon_diameter

UNIT_SQUARE = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
SMALL_SQUARE = 0.5 * UNIT_SQUARE
PENTAGON = np.array([[0.0, 0.0], [1.0, 0.0], [1.3, 0.8], [0.5, 1.2], [-0.2, 0.7]])


def _basis_for(vertices, degree):
    return ElementBasis(polygon_centroid(vertices), polygon_diameter(vertices), degree)


def test_weights_sum_to_area():
    for degree in (0, 3, 9):
        assert element_rule(UNIT_SQUARE, degree).weights.sum() == pytest.approx(1.0, rel=1e-14)
        assert np.all(element_rule(PENTAGON, degree).weights > 0)


def test_monomial_on_unit_square():
    rule = element_rule(UNIT_SQUARE, 5)
    x, y = rule.points.T
    assert rule.integrate(x ** 2 * y ** 3) == pytest.approx(1.0 / 12.0, rel=1e-13)


def test_linear_on_reference_triangle():
    rule = triangle_rule((0, 0), (1, 0), (0, 1), 1)
    assert rule.integrate(rule.points[:, 0]) == pytest.approx(1.0 / 6.0, rel=1e-14)


@pytest.mark.parametrize("degree", [1, 2, 3, 4, 5, 6, 8, 11, 16, 25])
def test_reference_triangle_exactness(degree):
    rule = reference_triangle_rule(degree)
    assert rule.exactness_degree >= degree
    x, y = rule.points.T
    for total in range(degree + 1):
        for b in range(total + 1):
            a = total - b
            exact = math.factorial(a) * math.factorial(b) / math.factorial(a + b + 2)
            assert rule.integrate(x ** a * y ** b) == pytest.approx(exact, rel=1e-12)


def test_random_monomials_on_a_pentagon(rng):
    degree = 8
    rule = element_rule(PENTAGON, degree)
    reference = element_rule(PENTAGON, 30)
    for _ in range(20):
        a = int(rng.integers(0, degree + 1))
        b = int(rng.integers(0, degree - a + 1))
        x, y = rule.points.T
        xr, yr = reference.points.T
        assert rule.integrate(x ** a * y ** b) == pytest.approx(reference.integrate(xr ** a * yr ** b), rel=1e-12)


def test_unsupported_degree_is_reported():
    with pytest.raises(QuadratureError):
        element_rule(UNIT_SQUARE, MAX_QUADRATURE_DEGREE + 1)
    with pytest.raises(QuadratureError):
        reference_edge_rule(-1)


def test_polygon_not_star_shaped_from_centroid():
    # U shape: the centroid lies in the notch
    u_shape = np.array([[0, 0], [3, 0], [3, 3], [2, 3], [2, 1], [1, 1], [1, 3], [0, 3]], dtype=float)
    with pytest.raises(QuadratureError, match="star-shaped"):
        element_rule(u_shape, 2)


def test_edge_rules():
    rule = edge_rule((0.0, 0.0), (3.0, 4.0), 4)
    assert rule.weights.sum() == pytest.approx(5.0)
    two_point = reference_edge_rule(2)
    assert len(two_point) == 2
    assert two_point.integrate(two_point.params ** 2) == pytest.approx(1.0 / 3.0, rel=1e-14)
    three_point = reference_edge_rule(5)
    assert len(three_point) == 3
    assert three_point.integrate(three_point.params ** 5) == pytest.approx(1.0 / 6.0, rel=1e-14)


def test_polynomial_dimension():
    assert [polynomial_dimension(r) for r in (-1, 0, 1, 2, 5)] == [0, 1, 3, 6, 21]


def test_element_basis_ordering_and_derivatives():
    basis = ElementBasis((0.5, 0.5), 2.0, 2)
    assert basis.exponents.tolist() == [[0, 0], [1, 0], [0, 1], [2, 0], [1, 1], [0, 2]]
    point = np.array([[0.9, 0.1]])
    X, Y = (0.9 - 0.5) / 2.0, (0.1 - 0.5) / 2.0
    np.testing.assert_allclose(basis.eval(point)[0], [1, X, Y, X * X, X * Y, Y * Y])
    np.testing.assert_allclose(basis.grad(point)[0, 4], [Y / 2.0, X / 2.0])
    np.testing.assert_allclose(basis.hessian(point)[0, 3], [[2.0 / 4.0, 0.0], [0.0, 0.0]])
    np.testing.assert_allclose(basis.hessian(point)[0, 4], [[0.0, 0.25], [0.25, 0.0]])


def test_element_basis_gradient_matches_finite_differences(rng):
    basis = ElementBasis((0.2, -0.1), 0.7, 4)
    points = rng.uniform(-0.5, 0.5, size=(5, 2))
    step = 1e-6
    for c in (0, 1):
        shift = np.zeros(2)
        shift[c] = step
        fd = (basis.eval(points + shift) - basis.eval(points - shift)) / (2 * step)
        np.testing.assert_allclose(basis.grad(points)[:, :, c], fd, atol=1e-7)


def test_edge_basis_is_orthogonal():
    rule = reference_edge_rule(10)
    psi = EdgeBasis(4).eval(rule.params)
    gram = (psi * rule.weights[:, None]).T @ psi
    np.testing.assert_allclose(gram, np.diag([1.0 / (2 * j + 1) for j in range(5)]), atol=1e-14)


def test_evaluate_field_broadcasts_constants():
    points = np.zeros((4, 2))
    assert evaluate_field(lambda x, y: 3.0, points).tolist() == [3.0] * 4
    assert evaluate_field(lambda x, y: (1.0, x), points).shape == (2, 4)


def test_project_Q0_reproduces_polynomials(rng):
    f = lambda x, y: 1.0 + 2.0 * x - y + 3.0 * x * y + x ** 2
    coeffs = project_Q0(f, SMALL_SQUARE, 2)
    points = rng.uniform(0.0, 0.5, size=(10, 2))
    np.testing.assert_allclose(_basis_for(SMALL_SQUARE, 2).values(coeffs, points), f(*points.T), atol=1e-12)


def test_project_Q0_is_idempotent():
    f = lambda x, y: np.exp(x) * np.cos(y)
    basis = _basis_for(PENTAGON, 3)
    once = project_Q0(f, PENTAGON, 3)
    twice = project_Q0(lambda x, y: basis.values(once, np.column_stack([x, y])), PENTAGON, 3)
    np.testing.assert_allclose(twice, once, atol=1e-12)


def test_project_Q0_residual_is_orthogonal():
    f = lambda x, y: x ** 3
    coeffs = project_Q0(f, UNIT_SQUARE, 2)
    rule = element_rule(UNIT_SQUARE, 10)
    basis = _basis_for(UNIT_SQUARE, 2)
    residual = f(*rule.points.T) - basis.values(coeffs, rule.points)
    np.testing.assert_allclose(basis.eval(rule.points).T @ (rule.weights * residual), 0.0, atol=1e-13)


def test_project_Q0_matches_least_squares():
    f = lambda x, y: np.sin(x) * np.sin(y)
    rule = element_rule(SMALL_SQUARE, 12)
    coeffs = project_Q0(f, SMALL_SQUARE, 2, rule)
    sqrt_w = np.sqrt(rule.weights)
    design = _basis_for(SMALL_SQUARE, 2).eval(rule.points) * sqrt_w[:, None]
    expected, *_ = np.linalg.lstsq(design, sqrt_w * f(*rule.points.T), rcond=None)
    np.testing.assert_allclose(coeffs, expected, rtol=1e-10, atol=1e-12)


def test_project_Q0_is_best_approximation(rng):
    f = lambda x, y: np.sin(3 * x) + y ** 4
    rule = element_rule(PENTAGON, 14)
    basis = _basis_for(PENTAGON, 2)
    values = f(*rule.points.T)
    best = rule.integrate((values - basis.values(project_Q0(f, PENTAGON, 2, rule), rule.points)) ** 2)
    for _ in range(20):
        other = rng.standard_normal(basis.dim)
        assert best <= rule.integrate((values - basis.values(other, rule.points)) ** 2) + 1e-10


def test_projections_are_linear():
    f = lambda x, y: np.cos(x + 2 * y)
    g = lambda x, y: x ** 5 - y
    combined = project_Q0(lambda x, y: 2.0 * f(x, y) - 3.0 * g(x, y), PENTAGON, 2)
    np.testing.assert_allclose(combined, 2.0 * project_Q0(f, PENTAGON, 2) - 3.0 * project_Q0(g, PENTAGON, 2),
                               atol=1e-11)


def test_project_calQh_uses_degree_k_minus_2():
    coeffs = project_calQh(lambda x, y: 4.0 + x, UNIT_SQUARE, 2)
    assert coeffs.shape == (1,)
    assert coeffs[0] == pytest.approx(4.5)
    coeffs = project_calQh(lambda x, y: 4.0 + x, UNIT_SQUARE, 3)
    np.testing.assert_allclose(_basis_for(UNIT_SQUARE, 1).values(coeffs, np.array([[0.3, 0.9]])), [4.3])


def test_project_Qb_on_simple_fields():
    assert project_Qb(lambda x, y: 7.0, (0, 0), (2, 1), 2) == pytest.approx([7.0, 0.0, 0.0])
    assert project_Qb(lambda x, y: x ** 2, (0, 0), (1, 0), 0) == pytest.approx([1.0 / 3.0])
    grad_xy = lambda x, y: (y, x)
    np.testing.assert_allclose(project_Qb(grad_xy, (1, 0), (1, 1), 0), [[0.5], [1.0]])


def test_project_Qb_ignores_edge_length():
    g = lambda x, y: x ** 3
    short = project_Qb(lambda x, y: g(x * 4.0, y), (0, 0), (0.25, 0), 2)
    long = project_Qb(g, (0, 0), (1, 0), 2)
    np.testing.assert_allclose(short, long, atol=1e-14)
