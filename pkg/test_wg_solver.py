import inspect

import numpy as np
import pytest
import scipy.sparse as sp

from config.settings import Settings, settings
from data.cases import get_case
from services import wg_solver
from services.error_norms import error_quadruple, triple_bar_norm
from services.errors import BoundaryDataError, SolverError
from services.mesh import PolyMesh, uniform_rectangles, uniform_triangles
from services.weak_deriv import WeakSpace, project_Qh
from services.wg_solver import (
    BiharmonicProblem,
    DofMap,
    SPDSolver,
    apply_boundary_conditions,
    assemble,
    assemble_matrix,
    boundary_values,
    condense,
    is_positive_definite,
    residual_target,
    rounding_residual,
    solve,
    solve_problem,
)


def _errors(mesh, case_name, **kwargs):
    case = get_case(case_name)
    space = WeakSpace(mesh, 2)
    result = solve_problem(mesh, 2, case.to_problem(), space=space, **kwargs)
    return error_quadruple(space, result.u_h, project_Qh(space, case.u, case.grad)), result


def _constrained(mesh, case_name="bubble", k=2):
    problem = get_case(case_name).to_problem()
    system, dofmap = assemble(mesh, k, problem)
    return apply_boundary_conditions(system, dofmap, problem)


def test_matrix_is_exactly_symmetric(tri4):
    constrained = _constrained(tri4)
    system, _ = assemble(tri4, 2, BiharmonicProblem.homogeneous())
    assert abs(system.matrix - system.matrix.T).max() == 0.0
    assert abs(constrained.matrix - constrained.matrix.T).max() == 0.0


@pytest.mark.parametrize("mesh_name", ["tri4", "rect4", "polygon_mesh"])
def test_free_matrix_is_positive_definite(request, mesh_name):
    mesh = request.getfixturevalue(mesh_name)
    for k in (2, 3):
        constrained = _constrained(mesh, k=k)
        assert is_positive_definite(constrained.matrix)
        assert is_positive_definite(condense(constrained).matrix)


def test_is_positive_definite_detects_indefinite_matrices():
    assert not is_positive_definite(sp.csr_matrix(np.diag([1.0, -1.0])))
    assert is_positive_definite(sp.csr_matrix((0, 0)))


def test_energy_equals_triple_bar_norm(tri4_space, rng):
    matrix = assemble_matrix(tri4_space)
    dofmap = DofMap(tri4_space)
    for _ in range(20):
        x = rng.standard_normal(tri4_space.n_dofs)
        x[dofmap.constrained] = 0.0
        energy = x @ (matrix @ x)
        assert triple_bar_norm(tri4_space, tri4_space.from_vector(x)) ** 2 == pytest.approx(energy, rel=1e-10)


def test_projection_of_a_linear_function_has_zero_energy(tri4_space):
    matrix = assemble_matrix(tri4_space)
    v = project_Qh(tri4_space, lambda x, y: 1 + x - 2 * y, lambda x, y: (1.0, -2.0))
    x = v.to_vector()
    assert x @ (matrix @ x) == pytest.approx(0.0, abs=1e-9)


def test_triple_bar_norm_is_a_norm(tri4_space, rng):
    dofmap = DofMap(tri4_space)

    def random_v():
        x = rng.standard_normal(tri4_space.n_dofs)
        x[dofmap.constrained] = 0.0
        return tri4_space.from_vector(x)

    assert triple_bar_norm(tri4_space, tri4_space.zeros()) == 0.0
    for _ in range(50):
        assert triple_bar_norm(tri4_space, random_v()) > 0.0
    for _ in range(10):
        u, v = random_v(), random_v()
        alpha = float(rng.uniform(-3, 3))
        assert triple_bar_norm(tri4_space, alpha * u) == pytest.approx(
            abs(alpha) * triple_bar_norm(tri4_space, u), rel=1e-12)
        assert triple_bar_norm(tri4_space, u + v) <= (
            triple_bar_norm(tri4_space, u) + triple_bar_norm(tri4_space, v) + 1e-10)


def test_operator_cache_does_not_change_the_matrix(tri4):
    cached = assemble_matrix(WeakSpace(tri4, 2, use_cache=True))
    fresh = assemble_matrix(WeakSpace(tri4, 2, use_cache=False))
    assert abs(cached - fresh).max() <= 1e-10 * abs(fresh).max()


def test_homogeneous_boundary_values_vanish(tri4_space):
    assert not np.any(boundary_values(tri4_space, BiharmonicProblem.homogeneous()))


@pytest.mark.parametrize("analytic", [True, False])
def test_boundary_gradient_block_is_edge_mean(analytic):
    mesh = uniform_rectangles(2)
    space = WeakSpace(mesh, 2)
    problem = get_case("quad").to_problem(analytic_tangent=analytic)
    values = boundary_values(space, problem)
    gid = next(g for g, e in enumerate(mesh.edges) if e.endpoint_ids == (2, 5))
    start, end = mesh.edge_points(gid)
    np.testing.assert_allclose([start[0], end[0]], [1.0, 1.0])
    offset = space.edge_offset(gid)
    ymid = 0.25
    # edge mean of grad xi = (2x + y + 1, 2y + x + 1) on x = 1
    np.testing.assert_allclose(values[offset + 1:offset + 3], [3.0 + ymid, 2.0 * ymid + 2.0], atol=1e-9)
    # edge mean of xi = 3 + 2y + y^2 on x = 1
    assert values[offset] == pytest.approx(3.5 + 1.0 / 12.0, abs=1e-12)


def test_boundary_data_failures_are_reported(tri4_space):
    broken = BiharmonicProblem(f=lambda x, y: 0.0, xi=lambda x, y: 1.0 / 0.0, nu=lambda x, y, n1, n2: 0.0)
    with pytest.raises(BoundaryDataError):
        boundary_values(tri4_space, broken)
    not_finite = BiharmonicProblem(f=lambda x, y: 0.0, xi=lambda x, y: 0.0,
                                   nu=lambda x, y, n1, n2: np.full_like(x, np.nan))
    with pytest.raises(BoundaryDataError):
        boundary_values(tri4_space, not_finite)


def test_tangential_source_flag():
    case = get_case("trig")
    assert case.to_problem().tangential_source == "analytic"
    assert case.to_problem(analytic_tangent=False).tangential_source == "finite-difference"


def test_free_skeleton_count_on_rectangles(rect4):
    constrained = _constrained(rect4)
    assert constrained.dofmap.n_free_skeleton == 3 * 40 - 3 * 16 == 72
    condensed = condense(constrained)
    assert condensed.matrix.shape == (72, 72)
    assert condensed.n_condensed == 16 * 6


def test_dofmap_partition(tri4_space):
    dofmap = DofMap(tri4_space)
    everything = np.sort(np.concatenate([dofmap.free, dofmap.constrained]))
    np.testing.assert_array_equal(everything, np.arange(tri4_space.n_dofs))
    assert len(dofmap.constrained) == 3 * len(tri4_space.mesh.boundary_edge_ids)


def test_condensed_and_full_solves_agree():
    mesh = uniform_triangles(8)
    constrained = _constrained(mesh)
    condensed = solve(constrained, use_condensation=True).u_h.to_vector()
    full = solve(constrained, use_condensation=False).u_h.to_vector()
    assert np.linalg.norm(condensed - full) <= 1e-9 * np.linalg.norm(full)


def test_single_element_mesh_has_no_skeleton_unknowns():
    errors, result = _errors(uniform_rectangles(1), "quad")
    assert result.n_skeleton == 0
    assert result.n_condensed == 6
    assert max(errors.l2, errors.h2, errors.ub_inf, errors.ug_inf) <= 1e-10


def test_homogeneous_data_give_zero():
    result = solve_problem(uniform_triangles(4), 2, BiharmonicProblem.homogeneous())
    assert np.max(np.abs(result.u_h.to_vector())) <= 1e-12


@pytest.mark.parametrize("builder", [uniform_triangles, uniform_rectangles])
def test_quadratic_solution_is_reproduced(builder):
    errors, result = _errors(builder(8), "quad")
    assert max(errors.l2, errors.h2, errors.ub_inf, errors.ug_inf) <= 1e-8
    assert result.residual <= 1e-10


def test_quadratic_solution_on_polygons(polygon_mesh):
    errors, _ = _errors(polygon_mesh, "quad")
    assert max(errors.l2, errors.h2, errors.ub_inf, errors.ug_inf) <= 1e-7


def test_quadratic_solution_with_finite_difference_tangent():
    mesh = uniform_triangles(4)
    case = get_case("quad")
    space = WeakSpace(mesh, 2)
    result = solve_problem(mesh, 2, case.to_problem(analytic_tangent=False), space=space)
    errors = error_quadruple(space, result.u_h, project_Qh(space, case.u, case.grad))
    assert errors.h2 <= 1e-8


def test_element_order_does_not_matter(tri4):
    shuffled = PolyMesh.from_polygons(tri4.vertices, [e.vertex_ids for e in reversed(tri4.elements)],
                                      mesh_size=tri4.mesh_size)
    first, _ = _errors(tri4, "bubble")
    second, _ = _errors(shuffled, "bubble")
    for name in ("l2", "h2", "ubinf", "uginf"):
        assert second.measure(name) == pytest.approx(first.measure(name), rel=1e-10)


def test_linear_solver_choices_agree():
    constrained = _constrained(uniform_triangles(2))
    direct = solve(constrained, method="direct")
    iterative = solve(constrained, method="cg")
    assert direct.method.startswith("direct")
    assert iterative.method == "cg"
    x, y = direct.u_h.to_vector(), iterative.u_h.to_vector()
    assert np.linalg.norm(x - y) <= 1e-6 * np.linalg.norm(x)


def test_unknown_solver_is_rejected():
    with pytest.raises(SolverError):
        SPDSolver(sp.identity(3, format="csr"), method="magic")


def test_direct_solver_rejects_indefinite_matrices():
    with pytest.raises(SolverError):
        SPDSolver(sp.csr_matrix(np.array([[1.0, 2.0], [2.0, 1.0]])), method="direct")


def test_direct_solver_factors_spd_systems():
    mesh = uniform_triangles(4)
    matrix = _constrained(mesh).matrix
    solver = SPDSolver(matrix, method="direct")
    rhs = np.ones(matrix.shape[0])
    x = solver.solve(rhs)
    assert np.linalg.norm(rhs - matrix @ x) <= 1e-10 * np.linalg.norm(rhs)
    assert solver.factor_nnz > 0


@pytest.mark.parametrize("error", [SystemError, MemoryError])
def test_factorization_failures_become_solver_errors(monkeypatch, error):
    def failing_splu(*args, **kwargs):
        raise error("not enough memory to perform factorization")

    monkeypatch.setattr(wg_solver, "splu", failing_splu)
    with pytest.raises(SolverError, match="out of memory"):
        SPDSolver(sp.identity(3, format="csc"), method="direct")
    with pytest.raises(SolverError):
        solve(_constrained(uniform_triangles(2)), method="direct")


def test_unconverged_solve_raises(monkeypatch):
    monkeypatch.setattr(Settings, "CG_MAXITER_FACTOR", 1e-6)
    with pytest.raises(SolverError, match="relative residual"):
        solve(_constrained(uniform_triangles(4)), method="cg")


@pytest.mark.parametrize("use_condensation", [True, False])
def test_residual_meets_its_target(use_condensation):
    result = solve(_constrained(uniform_triangles(8)), use_condensation=use_condensation)
    assert result.residual_target >= settings.SOLVER_RTOL
    assert result.residual <= result.residual_target


def test_rounding_residual():
    assert rounding_residual(sp.csr_matrix((0, 0)), np.zeros(0), np.zeros(0)) == 0.0
    b = np.array([1.0, -2.0, 3.0])
    eps = np.finfo(float).eps
    assert rounding_residual(sp.identity(3, format="csr"), b, b) == pytest.approx(40 * eps)
    assert residual_target(sp.identity(3, format="csr"), b, b) == settings.SOLVER_RTOL


def test_higher_degree_solve_runs(tri4):
    case = get_case("quad")
    space = WeakSpace(tri4, 3)
    result = solve_problem(tri4, 3, case.to_problem(), space=space)
    errors = error_quadruple(space, result.u_h, project_Qh(space, case.u, case.grad))
    assert max(errors.l2, errors.h2) <= 1e-8


def test_no_penalty_parameter_is_exposed():
    for function in (assemble, assemble_matrix, solve, solve_problem):
        names = inspect.signature(function).parameters
        assert not any("penalty" in name or "stab" in name or "alpha" in name for name in names)
