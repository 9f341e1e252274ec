import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from kinkopt.mesh import NodalField, lumped_mass, unit_square_mesh
from kinkopt.optimize import (NotStationaryError, OptimizerParams, adjoint_state, check_soc,
                              critical_cone_project, gradient, kkt_residual, min_curvature, objective,
                              projected_gradient_solve, sample_directions, variational_inequality)
from kinkopt.pde import ControlProblem, solve_state

TRACKING = dict(a0="0.1-y", a1="y-0.1", t_bar=0.1, L="0.5*(y-1.5*sin(pi*x1)*sin(pi*x2))^2",
                nu=0.01, alpha=0.0, beta=5.0)


@pytest.fixture(scope="module")
def solved():
    pr = ControlProblem.from_strings(**TRACKING)
    m = unit_square_mesh(16)
    u, stats = projected_gradient_solve(pr, m, NodalField.zeros(m))
    return pr, m, u, stats


def test_params_validation():
    with pytest.raises(ValueError):
        OptimizerParams(step0=-1.0)
    with pytest.raises(ValueError):
        OptimizerParams(backtrack=1.0)
    with pytest.raises(ValueError):
        OptimizerParams(tol_kkt=0.0)


def test_gradient_matches_finite_differences():
    pr = ControlProblem.from_strings(**TRACKING)
    m = unit_square_mesh(8)
    u = NodalField.interpolate(m, lambda a, b: 20 * a * b)
    v = NodalField.interpolate(m, lambda a, b: np.sin(3 * a + b))
    g = gradient(pr, m, u)
    eps = 1e-6
    fd = (objective(pr, m, u + eps * v) - objective(pr, m, u - eps * v)) / (2 * eps)
    assert fd == pytest.approx(np.sum(lumped_mass(m) * g.values * v.values), rel=1e-6)


def test_solver_reaches_stationarity(solved):
    pr, m, u, stats = solved
    assert stats.converged
    assert stats.kkt_residual <= 1e-8
    assert np.all(np.diff(stats.j_history) <= 1e-12 * abs(stats.j_history[0]))
    assert u.values.min() >= pr.alpha and u.values.max() <= pr.beta
    assert kkt_residual(pr, m, u) <= 1e-8
    # the upper bound is active somewhere, so the projection matters
    assert np.any(u.values == pr.beta)


@given(st.integers(0, 2**31 - 1))
def test_variational_inequality_at_solution(solved, seed):
    pr, m, u, _ = solved
    rng = np.random.default_rng(seed)
    w = NodalField(m, rng.uniform(pr.alpha, pr.beta, m.n_vertices))
    assert variational_inequality(pr, m, u, w) >= -1e-8


def test_zero_tracking_gives_clamped_zero():
    pr = ControlProblem.from_strings(a0="0.5-y", a1="y-0.5", t_bar=0.5, alpha=0.5, beta=1.0)
    m = unit_square_mesh(8)
    u, stats = projected_gradient_solve(pr, m, NodalField(m, np.full(m.n_vertices, 0.9)))
    assert stats.converged
    np.testing.assert_allclose(u.values, 0.5, atol=1e-8)


def test_max_iter_is_reported():
    pr = ControlProblem.from_strings(**TRACKING)
    m = unit_square_mesh(8)
    _, stats = projected_gradient_solve(pr, m, NodalField.zeros(m), OptimizerParams(max_iter=1))
    assert not stats.converged
    assert stats.iterations == 1


@given(st.lists(st.floats(-3, 3), min_size=25, max_size=25))
def test_critical_cone_projection(values):
    pr = ControlProblem.from_strings(**TRACKING)
    m = unit_square_mesh(4)
    ub = NodalField(m, np.array([0.0, 5.0, 2.0, 2.0, 0.0] * 5))
    phi = NodalField(m, np.array([0.0, 0.0, 0.0, 1.0, 1.0] * 5) - pr.nu * ub.values)
    v = NodalField(m, np.array(values))
    p, viol = critical_cone_project(pr, ub, phi, v)
    pv = p.values.reshape(5, 5)
    assert np.all(pv[:, 0] >= 0)       # lower bound active
    assert np.all(pv[:, 1] <= 0)       # upper bound active
    np.testing.assert_array_equal(pv[:, 2], np.array(values).reshape(5, 5)[:, 2])
    assert np.all(pv[:, 3:] == 0)      # strongly active
    p2, viol2 = critical_cone_project(pr, ub, phi, p)
    np.testing.assert_array_equal(p2.values, p.values)
    assert viol2 == 0.0
    assert viol >= 0.0


def test_sample_directions_count_and_reproducibility():
    m = unit_square_mesh(8)
    a = sample_directions(m, 12, seed=3)
    b = sample_directions(m, 12, seed=3)
    assert len(a) == 12
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x.values, y.values)


def test_check_soc_at_solution(solved):
    pr, m, u, _ = solved
    reps = check_soc(pr, m, u, 8, seed=1)
    assert len(reps) == 8
    assert all(r.verdict in ("ok", "skipped") for r in reps)
    assert min_curvature(reps) > 0
    suff = check_soc(pr, m, u, 4, mode="sufficient", seed=1)
    assert all(r.verdict in ("positive", "skipped") for r in suff)
    with pytest.raises(ValueError):
        check_soc(pr, m, u, 2, mode="strong")


def test_check_soc_rejects_non_stationary_point():
    pr = ControlProblem.from_strings(**TRACKING)
    m = unit_square_mesh(8)
    with pytest.raises(NotStationaryError):
        check_soc(pr, m, NodalField.zeros(m), 2)


def test_adjoint_state_of_zero_tracking_is_zero():
    pr = ControlProblem.from_strings(a0="0.5-y", a1="y-0.5", t_bar=0.5)
    m = unit_square_mesh(6)
    y, _ = solve_state(pr, m, 1.0)
    assert adjoint_state(pr, m, y).max_abs() == 0.0
