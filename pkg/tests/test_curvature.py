import numpy as np
import pytest

from oracles import radial_field

from kinkopt import expr as ex
from kinkopt.curvature import (LimitExperiment, an_experiment, compute_Q1, compute_Q2_explicit,
                               compute_Q_total, compute_Qs, curvature_at, q2_liminf_estimate)
from kinkopt.mesh import NodalField, PolygonDomain, build_mesh, lumped_mass, unit_square_mesh
from kinkopt.optimize import adjoint_state, gradient, objective
from kinkopt.pde import ControlProblem, solve_state

# 1/2 oint_{radial = 0.5} radial^2 grad radial . grad(x1^2 + x2^2) / |grad radial|
RADIAL_TARGET = -0.8472130847939792

TRACKING = dict(a0="0.1-y", a1="y-0.1", t_bar=0.1, L="0.5*(y-1.5*sin(pi*x1)*sin(pi*x2))^2", nu=0.01)


def test_q2_explicit_matches_contour_oracle():
    pr = ControlProblem.from_strings(a0="0.5-y", a1="y-0.5", t_bar=0.5)
    m = build_mesh(PolygonDomain.rectangle(-1, -1, 1, 1), 0.025)
    y = NodalField.interpolate(m, radial_field)
    q2, detail = compute_Q2_explicit(pr, y, ex.field("x1^2+x2^2"), y)
    assert pr.a.jump == -2.0
    assert q2 == pytest.approx(-2.0 * RADIAL_TARGET, rel=2e-3)
    assert len(detail["components"]) == 1
    assert detail["components"][0]["contribution"] == pytest.approx(q2)


def test_q2_vanishes_without_kink_or_level_set():
    m = unit_square_mesh(8)
    y = NodalField.interpolate(m, lambda a, b: a + 0 * b)
    smooth = ControlProblem.from_strings(a0="y^2", a1="y^2", t_bar=0.5)
    assert compute_Q2_explicit(smooth, y, "x1", y)[0] == 0.0
    far = ControlProblem.from_strings(a0="5-y", a1="y-5", t_bar=5.0)
    val, detail = compute_Q2_explicit(far, y, "x1", y)
    assert val == 0.0
    assert detail["note"] == "level set empty"


@pytest.fixture(scope="module")
def tracking_point():
    pr = ControlProblem.from_strings(**TRACKING)
    m = unit_square_mesh(16)
    u = NodalField.interpolate(m, lambda a, b: 30 * np.sin(np.pi * a) * np.sin(np.pi * b))
    y, _ = solve_state(pr, m, u, tol=1e-13)
    assert y.values.max() > 0.1
    return pr, m, u, y, adjoint_state(pr, m, y)


def test_curvature_parts_are_symmetric(tracking_point):
    pr, m, _, y, phi = tracking_point
    v1 = NodalField.interpolate(m, lambda a, b: a * (1 - a) * b)
    v2 = NodalField.interpolate(m, lambda a, b: np.cos(2 * a) * b * (1 - b))
    for f in (compute_Qs, compute_Q1):
        assert f(pr, y, phi, v1, v2) == pytest.approx(f(pr, y, phi, v2, v1), rel=1e-10)


def test_total_curvature_matches_second_difference(tracking_point):
    # away from stationarity as well: j(u+sv) = j(u) + s j'(u)v + s^2 Q + o(s^2)
    pr, m, u, y, phi = tracking_point
    v = NodalField.interpolate(m, lambda a, b: np.exp(-10 * ((a - 0.4) ** 2 + (b - 0.5) ** 2)))
    q = curvature_at(pr, y, phi, v)
    assert q.q_2 != 0.0
    g = gradient(pr, m, u)
    j0 = objective(pr, m, u)
    s = 1e-3
    sd = (objective(pr, m, u + s * v) - j0 - s * np.sum(lumped_mass(m) * g.values * v.values)) / s**2
    assert sd == pytest.approx(q.total, rel=1e-3)
    assert compute_Q_total(pr, m, u, v).total == pytest.approx(q.total, rel=1e-8)


def test_q2_estimate_tracks_explicit_value(tracking_point):
    pr, m, u, y, phi = tracking_point
    v = NodalField.interpolate(m, lambda a, b: np.exp(-10 * ((a - 0.4) ** 2 + (b - 0.5) ** 2)))
    q = curvature_at(pr, y, phi, v)
    est = q2_liminf_estimate(pr, m, u, v, [0.1, 0.01, 0.001])
    assert est.final == pytest.approx(q.q_2, rel=1e-2)
    smooth = ControlProblem.from_strings(a0="y^2", a1="y^2", t_bar=0.5)
    assert q2_liminf_estimate(smooth, m, u, v, [0.1, 0.01]).final == 0.0
    with pytest.raises(ValueError):
        q2_liminf_estimate(pr, m, u, v, [0.01, 0.1])


def test_limit_experiment_rows_and_validation():
    e = LimitExperiment([0.1, 0.01], [1.5, 1.1], 1.0)
    assert e.errors == pytest.approx([0.5, 0.1])
    assert e.rows()[1] == pytest.approx((0.01, 1.1, 1.0, 0.1))
    m = unit_square_mesh(4)
    y = NodalField.interpolate(m, lambda a, b: a + 0 * b)
    with pytest.raises(ValueError):
        an_experiment(y, y, "x1", 0.5, 0, 0.1, [0.01, 0.1])
