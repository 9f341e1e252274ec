import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import radial_field

from kinkopt.levelset import (NeighborhoodOverlapError, classify_neighborhood, component_tracking,
                              curve_integral, extract_level_set, hausdorff, jump_functional,
                              project_to_curve)
from kinkopt.mesh import NodalField, PolygonDomain, build_mesh, refine, unit_square_mesh

RADIAL_LENGTH = 4.641605927884484  # oracle length of {radial = 0.5}


def _box(h):
    return build_mesh(PolygonDomain.rectangle(-1, -1, 1, 1), h)


def test_straight_line_is_one_open_component():
    m = unit_square_mesh(8)
    y = NodalField.interpolate(m, lambda a, b: a + 0.0 * b)
    dec = extract_level_set(y, 0.4)
    assert len(dec) == 1
    c = dec[0]
    assert not c.closed
    assert c.length == pytest.approx(1.0)
    np.testing.assert_allclose(c.points[:, 0], 0.4)
    # {y > t} on the left: walking direction is -x2
    assert c.points[-1, 1] < c.points[0, 1]
    assert c.min_grad == pytest.approx(1.0)


def test_two_components_and_empty_level():
    m = unit_square_mesh(10)
    y = NodalField.interpolate(m, lambda a, b: (a - 0.5) ** 2 + 0.0 * b)
    dec = extract_level_set(y, 0.04)
    assert len(dec) == 2
    assert sorted(round(float(c.points[:, 0].mean()), 6) for c in dec) == [0.3, 0.7]
    assert len(extract_level_set(y, 5.0)) == 0


def test_radial_level_set_is_closed_counterclockwise_and_converges():
    lengths = []
    m = _box(0.1)
    for _ in range(3):
        dec = extract_level_set(NodalField.interpolate(m, radial_field), 0.5)
        assert len(dec) == 1
        assert dec[0].closed
        assert dec[0].signed_area() > 0
        lengths.append(dec[0].length)
        m = refine(m)
    errs = [abs(L - RADIAL_LENGTH) for L in lengths]
    assert errs[-1] < 2e-3
    assert math.log2(errs[0] / errs[1]) > 1.7


@given(st.floats(-2, 2), st.floats(-2, 2), st.floats(-1, 1), st.floats(-0.4, 0.4))
def test_extracted_points_lie_on_the_level(a, b, c, t):
    m = unit_square_mesh(6)
    y = NodalField.interpolate(m, lambda x1, x2: a * x1 * x2 + b * x1**2 + c * x2)
    for comp in extract_level_set(y, t):
        for pts in (comp.starts, comp.ends):
            np.testing.assert_allclose(y.at(pts, comp.triangles), t, atol=1e-9)


def test_curve_integral_of_constant_is_length():
    m = _box(0.1)
    c = extract_level_set(NodalField.interpolate(m, radial_field), 0.5)[0]
    assert curve_integral(c, lambda x1, x2: 1.0 + 0 * x1) == pytest.approx(c.length)
    assert curve_integral(c, lambda x1, x2, tri: 2.0 + 0 * x1, per_triangle=True) == pytest.approx(2 * c.length)


def test_neighborhood_bands_and_overlap():
    m = unit_square_mesh(20)
    y = NodalField.interpolate(m, lambda a, b: (a - 0.5) ** 2 + 0.0 * b)
    dec = extract_level_set(y, 0.04)
    nb = classify_neighborhood(y, dec, 0, 0.1)
    assert nb.inside_band.any() and nb.outside_band.any()
    assert not np.any(nb.inside_band & nb.outside_band)
    assert np.all(nb.distance[nb.band] < 0.1)
    with pytest.raises(NeighborhoodOverlapError):
        classify_neighborhood(y, dec, 0, 0.25)
    with pytest.raises(ValueError):
        classify_neighborhood(y, dec, 0, 0.0)


def test_closed_curve_inside_band_is_enclosed_region():
    m = _box(0.1)
    y = NodalField.interpolate(m, radial_field)
    dec = extract_level_set(y, 0.5)
    nb = classify_neighborhood(y, dec, 0, 0.1)
    r_in = np.linalg.norm(m.centroids[nb.inside_band], axis=1)
    r_out = np.linalg.norm(m.centroids[nb.outside_band], axis=1)
    assert r_in.mean() < r_out.mean()


def test_hausdorff_of_parallel_lines():
    m = unit_square_mesh(10)
    y = NodalField.interpolate(m, lambda a, b: a + 0.0 * b)
    c1 = extract_level_set(y, 0.3)[0]
    c2 = extract_level_set(y, 0.5)[0]
    assert hausdorff(c1, c2) == pytest.approx(0.2)
    assert hausdorff(c1, []) == math.inf


def test_component_tracking_under_shift():
    m = _box(0.05)
    y = NodalField.interpolate(m, radial_field)
    shift = NodalField.interpolate(m, lambda a, b: a + 0.5 * b)
    dists = []
    for d in (0.1, 0.01, 0.001):
        rep = component_tracking(y, y + d * shift, 0.45, 0.2)
        assert rep.count_in_band == 1
        dists.append(rep.hausdorff)
    assert dists[0] > dists[1] > dists[2]


def test_jump_functional_linear_field_exact():
    m = unit_square_mesh(10)
    y = NodalField.interpolate(m, lambda a, b: a + 0.0 * b)
    res = jump_functional(y, 0.5, 1.5, [0.5, 0.2, 0.05])
    np.testing.assert_allclose(res.estimates, 3.0, atol=1e-12)
    assert res.extrapolated == pytest.approx(3.0)
    with pytest.raises(ValueError):
        jump_functional(y, 0.5, 1.0, [0.1, 0.2])


def test_projection_to_circle_like_curve_is_normal():
    m = _box(0.025)
    y = NodalField.interpolate(m, radial_field)
    c = extract_level_set(y, 0.5)[0]
    p = project_to_curve(np.array([0.05, 0.2]), c, y)
    assert p.collinearity_residual < 0.05
    assert abs(radial_field(*p.foot) - 0.5) < 1e-3
