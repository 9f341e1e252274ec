import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from kinkopt.geometry import PolylineDistance, clip_convex, clip_halfplane, fan_quadrature, polygon_area

SQUARE = np.array([[0, 0], [1, 0], [1, 1], [0, 1]], dtype=float)


def test_clip_halfplane_keeps_the_right_side():
    left = clip_halfplane(SQUARE, 0.0, np.array([1.0, 0.0]), "le", 0.25)
    assert polygon_area(left) == pytest.approx(0.25)
    right = clip_halfplane(SQUARE, 0.0, np.array([1.0, 0.0]), "ge", 0.25)
    assert polygon_area(right) == pytest.approx(0.75)
    assert len(clip_halfplane(SQUARE, 0.0, np.array([1.0, 0.0]), "ge", 2.0)) == 0


@given(st.floats(-2, 2), st.floats(-2, 2), st.floats(-1, 2))
def test_halfplane_pieces_partition_area(gx, gy, level):
    # both closed sides contain the polygon when it lies on the line itself
    assume(abs(gx) + abs(gy) > 1e-3)
    g = np.array([gx, gy])
    a = polygon_area(clip_halfplane(SQUARE, 0.0, g, "ge", level))
    b = polygon_area(clip_halfplane(SQUARE, 0.0, g, "le", level))
    assert a + b == pytest.approx(1.0, abs=1e-12)


def test_clip_convex_window():
    win = np.array([[0.5, -1], [2, -1], [2, 0.5], [0.5, 0.5]], dtype=float)
    assert polygon_area(clip_convex(SQUARE, win)) == pytest.approx(0.25)


def test_fan_quadrature_exact_for_quadratics():
    pts, w = fan_quadrature(SQUARE)
    assert np.sum(w * (pts[:, 0] ** 2 + pts[:, 0] * pts[:, 1])) == pytest.approx(1 / 3 + 1 / 4)
    assert fan_quadrature(SQUARE[:2])[1].size == 0


def test_polyline_distance():
    a = np.array([[0.0, 0.0], [1.0, 0.0]])
    b = np.array([[1.0, 0.0], [1.0, 1.0]])
    d, seg, foot = PolylineDistance(a, b).query(np.array([[0.5, 0.2], [2.0, 0.5], [5.0, 5.0]]), cutoff=1.5)
    assert d[:2] == pytest.approx([0.2, 1.0])
    assert list(seg[:2]) == [0, 1]
    np.testing.assert_allclose(foot[1], [1.0, 0.5])
    assert d[2] == np.inf
