import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stitchsim import geometry

SQUARE = np.array([[0, 0], [10, 0], [10, 10], [0, 10], [0, 0]], dtype=float)


def test_signed_distance_sign_convention():
    sd, nearest = geometry.signed_distance([[5, 5], [5, -2], [10, 4]], SQUARE)
    np.testing.assert_allclose(sd, [5, -2, 0], atol=1e-12)
    np.testing.assert_allclose(nearest[1], [5, 0])


def test_closest_point_segment_index():
    dist, nearest, seg = geometry.closest_points_on_polyline([[12, 5]], SQUARE)
    assert dist[0] == pytest.approx(2)
    assert seg[0] == 1
    np.testing.assert_allclose(nearest[0], [10, 5])


def test_area_and_centroid():
    assert geometry.signed_area(SQUARE) == pytest.approx(100)
    assert geometry.signed_area(SQUARE[::-1]) == pytest.approx(-100)
    np.testing.assert_allclose(geometry.polygon_centroid(SQUARE), [5, 5])


def test_point_at_arclength_walks_corners():
    poly = [[0, 0], [5, 0], [5, 5]]
    np.testing.assert_allclose(geometry.point_at_arclength(poly, 6.0), [5, 1])
    np.testing.assert_allclose(geometry.point_at_arclength(poly, [0, 10]), [[0, 0], [5, 5]])


def test_simple_polygon_detection():
    bowtie = [[0, 0], [10, 10], [10, 0], [0, 10], [0, 0]]
    assert geometry.is_simple_polygon(SQUARE)
    assert not geometry.is_simple_polygon(bowtie)


@settings(max_examples=50, deadline=None)
@given(st.floats(-100, 100), st.floats(-100, 100), st.floats(-math.pi, math.pi))
def test_transform_round_trip(x, y, th):
    pts = np.random.default_rng(0).normal(size=(20, 2)) * 50
    back = geometry.inverse_transform_points(geometry.transform_points(pts, (x, y, th)),
                                             (x, y, th))
    np.testing.assert_allclose(back, pts, atol=1e-9)
