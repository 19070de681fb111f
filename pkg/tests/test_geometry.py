import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from aprpose.errors import DomainError
from aprpose.geometry import (
    Pose, minmax_apply, minmax_fit, minmax_invert, position_error, quat_angular_distance,
    quat_canonicalize, quat_normalize,
)

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)
quat_strategy = st.lists(st.floats(-1, 1, allow_nan=False), min_size=4, max_size=4).filter(
    lambda q: np.linalg.norm(q) > 1e-3).map(quat_normalize)


@pytest.mark.parametrize("q, expected", [
    ((2, 0, 0, 0), (1, 0, 0, 0)),
    ((1, 1, 1, 1), (0.5, 0.5, 0.5, 0.5)),
])
def test_quat_normalize(q, expected):
    np.testing.assert_allclose(quat_normalize(q), expected, atol=1e-12)


def test_quat_normalize_zero():
    with pytest.raises(DomainError):
        quat_normalize((0, 0, 0, 0))


@pytest.mark.parametrize("q, expected", [
    ((-1, 0, 0, 0), (1, 0, 0, 0)),
    ((0.5, 0.5, 0.5, 0.5), (0.5, 0.5, 0.5, 0.5)),
    ((0, -1, 0, 0), (0, 1, 0, 0)),
])
def test_quat_canonicalize(q, expected):
    np.testing.assert_array_equal(quat_canonicalize(q), expected)


def test_angular_distance_examples():
    q = quat_normalize((0.3, -0.2, 0.5, 0.1))
    assert quat_angular_distance(q, q) == pytest.approx(0.0, abs=1e-6)
    assert quat_angular_distance(q, -q) == pytest.approx(0.0, abs=1e-6)
    c = math.cos(math.radians(45))
    s = math.sin(math.radians(45))
    assert quat_angular_distance((1, 0, 0, 0), (c, 0, 0, s)) == pytest.approx(90.0, abs=1e-9)


def test_angular_distance_rejects_non_unit():
    with pytest.raises(DomainError):
        quat_angular_distance((1, 0, 0, 0), (2, 0, 0, 0))


@given(quat_strategy, quat_strategy)
def test_angular_distance_symmetric_and_bounded(a, b):
    d = quat_angular_distance(a, b)
    assert d == pytest.approx(quat_angular_distance(b, a))
    assert 0.0 <= d <= 180.0


@given(quat_strategy, quat_strategy)
def test_canonicalize_idempotent_and_preserves_distance(a, b):
    ca = quat_canonicalize(a)
    np.testing.assert_array_equal(quat_canonicalize(ca), ca)
    assert ca[0] >= 0
    assert quat_angular_distance(ca, b) == pytest.approx(quat_angular_distance(a, b), abs=1e-6)


@pytest.mark.parametrize("a, b, expected", [
    ((0, 0, 0), (0, 0, 0), 0.0),
    ((3, 4, 0), (0, 0, 0), 5.0),
    ((1, 1, 1), (2, 2, 2), math.sqrt(3)),
])
def test_position_error(a, b, expected):
    assert position_error(a, b) == pytest.approx(expected)
    assert position_error(b, a) == pytest.approx(expected)


def test_pose_constructor_canonicalizes():
    p = Pose.from_components((1, 2, 3), (-2, 0, 0, 0))
    np.testing.assert_array_equal(p.orientation, (1, 0, 0, 0))
    assert abs(np.linalg.norm(p.orientation) - 1) < 1e-6


def test_minmax_fit_examples():
    s = minmax_fit([(0, 0, 0), (10, 10, 10)])
    np.testing.assert_array_equal(s.minimum, 0)
    np.testing.assert_array_equal(s.maximum, 10)
    assert not s.degenerate.any()
    assert minmax_fit([(5, 5, 5)]).degenerate.all()
    s = minmax_fit([(-1, 0, 2), (1, 0, 4)])
    np.testing.assert_array_equal(s.minimum, (-1, 0, 2))
    np.testing.assert_array_equal(s.maximum, (1, 0, 4))
    np.testing.assert_array_equal(s.degenerate, (False, True, False))


def test_minmax_fit_empty():
    with pytest.raises(DomainError):
        minmax_fit([])


def test_minmax_apply_invert_examples():
    s = minmax_fit([(0, 0, 0), (10, 10, 10)])
    np.testing.assert_allclose(minmax_apply(s, (5, 5, 5)), 0.5)
    np.testing.assert_array_equal(minmax_apply(s, (0, 0, 0)), 0)
    np.testing.assert_allclose(minmax_invert(s, minmax_apply(s, (3, 7, 9))), (3, 7, 9), atol=1e-9)
    np.testing.assert_array_equal(minmax_invert(s, (0, 0, 0)), s.minimum)
    np.testing.assert_array_equal(minmax_invert(s, (1, 1, 1)), s.maximum)
    d = minmax_fit([(-1, 0, 2), (1, 0, 4)])
    assert minmax_apply(d, (0.5, 7.0, 3.0))[1] == 0.0
    assert minmax_invert(d, (0.5, 0.9, 0.5))[1] == 0.0


@settings(max_examples=200)
@given(st.lists(st.tuples(finite, finite, finite), min_size=2, max_size=10), st.tuples(finite, finite, finite))
def test_minmax_round_trip(points, p):
    s = minmax_fit(points)
    back = minmax_invert(s, minmax_apply(s, p))
    ok = ~s.degenerate
    np.testing.assert_allclose(back[ok], np.asarray(p)[ok], atol=1e-9, rtol=1e-12)
