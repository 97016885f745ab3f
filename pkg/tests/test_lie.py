import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import expm

from predvo.lie import (
    LogDegeneracyError,
    TransformSE3,
    apply,
    compose,
    exp_se3,
    log_se3,
    rotation_angle,
    wedge3,
    wedge6,
)

finite = st.floats(min_value=-5.0, max_value=5.0, allow_nan=False)


def twists(max_angle=np.pi - 0.1):
    @st.composite
    def build(draw):
        rho = np.array([draw(finite) for _ in range(3)])
        axis = np.array([draw(st.floats(-1, 1)) for _ in range(3)])
        n = np.linalg.norm(axis)
        angle = draw(st.floats(0.0, max_angle))
        phi = axis / n * angle if n > 1e-3 else np.zeros(3)
        return np.concatenate([rho, phi])

    return build()


def series_expm(m, terms=60):
    # truncated power series, independent of scipy's Pade approximant
    out = np.eye(m.shape[0])
    term = np.eye(m.shape[0])
    for k in range(1, terms):
        term = term @ m / k
        out = out + term
    return out


def test_wedge3_examples():
    np.testing.assert_array_equal(wedge3([1, 2, 3]), [[0, -3, 2], [3, 0, -1], [-2, 1, 0]])
    np.testing.assert_array_equal(wedge3([0, 0, 0]), np.zeros((3, 3)))
    np.testing.assert_array_equal(wedge3([1, 0, 0]), [[0, 0, 0], [0, 0, -1], [0, 1, 0]])


@given(st.lists(finite, min_size=3, max_size=3), st.lists(finite, min_size=3, max_size=3))
def test_wedge3_is_cross_product(phi, v):
    m = wedge3(phi)
    np.testing.assert_allclose(m, -m.T)
    np.testing.assert_allclose(m @ np.array(v), np.cross(phi, v), atol=1e-12)


def test_wedge6_examples():
    np.testing.assert_array_equal(
        wedge6([1, 2, 3, 0, 0, 0]), [[0, 0, 0, 1], [0, 0, 0, 2], [0, 0, 0, 3], [0, 0, 0, 0]]
    )
    m = wedge6([0, 0, 0, 0, 0, 1])
    np.testing.assert_array_equal(m[:3, :3], wedge3([0, 0, 1]))
    np.testing.assert_array_equal(m[:, 3], 0)
    np.testing.assert_array_equal(wedge6(np.zeros(6)), np.zeros((4, 4)))


def test_exp_examples():
    assert exp_se3(np.zeros(6)).allclose(TransformSE3.identity(), atol=0)
    T = exp_se3([1, 0, 0, 0, 0, 0])
    np.testing.assert_array_equal(T.rotation, np.eye(3))
    np.testing.assert_array_equal(T.translation, [1, 0, 0])
    T = exp_se3([0, 0, 0, 0, 0, np.pi / 2])
    oracle = series_expm(wedge6([0, 0, 0, 0, 0, np.pi / 2]))
    np.testing.assert_allclose(T.matrix(), oracle, atol=1e-12)
    np.testing.assert_allclose(T.rotation @ [1, 0, 0], [0, 1, 0], atol=1e-15)
    np.testing.assert_allclose(T.translation, 0, atol=1e-15)


@settings(max_examples=200)
@given(twists())
def test_exp_matches_matrix_exponential(xi):
    np.testing.assert_allclose(exp_se3(xi).matrix(), expm(wedge6(xi)), atol=1e-9)


@settings(max_examples=300)
@given(twists())
def test_log_exp_round_trip(xi):
    np.testing.assert_allclose(log_se3(exp_se3(xi)), xi, atol=1e-9)


@given(twists())
def test_exp_inverse(xi):
    assert (exp_se3(xi) @ exp_se3(-xi)).allclose(TransformSE3.identity(), atol=1e-9)


def test_log_examples():
    np.testing.assert_array_equal(log_se3(TransformSE3.identity()), np.zeros(6))
    np.testing.assert_allclose(log_se3(TransformSE3(np.eye(3), [1, 0, 0])), [1, 0, 0, 0, 0, 0], atol=0)


def test_log_small_angle_branch():
    xi = np.array([0.1, -0.2, 0.3, 1e-10, -2e-10, 5e-11])
    np.testing.assert_allclose(log_se3(exp_se3(xi)), xi, atol=1e-15)


def test_log_at_pi_is_a_distinct_error():
    T = exp_se3([0, 0, 0, 0, 0, np.pi])
    with pytest.raises(LogDegeneracyError):
        log_se3(T)


def test_compose_and_apply():
    rng = np.random.default_rng(3)
    T = exp_se3(rng.normal(size=6))
    assert compose(T, TransformSE3.identity()).allclose(T, atol=0)
    p = np.array([1.0, -2.0, 3.0, 1.0])
    np.testing.assert_array_equal(apply(TransformSE3.identity(), p), p)
    np.testing.assert_allclose(apply(TransformSE3(np.eye(3), [1, 2, 3]), p), [2, 0, 6, 1])
    np.testing.assert_allclose((T @ T.inverse()).matrix(), np.eye(4), atol=1e-12)


def test_orthonormality_survives_long_chains():
    rng = np.random.default_rng(0)
    T = TransformSE3.identity()
    for _ in range(10_000):
        T = T @ exp_se3(rng.normal(scale=0.3, size=6))
    r = T.rotation
    assert np.abs(r.T @ r - np.eye(3)).max() <= 1e-9
    assert abs(np.linalg.det(r) - 1.0) <= 1e-9


def test_rejects_non_rotation():
    with pytest.raises(ValueError):
        TransformSE3(np.diag([1.0, 1.0, -1.0]), np.zeros(3))


def test_serialization_is_row_major():
    T = TransformSE3(np.eye(3), [4, 5, 6])
    values = T.to_list()
    assert values[3] == 4 and values[7] == 5 and values[11] == 6 and values[15] == 1
    assert TransformSE3.from_list(values).allclose(T, atol=0)


def test_rotation_angle_precision_near_zero():
    T = exp_se3([0, 0, 0, 0, 0, 1e-12])
    assert rotation_angle(T.rotation) == pytest.approx(1e-12, rel=1e-6)
    assert rotation_angle(exp_se3([0, 0, 0, 0.3, 0, 0]).rotation) == pytest.approx(0.3)
