"""Rectified stereo camera: projection, triangulation, reprojection error.

The stereo frame sits midway between the two lenses, so a point on the
optical axis projects symmetrically about the principal point in the left
and right images. Observations are 4-vectors ``(u_l, v_l, u_r, v_r)``.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .lie import TransformSE3

EPS_DEPTH = 1e-6
EPS_DISPARITY = 1e-6


class GeometryError(ValueError):
    pass


class NonPositiveDepth(GeometryError):
    pass


class DegenerateDisparity(GeometryError):
    pass


@dataclass(frozen=True)
class StereoIntrinsics:
    fu: float
    fv: float
    cu: float
    cv: float
    b: float

    def __post_init__(self):
        if self.fu <= 0 or self.fv <= 0 or self.b <= 0:
            raise ValueError("focal lengths and baseline must be positive")

    @property
    def matrix(self) -> np.ndarray:
        """4x4 projection matrix applied to ``p / p3``."""
        half = 0.5 * self.fu * self.b
        # row 4 uses fv; the printed "f_b" is read as a typo
        return np.array(
            [
                [self.fu, 0.0, self.cu, half],
                [0.0, self.fv, self.cv, 0.0],
                [self.fu, 0.0, self.cu, -half],
                [0.0, self.fv, self.cv, 0.0],
            ]
        )

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "StereoIntrinsics":
        return cls(fu=float(d["fu"]), fv=float(d["fv"]), cu=float(d["cu"]), cv=float(d["cv"]), b=float(d["b"]))

    @classmethod
    def from_json(cls, path) -> "StereoIntrinsics":
        return cls.from_dict(json.loads(Path(path).read_text()))


def project_many(points: np.ndarray, K: StereoIntrinsics) -> np.ndarray:
    """Project an (N, 4) stack of homogeneous points. No depth check."""
    points = np.atleast_2d(points)
    return (points @ K.matrix.T) / points[:, 2:3]


def project(p, K: StereoIntrinsics) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if not p[2] > EPS_DEPTH:
        raise NonPositiveDepth(f"depth {p[2]!r} <= {EPS_DEPTH}")
    return K.matrix @ p / p[2]


def triangulate_many(obs: np.ndarray, K: StereoIntrinsics) -> np.ndarray:
    """Invert the projection for an (N, 4) stack; returns (N, 4) with p4 = 1.

    Horizontal and vertical coordinates average the left and right images, so
    noisy observations with ``v_l != v_r`` still give a single point.
    No disparity check: callers mask with :func:`disparity_ok`.
    """
    obs = np.atleast_2d(obs)
    disparity = obs[:, 0] - obs[:, 2]
    z = K.fu * K.b / disparity
    x = (0.5 * (obs[:, 0] + obs[:, 2]) - K.cu) * z / K.fu
    y = (0.5 * (obs[:, 1] + obs[:, 3]) - K.cv) * z / K.fv
    return np.column_stack([x, y, z, np.ones_like(z)])


def disparity_ok(obs: np.ndarray) -> np.ndarray:
    obs = np.atleast_2d(obs)
    return (obs[:, 0] - obs[:, 2]) > EPS_DISPARITY


def triangulate(y, K: StereoIntrinsics) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    if not y[0] - y[2] > EPS_DISPARITY:
        raise DegenerateDisparity(f"disparity {y[0] - y[2]!r} <= {EPS_DISPARITY}")
    return triangulate_many(y[None, :], K)[0]


def _projection_jacobian(q: np.ndarray, K: StereoIntrinsics) -> np.ndarray:
    # d(M q / q3)/dq for an (N, 4) stack -> (N, 4, 4)
    m = K.matrix
    inv_z = 1.0 / q[:, 2]
    g = m[None, :, :] * inv_z[:, None, None]
    g[:, :, 2] -= (q @ m.T) * (inv_z**2)[:, None]
    return g


def reprojection_terms(
    y: np.ndarray,
    y_prime: np.ndarray,
    T: TransformSE3,
    K: StereoIntrinsics,
    points: np.ndarray | None = None,
    with_jacobian: bool = True,
):
    """Errors, Jacobians and depths for stacks of matches.

    Returns ``(e, J, depth)`` with ``e = y' - f(T f^-1(y))`` of shape (N, 4),
    ``J`` of shape (N, 4, 6) such that ``e(exp(dxi^) T) ~= e - J dxi``, and the
    depth of each transformed point. ``points`` may carry precomputed
    triangulations of ``y``.
    """
    if points is None:
        points = triangulate_many(y, K)
    q = points @ T.matrix().T
    depth = q[:, 2]
    e = np.atleast_2d(y_prime) - project_many(q, K)
    if not with_jacobian:
        return e, None, depth
    g = _projection_jacobian(q, K)
    # dq/dxi for a left perturbation: [q4 I, -q_xyz^]
    n = q.shape[0]
    dq = np.zeros((n, 3, 6))
    dq[:, 0, 0] = dq[:, 1, 1] = dq[:, 2, 2] = q[:, 3]
    x, yy, z = q[:, 0], q[:, 1], q[:, 2]
    dq[:, 0, 4], dq[:, 0, 5] = z, -yy
    dq[:, 1, 3], dq[:, 1, 5] = -z, x
    dq[:, 2, 3], dq[:, 2, 4] = yy, -x
    J = g[:, :, :3] @ dq
    return e, J, depth


def _check_single(y, T, K):
    p = triangulate(y, K)
    depth = (T.matrix() @ p)[2]
    if not depth > EPS_DEPTH:
        raise NonPositiveDepth(f"transformed depth {depth!r} <= {EPS_DEPTH}")
    return p


def reprojection_error(y, y_prime, T: TransformSE3, K: StereoIntrinsics) -> np.ndarray:
    p = _check_single(y, T, K)
    e, _, _ = reprojection_terms(np.atleast_2d(y), np.atleast_2d(y_prime), T, K, points=p[None, :], with_jacobian=False)
    return e[0]


def reprojection_jacobian(y, y_prime, T: TransformSE3, K: StereoIntrinsics) -> np.ndarray:
    p = _check_single(y, T, K)
    _, J, _ = reprojection_terms(np.atleast_2d(y), np.atleast_2d(y_prime), T, K, points=p[None, :])
    return J[0]
