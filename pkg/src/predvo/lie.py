"""SE(3) transforms and exponential coordinates.

Twists are ordered ``xi = (rho, phi)``: translation part first, rotation part
second. Perturbations are applied on the left, ``T <- exp(dxi^) T``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

_SMALL_ANGLE = 1e-8
_ORTHO_TOL = 1e-9
_PI_MARGIN = 1e-6
# below this, cancellation-prone coefficients switch to their power series
_SERIES_ANGLE = 1e-3


class LogDegeneracyError(ValueError):
    """Raised when the logarithm is requested for a rotation angle at pi."""


def wedge3(phi) -> np.ndarray:
    p = np.asarray(phi, dtype=float)
    return np.array(
        [
            [0.0, -p[2], p[1]],
            [p[2], 0.0, -p[0]],
            [-p[1], p[0], 0.0],
        ]
    )


def vee3(m: np.ndarray) -> np.ndarray:
    return np.array([m[2, 1], m[0, 2], m[1, 0]])


def wedge6(xi) -> np.ndarray:
    xi = np.asarray(xi, dtype=float)
    out = np.zeros((4, 4))
    out[:3, :3] = wedge3(xi[3:])
    out[:3, 3] = xi[:3]
    return out


def _polar(rotation: np.ndarray) -> np.ndarray:
    u, _, vt = np.linalg.svd(rotation)
    r = u @ vt
    if np.linalg.det(r) < 0:
        u[:, -1] *= -1
        r = u @ vt
    return r


@dataclass(frozen=True, eq=False)
class TransformSE3:
    """Rigid transform acting on points as ``p -> R p + t``."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = np.array(self.rotation, dtype=float).reshape(3, 3)
        t = np.array(self.translation, dtype=float).reshape(3)
        defect = np.abs(r.T @ r - np.eye(3)).max()
        if defect > 1e-4 or np.linalg.det(r) <= 0:
            raise ValueError("rotation is not close to SO(3)")
        if defect > _ORTHO_TOL:
            r = _polar(r)
        r.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "TransformSE3":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, m) -> "TransformSE3":
        m = np.asarray(m, dtype=float).reshape(4, 4)
        return cls(m[:3, :3], m[:3, 3])

    @classmethod
    def from_list(cls, values: Sequence[float]) -> "TransformSE3":
        """Build from 16 numbers in row-major order."""
        if len(values) != 16:
            raise ValueError(f"expected 16 values, got {len(values)}")
        return cls.from_matrix(np.asarray(values, dtype=float))

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def to_list(self) -> list[float]:
        return [float(v) for v in self.matrix().ravel()]

    def inverse(self) -> "TransformSE3":
        rt = self.rotation.T
        return TransformSE3(rt, -rt @ self.translation)

    def __matmul__(self, other: "TransformSE3") -> "TransformSE3":
        return compose(self, other)

    def allclose(self, other: "TransformSE3", atol: float = 1e-9) -> bool:
        return bool(np.allclose(self.matrix(), other.matrix(), rtol=0.0, atol=atol))

    def __repr__(self) -> str:
        return f"TransformSE3(rotation={self.rotation.tolist()}, translation={self.translation.tolist()})"


def compose(a: TransformSE3, b: TransformSE3) -> TransformSE3:
    """``a @ b``: apply ``b`` first, then ``a``."""
    return TransformSE3(a.rotation @ b.rotation, a.rotation @ b.translation + a.translation)


def apply(T: TransformSE3, p) -> np.ndarray:
    """Act on one homogeneous 4-vector or an (N, 4) stack of them."""
    p = np.asarray(p, dtype=float)
    return p @ T.matrix().T


def _so3_coeffs(theta: float) -> tuple[float, float, float]:
    # a = sin/theta, b = (1-cos)/theta^2, c = (theta-sin)/theta^3
    t2 = theta * theta
    if theta < _SMALL_ANGLE:
        return 1.0 - t2 / 6.0, 0.5 - t2 / 24.0, 1.0 / 6.0 - t2 / 120.0
    a = np.sin(theta) / theta
    b = 2.0 * np.sin(0.5 * theta) ** 2 / t2
    if theta < _SERIES_ANGLE:
        c = 1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0
    else:
        c = (theta - np.sin(theta)) / theta**3
    return a, b, c


def exp_se3(xi) -> TransformSE3:
    xi = np.asarray(xi, dtype=float).reshape(6)
    rho, phi = xi[:3], xi[3:]
    theta = float(np.linalg.norm(phi))
    a, b, c = _so3_coeffs(theta)
    k = wedge3(phi)
    k2 = k @ k
    rot = np.eye(3) + a * k + b * k2
    v = np.eye(3) + b * k + c * k2
    return TransformSE3(rot, v @ rho)


def log_so3(rotation: np.ndarray) -> np.ndarray:
    theta = rotation_angle(rotation)
    if np.pi - theta < _PI_MARGIN:
        raise LogDegeneracyError(f"rotation angle {theta!r} is too close to pi")
    skew = vee3(rotation - rotation.T)
    if theta < _SMALL_ANGLE:
        return 0.5 * (1.0 + theta * theta / 6.0) * skew
    return theta / (2.0 * np.sin(theta)) * skew


def log_se3(T: TransformSE3) -> np.ndarray:
    phi = log_so3(T.rotation)
    theta = float(np.linalg.norm(phi))
    k = wedge3(phi)
    if theta < _SERIES_ANGLE:
        t2 = theta * theta
        d = 1.0 / 12.0 + t2 / 720.0 + t2 * t2 / 30240.0
    else:
        a, b, _ = _so3_coeffs(theta)
        d = (1.0 - a / (2.0 * b)) / theta**2
    v_inv = np.eye(3) - 0.5 * k + d * (k @ k)
    return np.concatenate([v_inv @ T.translation, phi])


def rotation_angle(rotation: np.ndarray) -> float:
    """Geodesic angle of a rotation matrix, in [0, pi].

    atan2 of the sine and cosine parts keeps full precision near zero, where
    arccos of the trace bottoms out around 1e-8 rad.
    """
    c = np.clip((np.trace(rotation) - 1.0) / 2.0, -1.0, 1.0)
    s = 0.5 * np.linalg.norm(vee3(rotation - rotation.T))
    return float(np.arctan2(s, c))
