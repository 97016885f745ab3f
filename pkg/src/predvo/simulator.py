"""Synthetic stereo world: landmark fields, circular drives, noisy observations.

World frame is z-up. The camera travels counter-clockwise around a circle
centred on the origin, looking along the tangent (camera z forward, y down),
and landmarks fill an annulus around the path. Randomness comes from a
counter-based Philox generator keyed by ``(seed, stream, index)`` so every
frame pair can be generated independently and reproducibly.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .camera import StereoIntrinsics, project_many, reprojection_terms, triangulate_many
from .dataset import DatasetHeader, FramePair
from .lie import TransformSE3

RNG_NAME = "philox"
_STREAM_WORLD = 0
_STREAM_FRAME = 1


def make_rng(seed: int, stream: int = 0, index: int = 0) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(stream), int(index)])))


@dataclass
class WorldConfig:
    n_landmarks: int = 2000
    path_radius: float = 180.0 / (2.0 * math.pi)
    half_width: float = 20.0
    corridor: float = 2.0
    z_min: float = -1.5
    z_max: float = 4.0

    def __post_init__(self):
        if self.n_landmarks < 1:
            raise ValueError("n_landmarks must be at least 1")
        if not (self.half_width > self.corridor >= 0 and self.z_max > self.z_min):
            raise ValueError("landmark region is empty")


@dataclass
class TrajectoryConfig:
    speed: float = 3.0
    duration: float = 30.0
    rate: float = 10.0
    radius: float = 180.0 / (2.0 * math.pi)

    def __post_init__(self):
        if not (self.speed > 0 and self.duration > 0 and self.rate > 0 and self.radius > 0):
            raise ValueError("speed, duration, rate and radius must be positive")

    @property
    def n_steps(self) -> int:
        return int(round(self.duration * self.rate))

    @property
    def step_length(self) -> float:
        return self.speed / self.rate


@dataclass
class NoiseConfig:
    """Pixel noise ``sigma(v) = sigma0 + sigma1 * v`` plus uniform outliers."""

    sigma0: float = 0.5
    sigma1: float = 1.5 / 480.0
    outlier_frac: float = 0.05
    outlier_range: float = 20.0

    def __post_init__(self):
        if not 0.0 <= self.outlier_frac <= 1.0:
            raise ValueError("outlier_frac must lie in [0, 1]")
        if self.sigma0 < 0 or self.outlier_range < 0:
            raise ValueError("noise magnitudes must be non-negative")

    def sigma(self, v) -> np.ndarray:
        return np.maximum(self.sigma0 + self.sigma1 * np.asarray(v, dtype=float), 0.0)

    @classmethod
    def noiseless(cls) -> "NoiseConfig":
        return cls(sigma0=0.0, sigma1=0.0, outlier_frac=0.0, outlier_range=0.0)


def _default_intrinsics() -> StereoIntrinsics:
    return StereoIntrinsics(fu=500.0, fv=500.0, cu=320.0, cv=240.0, b=0.25)


@dataclass
class CameraConfig:
    intrinsics: StereoIntrinsics = field(default_factory=_default_intrinsics)
    width: int = 640
    height: int = 480
    min_depth: float = 1.0
    max_depth: float = 30.0


@dataclass
class SimConfig:
    world: WorldConfig = field(default_factory=WorldConfig)
    trajectory: TrajectoryConfig = field(default_factory=TrajectoryConfig)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    camera: CameraConfig = field(default_factory=CameraConfig)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SimConfig":
        cam = dict(d.get("camera", {}))
        if "intrinsics" in cam:
            cam["intrinsics"] = StereoIntrinsics.from_dict(cam["intrinsics"])
        return cls(
            world=WorldConfig(**d.get("world", {})),
            trajectory=TrajectoryConfig(**d.get("trajectory", {})),
            noise=NoiseConfig(**d.get("noise", {})),
            camera=CameraConfig(**cam),
        )

    @classmethod
    def from_json(cls, path) -> "SimConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


def generate_world(config: WorldConfig, seed: int) -> np.ndarray:
    """(N, 3) landmark positions, uniform over the annulus minus the corridor."""
    rng = make_rng(seed, _STREAM_WORLD)
    r_in, r_out = config.path_radius - config.half_width, config.path_radius + config.half_width
    r_in = max(r_in, 0.0)
    out = np.empty((0, 3))
    while out.shape[0] < config.n_landmarks:
        n = 2 * (config.n_landmarks - out.shape[0]) + 16
        r = np.sqrt(rng.uniform(r_in**2, r_out**2, n))
        theta = rng.uniform(0.0, 2.0 * np.pi, n)
        z = rng.uniform(config.z_min, config.z_max, n)
        pts = np.column_stack([r * np.cos(theta), r * np.sin(theta), z])
        pts = pts[np.abs(r - config.path_radius) >= config.corridor]
        out = np.vstack([out, pts])
    return out[: config.n_landmarks]


def pose_on_circle(arc: float, radius: float) -> TransformSE3:
    """Camera-to-world pose after travelling ``arc`` metres counter-clockwise."""
    th = arc / radius
    c, s = math.cos(th), math.sin(th)
    right = np.array([c, s, 0.0])
    down = np.array([0.0, 0.0, -1.0])
    forward = np.array([-s, c, 0.0])
    return TransformSE3(np.column_stack([right, down, forward]), radius * np.array([c, s, 0.0]))


def circular_trajectory(config: TrajectoryConfig) -> list[TransformSE3]:
    """``n_steps + 1`` camera-to-world poses spaced ``speed / rate`` apart."""
    step = config.step_length
    return [pose_on_circle(k * step, config.radius) for k in range(config.n_steps + 1)]


def relative_transform(pose_a: TransformSE3, pose_b: TransformSE3) -> TransformSE3:
    """Transform taking points in camera frame ``a`` into camera frame ``b``."""
    return pose_b.inverse() @ pose_a


def _visible(p_cam: np.ndarray, camera: CameraConfig) -> tuple[np.ndarray, np.ndarray]:
    z = p_cam[:, 2]
    ok = (z > camera.min_depth) & (z < camera.max_depth)
    obs = np.full((p_cam.shape[0], 4), np.nan)
    obs[ok] = project_many(p_cam[ok], camera.intrinsics)
    u_ok = (obs[:, [0, 2]] >= 0) & (obs[:, [0, 2]] < camera.width)
    v_ok = (obs[:, [1, 3]] >= 0) & (obs[:, [1, 3]] < camera.height)
    ok &= u_ok.all(axis=1) & v_ok.all(axis=1) & (obs[:, 0] - obs[:, 2] > 0)
    return ok, obs


def _to_camera(world: np.ndarray, pose: TransformSE3) -> np.ndarray:
    hom = np.column_stack([world, np.ones(world.shape[0])])
    return hom @ pose.inverse().matrix().T


def _perturb(obs: np.ndarray, noise: NoiseConfig, rng: np.random.Generator) -> np.ndarray:
    sigma = noise.sigma(obs[:, 1])
    return obs + rng.standard_normal(obs.shape) * sigma[:, None]


def observe_frame_pair(
    world: np.ndarray,
    pose_a: TransformSE3,
    pose_b: TransformSE3,
    camera: CameraConfig,
    noise: NoiseConfig,
    seed: int,
    index: int = 0,
    return_outliers: bool = False,
):
    """Noisy matched observations of landmarks visible from both poses.

    Predictors are the (noisy) first-pose pixel coordinates.
    """
    ok_a, obs_a = _visible(_to_camera(world, pose_a), camera)
    ok_b, obs_b = _visible(_to_camera(world, pose_b), camera)
    ok = ok_a & ok_b
    if not ok.any():
        raise ValueError(f"frame {index}: no landmarks visible from both poses")
    ya, yb = obs_a[ok], obs_b[ok]
    rng = make_rng(seed, _STREAM_FRAME, index)
    y = _perturb(ya, noise, rng)
    yp = _perturb(yb, noise, rng)
    outlier = rng.random(y.shape[0]) < noise.outlier_frac
    offsets = rng.uniform(-noise.outlier_range, noise.outlier_range, size=yp.shape)
    yp = yp + offsets * outlier[:, None]
    frame = FramePair(index, y, yp, y.copy(), relative_transform(pose_a, pose_b))
    if return_outliers:
        return frame, outlier
    return frame


@dataclass
class SimulatedRun:
    frames: list[FramePair]
    poses: list[TransformSE3]
    world: np.ndarray

    def header(self, camera: CameraConfig) -> DatasetHeader:
        return DatasetHeader(predictor_dim=4, intrinsics=camera.intrinsics)


def simulate(config: SimConfig, seed: int) -> SimulatedRun:
    world = generate_world(config.world, seed)
    poses = circular_trajectory(config.trajectory)
    frames = [
        observe_frame_pair(world, poses[t], poses[t + 1], config.camera, config.noise, seed, index=t)
        for t in range(len(poses) - 1)
    ]
    return SimulatedRun(frames, poses, world)


def monte_carlo_true_covariance(
    y,
    T_true: TransformSE3,
    K: StereoIntrinsics,
    noise: NoiseConfig,
    n_samples: int,
    rng: np.random.Generator | int = 0,
) -> np.ndarray:
    """Sample covariance of the reprojection error under pixel noise on both views.

    ``y`` is the ideal first-pose observation; the second-pose observation is
    its exact reprojection under ``T_true``. Outliers are not simulated here.
    """
    if n_samples < 2:
        raise ValueError("need at least two samples")
    if not isinstance(rng, np.random.Generator):
        rng = make_rng(int(rng), 2)
    y = np.asarray(y, dtype=float).reshape(1, 4)
    if not y[0, 0] - y[0, 2] > 0:
        raise ValueError("landmark is not triangulable")
    p = triangulate_many(y, K)
    q = p @ T_true.matrix().T
    if not q[0, 2] > 0:
        raise ValueError("landmark is behind the second camera")
    y_prime = project_many(q, K)
    ys = np.repeat(y, n_samples, axis=0)
    yps = np.repeat(y_prime, n_samples, axis=0)
    ys = ys + rng.standard_normal(ys.shape) * noise.sigma(y[0, 1])
    yps = yps + rng.standard_normal(yps.shape) * noise.sigma(y_prime[0, 1])
    e, _, _ = reprojection_terms(ys, yps, T_true, K, with_jacobian=False)
    return np.cov(e, rowvar=False)
