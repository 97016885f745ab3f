"""Trajectory integration and evaluation metrics."""
from __future__ import annotations

import csv
from typing import Sequence

import numpy as np

from .lie import TransformSE3, rotation_angle


def integrate(motions: Sequence[TransformSE3], start: TransformSE3 | None = None) -> list[TransformSE3]:
    """Chain body-frame motions: ``pose[k+1] = pose[k] @ motions[k]``.

    A motion is the pose of camera ``k+1`` in camera ``k``. Estimators return
    the inverse (points of camera ``k`` expressed in camera ``k+1``); pass
    ``[T.inverse() for T in estimates]`` or use :func:`integrate_estimates`.
    """
    if len(motions) == 0:
        raise ValueError("need at least one relative transform")
    poses = [TransformSE3.identity() if start is None else start]
    for m in motions:
        poses.append(poses[-1] @ m)
    return poses


def integrate_estimates(transforms: Sequence[TransformSE3], start: TransformSE3 | None = None) -> list[TransformSE3]:
    return integrate([T.inverse() for T in transforms], start)


def positions(traj: Sequence[TransformSE3]) -> np.ndarray:
    return np.array([p.translation for p in traj])


def armse(est: Sequence[TransformSE3], gt: Sequence[TransformSE3]) -> tuple[float, float]:
    """RMS over time of translational (m) and rotational (rad) pose errors."""
    if len(est) != len(gt):
        raise ValueError(f"trajectory lengths differ: {len(est)} vs {len(gt)}")
    if len(est) == 0:
        raise ValueError("empty trajectories")
    dp = positions(est) - positions(gt)
    trans = float(np.sqrt(np.mean(np.sum(dp * dp, axis=1))))
    angles = np.array([rotation_angle(a.rotation.T @ b.rotation) for a, b in zip(est, gt)])
    rot = float(np.sqrt(np.mean(angles**2)))
    return trans, rot


def frobenius_error(a, b) -> float:
    return float(np.linalg.norm(np.asarray(a, dtype=float) - np.asarray(b, dtype=float), "fro"))


def loop_closure_error(traj: Sequence[TransformSE3]) -> float:
    if len(traj) < 2:
        raise ValueError("need at least two poses")
    return float(np.linalg.norm(traj[-1].translation - traj[0].translation))


def path_length(traj: Sequence[TransformSE3]) -> float:
    p = positions(traj)
    return float(np.sum(np.linalg.norm(np.diff(p, axis=0), axis=1)))


def write_trajectory_csv(path, traj: Sequence[TransformSE3]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t"] + [f"m{r}{c}" for r in range(4) for c in range(4)])
        for t, pose in enumerate(traj):
            w.writerow([t] + [format(v, ".17g") for v in pose.to_list()])


def read_trajectory_csv(path) -> list[TransformSE3]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or len(rows[0]) != 17 or rows[0][0] != "t":
        raise ValueError(f"{path}: expected header 't' plus 16 pose columns")
    return [TransformSE3.from_list([float(v) for v in row[1:]]) for row in rows[1:] if row]
