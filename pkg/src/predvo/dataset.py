"""Frame-pair datasets and their JSONL / JSON persistence.

Dataset file: the first line is a header object, each following line one
frame pair::

    {"schema_version": 1, "predictor_dim": M, "intrinsics": {...}}
    {"t": 0, "T_gt": [16 floats] | null, "landmarks": [{"y": [4], "yp": [4], "phi": [M]}, ...]}

Floats are written with 17 significant digits so reads are lossless.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, NamedTuple

import numpy as np

from .camera import StereoIntrinsics
from .lie import TransformSE3
from .noise_model import CovarianceModel, IWParams, KernelConfig

SCHEMA_VERSION = 1
MODEL_VERSION = 1


class SchemaError(ValueError):
    pass


class LandmarkMatch(NamedTuple):
    y: np.ndarray
    y_prime: np.ndarray
    phi: np.ndarray


@dataclass(eq=False)
class FramePair:
    """Landmarks matched across two stereo poses.

    ``y`` and ``y_prime`` are (N, 4) pixel observations in the first and second
    pose, ``phi`` the (N, M) predictors. ``ground_truth`` maps points in the
    first camera frame into the second.
    """

    index: int
    y: np.ndarray
    y_prime: np.ndarray
    phi: np.ndarray
    ground_truth: TransformSE3 | None = None

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float).reshape(-1, 4)
        self.y_prime = np.asarray(self.y_prime, dtype=float).reshape(-1, 4)
        n = self.y.shape[0]
        self.phi = np.asarray(self.phi, dtype=float).reshape(n, -1)
        if self.y_prime.shape[0] != n:
            raise ValueError("y and y_prime must have the same number of rows")

    def __len__(self) -> int:
        return self.y.shape[0]

    @property
    def predictor_dim(self) -> int:
        return self.phi.shape[1]

    @property
    def matches(self) -> list[LandmarkMatch]:
        return [LandmarkMatch(a, b, c) for a, b, c in zip(self.y, self.y_prime, self.phi)]

    @classmethod
    def from_matches(cls, index: int, matches: Iterable[LandmarkMatch], ground_truth=None, predictor_dim: int = 4):
        matches = list(matches)
        if not matches:
            return cls(index, np.empty((0, 4)), np.empty((0, 4)), np.empty((0, predictor_dim)), ground_truth)
        y, yp, phi = (np.array(col, dtype=float) for col in zip(*matches))
        return cls(index, y, yp, phi, ground_truth)

    def subset(self, mask: np.ndarray) -> "FramePair":
        return FramePair(self.index, self.y[mask], self.y_prime[mask], self.phi[mask], self.ground_truth)


@dataclass
class DatasetHeader:
    predictor_dim: int
    intrinsics: StereoIntrinsics | None = None
    schema_version: int = SCHEMA_VERSION
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = {"schema_version": self.schema_version, "predictor_dim": self.predictor_dim}
        d["intrinsics"] = None if self.intrinsics is None else self.intrinsics.to_dict()
        if self.extra:
            d["extra"] = self.extra
        return d


# -- number formatting ---------------------------------------------------


def _num(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if not math.isfinite(x):
        raise ValueError(f"cannot serialize non-finite value {x!r}")
    return format(x, ".17g")


def dumps(obj) -> str:
    """Compact JSON with 17-significant-digit floats."""
    if obj is None:
        return "null"
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, dict):
        return "{" + ",".join(f"{json.dumps(str(k))}:{dumps(v)}" for k, v in obj.items()) + "}"
    if isinstance(obj, np.ndarray):
        return dumps(obj.tolist())
    if isinstance(obj, (list, tuple)):
        return "[" + ",".join(dumps(v) for v in obj) + "]"
    return _num(obj)


def _frame_to_dict(frame: FramePair) -> dict:
    return {
        "t": int(frame.index),
        "T_gt": None if frame.ground_truth is None else frame.ground_truth.matrix().ravel(),
        "landmarks": [{"y": a, "yp": b, "phi": c} for a, b, c in zip(frame.y, frame.y_prime, frame.phi)],
    }


def _vector(rec: dict, key: str, n: int, lineno: int) -> list:
    v = rec.get(key)
    if not isinstance(v, list) or len(v) != n or not all(isinstance(x, (int, float)) for x in v):
        raise SchemaError(f"line {lineno}: field {key!r} must be a list of {n} numbers")
    return v


def _frame_from_dict(rec: dict, predictor_dim: int, lineno: int) -> FramePair:
    if not isinstance(rec, dict) or "t" not in rec or "landmarks" not in rec:
        raise SchemaError(f"line {lineno}: record needs 't' and 'landmarks'")
    gt = rec.get("T_gt")
    ground_truth = None if gt is None else TransformSE3.from_list(_vector(rec, "T_gt", 16, lineno))
    y, yp, phi = [], [], []
    for lm in rec["landmarks"]:
        y.append(_vector(lm, "y", 4, lineno))
        yp.append(_vector(lm, "yp", 4, lineno))
        phi.append(_vector(lm, "phi", predictor_dim, lineno))
    n = len(y)
    return FramePair(
        int(rec["t"]),
        np.array(y, dtype=float).reshape(n, 4),
        np.array(yp, dtype=float).reshape(n, 4),
        np.array(phi, dtype=float).reshape(n, predictor_dim),
        ground_truth,
    )


def write_dataset(path, header: DatasetHeader, frames: Iterable[FramePair]) -> None:
    frames = sorted(frames, key=lambda f: f.index)
    with open(path, "w") as fh:
        fh.write(dumps(header.to_dict()) + "\n")
        for frame in frames:
            if frame.predictor_dim != header.predictor_dim and len(frame):
                raise SchemaError(f"frame {frame.index} has predictor dimension {frame.predictor_dim}")
            fh.write(dumps(_frame_to_dict(frame)) + "\n")


def iter_dataset(path) -> tuple[DatasetHeader, Iterator[FramePair]]:
    fh = open(path)
    first = fh.readline()
    try:
        raw = json.loads(first)
    except json.JSONDecodeError as exc:
        fh.close()
        raise SchemaError(f"line 1: invalid header JSON ({exc.msg})") from exc
    version = raw.get("schema_version")
    if version != SCHEMA_VERSION:
        fh.close()
        raise SchemaError(f"line 1: unsupported schema_version {version!r}")
    m = raw.get("predictor_dim")
    if not isinstance(m, int) or m < 1:
        fh.close()
        raise SchemaError("line 1: predictor_dim must be a positive integer")
    intr = raw.get("intrinsics")
    header = DatasetHeader(m, None if intr is None else StereoIntrinsics.from_dict(intr), version, raw.get("extra", {}))

    def records():
        last = None
        with fh:
            for lineno, line in enumerate(fh, start=2):
                if not line.strip():
                    continue
                try:
                    rec = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise SchemaError(f"line {lineno}: invalid JSON ({exc.msg})") from exc
                frame = _frame_from_dict(rec, m, lineno)
                if last is not None and frame.index <= last:
                    raise SchemaError(f"line {lineno}: frame index {frame.index} is not increasing")
                last = frame.index
                yield frame

    return header, records()


def read_dataset(path) -> tuple[DatasetHeader, list[FramePair]]:
    header, frames = iter_dataset(path)
    return header, list(frames)


# -- covariance model files ------------------------------------------------


def model_to_dict(model: CovarianceModel) -> dict:
    return {
        "version": MODEL_VERSION,
        "kernel": {"family": model.kernel.family, "rho": model.kernel.rho},
        "prior": {"psi": model.prior.psi.ravel(), "nu": model.prior.nu},
        "standardization": {"mean": model.mean, "std": model.std},
        "samples": [{"phi": p, "e": e} for p, e in zip(model.predictors, model.errors)],
    }


def model_from_dict(raw: dict, expected_dim: int | None = None) -> CovarianceModel:
    version = raw.get("version", MODEL_VERSION)
    if version != MODEL_VERSION:
        raise SchemaError(f"unsupported model version {version!r}")
    try:
        kernel = KernelConfig(raw["kernel"]["family"], float(raw["kernel"]["rho"]))
        psi = np.asarray(raw["prior"]["psi"], dtype=float)
        d = int(round(math.sqrt(psi.size)))
        if d * d != psi.size:
            raise SchemaError("prior psi must hold a square matrix")
        prior = IWParams(psi.reshape(d, d), float(raw["prior"]["nu"]))
        mean = np.asarray(raw["standardization"]["mean"], dtype=float)
        std = np.asarray(raw["standardization"]["std"], dtype=float)
        samples = raw["samples"]
    except (KeyError, TypeError) as exc:
        raise SchemaError(f"model file missing field: {exc}") from exc
    m = mean.size
    if std.size != m:
        raise SchemaError("standardization mean and std differ in length")
    if expected_dim is not None and m != expected_dim:
        raise SchemaError(f"model predictor dimension {m} does not match expected {expected_dim}")
    model = CovarianceModel(m, prior, kernel, mean, std)
    if samples:
        try:
            phi = np.array([s["phi"] for s in samples], dtype=float)
            err = np.array([s["e"] for s in samples], dtype=float)
        except (KeyError, ValueError) as exc:
            raise SchemaError(f"corrupted sample arrays: {exc}") from exc
        if phi.ndim != 2 or phi.shape[1] != m:
            raise SchemaError(f"sample predictors do not have dimension {m}")
        if err.ndim != 2 or err.shape[1] != d:
            raise SchemaError(f"sample errors do not have dimension {d}")
        model.insert_many(phi, err)
    return model


def save_model(path, model: CovarianceModel) -> None:
    Path(path).write_text(dumps(model_to_dict(model)) + "\n")


def load_model(path, expected_dim: int | None = None) -> CovarianceModel:
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError(f"model file is not valid JSON ({exc.msg})") from exc
    return model_from_dict(raw, expected_dim)
