"""Building the noise model: from ground truth, or by EM without it.

EM alternates two steps over a training sequence:

* E-step: for every stored sample, the leave-one-out IW posterior at its own
  predictor, i.e. conditioned on all *other* samples' current errors.
* M-step: one independent solve per frame, either the Gaussian objective
  ``sum e^T (psi/nu)^-1 e`` or the robust Student's-t objective.

Errors stored in the model are then recomputed under the new transforms.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .camera import EPS_DEPTH, StereoIntrinsics, disparity_ok, reprojection_terms, triangulate_many
from .dataset import FramePair
from .estimator import EstimationError, FixedCovariance, PerLandmark, SolveResult, SolverConfig, solve_transform
from .lie import TransformSE3, log_se3
from .metrics import integrate_estimates, loop_closure_error
from .noise_model import CovarianceModel, IWParams, KernelConfig, default_prior, student_t_log_pdf_many

log = logging.getLogger(__name__)

M_STEP_MODES = ("gaussian", "robust")


class MissingGroundTruth(ValueError):
    pass


class EmptyDataset(ValueError):
    pass


@dataclass
class BuildReport:
    n_samples: int = 0
    n_skipped: int = 0


def _usable_mask(frame: FramePair, K: StereoIntrinsics, T: TransformSE3) -> tuple[np.ndarray, np.ndarray]:
    keep = disparity_ok(frame.y)
    points = np.zeros((len(frame), 4))
    if keep.any():
        points[keep] = triangulate_many(frame.y[keep], K)
        depth = points @ T.matrix()[2]
        keep &= depth > EPS_DEPTH
    return keep, points


def frame_errors(frame: FramePair, K: StereoIntrinsics, T: TransformSE3) -> tuple[np.ndarray, np.ndarray]:
    """Reprojection errors under ``T`` and the mask of landmarks they exist for."""
    keep, points = _usable_mask(frame, K, T)
    e = np.full((len(frame), 4), np.nan)
    if keep.any():
        e[keep], _, _ = reprojection_terms(frame.y[keep], frame.y_prime[keep], T, K, points=points[keep], with_jacobian=False)
    return e, keep


def build_from_ground_truth(
    frames: Sequence[FramePair],
    K: StereoIntrinsics,
    prior: IWParams | None = None,
    kernel: KernelConfig | None = None,
    report: BuildReport | None = None,
) -> CovarianceModel:
    """One (predictor, error) sample per usable landmark, errors under ground truth."""
    frames = list(frames)
    dim = frames[0].predictor_dim if frames else 4
    model = CovarianceModel(dim, prior or default_prior(), kernel or KernelConfig())
    report = report if report is not None else BuildReport()
    phis, errs = [], []
    for frame in frames:
        if frame.ground_truth is None:
            raise MissingGroundTruth(f"frame {frame.index} has no ground-truth transform")
        e, keep = frame_errors(frame, K, frame.ground_truth)
        report.n_skipped += int(len(frame) - keep.sum())
        phis.append(frame.phi[keep])
        errs.append(e[keep])
    if phis:
        model.insert_many(np.vstack(phis), np.vstack(errs))
    model.fit_standardization()
    report.n_samples = len(model)
    return model


@dataclass
class EMConfig:
    max_em_iters: int = 20
    ll_rel_tol: float = 1e-4
    m_step_mode: str = "gaussian"
    leave_one_out: bool = True
    solver: SolverConfig = field(default_factory=SolverConfig)
    track_loop_closure: bool = False

    def __post_init__(self):
        if self.max_em_iters < 1:
            raise ValueError("max_em_iters must be at least 1")
        if not self.ll_rel_tol > 0:
            raise ValueError("ll_rel_tol must be positive")
        if self.m_step_mode not in M_STEP_MODES:
            raise ValueError(f"m_step_mode must be one of {M_STEP_MODES}")


@dataclass
class EMIteration:
    iteration: int
    log_likelihood: float
    mean_step_norm: float
    loop_closure: float | None
    transforms: list[TransformSE3]
    failed_frames: list[int] = field(default_factory=list)


@dataclass
class EMTrace:
    initial_log_likelihood: float = float("nan")
    iterations: list[EMIteration] = field(default_factory=list)
    converged: bool = False

    def __len__(self) -> int:
        return len(self.iterations)

    @property
    def log_likelihoods(self) -> list[float]:
        return [self.initial_log_likelihood] + [it.log_likelihood for it in self.iterations]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["iteration", "log_likelihood", "mean_step_norm", "loop_closure"])
            w.writerow([0, format(self.initial_log_likelihood, ".17g"), "", ""])
            for it in self.iterations:
                lc = "" if it.loop_closure is None else format(it.loop_closure, ".17g")
                w.writerow([it.iteration, format(it.log_likelihood, ".17g"), format(it.mean_step_norm, ".17g"), lc])


class EMState:
    """Training frames flattened into one sample array, with per-frame slices."""

    def __init__(self, frames: Sequence[FramePair], K: StereoIntrinsics, transforms: Sequence[TransformSE3],
                 prior: IWParams, kernel: KernelConfig):
        self.frames = list(frames)
        self.K = K
        self.transforms = list(transforms)
        self.slices: list[slice] = []
        self.masks: list[np.ndarray] = []
        phis, errs = [], []
        start = 0
        for frame, T in zip(self.frames, self.transforms):
            e, keep = frame_errors(frame, K, T)
            self.masks.append(keep)
            self.slices.append(slice(start, start + int(keep.sum())))
            start += int(keep.sum())
            phis.append(frame.phi[keep])
            errs.append(e[keep])
        dim = self.frames[0].predictor_dim
        self.model = CovarianceModel(dim, prior, kernel)
        self.model.insert_many(np.vstack(phis), np.vstack(errs))
        self.model.fit_standardization()

    def update_errors(self) -> None:
        errors = self.model.errors.copy()
        for frame, T, keep, sl in zip(self.frames, self.transforms, self.masks, self.slices):
            e, ok = frame_errors(frame, self.K, T)
            fresh = ok[keep]
            block = errors[sl]
            block[fresh] = e[keep][fresh]
            errors[sl] = block
        self.model.set_errors(errors)


def em_expectation(model: CovarianceModel, index: int, leave_one_out: bool = True) -> IWParams:
    """IW posterior at sample ``index``'s predictor, optionally without that sample."""
    return model.infer(model.predictors[index], exclude=index if leave_one_out else None)


def posteriors(model: CovarianceModel, leave_one_out: bool = True) -> tuple[np.ndarray, np.ndarray]:
    exclude = np.arange(len(model)) if leave_one_out else None
    return model.infer_many(model.predictors, exclude=exclude)


def em_log_likelihood(model: CovarianceModel, leave_one_out: bool = True) -> float:
    """Sum of Student's-t log densities of stored errors under their posteriors."""
    if len(model) == 0:
        return 0.0
    psi, nu = posteriors(model, leave_one_out)
    return float(np.sum(student_t_log_pdf_many(model.errors, psi, nu)))


def em_maximization(
    frame: FramePair,
    K: StereoIntrinsics,
    psi: np.ndarray,
    nu: np.ndarray,
    mode: str = "gaussian",
    init: TransformSE3 | None = None,
    config: SolverConfig | None = None,
) -> SolveResult:
    """Per-frame M-step; ``psi``/``nu`` are aligned with the frame's landmarks."""
    weighting = PerLandmark(psi, nu, robust=(mode == "robust"))
    return solve_transform(frame, weighting, K, config, init)


def initial_transforms(frames: Sequence[FramePair], K: StereoIntrinsics, config: SolverConfig | None = None) -> list[TransformSE3]:
    out = []
    for frame in frames:
        try:
            out.append(solve_transform(frame, FixedCovariance(), K, config).transform)
        except EstimationError as exc:
            log.warning("initial solve failed on frame %d: %s", frame.index, exc)
            out.append(TransformSE3.identity())
    return out


def train_em(
    frames: Sequence[FramePair],
    K: StereoIntrinsics,
    prior: IWParams | None = None,
    kernel: KernelConfig | None = None,
    config: EMConfig | None = None,
    init_transforms: Sequence[TransformSE3] | None = None,
) -> tuple[CovarianceModel, list[TransformSE3], EMTrace]:
    frames = list(frames)
    if not frames:
        raise EmptyDataset("no frames to train on")
    config = config or EMConfig()
    if init_transforms is None:
        init_transforms = initial_transforms(frames, K, config.solver)
    if len(init_transforms) != len(frames):
        raise ValueError("need one initial transform per frame")
    state = EMState(frames, K, init_transforms, prior or default_prior(), kernel or KernelConfig())
    model = state.model
    trace = EMTrace(initial_log_likelihood=em_log_likelihood(model, config.leave_one_out))
    prev_ll = trace.initial_log_likelihood
    for it in range(1, config.max_em_iters + 1):
        psi_all, nu_all = posteriors(model, config.leave_one_out)
        new_transforms, steps, failed = [], [], []
        for frame, T, keep, sl in zip(frames, state.transforms, state.masks, state.slices):
            psi = np.broadcast_to(np.eye(4), (len(frame), 4, 4)).copy()
            nu = np.full(len(frame), 5.0)
            psi[keep], nu[keep] = psi_all[sl], nu_all[sl]
            try:
                T_new = em_maximization(frame, K, psi, nu, config.m_step_mode, init=T, config=config.solver).transform
            except EstimationError as exc:
                log.warning("EM iteration %d: frame %d excluded: %s", it, frame.index, exc)
                failed.append(frame.index)
                T_new = T
            steps.append(float(np.linalg.norm(log_se3(T_new @ T.inverse()))))
            new_transforms.append(T_new)
        state.transforms = new_transforms
        state.update_errors()
        ll = em_log_likelihood(model, config.leave_one_out)
        lc = loop_closure_error(integrate_estimates(new_transforms)) if config.track_loop_closure else None
        trace.iterations.append(EMIteration(it, ll, float(np.mean(steps)), lc, list(new_transforms), failed))
        log.info("EM iteration %d: log-likelihood %.6f, mean step %.3g", it, ll, np.mean(steps))
        if abs(ll - prev_ll) < config.ll_rel_tol * abs(prev_ll):
            trace.converged = True
            break
        prev_ll = ll
    return model, list(state.transforms), trace
