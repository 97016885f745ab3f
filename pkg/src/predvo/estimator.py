"""Frame-to-frame transform estimation.

Three weighting schemes share one Levenberg-Marquardt core:

* ``FixedCovariance(R)`` minimizes ``sum e^T R^-1 e``.
* ``StaticStudentT(R, dof)`` minimizes ``sum (dof + d) log(1 + e^T R^-1 e / dof)``.
* ``PredictiveRobust(model)`` minimizes ``sum (nu_i + 1) log(1 + e^T psi_i^-1 e)``
  with ``(psi_i, nu_i)`` inferred per landmark from a :class:`CovarianceModel`.

The robust objectives are minimized by iteratively reweighted Gauss-Newton:
each landmark gets the scalar weight ``w = scale / (1 + e^T A e)`` so that
``w e^T A e`` has the same gradient as the robust term at the current iterate.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .camera import EPS_DEPTH, disparity_ok, reprojection_terms, triangulate_many
from .dataset import FramePair
from .lie import TransformSE3, exp_se3
from .noise_model import CovarianceModel, IWParams

MIN_LANDMARKS = 3


class EstimationError(RuntimeError):
    pass


class TooFewLandmarks(EstimationError):
    pass


class SingularNormalEquations(EstimationError):
    pass


@dataclass(frozen=True, eq=False)
class FixedCovariance:
    R: np.ndarray = field(default_factory=lambda: np.eye(4))
    name = "fixed"


@dataclass(frozen=True, eq=False)
class StaticStudentT:
    R: np.ndarray = field(default_factory=lambda: np.eye(4))
    dof: float = 5.0
    name = "student-t"

    def __post_init__(self):
        if not self.dof > 0:
            raise ValueError("dof must be positive")


@dataclass(frozen=True, eq=False)
class PredictiveRobust:
    model: CovarianceModel
    name = "predictive"


@dataclass(frozen=True, eq=False)
class PerLandmark:
    """Explicit per-landmark noise parameters.

    ``robust=False`` gives the Gaussian objective with covariance ``psi / nu``;
    ``robust=True`` gives the Student's-t objective.
    """

    psi: np.ndarray
    nu: np.ndarray
    robust: bool = True
    name = "per-landmark"


WeightingScheme = FixedCovariance | StaticStudentT | PredictiveRobust | PerLandmark


@dataclass
class SolverConfig:
    rel_tol: float = 0.01
    max_iters: int = 50
    lm_lambda: float = 1e-4
    lm_factor: float = 10.0
    min_step: float = 1e-10

    def __post_init__(self):
        if not self.rel_tol > 0:
            raise ValueError("rel_tol must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")


@dataclass
class SolveResult:
    transform: TransformSE3
    iterations: int
    objective: float
    weights: np.ndarray
    n_landmarks: int
    n_dropped: int
    converged: bool
    scheme: str = ""


class _Terms:
    """Per-landmark information matrices ``A_i`` and robust scales."""

    def __init__(self, info: np.ndarray, scale: np.ndarray | None, shape: np.ndarray | None):
        self.info = info  # (N, 4, 4)
        self.scale = scale  # robust numerator (nu + 1); None for Gaussian
        self.shape = shape  # divisor inside the log; None for Gaussian

    @property
    def robust(self) -> bool:
        return self.scale is not None

    def mahalanobis(self, e: np.ndarray) -> np.ndarray:
        return np.einsum("ni,nij,nj->n", e, self.info, e)

    def objective(self, e: np.ndarray) -> float:
        s = self.mahalanobis(e)
        if not self.robust:
            return float(np.sum(s))
        return float(np.sum(self.scale * np.log1p(s / self.shape)))

    def weights(self, e: np.ndarray) -> np.ndarray:
        if not self.robust:
            return np.ones(e.shape[0])
        return self.scale / (self.shape + self.mahalanobis(e))


def _spd_inverse(m: np.ndarray) -> np.ndarray:
    # raises LinAlgError for non-SPD input rather than regularizing
    l_inv = np.linalg.inv(np.linalg.cholesky(m))
    return l_inv.swapaxes(-1, -2) @ l_inv


def _terms_for(weighting, frame: FramePair, keep: np.ndarray) -> _Terms:
    n = int(keep.sum())
    if isinstance(weighting, FixedCovariance):
        info = np.broadcast_to(_spd_inverse(np.asarray(weighting.R, dtype=float)), (n, 4, 4))
        return _Terms(info, None, None)
    if isinstance(weighting, StaticStudentT):
        d = 4
        info = np.broadcast_to(_spd_inverse(np.asarray(weighting.R, dtype=float)), (n, 4, 4))
        return _Terms(info, np.full(n, weighting.dof + d), np.full(n, weighting.dof))
    if isinstance(weighting, PredictiveRobust):
        psi, nu = weighting.model.infer_many(frame.phi[keep])
        return _Terms(_spd_inverse(psi), nu + 1.0, np.ones(n))
    if isinstance(weighting, PerLandmark):
        psi = np.asarray(weighting.psi, dtype=float)[keep]
        nu = np.asarray(weighting.nu, dtype=float)[keep]
        if weighting.robust:
            return _Terms(_spd_inverse(psi), nu + 1.0, np.ones(n))
        return _Terms(_spd_inverse(psi) * nu[:, None, None], None, None)
    raise TypeError(f"unknown weighting scheme {weighting!r}")


def robust_weight(e, params: IWParams) -> float:
    """IRLS weight ``(nu + 1) / (1 + e^T psi^-1 e)``."""
    e = np.asarray(e, dtype=float)
    L = np.linalg.cholesky(params.psi)
    z = np.linalg.solve(L, e)
    return float((params.nu + 1.0) / (1.0 + z @ z))


class FrameSolver:
    """Evaluates and minimizes a scheme's objective on one frame pair."""

    def __init__(self, frame: FramePair, weighting, K, init: TransformSE3 | None = None, min_landmarks: int = MIN_LANDMARKS):
        init = TransformSE3.identity() if init is None else init
        keep = disparity_ok(frame.y)
        points = triangulate_many(frame.y[keep], K) if keep.any() else np.empty((0, 4))
        if keep.any():
            depth = points @ init.matrix()[2]
            ok = depth > EPS_DEPTH
            idx = np.flatnonzero(keep)
            keep[idx[~ok]] = False
            points = points[ok]
        self.frame = frame
        self.K = K
        self.init = init
        self.keep = keep
        self.points = points
        self.y = frame.y[keep]
        self.y_prime = frame.y_prime[keep]
        self.n_dropped = int(len(frame) - keep.sum())
        if self.y.shape[0] < min_landmarks:
            raise TooFewLandmarks(f"frame {frame.index}: {self.y.shape[0]} usable landmarks, need {min_landmarks}")
        self.terms = _terms_for(weighting, frame, keep)
        self.scheme = getattr(weighting, "name", type(weighting).__name__)

    def errors(self, T: TransformSE3, with_jacobian: bool = False):
        return reprojection_terms(self.y, self.y_prime, T, self.K, points=self.points, with_jacobian=with_jacobian)

    def objective(self, T: TransformSE3) -> float:
        e, _, depth = self.errors(T)
        if np.any(depth <= EPS_DEPTH):
            return np.inf
        return self.terms.objective(e)

    def solve(self, config: SolverConfig | None = None) -> SolveResult:
        config = config or SolverConfig()
        T = self.init
        e, J, _ = self.errors(T, with_jacobian=True)
        cost = self.terms.objective(e)
        lam = config.lm_lambda
        converged = False
        it = 0
        while it < config.max_iters:
            it += 1
            if cost == 0.0:
                converged = True
                break
            w = self.terms.weights(e)
            WA = self.terms.info * w[:, None, None]
            JtW = J.swapaxes(1, 2) @ WA
            H = np.einsum("nij,njk->ik", JtW, J)
            g = np.einsum("nij,nj->i", JtW, e)
            if np.linalg.matrix_rank(H) < 6:
                raise SingularNormalEquations(f"frame {self.frame.index}: rank-deficient normal equations")
            diag = np.diag(np.diag(H))
            accepted = False
            while True:
                try:
                    step = np.linalg.solve(H + lam * diag, g)
                except np.linalg.LinAlgError as exc:
                    raise SingularNormalEquations(f"frame {self.frame.index}: {exc}") from exc
                T_new = exp_se3(step) @ T
                e_new, J_new, depth = self.errors(T_new, with_jacobian=True)
                new_cost = np.inf if np.any(depth <= EPS_DEPTH) else self.terms.objective(e_new)
                if new_cost <= cost:
                    accepted = True
                    lam = max(lam / config.lm_factor, 1e-12)
                    break
                lam *= config.lm_factor
                if lam > 1e12:
                    break
            if not accepted:
                converged = True
                break
            rel = (cost - new_cost) / cost if cost > 0 else 0.0
            T, e, J, cost = T_new, e_new, J_new, new_cost
            if np.linalg.norm(step) < config.min_step or rel < config.rel_tol:
                converged = True
                break
        return SolveResult(
            transform=T,
            iterations=it,
            objective=cost,
            weights=self.terms.weights(e),
            n_landmarks=int(self.y.shape[0]),
            n_dropped=self.n_dropped,
            converged=converged,
            scheme=self.scheme,
        )


def solve_transform(
    frame: FramePair,
    weighting,
    K,
    config: SolverConfig | None = None,
    init: TransformSE3 | None = None,
) -> SolveResult:
    """Estimate the transform taking first-pose points into the second pose."""
    return FrameSolver(frame, weighting, K, init).solve(config)


def objective_value(frame: FramePair, weighting, K, T: TransformSE3) -> float:
    # evaluation is well defined for any number of landmarks; only solving needs three
    return FrameSolver(frame, weighting, K, init=T, min_landmarks=0).objective(T)
