"""Learned per-landmark noise model.

Training samples are ``(predictor, error)`` pairs held in a k-d tree over
standardized predictor space. A query at ``phi*`` returns inverse-Wishart
parameters

    psi* = psi0 + sum_i k(phi*, phi_i) e_i e_i^T
    nu*  = nu0  + sum_i k(phi*, phi_i)

where ``k`` has finite support ``rho``. The tree only prunes candidate pairs;
weights and sums are always computed by the same code, so tree and
brute-force queries give bit-identical results.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.spatial import cKDTree
from scipy.special import gammaln

KERNEL_FAMILIES = ("quartic", "epanechnikov")
_QUERY_CHUNK = 4096


class NuTooSmall(ValueError):
    pass


class NotPositiveDefinite(ValueError):
    pass


class DimensionMismatch(ValueError):
    pass


@dataclass(frozen=True)
class KernelConfig:
    family: str = "quartic"
    rho: float = 1.0

    def __post_init__(self):
        if self.family not in KERNEL_FAMILIES:
            raise ValueError(f"unknown kernel family {self.family!r}")
        if not self.rho > 0:
            raise ValueError("kernel radius must be positive")

    def weight(self, dist: np.ndarray) -> np.ndarray:
        """Kernel profile as a function of (standardized) distance."""
        r2 = (np.asarray(dist, dtype=float) / self.rho) ** 2
        base = np.clip(1.0 - r2, 0.0, None)
        if self.family == "quartic":
            return base * base
        return base


@dataclass(frozen=True, eq=False)
class IWParams:
    psi: np.ndarray
    nu: float

    def __post_init__(self):
        psi = np.array(self.psi, dtype=float)
        if psi.ndim != 2 or psi.shape[0] != psi.shape[1]:
            raise ValueError("psi must be square")
        d = psi.shape[0]
        if not self.nu > d - 1:
            raise ValueError(f"nu must exceed {d - 1}, got {self.nu}")
        psi.setflags(write=False)
        object.__setattr__(self, "psi", psi)
        object.__setattr__(self, "nu", float(self.nu))

    @property
    def dim(self) -> int:
        return self.psi.shape[0]

    @classmethod
    def from_estimate(cls, cov, n: float) -> "IWParams":
        """Prior worth ``n`` samples drawn from N(0, cov)."""
        return cls(n * np.asarray(cov, dtype=float), n)


def default_prior(dim: int = 4, nu0: float = 6.0, scale: float = 1.0) -> IWParams:
    return IWParams.from_estimate(scale * np.eye(dim), nu0)


def _cholesky(psi: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.cholesky(psi)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite("scale matrix is not positive definite") from exc


def expected_covariance(params: IWParams) -> np.ndarray:
    d = params.dim
    if params.nu <= d + 1:
        raise NuTooSmall(f"IW mean needs nu > {d + 1}, got {params.nu}")
    return params.psi / (params.nu - d - 1)


def mahalanobis_sq(e: np.ndarray, psi: np.ndarray) -> np.ndarray:
    """``e^T psi^-1 e`` for one vector or broadcast stacks (..., d)."""
    L = np.linalg.cholesky(psi) if psi.ndim > 2 else _cholesky(psi)
    z = np.linalg.solve(L, np.asarray(e, dtype=float)[..., None])[..., 0]
    return np.sum(z * z, axis=-1)


def student_t_log_pdf(e, params: IWParams) -> float:
    """Log posterior-predictive density of an error under IW(psi, nu)."""
    e = np.asarray(e, dtype=float)
    d = params.dim
    L = _cholesky(params.psi)
    z = np.linalg.solve(L, e)
    s = float(z @ z)
    logdet = 2.0 * float(np.sum(np.log(np.diag(L))))
    nu = params.nu
    return float(
        gammaln((nu + 1.0) / 2.0)
        - gammaln((nu - d + 1.0) / 2.0)
        - 0.5 * logdet
        - 0.5 * d * np.log(np.pi)
        - 0.5 * (nu + 1.0) * np.log1p(s)
    )


def student_t_log_pdf_many(e: np.ndarray, psi: np.ndarray, nu: np.ndarray) -> np.ndarray:
    """Vectorized :func:`student_t_log_pdf` over stacks (N, d), (N, d, d), (N,)."""
    d = e.shape[-1]
    L = np.linalg.cholesky(psi)
    z = np.linalg.solve(L, e[..., None])[..., 0]
    s = np.sum(z * z, axis=-1)
    logdet = 2.0 * np.sum(np.log(np.diagonal(L, axis1=-2, axis2=-1)), axis=-1)
    return (
        gammaln((nu + 1.0) / 2.0)
        - gammaln((nu - d + 1.0) / 2.0)
        - 0.5 * logdet
        - 0.5 * d * np.log(np.pi)
        - 0.5 * (nu + 1.0) * np.log1p(s)
    )


@dataclass
class CovarianceModel:
    """Spatial index of error samples plus a constant IW prior.

    Predictors are standardized with ``mean``/``std`` before distances are
    taken; builders fit these from the training predictors.
    """

    predictor_dim: int
    prior: IWParams = field(default_factory=default_prior)
    kernel: KernelConfig = field(default_factory=KernelConfig)
    mean: np.ndarray | None = None
    std: np.ndarray | None = None

    def __post_init__(self):
        m = self.predictor_dim
        self.mean = np.zeros(m) if self.mean is None else np.asarray(self.mean, dtype=float).reshape(m)
        self.std = np.ones(m) if self.std is None else np.asarray(self.std, dtype=float).reshape(m)
        if np.any(self.std <= 0):
            raise ValueError("standardization scales must be positive")
        self._phi = np.empty((0, m))
        self._err = np.empty((0, self.error_dim))
        self._tree = None
        self._scaled_cache = None

    @property
    def error_dim(self) -> int:
        return self.prior.dim

    def __len__(self) -> int:
        return self._phi.shape[0]

    @property
    def predictors(self) -> np.ndarray:
        return self._phi

    @property
    def errors(self) -> np.ndarray:
        return self._err

    def _check_phi(self, phi: np.ndarray) -> np.ndarray:
        phi = np.asarray(phi, dtype=float)
        if phi.shape[-1] != self.predictor_dim:
            raise DimensionMismatch(f"predictor has dimension {phi.shape[-1]}, model expects {self.predictor_dim}")
        return phi

    # -- building ---------------------------------------------------------

    def insert(self, phi, e) -> None:
        self.insert_many(np.atleast_2d(phi), np.atleast_2d(e))

    def insert_many(self, phis: np.ndarray, errors: np.ndarray) -> None:
        phis = self._check_phi(np.atleast_2d(phis))
        errors = np.atleast_2d(np.asarray(errors, dtype=float))
        if errors.shape != (phis.shape[0], self.error_dim):
            raise DimensionMismatch(f"errors must have shape ({phis.shape[0]}, {self.error_dim})")
        self._phi = np.vstack([self._phi, phis])
        self._err = np.vstack([self._err, errors])
        self._tree = None
        self._scaled_cache = None

    def set_errors(self, errors: np.ndarray) -> None:
        """Replace stored errors in place; predictors (and the index) are kept."""
        errors = np.asarray(errors, dtype=float)
        if errors.shape != self._err.shape:
            raise DimensionMismatch("error array shape does not match stored samples")
        self._err = errors.copy()

    def fit_standardization(self) -> None:
        """Per-dimension z-scoring from the stored predictors."""
        if len(self) == 0:
            return
        self.mean = self._phi.mean(axis=0)
        std = self._phi.std(axis=0)
        self.std = np.where(std > 0, std, 1.0)
        self._tree = None
        self._scaled_cache = None

    def _scaled(self, phi: np.ndarray) -> np.ndarray:
        return (phi - self.mean) / self.std

    def _scaled_phi(self) -> np.ndarray:
        if self._scaled_cache is None:
            self._scaled_cache = self._scaled(self._phi)
        return self._scaled_cache

    def _index(self) -> cKDTree:
        if self._tree is None:
            self._tree = cKDTree(self._scaled_phi())
        return self._tree

    # -- neighbor search --------------------------------------------------

    def _pairs_tree(self, q: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        # pad the radius so floating-point disagreement at the boundary
        # cannot drop a pair the shared weight code would keep
        pairs = cKDTree(q).sparse_distance_matrix(
            self._index(), self.kernel.rho * (1.0 + 1e-9), output_type="ndarray"
        )
        return pairs["i"].astype(np.int64), pairs["j"].astype(np.int64)

    def _pairs_scan(self, q: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        rows = np.repeat(np.arange(q.shape[0]), len(self))
        cols = np.tile(np.arange(len(self)), q.shape[0])
        return rows, cols

    def _weights(self, q: np.ndarray, rows: np.ndarray, cols: np.ndarray, exclude: np.ndarray | None):
        diff = q[rows] - self._scaled_phi()[cols]
        # explicit column-wise sum: elementwise ops give the same bits for a
        # pair no matter which other pairs share the array
        d2 = np.zeros(diff.shape[0])
        for k in range(diff.shape[1]):
            d2 += diff[:, k] * diff[:, k]
        w = self.kernel.weight(np.sqrt(d2))
        keep = w > 0
        if exclude is not None:
            keep &= cols != exclude[rows]
        return rows[keep], cols[keep], w[keep]

    def neighbor_weights(self, phis, exclude=None, brute_force: bool = False) -> sp.csr_matrix:
        """Sparse (queries x samples) matrix of positive kernel weights.

        ``exclude`` optionally gives, per query, one sample index to leave out.
        """
        phis = self._check_phi(np.atleast_2d(phis))
        n_q = phis.shape[0]
        if len(self) == 0:
            return sp.csr_matrix((n_q, 0))
        q = self._scaled(phis)
        excl = None if exclude is None else np.asarray(exclude, dtype=np.int64).reshape(n_q)
        rows, cols = self._pairs_scan(q) if brute_force else self._pairs_tree(q)
        rows, cols, w = self._weights(q, rows, cols, excl)
        out = sp.csr_matrix((w, (rows, cols)), shape=(n_q, len(self)))
        # canonical column order so the accumulation order is route-independent
        out.sort_indices()
        return out

    def query_neighbors(self, phi, brute_force: bool = False) -> list[tuple[np.ndarray, np.ndarray, float]]:
        """Samples with positive weight at ``phi`` as ``(predictor, error, weight)``."""
        w = self.neighbor_weights(np.atleast_2d(phi), brute_force=brute_force)
        return [(self._phi[j], self._err[j], float(v)) for j, v in zip(w.indices, w.data)]

    # -- inference --------------------------------------------------------

    def infer_many(self, phis, exclude=None, brute_force: bool = False) -> tuple[np.ndarray, np.ndarray]:
        """Posterior ``(psi, nu)`` stacks of shape (N, d, d) and (N,)."""
        phis = self._check_phi(np.atleast_2d(phis))
        d = self.error_dim
        n_q = phis.shape[0]
        psi = np.empty((n_q, d, d))
        nu = np.empty(n_q)
        outer = (self._err[:, :, None] * self._err[:, None, :]).reshape(-1, d * d)
        for start in range(0, n_q, _QUERY_CHUNK):
            stop = min(start + _QUERY_CHUNK, n_q)
            ex = None if exclude is None else np.asarray(exclude)[start:stop]
            w = self.neighbor_weights(phis[start:stop], exclude=ex, brute_force=brute_force)
            psi[start:stop] = self.prior.psi + np.asarray(w @ outer).reshape(-1, d, d)
            nu[start:stop] = self.prior.nu + np.asarray(w.sum(axis=1)).ravel()
        return psi, nu

    def infer(self, phi, exclude: int | None = None, brute_force: bool = False) -> IWParams:
        ex = None if exclude is None else [exclude]
        psi, nu = self.infer_many(np.atleast_2d(phi), exclude=ex, brute_force=brute_force)
        _cholesky(psi[0])
        return IWParams(psi[0], nu[0])


def kernel_eval(kernel: KernelConfig, a, b) -> float:
    """Kernel weight between two predictor vectors (already standardized)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise DimensionMismatch(f"predictor shapes differ: {a.shape} vs {b.shape}")
    return float(kernel.weight(np.linalg.norm(a - b)))


def infer_noise_model(model: CovarianceModel, phi) -> IWParams:
    return model.infer(phi)


def insert_sample(model: CovarianceModel, phi, e) -> None:
    model.insert(phi, e)


def query_neighbors(model: CovarianceModel, phi):
    return model.query_neighbors(phi)
