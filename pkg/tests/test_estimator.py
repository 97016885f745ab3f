import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from predvo.camera import project_many
from predvo.dataset import FramePair
from predvo.estimator import (
    FixedCovariance,
    FrameSolver,
    PerLandmark,
    PredictiveRobust,
    SolverConfig,
    StaticStudentT,
    TooFewLandmarks,
    objective_value,
    robust_weight,
    solve_transform,
)
from predvo.lie import TransformSE3, exp_se3, log_se3
from predvo.noise_model import CovarianceModel, IWParams, KernelConfig
from predvo.simulator import CameraConfig, NoiseConfig, SimConfig, TrajectoryConfig, observe_frame_pair, simulate
from predvo.training import build_from_ground_truth

CAM = CameraConfig()
K = CAM.intrinsics


def world_frame(seed, noise=None, n_points=300):
    rng = np.random.default_rng(seed)
    world = np.column_stack([rng.uniform(-8, 8, n_points), rng.uniform(-3, 3, n_points), rng.uniform(3, 25, n_points)])
    motion = exp_se3(np.concatenate([rng.normal(scale=0.2, size=3), rng.normal(scale=0.03, size=3)]))
    return observe_frame_pair(world, TransformSE3.identity(), motion.inverse(), CAM, noise or NoiseConfig.noiseless(), seed)


def pose_error(T, gt):
    d = log_se3(T @ gt.inverse())
    return np.linalg.norm(T.translation - gt.translation), np.linalg.norm(d[3:])


@pytest.fixture(scope="module")
def gk_model():
    run = simulate(SimConfig(trajectory=TrajectoryConfig(duration=5)), 77)
    return build_from_ground_truth(run.frames, K, kernel=KernelConfig(rho=0.2))


def schemes(model):
    return [FixedCovariance(), StaticStudentT(), PredictiveRobust(model), FixedCovariance(np.diag([1.0, 4.0, 1.0, 4.0]))]


def test_noiseless_frames_are_recovered_exactly(gk_model):
    for seed in range(5):
        f = world_frame(seed)
        for w in schemes(gk_model):
            dt, dr = pose_error(solve_transform(f, w, K).transform, f.ground_truth)
            assert dt < 1e-8 and dr < 1e-8, (seed, w.name, dt, dr)


def test_two_matches_is_too_few():
    f = world_frame(0)
    with pytest.raises(TooFewLandmarks):
        solve_transform(f.subset(np.arange(len(f)) < 2), FixedCovariance(), K)


def single_landmark_frame(offset):
    y = project_many(np.array([[0.5, -0.2, 10.0, 1.0]]), K)
    return FramePair(0, y, y + offset, y.copy())


def test_objective_examples():
    I = TransformSE3.identity()
    prior_only = CovarianceModel(4, IWParams(np.eye(4), 4.0))
    f = single_landmark_frame([1.0, 0, 0, 0])
    assert objective_value(f, PredictiveRobust(prior_only), K, I) == pytest.approx(5 * math.log(2), rel=1e-12)
    f = single_landmark_frame([1.0, 1.0, 0, 0])
    assert objective_value(f, FixedCovariance(), K, I) == pytest.approx(2.0, rel=1e-12)
    f = single_landmark_frame([0.0, 0, 0, 0])
    for w in (FixedCovariance(), StaticStudentT(), PredictiveRobust(prior_only)):
        assert objective_value(f, w, K, I) == 0.0


def test_student_t_objective_form():
    f = single_landmark_frame([2.0, 0, 0, 0])
    val = objective_value(f, StaticStudentT(np.eye(4), 5.0), K, TransformSE3.identity())
    assert val == pytest.approx(9 * math.log1p(4 / 5), rel=1e-12)


def test_robust_weight_examples():
    p = IWParams(np.diag([4.0, 1, 1, 1]), 6.0)
    assert robust_weight(np.zeros(4), p) == 7.0
    assert robust_weight([2.0, 0, 0, 0], p) == pytest.approx(3.5)
    big = [robust_weight([r, 0, 0, 0], p) for r in (1e2, 1e4, 1e6)]
    assert big[0] > big[1] > big[2] and big[2] < 1e-10


@given(st.floats(0, 1e6))
def test_robust_weight_range(r):
    p = IWParams(np.eye(4), 5.0)
    w = robust_weight([r, 0, 0, 0], p)
    assert 0 < w <= p.nu + 1 or r > 1e150


@pytest.mark.parametrize("nu", [4.0, 10.0, 100.0])
def test_quadratic_and_logarithmic_regimes(nu):
    # q is the squared Mahalanobis distance under covariance psi / (nu + 1),
    # the quadratic the robust term approximates for small errors
    psi = np.diag([2.0, 1.0, 3.0, 1.0])
    model = CovarianceModel(4, IWParams(psi, nu))

    def term(q):
        r = math.sqrt(q * psi[0, 0] / (nu + 1))
        return objective_value(single_landmark_frame([r, 0, 0, 0]), PredictiveRobust(model), K, TransformSE3.identity())

    q = 0.01 * (nu + 1)
    assert term(q) == pytest.approx(q, rel=0.05)
    q = 100 * (nu + 1)
    assert term(q) < 0.1 * q
    assert term(q) == pytest.approx((nu + 1) * math.log(q / (nu + 1)), rel=0.05)


def test_fixed_covariance_descent():
    f = world_frame(11, NoiseConfig())
    prev = np.inf
    for k in range(1, 8):
        cost = solve_transform(f, FixedCovariance(), K, SolverConfig(rel_tol=1e-15, max_iters=k)).objective
        assert cost <= prev
        prev = cost


def test_irls_gradient_matches_robust_gradient(gk_model):
    f = world_frame(5, NoiseConfig())
    solver = FrameSolver(f, PredictiveRobust(gk_model), K)
    T = exp_se3([0.01, -0.02, 0.05, 0.002, -0.001, 0.003]) @ f.ground_truth
    e, J, _ = solver.errors(T, with_jacobian=True)
    w = solver.terms.weights(e)
    info = solver.terms.info

    def robust(x):
        return solver.objective(exp_se3(x) @ T)

    def weighted_quadratic(x):
        ee, _, _ = solver.errors(exp_se3(x) @ T)
        return float(np.sum(w * np.einsum("ni,nij,nj->n", ee, info, ee)))

    def gradient(fn, h=1e-5):
        # fourth-order central differences
        g = np.zeros(6)
        for k in range(6):
            d = np.zeros(6)
            d[k] = h
            g[k] = (-fn(2 * d) + 8 * fn(d) - 8 * fn(-d) + fn(-2 * d)) / (12 * h)
        return g

    g_robust = gradient(robust)
    g_irls = gradient(weighted_quadratic)
    analytic = -2 * np.einsum("n,nki,nkl,nl->i", w, J, info, e)
    assert np.linalg.norm(g_robust - g_irls) <= 1e-8 * np.linalg.norm(g_robust)
    assert np.linalg.norm(analytic - g_robust) <= 1e-6 * np.linalg.norm(g_robust)


def test_large_nu_reduces_to_least_squares():
    f = world_frame(9, NoiseConfig(outlier_frac=0.0))
    R = np.diag([1.0, 2.0, 1.0, 2.0])
    nu = 1e12
    model = CovarianceModel(4, IWParams(nu * R, nu))
    tight = SolverConfig(rel_tol=1e-15, max_iters=100)
    a = solve_transform(f, PredictiveRobust(model), K, tight).transform
    b = solve_transform(f, FixedCovariance(R), K, tight).transform
    assert np.linalg.norm(log_se3(a @ b.inverse())) < 1e-6


def test_per_landmark_gaussian_matches_fixed():
    f = world_frame(4, NoiseConfig())
    R = np.diag([1.5, 1.0, 1.5, 1.0])
    n = len(f)
    nu = np.full(n, 9.0)
    psi = np.broadcast_to(R * 9.0, (n, 4, 4)).copy()
    a = solve_transform(f, PerLandmark(psi, nu, robust=False), K).transform
    b = solve_transform(f, FixedCovariance(R), K).transform
    assert a.allclose(b, atol=1e-12)


def test_predictive_robust_resists_gross_outliers(gk_model):
    ratios = []
    for seed in range(10):
        f = world_frame(100 + seed, NoiseConfig(0.0, 0.0, outlier_frac=0.2, outlier_range=50.0))
        e_fixed = pose_error(solve_transform(f, FixedCovariance(), K).transform, f.ground_truth)[0]
        e_gk = pose_error(solve_transform(f, PredictiveRobust(gk_model), K).transform, f.ground_truth)[0]
        ratios.append(e_gk / e_fixed)
    assert np.median(ratios) < 0.2


def test_diagnostics():
    f = world_frame(2, NoiseConfig())
    res = solve_transform(f, StaticStudentT(), K)
    assert res.converged and res.iterations >= 1
    assert res.weights.shape == (res.n_landmarks,)
    assert res.n_landmarks + res.n_dropped == len(f)
    assert res.scheme == "student-t"
    capped = solve_transform(f, FixedCovariance(), K, SolverConfig(rel_tol=1e-15, max_iters=1))
    assert capped.iterations == 1 and not capped.converged


def test_scheme_validation():
    with pytest.raises(ValueError):
        StaticStudentT(dof=0.0)
    with pytest.raises(ValueError):
        SolverConfig(rel_tol=0.0)
    with pytest.raises(TypeError):
        solve_transform(world_frame(0), object(), K)
