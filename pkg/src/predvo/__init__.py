"""Stereo visual odometry with a learned, predictor-dependent noise model."""

__version__ = "0.1.0"

from .camera import StereoIntrinsics
from .dataset import FramePair, load_model, read_dataset, save_model, write_dataset
from .estimator import FixedCovariance, PredictiveRobust, StaticStudentT, solve_transform
from .lie import TransformSE3, exp_se3, log_se3
from .noise_model import CovarianceModel, IWParams, KernelConfig, default_prior
from .training import EMConfig, build_from_ground_truth, train_em

__all__ = [
    "CovarianceModel",
    "EMConfig",
    "FixedCovariance",
    "FramePair",
    "IWParams",
    "KernelConfig",
    "PredictiveRobust",
    "StaticStudentT",
    "StereoIntrinsics",
    "TransformSE3",
    "build_from_ground_truth",
    "default_prior",
    "exp_se3",
    "load_model",
    "log_se3",
    "read_dataset",
    "save_model",
    "solve_transform",
    "train_em",
    "write_dataset",
]
