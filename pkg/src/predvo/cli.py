"""Command-line entry point.

Every output file gets a ``<name>.manifest.json`` sibling recording the command,
configuration, seeds and timing. Wall-clock data lives only in manifests, so
CSV outputs from identical invocations are byte-identical.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import tempfile
import time
from contextlib import contextmanager
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .dataset import DatasetHeader, load_model, read_dataset, save_model, write_dataset
from .estimator import EstimationError, FixedCovariance, PredictiveRobust, StaticStudentT, solve_transform
from .experiments import ConvergenceConfig, covariance_convergence, trajectory_metrics
from .lie import TransformSE3
from .metrics import integrate_estimates, read_trajectory_csv, write_trajectory_csv
from .noise_model import IWParams, KernelConfig, default_prior
from .simulator import SimConfig, simulate
from .training import EMConfig, build_from_ground_truth, train_em

log = logging.getLogger("predvo")

METRIC_COLUMNS = ["trial", "scheme", "trans_armse", "rot_armse", "loop_closure", "path_length"]


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


@contextmanager
def _atomic(path):
    """Write to a temporary sibling, then rename into place on success."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    os.close(fd)
    try:
        yield tmp
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def _manifest(path, args, command: str, started: float, config=None, seeds=None, inputs=()):
    record = {
        "command": command,
        "argv": sys.argv[1:],
        "args": {k: v for k, v in vars(args).items() if k != "func"},
        "config": config,
        "seeds": seeds or [],
        "inputs": [str(p) for p in inputs],
        "output": str(path),
        "tool_version": __version__,
        "wall_clock_seconds": time.perf_counter() - started,
        "finished_at": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
    }
    with _atomic(f"{path}.manifest.json") as tmp:
        Path(tmp).write_text(json.dumps(record, indent=2, default=str) + "\n")


def _matrix_arg(text: str | None, name: str) -> np.ndarray | None:
    """A scalar ``s`` means ``s * I``; otherwise 4 diagonal or 16 row-major values."""
    if text is None:
        return None
    try:
        values = [float(v) for v in text.split(",")]
    except ValueError:
        raise UsageError(f"{name}: expected comma-separated numbers, got {text!r}") from None
    if len(values) == 1:
        return values[0] * np.eye(4)
    if len(values) == 4:
        return np.diag(values)
    if len(values) == 16:
        return np.array(values).reshape(4, 4)
    raise UsageError(f"{name}: expected 1, 4 or 16 numbers, got {len(values)}")


def _intrinsics(header: DatasetHeader, path):
    if header.intrinsics is None:
        raise ValueError(f"{path}: dataset header carries no camera intrinsics")
    return header.intrinsics


# -- subcommands -------------------------------------------------------------


def cmd_simulate(args, started):
    config = SimConfig.from_json(args.config) if args.config else SimConfig()
    run = simulate(config, args.seed)
    header = DatasetHeader(4, config.camera.intrinsics, extra={"seed": args.seed})
    with _atomic(args.out) as tmp:
        write_dataset(tmp, header, run.frames)
    _manifest(args.out, args, "simulate", started, config.to_dict(), [args.seed], [args.config] if args.config else [])
    if args.gt_traj_out:
        with _atomic(args.gt_traj_out) as tmp:
            write_trajectory_csv(tmp, integrate_estimates([f.ground_truth for f in run.frames]))
        _manifest(args.gt_traj_out, args, "simulate", started, config.to_dict(), [args.seed])


def _prior(args) -> IWParams:
    nu = args.prior_nu
    psi = _matrix_arg(args.prior_psi, "--prior-psi")
    if psi is None:
        return default_prior(nu0=nu)
    return IWParams(psi, nu)


def cmd_train(args, started):
    if args.trace_out and args.mode != "em":
        raise UsageError("--trace-out only applies to --mode em")
    header, frames = read_dataset(args.data)
    K = _intrinsics(header, args.data)
    prior, kernel = _prior(args), KernelConfig(rho=args.rho)
    if args.mode == "gt":
        model = build_from_ground_truth(frames, K, prior, kernel)
        trace = None
    else:
        config = EMConfig(max_em_iters=args.max_iters, m_step_mode=args.m_step)
        model, _, trace = train_em(frames, K, prior, kernel, config)
    config = {"mode": args.mode, "rho": args.rho, "prior": {"psi": prior.psi.tolist(), "nu": prior.nu}}
    with _atomic(args.model_out) as tmp:
        save_model(tmp, model)
    _manifest(args.model_out, args, "train", started, config, inputs=[args.data])
    if args.trace_out:
        with _atomic(args.trace_out) as tmp:
            trace.write_csv(tmp)
        _manifest(args.trace_out, args, "train", started, config, inputs=[args.data])


def _weighting(args, predictor_dim: int):
    R = _matrix_arg(args.R, "--R")
    R = np.eye(4) if R is None else R
    if args.weighting == "fixed":
        return FixedCovariance(R)
    if args.weighting == "student-t":
        return StaticStudentT(R, args.dof)
    if not args.model:
        raise UsageError("--weighting probe requires --model")
    return PredictiveRobust(load_model(args.model, expected_dim=predictor_dim))


def cmd_odometry(args, started):
    header, frames = read_dataset(args.data)
    K = _intrinsics(header, args.data)
    weighting = _weighting(args, header.predictor_dim)
    transforms, rows = [], []
    prev = TransformSE3.identity()
    for f in frames:
        try:
            res = solve_transform(f, weighting, K)
            prev = res.transform
            rows.append([f.index, res.scheme, res.iterations, _fmt(res.objective), res.n_landmarks, res.n_dropped, int(res.converged), ""])
        except EstimationError as exc:
            log.warning("frame %d: %s", f.index, exc)
            rows.append([f.index, args.weighting, 0, "", 0, len(f), 0, type(exc).__name__])
        transforms.append(prev)
    if not transforms:
        raise ValueError(f"{args.data}: no frames")
    inputs = [args.data] + ([args.model] if args.model else [])
    config = {"weighting": args.weighting, "R": args.R, "dof": args.dof}
    with _atomic(args.traj_out) as tmp:
        write_trajectory_csv(tmp, integrate_estimates(transforms))
    _manifest(args.traj_out, args, "odometry", started, config, inputs=inputs)
    diag = Path(args.traj_out).with_suffix(".diagnostics.csv")
    with _atomic(diag) as tmp, open(tmp, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "scheme", "iterations", "objective", "n_landmarks", "n_dropped", "converged", "failure"])
        w.writerows(rows)
    _manifest(diag, args, "odometry", started, config, inputs=inputs)


def cmd_eval(args, started):
    gts = args.gt_traj
    if len(gts) not in (1, len(args.traj)):
        raise UsageError("--gt-traj takes one path or one per --traj")
    if len(gts) == 1:
        gts = gts * len(args.traj)
    results = []
    for i, (traj_path, gt_path) in enumerate(zip(args.traj, gts)):
        est, gt = read_trajectory_csv(traj_path), read_trajectory_csv(gt_path)
        scheme = args.scheme or Path(traj_path).stem
        results.append(trajectory_metrics(args.trial + i, scheme, est, gt))
    with _atomic(args.out) as tmp, open(tmp, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRIC_COLUMNS)
        for r in results:
            w.writerow([r.trial, r.scheme, _fmt(r.trans_armse), _fmt(r.rot_armse), _fmt(r.loop_closure), _fmt(r.path_length)])
        if len(results) > 1:
            mean = [np.mean([getattr(r, c) for r in results]) for c in METRIC_COLUMNS[2:]]
            w.writerow(["mean", args.scheme or "all"] + [_fmt(v) for v in mean])
    _manifest(args.out, args, "eval", started, inputs=list(args.traj) + list(gts))


def cmd_mc_verify(args, started):
    sim = SimConfig.from_json(args.config) if args.config else SimConfig()
    try:
        sizes = tuple(int(s) for s in args.sizes.split(","))
    except ValueError:
        raise UsageError(f"--sizes: expected comma-separated integers, got {args.sizes!r}") from None
    if not sizes or min(sizes) < 1:
        raise UsageError("--sizes must be positive")
    config = ConvergenceConfig(sizes=sizes, n_queries=args.queries, mc_samples=args.mc_samples, rho=args.rho, sim=sim)
    errors = covariance_convergence(config, args.seed)
    with _atomic(args.out) as tmp, open(tmp, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["n_samples", "mean_frobenius_error"])
        for n in sizes:
            w.writerow([n, _fmt(errors[n])])
    snapshot = asdict(config)
    snapshot["sim"] = sim.to_dict()
    _manifest(args.out, args, "mc-verify", started, snapshot, [args.seed], [args.config] if args.config else [])


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="predvo", description="Stereo odometry with a learned predictive noise model.")
    p.add_argument("--verbose", "-v", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", help="generate a synthetic dataset")
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--gt-traj-out")
    s.set_defaults(func=cmd_simulate)

    t = sub.add_parser("train", help="build a noise model")
    t.add_argument("--mode", choices=("gt", "em"), required=True)
    t.add_argument("--data", required=True)
    t.add_argument("--model-out", required=True)
    t.add_argument("--prior-nu", type=float, default=6.0)
    t.add_argument("--prior-psi", help="scalar, 4 diagonal or 16 row-major values; default nu * I")
    t.add_argument("--rho", type=float, default=1.0)
    t.add_argument("--m-step", choices=("gaussian", "robust"), default="gaussian")
    t.add_argument("--max-iters", type=int, default=20)
    t.add_argument("--trace-out")
    t.set_defaults(func=cmd_train)

    o = sub.add_parser("odometry", help="estimate frame-to-frame motion and integrate it")
    o.add_argument("--data", required=True)
    o.add_argument("--weighting", choices=("fixed", "student-t", "probe"), required=True)
    o.add_argument("--model")
    o.add_argument("--R", help="scalar, 4 diagonal or 16 row-major values; default I")
    o.add_argument("--dof", type=float, default=5.0)
    o.add_argument("--traj-out", required=True)
    o.set_defaults(func=cmd_odometry)

    e = sub.add_parser("eval", help="trajectory metrics against ground truth")
    e.add_argument("--traj", nargs="+", required=True)
    e.add_argument("--gt-traj", nargs="+", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--scheme")
    e.add_argument("--trial", type=int, default=0)
    e.set_defaults(func=cmd_eval)

    m = sub.add_parser("mc-verify", help="covariance error against Monte Carlo truth vs training size")
    m.add_argument("--config")
    m.add_argument("--sizes", default="100,1000,10000")
    m.add_argument("--out", required=True)
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--queries", type=int, default=50)
    m.add_argument("--mc-samples", type=int, default=10_000)
    m.add_argument("--rho", type=float, default=1.0)
    m.set_defaults(func=cmd_mc_verify)
    return p


def _fail(kind: str, message: str, code: int) -> int:
    sys.stderr.write(json.dumps({"error": kind, "message": message}) + "\n")
    return code


def main(argv=None) -> int:
    started = time.perf_counter()
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        return _fail("usage", str(exc), 2)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args, started)
    except UsageError as exc:
        return _fail("usage", str(exc), 2)
    except Exception as exc:  # noqa: BLE001 - every failure becomes a JSON record
        return _fail(type(exc).__name__, str(exc), 1)
    return 0


if __name__ == "__main__":
    sys.exit(main())
