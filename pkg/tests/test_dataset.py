import json

import numpy as np
import pytest

from predvo.camera import StereoIntrinsics
from predvo.dataset import (
    DatasetHeader,
    FramePair,
    LandmarkMatch,
    SchemaError,
    load_model,
    read_dataset,
    save_model,
    write_dataset,
)
from predvo.lie import exp_se3
from predvo.noise_model import CovarianceModel, KernelConfig, default_prior
from predvo.simulator import SimConfig, TrajectoryConfig, simulate

K = StereoIntrinsics(500.0, 500.0, 320.0, 240.0, 0.25)


def small_run(seed=3, duration=1.0):
    return simulate(SimConfig(trajectory=TrajectoryConfig(duration=duration)), seed)


def assert_frames_equal(a, b):
    assert a.index == b.index
    np.testing.assert_array_equal(a.y, b.y)
    np.testing.assert_array_equal(a.y_prime, b.y_prime)
    np.testing.assert_array_equal(a.phi, b.phi)
    if a.ground_truth is None:
        assert b.ground_truth is None
    else:
        np.testing.assert_array_equal(a.ground_truth.matrix(), b.ground_truth.matrix())


def test_simulator_output_round_trips_exactly(tmp_path):
    run = small_run()
    path = tmp_path / "d.jsonl"
    write_dataset(path, DatasetHeader(4, K), run.frames)
    header, frames = read_dataset(path)
    assert header.predictor_dim == 4 and header.intrinsics == K
    assert len(frames) == len(run.frames)
    for a, b in zip(run.frames, frames):
        assert_frames_equal(a, b)


def test_empty_frame_list_writes_header_only(tmp_path):
    path = tmp_path / "e.jsonl"
    write_dataset(path, DatasetHeader(4, K), [])
    assert len(path.read_text().splitlines()) == 1
    header, frames = read_dataset(path)
    assert frames == [] and header.predictor_dim == 4


def test_frames_written_in_index_order(tmp_path):
    frames = small_run().frames[:4]
    path = tmp_path / "o.jsonl"
    write_dataset(path, DatasetHeader(4, K), frames[::-1])
    _, back = read_dataset(path)
    assert [f.index for f in back] == [0, 1, 2, 3]


def test_missing_ground_truth_is_absent(tmp_path):
    rng = np.random.default_rng(0)
    f = FramePair(0, rng.normal(size=(3, 4)), rng.normal(size=(3, 4)), rng.normal(size=(3, 4)))
    path = tmp_path / "n.jsonl"
    write_dataset(path, DatasetHeader(4, K), [f])
    _, (back,) = read_dataset(path)
    assert back.ground_truth is None
    # a record with the key omitted entirely parses the same way
    lines = path.read_text().splitlines()
    rec = json.loads(lines[1])
    del rec["T_gt"]
    path.write_text(lines[0] + "\n" + json.dumps(rec) + "\n")
    _, (back,) = read_dataset(path)
    assert back.ground_truth is None


def test_short_predictor_names_the_line(tmp_path):
    frames = small_run().frames[:3]
    path = tmp_path / "bad.jsonl"
    write_dataset(path, DatasetHeader(4, K), frames)
    lines = path.read_text().splitlines()
    rec = json.loads(lines[2])
    rec["landmarks"][0]["phi"] = rec["landmarks"][0]["phi"][:3]
    lines[2] = json.dumps(rec)
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(SchemaError, match="line 3"):
        read_dataset(path)


def test_non_increasing_index_is_rejected(tmp_path):
    frames = small_run().frames[:2]
    path = tmp_path / "dup.jsonl"
    write_dataset(path, DatasetHeader(4, K), frames)
    lines = path.read_text().splitlines()
    path.write_text("\n".join([lines[0], lines[2], lines[1]]) + "\n")
    with pytest.raises(SchemaError, match="line 3"):
        read_dataset(path)


def test_unsupported_schema_version(tmp_path):
    path = tmp_path / "v.jsonl"
    path.write_text('{"schema_version": 99, "predictor_dim": 4}\n')
    with pytest.raises(SchemaError, match="schema_version"):
        read_dataset(path)


def test_from_matches_and_back():
    rng = np.random.default_rng(1)
    matches = [LandmarkMatch(rng.normal(size=4), rng.normal(size=4), rng.normal(size=2)) for _ in range(5)]
    f = FramePair.from_matches(7, matches, exp_se3(rng.normal(size=6)))
    assert len(f) == 5 and f.predictor_dim == 2
    for m, back in zip(matches, f.matches):
        np.testing.assert_array_equal(m.y, back.y)
        np.testing.assert_array_equal(m.phi, back.phi)


# -- model files -------------------------------------------------------------


def trained_model(n=500, seed=0):
    rng = np.random.default_rng(seed)
    m = CovarianceModel(4, default_prior(nu0=7.5, scale=1.3), KernelConfig(rho=0.7))
    m.insert_many(rng.normal(size=(n, 4)) * [100, 50, 100, 50] + [320, 240, 300, 240], rng.standard_t(4, size=(n, 4)))
    m.fit_standardization()
    return m, rng


def test_model_round_trip_is_bit_identical(tmp_path):
    model, rng = trained_model()
    path = tmp_path / "m.json"
    save_model(path, model)
    back = load_model(path)
    queries = rng.normal(size=(100, 4)) * [100, 50, 100, 50] + [320, 240, 300, 240]
    for a, b in zip(model.infer_many(queries), back.infer_many(queries)):
        np.testing.assert_array_equal(a, b)
    assert back.kernel == model.kernel
    np.testing.assert_array_equal(back.mean, model.mean)


def test_model_file_layout(tmp_path):
    model, _ = trained_model(3)
    path = tmp_path / "m.json"
    save_model(path, model)
    raw = json.loads(path.read_text())
    assert set(raw) >= {"kernel", "prior", "standardization", "samples"}
    assert len(raw["prior"]["psi"]) == 16
    assert set(raw["samples"][0]) == {"phi", "e"}


def test_empty_model_round_trips(tmp_path):
    model = CovarianceModel(3)
    path = tmp_path / "m.json"
    save_model(path, model)
    back = load_model(path)
    assert len(back) == 0 and back.predictor_dim == 3
    post = back.infer([0.0, 0.0, 0.0])
    np.testing.assert_array_equal(post.psi, model.prior.psi)


def test_model_dimension_mismatch(tmp_path):
    model, _ = trained_model(10)
    path = tmp_path / "m.json"
    save_model(path, model)
    with pytest.raises(SchemaError, match="dimension"):
        load_model(path, expected_dim=5)


def test_corrupted_model_samples(tmp_path):
    model, _ = trained_model(10)
    path = tmp_path / "m.json"
    save_model(path, model)
    raw = json.loads(path.read_text())
    raw["samples"][4]["e"] = [1.0, 2.0]
    path.write_text(json.dumps(raw))
    with pytest.raises(SchemaError):
        load_model(path)
    raw["version"] = 2
    path.write_text(json.dumps(raw))
    with pytest.raises(SchemaError, match="version"):
        load_model(path)
