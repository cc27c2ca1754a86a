import dataclasses
import os

import numpy as np
import pytest

from monohydra.config import load_run_config
from monohydra.harness import cmd_run
from monohydra.pipeline import FRAME_COLUMNS, run_pipeline
from monohydra.tools.sim_world import intrinsics_from, load_scene_spec, simulate_sequence
from monohydra.utils import io_tools

pytestmark = pytest.mark.slow


def _inputs(cfg):
    spec = load_scene_spec(cfg.scene)
    return spec, simulate_sequence(spec, cfg.sim).packets, intrinsics_from(cfg.sim)


def test_noise_free_run_recovers_trajectory_and_graph(config_path, repo_root, tmp_path):
    cfg = load_run_config(config_path("noise_free.json"), [f"scene={os.path.join(repo_root, 'scenes', 'two_rooms.json')}"])
    result = cmd_run(cfg, str(tmp_path / "noise_free"))
    report = result.report
    assert report.label == "baseline"
    assert report.n_frames == 200
    assert report.metrics["ate"] < 1e-2
    assert report.metrics["object_room_accuracy"] == pytest.approx(1.0)
    assert report.metrics["s_sg"] > 0.9
    assert report.metrics["max_oracle_error"] < 1e-8
    assert report.counters["identity_errors"] == 0
    result.graph.validate()


def test_run_writes_artifacts(short_run_config, tmp_path):
    out = tmp_path / "run"
    cmd_run(short_run_config(), str(out))
    for name in (
        "trajectory.csv",
        "trajectory_optimized.csv",
        "gt_trajectory.csv",
        "map.ply",
        "scene_graph.json",
        "reference_graph.json",
        "loop_candidates.json",
        "frames.csv",
        "report.json",
        "timing.json",
    ):
        assert (out / name).is_file(), name
    assert len(io_tools.read_trajectory_csv(str(out / "trajectory.csv"))) == 40
    header = (out / "frames.csv").read_text().splitlines()[0].split(",")
    assert header == FRAME_COLUMNS


def test_runs_are_deterministic(short_run_config, tmp_path):
    cfg = short_run_config("flags.depth_factors=true", "flags.temporal_K=1")
    cmd_run(cfg, str(tmp_path / "a"))
    cmd_run(cfg, str(tmp_path / "b"))
    for name in ("report.json", "trajectory.csv", "map.ply", "scene_graph.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name


def test_mask_is_a_no_op_without_dynamic_agents(short_run_config, config_path):
    # two_rooms 没有动态体, 无噪声时也没有翻转成 person 的标签
    plain = short_run_config(config=config_path("noise_free.json"))
    masked = short_run_config("flags.semantic_mask=true", config=config_path("noise_free.json"))
    spec, packets, K = _inputs(plain)
    a = run_pipeline(packets, spec, plain, K)
    b = run_pipeline(packets, spec, masked, K)
    assert b.report.counters["masked_keypoints"] == 0
    for ra, rb in zip(a.odometry, b.odometry):
        assert np.array_equal(ra.pose.matrix, rb.pose.matrix)


def test_mask_equals_removing_dynamic_landmarks(config_path, repo_root):
    # 无标签翻转时, 掩码剔除的关键点恰好是动态体路标的关键点
    scene = os.path.join(repo_root, "scenes", "dynamic_office.json")
    overrides = [f"scene={scene}", "sim.duration=4.0", "sim.noise.label_flip_prob=0.0"]
    plain = load_run_config(config_path("dynamic.json"), overrides)
    masked = load_run_config(config_path("dynamic.json"), overrides + ["flags.semantic_mask=true"])
    spec = load_scene_spec(plain.scene)
    seq = simulate_sequence(spec, plain.sim)
    dynamic = seq.landmarks.owner >= 0
    stripped = [
        dataclasses.replace(p, keypoints=p.keypoints.subset(~dynamic[p.keypoints.ids])) for p in seq.packets
    ]
    n_dynamic = sum(int(dynamic[p.keypoints.ids].sum()) for p in seq.packets)
    assert n_dynamic > 0

    a = run_pipeline(stripped, spec, plain, seq.intrinsics)
    b = run_pipeline(seq.packets, spec, masked, seq.intrinsics)
    assert b.report.counters["masked_keypoints"] == n_dynamic
    for ra, rb in zip(a.odometry, b.odometry):
        assert np.array_equal(ra.pose.matrix, rb.pose.matrix)


def test_stage_timings_cover_the_run(short_run_config, tmp_path):
    out = tmp_path / "timed"
    cmd_run(short_run_config(), str(out))
    timing = io_tools.read_json(str(out / "timing.json"))
    assert timing["stage_sum_ms"] <= timing["total_ms"]
    assert timing["stage_sum_ms"] >= 0.95 * timing["total_ms"]
    assert {"vio_propagate", "fusion", "frontend", "vio_update", "mapping"} <= set(timing["breakdown_ms"])


def test_empty_packet_list_is_rejected(short_run_config):
    cfg = short_run_config()
    spec, _, K = _inputs(cfg)
    with pytest.raises(ValueError):
        run_pipeline([], spec, cfg, K)
