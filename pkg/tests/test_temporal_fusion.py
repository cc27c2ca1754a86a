import os

import numpy as np
import pytest

from monohydra.config import load_run_config
from monohydra.model_types import FusionConfig
from monohydra.tools.sim_world import load_scene_spec, simulate_sequence
from monohydra.tools.temporal_fusion import (
    TemporalFuser,
    WarpedFrame,
    flicker_energy,
    fuse,
    temporal_gate,
    warp_frame,
)
from monohydra.utils.geometry import CameraIntrinsics, Pose, camera_pose

WALL, CHAIR, PERSON = 1, 4, 8
NO_ROTATION = np.array([0.0, 0.0, 0.0, 1.0])


def _warped(depth, label):
    d = np.atleast_2d(np.asarray(depth, dtype=float))
    return WarpedFrame(d, np.full(d.shape, label, dtype=np.int16), d > 0)


# ---------- 扭曲 ----------
def test_identity_warp_reproduces_frame(sim_camera, rng):
    depth = rng.uniform(1.0, 5.0, (sim_camera.height, sim_camera.width))
    depth[::7, ::5] = 0.0
    labels = rng.integers(0, 5, depth.shape).astype(np.int16)
    out = warp_frame(depth, labels, Pose(NO_ROTATION, np.zeros(3)), sim_camera)
    valid = depth > 0
    assert np.array_equal(out.valid, valid)
    assert np.allclose(out.depth[valid], depth[valid], atol=1e-12)
    assert np.array_equal(out.labels[valid], labels[valid])


def test_z_buffer_keeps_nearest():
    K = CameraIntrinsics(fx=1.0, fy=1.0, cx=6.0, cy=0.0, width=13, height=1)
    depth = np.zeros((1, 13))
    depth[0, 4], depth[0, 5] = 2.0, 3.0
    labels = np.zeros((1, 13), dtype=np.int16)
    labels[0, 4], labels[0, 5] = CHAIR, WALL
    # 平移后两个样本落到同一像素 7
    out = warp_frame(depth, labels, Pose(NO_ROTATION, np.array([6.0, 0.0, 0.0])), K)
    assert out.valid.sum() == 1
    assert out.depth[0, 7] == pytest.approx(2.0)
    assert out.labels[0, 7] == CHAIR


def test_plane_warp_toward_wall(tiny_camera):
    depth = np.full((tiny_camera.height, tiny_camera.width), 3.0)
    labels = np.full(depth.shape, WALL, dtype=np.int16)
    out = warp_frame(depth, labels, Pose(NO_ROTATION, np.array([0.0, 0.0, -0.5])), tiny_camera)
    assert out.depth[12, 16] == pytest.approx(2.5, abs=1e-6)
    assert np.allclose(out.depth[out.valid], 2.5, atol=1e-6)


# ---------- 门控 ----------
def test_gate_cases():
    assert not temporal_gate(np.array([2.5]), np.array([WALL]), np.array([2.0]), 0.5)[0]
    assert temporal_gate(np.array([2.0]), np.array([WALL]), np.array([2.0]), 0.15)[0]
    assert not temporal_gate(np.array([2.0]), np.array([PERSON]), np.array([2.0]), 0.15, [PERSON])[0]
    assert not temporal_gate(np.array([0.0]), np.array([WALL]), np.array([0.0]), 0.15)[0]


# ---------- 融合 ----------
def test_fuse_mean_and_vote():
    cfg = FusionConfig(K=3, delta_d=0.15)
    current = np.array([[2.1]])
    labels = np.array([[CHAIR]], dtype=np.int16)
    out = fuse(current, labels, [_warped(2.0, WALL), _warped(2.2, WALL)], cfg)
    assert out.depth[0, 0] == pytest.approx(2.1)
    assert out.support[0, 0] == 2
    window = [_warped(2.1, WALL), _warped(2.1, WALL), _warped(2.1, CHAIR)]
    assert fuse(current, labels, window, cfg).labels[0, 0] == WALL


def test_vote_tie_takes_lowest_class():
    cfg = FusionConfig(K=2)
    out = fuse(np.array([[2.0]]), np.array([[0]], dtype=np.int16), [_warped(2.0, CHAIR), _warped(2.0, WALL)], cfg)
    assert out.labels[0, 0] == WALL


def test_k_zero_returns_current_frame(rng):
    depth = rng.uniform(1, 3, (4, 5))
    labels = rng.integers(0, 4, (4, 5)).astype(np.int16)
    out = fuse(depth, labels, [_warped(np.full((4, 5), 2.0), WALL)], FusionConfig(K=0))
    assert np.array_equal(out.depth, depth) and np.array_equal(out.labels, labels)
    assert out.fallback.all() and not out.support.any()


def test_fallback_is_bit_exact_and_convex(rng):
    cfg = FusionConfig(K=3, delta_d=0.3)
    current = rng.uniform(1.0, 4.0, (6, 8))
    labels = np.full((6, 8), WALL, dtype=np.int16)
    window = []
    for _ in range(3):
        d = current + rng.uniform(-0.5, 0.5, current.shape)
        window.append(WarpedFrame(d, np.where(rng.random(d.shape) < 0.2, PERSON, WALL).astype(np.int16), d > 0))
    out = fuse(current, labels, window, cfg, [PERSON])
    fb = out.fallback
    assert np.array_equal(out.depth[fb], current[fb])
    stack = np.stack([w.depth for w in window])
    gated = np.stack([temporal_gate(w.depth, w.labels, current, cfg.delta_d, [PERSON]) for w in window])
    lo = np.where(gated, stack, np.inf).min(axis=0)
    hi = np.where(gated, stack, -np.inf).max(axis=0)
    has = ~fb
    assert np.all(out.depth[has] >= lo[has] - 1e-12) and np.all(out.depth[has] <= hi[has] + 1e-12)
    assert np.array_equal(out.support, gated.sum(axis=0))


def test_flicker_energy():
    assert flicker_energy(None, np.ones((2, 2))) == 0.0
    prev = np.array([[1.0, 0.0]])
    cur = np.array([[1.5, 2.0]])
    assert flicker_energy(prev, cur) == pytest.approx(0.125)


def test_fusion_halves_flicker_variance_over_100_frames(config_path, repo_root):
    # configs/flicker.json: 静止相机, 全局闪烁 ±0.2 m, K=3, δ_d=0.5
    cfg = load_run_config(config_path("flicker.json"), [f"scene={os.path.join(repo_root, 'scenes', 'static_room.json')}"])
    assert cfg.fusion.K == 3 and cfg.fusion.delta_d == 0.5
    spec = load_scene_spec(cfg.scene)
    seq = simulate_sequence(spec, cfg.sim)
    assert len(seq.packets) == 100
    fuser = TemporalFuser(cfg.fusion, seq.intrinsics, spec.dynamic_ids(), len(spec.label_set))
    raw, fused = [], []
    for packet in seq.packets:
        T_WC = camera_pose(packet.gt_pose)
        out = fuser.fuse(packet.depth, packet.labels, T_WC)
        fuser.push(packet.depth, packet.labels, T_WC)
        raw.append(packet.depth.astype(float))
        fused.append(out.depth.astype(float))
    raw = np.stack(raw)
    fused = np.stack(fused)
    valid = (raw > 0).all(axis=0)
    var_raw = raw[:, valid].var(axis=0).mean()
    var_fused = fused[:, valid].var(axis=0).mean()
    assert var_fused <= 0.5 * var_raw
