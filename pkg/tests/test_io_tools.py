import os

import numpy as np
import pytest

from monohydra.model_types import SimConfig
from monohydra.tools.sim_world import simulate_sequence
from monohydra.utils.geometry import Pose
from monohydra.utils.io_tools import (
    HEADER,
    PacketFormatError,
    decode_packet,
    dump_fused_frame,
    encode_packet,
    load_packet_dir,
    read_manifest,
    read_ply,
    read_trajectory_csv,
    write_packets,
    write_ply,
    write_trajectory_csv,
)


@pytest.fixture
def short_sequence(two_rooms_spec):
    return simulate_sequence(two_rooms_spec, SimConfig(duration=0.5))


def test_packet_directory_preserves_frames(short_sequence, tmp_path):
    paths = write_packets(short_sequence, str(tmp_path), {"label": "test"})
    assert [os.path.basename(p) for p in paths][:2] == ["frame_000000.bin", "frame_000001.bin"]
    manifest = read_manifest(str(tmp_path))
    assert manifest["n_frames"] == len(short_sequence.packets)
    assert manifest["label"] == "test"

    spec, sim, packets = load_packet_dir(str(tmp_path))
    assert spec.model_dump() == short_sequence.spec.model_dump()
    assert sim.duration == pytest.approx(0.5)
    for src, back in zip(short_sequence.packets, packets):
        assert back.frame_id == src.frame_id
        assert back.timestamp == src.timestamp
        assert np.array_equal(back.depth, src.depth)
        assert np.array_equal(back.labels, src.labels)
        assert np.array_equal(back.keypoints.ids, src.keypoints.ids)
        assert np.array_equal(back.keypoints.pixels, src.keypoints.pixels)
        assert np.array_equal(back.imu.timestamps, src.imu.timestamps)
        assert np.array_equal(back.imu.accel, src.imu.accel)
        assert np.allclose(back.gt_pose.matrix, src.gt_pose.matrix, atol=1e-12)


def test_corrupt_packets_are_rejected(short_sequence):
    data = encode_packet(short_sequence.packets[1])
    with pytest.raises(PacketFormatError):
        decode_packet(b"XXXX" + data[4:], 1)
    with pytest.raises(PacketFormatError):
        decode_packet(data[:-3], 1)
    with pytest.raises(PacketFormatError):
        decode_packet(data[:10], 1)
    # 版本号紧跟 magic
    bumped = data[:4] + (99).to_bytes(2, "little") + data[6:]
    with pytest.raises(PacketFormatError):
        decode_packet(bumped, 1)
    assert HEADER.size < len(data)


def test_missing_manifest(tmp_path):
    with pytest.raises(FileNotFoundError):
        read_manifest(str(tmp_path))


def test_fused_frame_has_no_keypoints(tmp_path):
    depth = np.full((4, 6), 2.5, dtype=np.float32)
    labels = np.ones((4, 6), dtype=np.int16)
    labels[0, 0] = -1
    path = tmp_path / "fused.bin"
    dump_fused_frame(str(path), depth, labels, 3, 0.1, Pose.identity("body", "world"))
    packet = decode_packet(path.read_bytes(), 3)
    assert len(packet.keypoints) == 0 and len(packet.imu) == 0
    assert np.array_equal(packet.depth, depth)
    assert packet.labels[0, 0] == -1


def test_trajectory_csv(tmp_path, rng):
    rows = []
    for k in range(5):
        q = rng.normal(size=4)
        rows.append((0.05 * k, Pose(q / np.linalg.norm(q), rng.uniform(-3, 3, 3))))
    path = tmp_path / "traj.csv"
    write_trajectory_csv(str(path), rows)
    assert path.read_text().splitlines()[0] == "timestamp,tx,ty,tz,qx,qy,qz,qw"
    back = read_trajectory_csv(str(path))
    assert len(back) == 5
    for (t0, p0), (t1, p1) in zip(rows, back):
        assert t1 == pytest.approx(t0, abs=1e-9)
        assert np.allclose(p1.translation, p0.translation, atol=1e-8)
        assert np.allclose(p1.matrix[:3, :3], p0.matrix[:3, :3], atol=1e-7)


def test_ply_points_and_classes(tmp_path, rng):
    pts = rng.uniform(-2, 2, (20, 3))
    labels = rng.integers(0, 9, 20)
    path = tmp_path / "mesh.ply"
    write_ply(str(path), pts, labels)
    back_pts, back_labels = read_ply(str(path))
    assert np.allclose(back_pts, pts, atol=1e-6)
    assert np.array_equal(back_labels, labels)

    write_ply(str(path), np.zeros((0, 3)), np.zeros(0))
    empty_pts, _ = read_ply(str(path))
    assert empty_pts.shape == (0, 3)

    path.write_text("ply\nformat ascii 1.0\n0 0 0 1\n")
    with pytest.raises(PacketFormatError):
        read_ply(str(path))
