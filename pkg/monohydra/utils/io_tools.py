"""
文件读写: 帧包二进制、轨迹 CSV、PLY 点云、JSON
"""

import csv
import json
import os
import struct
from typing import List, Dict, Any, Iterator, Optional, Sequence, Tuple

import numpy as np

try:
    from ..model_types import MonoHydraError, SceneSpec, SimConfig
    from ..utils.geometry import Pose
    from ..tools.sim_world import FramePacket, KeypointSet, ImuWindow, SimSequence
except ImportError:
    from monohydra.model_types import MonoHydraError, SceneSpec, SimConfig
    from monohydra.utils.geometry import Pose
    from monohydra.tools.sim_world import FramePacket, KeypointSet, ImuWindow, SimSequence

MAGIC = b"MHPK"
VERSION = 1
HEADER = struct.Struct("<4sHHHIIHHd")
POSE = struct.Struct("<7d")
MANIFEST = "manifest.json"
TRAJECTORY_HEADER = ["timestamp", "tx", "ty", "tz", "qx", "qy", "qz", "qw"]


class PacketFormatError(MonoHydraError):
    """帧包文件损坏或版本不符"""


def packet_name(frame_id: int) -> str:
    return f"frame_{frame_id:06d}.bin"


# ---------- 帧包 ----------
def encode_packet(packet: FramePacket) -> bytes:
    """帧包 → 小端二进制记录"""
    H, W = packet.depth.shape
    kp = packet.keypoints
    dim = int(kp.descriptors.shape[1]) if kp.descriptors.ndim == 2 else 0
    parts = [
        HEADER.pack(MAGIC, VERSION, H, W, len(kp), len(packet.imu), dim, 0, float(packet.timestamp)),
        POSE.pack(*packet.gt_pose.translation.tolist(), *packet.gt_pose.quat.tolist()),
        np.ascontiguousarray(packet.depth, dtype="<f4").tobytes(),
        np.ascontiguousarray(packet.labels, dtype="<i2").tobytes(),
    ]
    kp_dtype = np.dtype([("u", "<f8"), ("v", "<f8"), ("id", "<i8"), ("desc", "<f4", (dim,))])
    rec = np.zeros(len(kp), dtype=kp_dtype)
    if len(kp):
        rec["u"] = kp.pixels[:, 0]
        rec["v"] = kp.pixels[:, 1]
        rec["id"] = kp.ids
        rec["desc"] = kp.descriptors
    parts.append(rec.tobytes())
    imu = np.zeros((len(packet.imu), 7), dtype="<f8")
    if len(packet.imu):
        imu[:, 0] = packet.imu.timestamps
        imu[:, 1:4] = packet.imu.gyro
        imu[:, 4:7] = packet.imu.accel
    parts.append(imu.tobytes())
    return b"".join(parts)


def decode_packet(data: bytes, frame_id: int) -> FramePacket:
    """二进制记录 → 帧包"""
    if len(data) < HEADER.size + POSE.size:
        raise PacketFormatError(f"frame {frame_id}: truncated header")
    magic, version, H, W, n_kp, n_imu, dim, _, ts = HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise PacketFormatError(f"frame {frame_id}: bad magic {magic!r}")
    if version != VERSION:
        raise PacketFormatError(f"frame {frame_id}: unsupported version {version}")
    off = HEADER.size
    pose_vals = POSE.unpack_from(data, off)
    off += POSE.size
    kp_dtype = np.dtype([("u", "<f8"), ("v", "<f8"), ("id", "<i8"), ("desc", "<f4", (dim,))])
    need = off + H * W * 4 + H * W * 2 + n_kp * kp_dtype.itemsize + n_imu * 56
    if len(data) != need:
        raise PacketFormatError(f"frame {frame_id}: expected {need} bytes, got {len(data)}")
    depth = np.frombuffer(data, dtype="<f4", count=H * W, offset=off).reshape(H, W).astype(np.float32)
    off += H * W * 4
    labels = np.frombuffer(data, dtype="<i2", count=H * W, offset=off).reshape(H, W).astype(np.int16)
    off += H * W * 2
    rec = np.frombuffer(data, dtype=kp_dtype, count=n_kp, offset=off)
    off += n_kp * kp_dtype.itemsize
    imu = np.frombuffer(data, dtype="<f8", count=n_imu * 7, offset=off).reshape(n_imu, 7)
    keypoints = KeypointSet(
        np.stack([rec["u"], rec["v"]], axis=1).astype(np.float64) if n_kp else np.zeros((0, 2)),
        rec["id"].astype(np.int64),
        np.asarray(rec["desc"], dtype=np.float32).reshape(n_kp, dim),
    )
    return FramePacket(
        frame_id=frame_id,
        timestamp=float(ts),
        depth=depth,
        labels=labels,
        keypoints=keypoints,
        imu=ImuWindow(imu[:, 0].copy(), imu[:, 1:4].copy(), imu[:, 4:7].copy()),
        gt_pose=Pose(np.array(pose_vals[3:]), np.array(pose_vals[:3]), "body", "world"),
    )


def write_packets(seq: SimSequence, directory: str, extra: Optional[Dict[str, Any]] = None) -> List[str]:
    """把序列写成 frame_NNNNNN.bin + manifest.json

    Returns:
        写出的帧文件路径
    """
    os.makedirs(directory, exist_ok=True)
    paths = []
    for packet in seq.packets:
        path = os.path.join(directory, packet_name(packet.frame_id))
        with open(path, "wb") as f:
            f.write(encode_packet(packet))
        paths.append(path)
    manifest = {
        "n_frames": len(seq.packets),
        "scene": seq.spec.model_dump(mode="json"),
        "sim": seq.sim.model_dump(mode="json"),
    }
    manifest.update(extra or {})
    write_json(os.path.join(directory, MANIFEST), manifest)
    return paths


def read_manifest(directory: str) -> Dict[str, Any]:
    path = os.path.join(directory, MANIFEST)
    if not os.path.isfile(path):
        raise FileNotFoundError(f"no {MANIFEST} in {directory}")
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


def iter_packets(directory: str) -> Iterator[FramePacket]:
    manifest = read_manifest(directory)
    for k in range(int(manifest["n_frames"])):
        with open(os.path.join(directory, packet_name(k)), "rb") as f:
            yield decode_packet(f.read(), k)


def load_packet_dir(directory: str) -> Tuple[SceneSpec, SimConfig, List[FramePacket]]:
    manifest = read_manifest(directory)
    spec = SceneSpec.model_validate(manifest["scene"])
    sim = SimConfig.model_validate(manifest["sim"])
    return spec, sim, list(iter_packets(directory))


def dump_fused_frame(path: str, depth: np.ndarray, labels: np.ndarray, frame_id: int, timestamp: float, pose: Pose) -> None:
    """融合结果复用帧包格式, 关键点与 IMU 为空"""
    packet = FramePacket(
        frame_id,
        timestamp,
        np.asarray(depth, dtype=np.float32),
        np.asarray(labels, dtype=np.int16),
        KeypointSet.empty(0),
        ImuWindow.empty(),
        pose,
    )
    with open(path, "wb") as f:
        f.write(encode_packet(packet))


# ---------- 轨迹 CSV ----------
def write_trajectory_csv(path: str, rows: Sequence[Tuple[float, Pose]]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(TRAJECTORY_HEADER)
        for t, pose in rows:
            writer.writerow([f"{t:.9f}"] + [f"{x:.9f}" for x in pose.translation] + [f"{x:.9f}" for x in pose.quat])


def read_trajectory_csv(path: str) -> List[Tuple[float, Pose]]:
    rows = []
    with open(path, "r", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        for r in reader:
            t = np.array([float(r["tx"]), float(r["ty"]), float(r["tz"])])
            q = np.array([float(r["qx"]), float(r["qy"]), float(r["qz"]), float(r["qw"])])
            rows.append((float(r["timestamp"]), Pose(q, t, "body", "world")))
    return rows


def write_csv(path: str, header: Sequence[str], rows: Sequence[Sequence[Any]]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        writer.writerows(rows)


# ---------- PLY ----------
def write_ply(path: str, points: np.ndarray, labels: np.ndarray) -> None:
    """ASCII PLY: 每个顶点 x y z class_id"""
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    with open(path, "w", encoding="utf-8") as f:
        f.write("ply\nformat ascii 1.0\n")
        f.write(f"element vertex {len(points)}\n")
        f.write("property float x\nproperty float y\nproperty float z\nproperty int class_id\n")
        f.write("end_header\n")
        for p, c in zip(points, labels):
            f.write(f"{p[0]:.6f} {p[1]:.6f} {p[2]:.6f} {int(c)}\n")


def read_ply(path: str) -> Tuple[np.ndarray, np.ndarray]:
    with open(path, "r", encoding="utf-8") as f:
        lines = f.read().splitlines()
    try:
        end = lines.index("end_header")
    except ValueError as e:
        raise PacketFormatError(f"{path}: missing end_header") from e
    body = [ln.split() for ln in lines[end + 1 :] if ln.strip()]
    if not body:
        return np.zeros((0, 3)), np.zeros(0, dtype=np.int64)
    arr = np.array(body, dtype=float)
    return arr[:, :3], arr[:, 3].astype(np.int64)


# ---------- JSON ----------
def write_json(path: str, data: Any) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(data, f, indent=2, sort_keys=True)
        f.write("\n")


def read_json(path: str) -> Any:
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


if __name__ == "__main__":
    print("【帧包头】:", HEADER.size, "bytes")
