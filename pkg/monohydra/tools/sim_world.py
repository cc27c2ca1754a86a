"""
合成室内世界与传感器模拟器

替代学习型感知栈: 给出真值轨迹、IMU 流、带噪声与闪烁的深度/语义预言图、
带描述子的关键点跟踪以及参考场景图。几何只由轴对齐盒子组成, 射线求交为闭式解。
"""

import json
from dataclasses import dataclass, field
from functools import lru_cache
from typing import List, Dict, Optional, Tuple

import numpy as np
from pydantic import ValidationError

try:
    from ..model_types import (
        MonoHydraError,
        SpecError,
        SceneSpec,
        NoiseSpec,
        MotionProfile,
        SimConfig,
        MappingConfig,
    )
    from ..utils.geometry import Pose, CameraIntrinsics, camera_pose, pixel_rays, project_points
    from ..utils.scene_graph import (
        SceneGraph,
        place_lattice,
        rect_distance,
        boundary_distance,
        add_traversable_edges,
        add_support_edges,
    )
except ImportError:
    from monohydra.model_types import (
        MonoHydraError,
        SpecError,
        SceneSpec,
        NoiseSpec,
        MotionProfile,
        SimConfig,
        MappingConfig,
    )
    from monohydra.utils.geometry import Pose, CameraIntrinsics, camera_pose, pixel_rays, project_points
    from monohydra.utils.scene_graph import (
        SceneGraph,
        place_lattice,
        rect_distance,
        boundary_distance,
        add_traversable_edges,
        add_support_edges,
    )

GRAVITY = np.array([0.0, 0.0, -9.81])
INVALID_DEPTH = 0.0
INVALID_LABEL = -1
SLAB_THICKNESS = 0.1
OCCLUSION_TOLERANCE = 0.05
MIN_VISIBLE_DEPTH = 0.1

# 随机流编号: 每个用途独立, 种子相同则逐位一致
STREAM_IMU = 1
STREAM_RENDER = 2
STREAM_KEYPOINT = 3
STREAM_LANDMARK = 4


class TrajectoryError(MonoHydraError):
    """轨迹离开自由空间"""


def stream_rng(seed: int, stream: int, index: int = 0) -> np.random.Generator:
    return np.random.default_rng([int(seed), int(stream), int(index)])


# ---------- 数据容器 ----------
@dataclass
class TrajectorySample:
    timestamp: float
    pose: Pose
    velocity: np.ndarray  # 世界系 m/s
    angular_rate: np.ndarray  # 机体系 rad/s
    acceleration: np.ndarray  # 世界系 m/s²


@dataclass
class ImuWindow:
    timestamps: np.ndarray
    gyro: np.ndarray
    accel: np.ndarray

    def __len__(self) -> int:
        return int(self.timestamps.shape[0])

    def slice(self, start: int, stop: int) -> "ImuWindow":
        return ImuWindow(
            self.timestamps[start:stop].copy(), self.gyro[start:stop].copy(), self.accel[start:stop].copy()
        )

    @classmethod
    def empty(cls) -> "ImuWindow":
        return cls(np.zeros(0), np.zeros((0, 3)), np.zeros((0, 3)))


@dataclass
class KeypointSet:
    pixels: np.ndarray  # (M, 2) float64
    ids: np.ndarray  # (M,) int64, 真值路标编号 (估计器只用于评估)
    descriptors: np.ndarray  # (M, D) float32, 单位向量

    def __len__(self) -> int:
        return int(self.ids.shape[0])

    def subset(self, mask: np.ndarray) -> "KeypointSet":
        return KeypointSet(self.pixels[mask], self.ids[mask], self.descriptors[mask])

    @classmethod
    def empty(cls, dim: int) -> "KeypointSet":
        return cls(np.zeros((0, 2)), np.zeros(0, dtype=np.int64), np.zeros((0, dim), dtype=np.float32))


@dataclass
class FramePacket:
    frame_id: int
    timestamp: float
    depth: np.ndarray  # (H, W) float32, 无效为 0
    labels: np.ndarray  # (H, W) int16, 无效为 -1
    keypoints: KeypointSet
    imu: ImuWindow
    gt_pose: Pose


@dataclass
class Landmarks:
    """静态路标 (世界坐标) 与附着在动态体上的路标 (局部偏移)"""

    points: np.ndarray  # (N, 3) 静态为世界坐标, 动态为相对体底部中心的偏移
    owner: np.ndarray  # (N,) -1 静态, 否则动态体序号
    descriptors: np.ndarray  # (N, D)

    def positions_at(self, spec: SceneSpec, t: float) -> np.ndarray:
        pos = self.points.copy()
        for a in range(len(spec.dynamic_agents)):
            sel = self.owner == a
            if np.any(sel):
                pos[sel] += agent_base(spec, a, t)
        return pos

    def is_dynamic(self, ids: np.ndarray) -> np.ndarray:
        return self.owner[ids] >= 0


@dataclass
class SimSequence:
    spec: SceneSpec
    sim: SimConfig
    intrinsics: CameraIntrinsics
    packets: List[FramePacket]
    trajectory: List[TrajectorySample]
    landmarks: Landmarks
    meta: Dict = field(default_factory=dict)


def load_scene_spec(path: str) -> SceneSpec:
    """读取场景规格 JSON

    Args:
        path: 文件路径

    Returns:
        校验后的 SceneSpec
    """
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
        return SceneSpec.model_validate(data)
    except FileNotFoundError as e:
        raise SpecError(f"scene spec not found: {path}") from e
    except json.JSONDecodeError as e:
        raise SpecError(f"cannot parse scene spec {path}: {e}") from e
    except ValidationError as e:
        raise SpecError(f"invalid scene spec {path}: {e}") from e


def intrinsics_from(sim: SimConfig) -> CameraIntrinsics:
    return CameraIntrinsics(fx=sim.fx, fy=sim.fy, cx=sim.cx, cy=sim.cy, width=sim.width, height=sim.height)


# ---------- 静态几何 ----------
def _split_segment(lo: float, hi: float, gaps: List[Tuple[float, float]]) -> List[Tuple[float, float]]:
    pieces = []
    cursor = lo
    for g0, g1 in sorted(gaps):
        if g0 > cursor:
            pieces.append((cursor, min(g0, hi)))
        cursor = max(cursor, g1)
    if cursor < hi:
        pieces.append((cursor, hi))
    return [(a, b) for a, b in pieces if b - a > 1e-9]


def _wall_boxes(spec: SceneSpec) -> List[Tuple[float, ...]]:
    half = 0.5 * spec.wall_thickness
    boxes = []
    for room in spec.rooms:
        xmin, ymin, xmax, ymax = room.footprint
        z0, z1 = spec.floor_z, spec.floor_z + room.wall_height
        edges = [
            ("y", ymin, xmin - half, xmax + half),
            ("y", ymax, xmin - half, xmax + half),
            ("x", xmin, ymin - half, ymax + half),
            ("x", xmax, ymin - half, ymax + half),
        ]
        for axis, coord, lo, hi in edges:
            gaps, lintels = [], []
            for door in spec.doorways:
                along, across = (door.center[0], door.center[1]) if axis == "y" else (door.center[1], door.center[0])
                if abs(across - coord) <= half + 1e-9 and lo <= along <= hi:
                    gap = (along - 0.5 * door.width, along + 0.5 * door.width)
                    gaps.append(gap)
                    top = min(z0 + door.height, z1)
                    if top < z1:
                        lintels.append((gap, top))
            for a, b in _split_segment(lo, hi, gaps):
                if axis == "y":
                    boxes.append((a, coord - half, z0, b, coord + half, z1))
                else:
                    boxes.append((coord - half, a, z0, coord + half, b, z1))
            for (a, b), top in lintels:
                if axis == "y":
                    boxes.append((a, coord - half, top, b, coord + half, z1))
                else:
                    boxes.append((coord - half, a, top, coord + half, b, z1))
    return boxes


@dataclass
class SceneGeometry:
    """静态盒子 (墙、地板、天花板、物体) 及其类别"""

    boxes: np.ndarray  # (B, 6)
    labels: np.ndarray  # (B,)
    solid: np.ndarray  # (B,) 是否阻挡轨迹 (墙与物体)


@lru_cache(maxsize=16)
def _geometry_cached(spec_json: str) -> SceneGeometry:
    spec = SceneSpec.model_validate_json(spec_json)
    boxes, labels, solid = [], [], []
    wall, floor, ceiling = spec.label_id("wall"), spec.label_id("floor"), spec.label_id("ceiling")
    for b in _wall_boxes(spec):
        boxes.append(b)
        labels.append(wall)
        solid.append(True)
    for room in spec.rooms:
        xmin, ymin, xmax, ymax = room.footprint
        top = spec.floor_z + room.wall_height
        boxes.append((xmin, ymin, spec.floor_z - SLAB_THICKNESS, xmax, ymax, spec.floor_z))
        labels.append(floor)
        solid.append(False)
        boxes.append((xmin, ymin, top, xmax, ymax, top + SLAB_THICKNESS))
        labels.append(ceiling)
        solid.append(False)
    for obj in spec.objects:
        boxes.append(tuple(obj.box))
        labels.append(spec.label_id(obj.label))
        solid.append(True)
    return SceneGeometry(
        np.asarray(boxes, dtype=float).reshape(-1, 6),
        np.asarray(labels, dtype=np.int64),
        np.asarray(solid, dtype=bool),
    )


def scene_geometry(spec: SceneSpec) -> SceneGeometry:
    return _geometry_cached(spec.model_dump_json())


def agent_base(spec: SceneSpec, index: int, t: float) -> np.ndarray:
    """动态体在时刻 t 的底部中心 (沿闭合折线匀速运动)"""
    agent = spec.dynamic_agents[index]
    pts = np.asarray(agent.waypoints, dtype=float)
    if len(pts) == 1 or agent.speed == 0:
        xy = pts[0]
    else:
        closed = np.vstack([pts, pts[:1]])
        seg = np.linalg.norm(np.diff(closed, axis=0), axis=1)
        total = float(seg.sum())
        s = (agent.speed * t) % total if total > 0 else 0.0
        cum = np.concatenate([[0.0], np.cumsum(seg)])
        k = int(np.searchsorted(cum, s, side="right") - 1)
        k = min(max(k, 0), len(seg) - 1)
        frac = (s - cum[k]) / seg[k] if seg[k] > 0 else 0.0
        xy = closed[k] + frac * (closed[k + 1] - closed[k])
    return np.array([xy[0], xy[1], spec.floor_z])


def agent_boxes(spec: SceneSpec, t: float) -> Tuple[np.ndarray, np.ndarray]:
    boxes, labels = [], []
    for a, agent in enumerate(spec.dynamic_agents):
        base = agent_base(spec, a, t)
        sx, sy, sz = agent.size
        boxes.append((base[0] - sx / 2, base[1] - sy / 2, base[2], base[0] + sx / 2, base[1] + sy / 2, base[2] + sz))
        labels.append(spec.label_id(agent.label))
    return np.asarray(boxes, dtype=float).reshape(-1, 6), np.asarray(labels, dtype=np.int64)


def raycast(boxes: np.ndarray, origin: np.ndarray, dirs: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """射线与盒子集合的最近交点 (slab 法)

    Args:
        boxes: (B, 6) 盒子
        origin: (3,) 射线起点
        dirs: (N, 3) 射线方向 (不必归一化, 返回的参数 t 以该方向为单位)

    Returns:
        (N,) 最近交点参数 t (未命中为 inf), (N,) 命中盒子序号 (未命中为 -1)
    """
    n = dirs.shape[0]
    if boxes.shape[0] == 0:
        return np.full(n, np.inf), np.full(n, -1, dtype=np.int64)
    lo = boxes[:, None, :3] - origin  # (B, 1, 3)
    hi = boxes[:, None, 3:] - origin
    d = dirs[None, :, :]
    zero = d == 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = lo / d
        t2 = hi / d
    tmin = np.minimum(t1, t2)
    tmax = np.maximum(t1, t2)
    # 方向分量为零: 起点在该 slab 内则不约束, 否则必不命中
    inside = (lo <= 0.0) & (hi >= 0.0)
    tmin = np.where(zero, np.where(inside, -np.inf, np.inf), tmin)
    tmax = np.where(zero, np.where(inside, np.inf, -np.inf), tmax)
    t_near = tmin.max(axis=2)
    t_far = tmax.min(axis=2)
    hit = (t_near <= t_far) & (t_near > 1e-9)
    t = np.where(hit, t_near, np.inf)
    best = np.argmin(t, axis=0)
    t_best = t[best, np.arange(n)]
    index = np.where(np.isfinite(t_best), best, -1)
    return t_best, index


def _scene_boxes(spec: SceneSpec, t: float) -> Tuple[np.ndarray, np.ndarray]:
    geo = scene_geometry(spec)
    dyn_boxes, dyn_labels = agent_boxes(spec, t)
    return np.vstack([geo.boxes, dyn_boxes]), np.concatenate([geo.labels, dyn_labels])


def in_free_space(spec: SceneSpec, p: np.ndarray) -> bool:
    """点在某个房间内且不在墙或物体内部"""
    inside_room = False
    for room in spec.rooms:
        xmin, ymin, xmax, ymax = room.footprint
        if (
            xmin <= p[0] <= xmax
            and ymin <= p[1] <= ymax
            and spec.floor_z < p[2] < spec.floor_z + room.wall_height
        ):
            inside_room = True
            break
    if not inside_room:
        return False
    geo = scene_geometry(spec)
    solid = geo.boxes[geo.solid]
    inside = np.all((solid[:, :3] < p) & (p < solid[:, 3:]), axis=1)
    return not bool(np.any(inside))


# ---------- 轨迹 ----------
def _quintic(u: float) -> Tuple[float, float, float]:
    """最小加加速度时间重映射 s(u) 及其一二阶导数"""
    s = u**3 * (10 - 15 * u + 6 * u * u)
    ds = 30 * u * u * (1 - u) ** 2
    dds = 60 * u - 180 * u * u + 120 * u**3
    return s, ds, dds


def _profile_state(profile: MotionProfile, t: float, duration: float):
    """返回 (位置, 速度, 加速度, 偏航, 偏航角速度)"""
    if profile.kind == "line":
        v = np.asarray(profile.velocity, dtype=float)
        return v * t, v.copy(), np.zeros(3), 0.0, 0.0

    period = profile.period or duration
    if period <= 0:
        u, ds, dds, du = 0.0, 0.0, 0.0, 0.0
    else:
        u = min(max(t / period, 0.0), 1.0)
        du = 1.0 / period if t <= period else 0.0
    s, ds, dds = _quintic(u)
    span = 2.0 * np.pi * profile.laps
    phi = span * s
    phi_d = span * ds * du
    phi_dd = span * dds * du * du
    a, b = profile.extent_x, profile.extent_y

    if profile.kind in ("corridor_loop", "room_scan"):
        c = np.array([a * np.sin(phi), b * (1.0 - np.cos(phi))])
        c1 = np.array([a * np.cos(phi), b * np.sin(phi)])
        c2 = np.array([-a * np.sin(phi), b * np.cos(phi)])
        rot = 0.0
    else:  # figure_eight
        c = np.array([a * np.sin(phi), b * np.sin(phi) * np.cos(phi)])
        c1 = np.array([a * np.cos(phi), b * np.cos(2 * phi)])
        c2 = np.array([-a * np.sin(phi), -2 * b * np.sin(2 * phi)])
        rot = -np.arctan2(b, a)
    cr, sr = np.cos(rot), np.sin(rot)
    Rz = np.array([[cr, -sr], [sr, cr]])
    c, c1, c2 = Rz @ c, Rz @ c1, Rz @ c2

    pos = np.array([c[0], c[1], 0.0])
    vel2 = c1 * phi_d
    acc2 = c2 * phi_d**2 + c1 * phi_dd
    vel = np.array([vel2[0], vel2[1], 0.0])
    acc = np.array([acc2[0], acc2[1], 0.0])

    if profile.kind == "room_scan":
        w = 2.0 * np.pi * profile.scan_frequency
        yaw = profile.scan_amplitude * np.sin(w * t)
        yaw_rate = profile.scan_amplitude * w * np.cos(w * t)
    else:
        yaw = float(np.arctan2(c1[1], c1[0]))
        yaw_rate = float((c1[0] * c2[1] - c1[1] * c2[0]) / (c1 @ c1) * phi_d)
    return pos, vel, acc, float(yaw), float(yaw_rate)


def generate_trajectory(
    spec: SceneSpec, profile: MotionProfile, duration: float, rate: float
) -> List[TrajectorySample]:
    """按固定速率采样真值轨迹

    Args:
        spec: 场景规格 (用于自由空间检查)
        profile: 运动模式
        duration: 时长 (秒), ≥ 0
        rate: 采样率 (Hz)

    Returns:
        k = 0..round(duration·rate) 的采样
    """
    if duration < 0:
        raise TrajectoryError(f"negative duration {duration}")
    n = int(round(duration * rate))
    samples = []
    for k in range(n + 1):
        t = k / rate
        pos, vel, acc, yaw, yaw_rate = _profile_state(profile, t, duration)
        if not in_free_space(spec, pos):
            raise TrajectoryError(f"trajectory leaves free space at t={t:.3f}s, p={pos.tolist()}")
        samples.append(
            TrajectorySample(
                timestamp=t,
                pose=Pose.from_yaw(yaw, pos, "body", "world"),
                velocity=vel,
                angular_rate=np.array([0.0, 0.0, yaw_rate]),
                acceleration=acc,
            )
        )
    return samples


def synthesize_imu(traj: List[TrajectorySample], noise: NoiseSpec) -> ImuWindow:
    """由真值轨迹合成 IMU: f = Rᵀ(a − g) + b + n, ω = ω_b + b + n"""
    n = len(traj)
    ts = np.array([s.timestamp for s in traj])
    dt = float(ts[1] - ts[0]) if n > 1 else 1.0
    rng = stream_rng(noise.seed, STREAM_IMU)
    white_g = rng.standard_normal((n, 3)) * (noise.gyro_noise / np.sqrt(dt))
    white_a = rng.standard_normal((n, 3)) * (noise.accel_noise / np.sqrt(dt))
    walk_g = rng.standard_normal((n, 3)) * (noise.gyro_bias * np.sqrt(dt))
    walk_a = rng.standard_normal((n, 3)) * (noise.accel_bias * np.sqrt(dt))
    walk_g[0] = 0.0
    walk_a[0] = 0.0
    bias_g = np.cumsum(walk_g, axis=0)
    bias_a = np.cumsum(walk_a, axis=0)
    gyro = np.empty((n, 3))
    accel = np.empty((n, 3))
    for k, s in enumerate(traj):
        R = s.pose.rotation
        gyro[k] = s.angular_rate + bias_g[k] + white_g[k]
        accel[k] = R.T @ (s.acceleration - GRAVITY) + bias_a[k] + white_a[k]
    return ImuWindow(ts, gyro, accel)


# ---------- 渲染 ----------
def _cast_pixels(
    boxes: np.ndarray, labels: np.ndarray, T_WC: Pose, rays_c: np.ndarray, d_max: float
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """相机系像素射线 (z=1) 求交, 返回 (深度, 盒子序号, 标签); 超出 d_max 或未命中的标签为 -1"""
    depth, index = raycast(boxes, T_WC.translation, rays_c @ T_WC.rotation.T)
    valid = (index >= 0) & (depth <= d_max)
    return depth, index, np.where(valid, labels[np.maximum(index, 0)], INVALID_LABEL)


def render_perception(
    spec: SceneSpec,
    pose: Pose,
    K: CameraIntrinsics,
    t: float,
    noise: NoiseSpec,
    frame_index: int = 0,
    d_max: float = 10.0,
) -> Tuple[np.ndarray, np.ndarray]:
    """渲染深度与语义预言图

    Args:
        spec: 场景
        pose: 机体位姿 T_WB
        K: 相机内参
        t: 时刻 (动态体位置)
        noise: 噪声规格
        frame_index: 帧序号 (噪声随机流)
        d_max: 最大渲染深度

    Returns:
        (H, W) float32 深度 (无效为 0), (H, W) int16 标签 (无效为 -1)
    """
    T_WC = camera_pose(pose)
    boxes, labels = _scene_boxes(spec, t)
    depth, index, label_map = _cast_pixels(boxes, labels, T_WC, pixel_rays(K).reshape(-1, 3), d_max)
    valid = label_map != INVALID_LABEL

    rng = stream_rng(noise.seed, STREAM_RENDER, frame_index)
    flicker = rng.uniform(-1.0, 1.0) * noise.flicker_amplitude
    gauss = rng.standard_normal(depth.shape)
    flip = rng.random(depth.shape) < noise.label_flip_prob
    shift = rng.integers(1, max(len(spec.label_set), 2), size=depth.shape)

    clean = np.where(valid, depth, 0.0)
    noisy = clean + (noise.depth_sigma0 + noise.depth_sigma1 * clean) * gauss + flicker
    noisy = np.where(valid, np.clip(noisy, 1e-3, d_max), INVALID_DEPTH)
    flip &= valid
    label_map = np.where(flip, (label_map + shift) % len(spec.label_set), label_map)

    shape = (K.height, K.width)
    return noisy.reshape(shape).astype(np.float32), label_map.reshape(shape).astype(np.int16)


# ---------- 路标与关键点 ----------
def _sample_box_faces(rng, boxes: np.ndarray, count: int, skip_bottom: bool = False) -> np.ndarray:
    faces = []
    for b in boxes:
        ext = b[3:] - b[:3]
        for axis in range(3):
            for side in (0, 1):
                if skip_bottom and axis == 2 and side == 0:
                    continue
                o1, o2 = [i for i in range(3) if i != axis]
                faces.append((b, axis, side, ext[o1] * ext[o2]))
    area = np.array([f[3] for f in faces])
    choice = rng.choice(len(faces), size=count, p=area / area.sum())
    uv = rng.random((count, 2))
    pts = np.empty((count, 3))
    for i, c in enumerate(choice):
        b, axis, side, _ = faces[c]
        o1, o2 = [j for j in range(3) if j != axis]
        pts[i, axis] = b[3 + axis] if side else b[axis]
        pts[i, o1] = b[o1] + uv[i, 0] * (b[3 + o1] - b[o1])
        pts[i, o2] = b[o2] + uv[i, 1] * (b[3 + o2] - b[o2])
    return pts


def _inside_building(spec: SceneSpec, pts: np.ndarray, tol: float = 1e-6) -> np.ndarray:
    keep = np.zeros(len(pts), dtype=bool)
    for room in spec.rooms:
        xmin, ymin, xmax, ymax = room.footprint
        keep |= (
            (pts[:, 0] >= xmin - tol)
            & (pts[:, 0] <= xmax + tol)
            & (pts[:, 1] >= ymin - tol)
            & (pts[:, 1] <= ymax + tol)
            & (pts[:, 2] >= spec.floor_z - tol)
            & (pts[:, 2] <= spec.floor_z + room.wall_height + tol)
        )
    return keep


def generate_landmarks(spec: SceneSpec, descriptor_dim: int, seed: int) -> Landmarks:
    """在静态表面与动态体表面采样路标, 每个路标一个固定随机单位描述子"""
    rng = stream_rng(seed, STREAM_LANDMARK)
    geo = scene_geometry(spec)
    static = np.zeros((0, 3))
    while len(static) < spec.static_landmarks:
        cand = _sample_box_faces(rng, geo.boxes, 2 * spec.static_landmarks)
        static = np.vstack([static, cand[_inside_building(spec, cand)]])
    static = static[: spec.static_landmarks]

    points, owner = [static], [np.full(len(static), -1)]
    for a, agent in enumerate(spec.dynamic_agents):
        if agent.landmarks == 0:
            continue
        sx, sy, sz = agent.size
        local = np.array([[-sx / 2, -sy / 2, 0.0, sx / 2, sy / 2, sz]])
        points.append(_sample_box_faces(rng, local, agent.landmarks, skip_bottom=True))
        owner.append(np.full(agent.landmarks, a))
    pts = np.vstack(points)
    own = np.concatenate(owner).astype(np.int64)
    desc = rng.standard_normal((len(pts), descriptor_dim))
    desc /= np.linalg.norm(desc, axis=1, keepdims=True)
    return Landmarks(pts, own, desc)


def track_keypoints(
    spec: SceneSpec,
    poses: List[Pose],
    timestamps: List[float],
    K: CameraIntrinsics,
    noise: NoiseSpec,
    landmarks: Landmarks,
    occlusion: bool = True,
    d_max: float = 10.0,
) -> List[KeypointSet]:
    """逐帧关键点观测

    Args:
        spec: 场景
        poses: 每帧机体位姿
        timestamps: 每帧时刻
        K: 相机内参
        noise: 噪声 (像素与描述子噪声)
        landmarks: 路标集合
        occlusion: 是否剔除被遮挡路标 (沿视线求交, 容差 5 cm), 并保证关键点所在像素的
            渲染标签与路标一致: 动态体路标落在该动态体像素上, 静态路标不落在动态类像素上
        d_max: 渲染最大深度, 与 render_perception 相同

    Returns:
        每帧一个 KeypointSet, 按路标编号排序
    """
    frames = []
    n = len(landmarks.points)
    dim = landmarks.descriptors.shape[1]
    ids_all = np.arange(n, dtype=np.int64)
    for k, (pose, t) in enumerate(zip(poses, timestamps)):
        rng = stream_rng(noise.seed, STREAM_KEYPOINT, k)
        pix_noise = rng.standard_normal((n, 2)) * noise.pixel_noise
        desc_noise = rng.standard_normal((n, dim)) * noise.descriptor_noise
        if n == 0:
            frames.append(KeypointSet.empty(dim))
            continue

        T_WC = camera_pose(pose)
        world = landmarks.positions_at(spec, t)
        cam = T_WC.inverse().transform(world)
        pixels, z, front = project_points(cam, K)
        visible = front & (z > MIN_VISIBLE_DEPTH)
        pixels = pixels + pix_noise
        visible &= K.in_bounds(pixels)
        if occlusion and np.any(visible):
            idx = np.flatnonzero(visible)
            boxes, labels = _scene_boxes(spec, t)
            rays = world[idx] - T_WC.translation
            t_hit, _ = raycast(boxes, T_WC.translation, rays)
            # 参数 t 以"到路标的向量"为单位, 路标本身在 t=1
            dist = np.linalg.norm(rays, axis=1)
            blocked = (1.0 - t_hit) * dist > OCCLUSION_TOLERANCE
            visible[idx[blocked]] = False

            # 取整像素处的渲染标签必须与路标归属一致
            idx = np.flatnonzero(visible)
            uv = np.rint(pixels[idx])
            rays_c = np.column_stack([(uv[:, 0] - K.cx) / K.fx, (uv[:, 1] - K.cy) / K.fy, np.ones(len(idx))])
            _, hit, pixel_label = _cast_pixels(boxes, labels, T_WC, rays_c, d_max)
            on_dynamic = np.isin(pixel_label, spec.dynamic_ids())
            owner = landmarks.owner[idx]
            n_static = len(boxes) - len(spec.dynamic_agents)
            consistent = np.where(owner >= 0, (hit == n_static + owner) & on_dynamic, ~on_dynamic)
            visible[idx[~consistent]] = False

        desc = landmarks.descriptors + desc_noise
        desc /= np.linalg.norm(desc, axis=1, keepdims=True)
        frames.append(
            KeypointSet(
                pixels[visible].astype(np.float64),
                ids_all[visible],
                desc[visible].astype(np.float32),
            )
        )
    return frames


# ---------- 参考场景图 ----------
def reference_scene_graph(spec: SceneSpec, mapping: Optional[MappingConfig] = None) -> SceneGraph:
    """由场景规格构造参考场景图

    Args:
        spec: 场景规格
        mapping: 位置网格参数 (间距、高度、净空)

    Returns:
        SceneGraph
    """
    mapping = mapping or MappingConfig()
    g = SceneGraph()
    centers = []
    for room in spec.rooms:
        xmin, ymin, xmax, ymax = room.footprint
        centers.append(((xmin + xmax) / 2, (ymin + ymax) / 2, spec.floor_z + room.wall_height / 2))
    building_c = np.mean(np.asarray(centers), axis=0) if centers else np.zeros(3)
    g.add_node("building", "building", "building", building_c, None)

    for room, c in zip(spec.rooms, centers):
        xmin, ymin, xmax, ymax = room.footprint
        rid = f"room_{room.id}"
        g.add_node(rid, "room", "room", c, (xmin, ymin, spec.floor_z, xmax, ymax, spec.floor_z + room.wall_height))
        g.add_edge(rid, "building", "contains")

    for i, obj in enumerate(spec.objects):
        b = np.asarray(obj.box, dtype=float)
        oid = f"object_{i}"
        g.add_node(oid, "object", obj.label, 0.5 * (b[:3] + b[3:]), b)
        g.add_edge(oid, f"room_{obj.room_id}", "contains")
    add_support_edges(g, z_tolerance=0.05)

    for door in spec.doorways:
        r1, r2 = sorted(door.rooms)
        g.add_edge(f"room_{r1}", f"room_{r2}", "adjacent")

    places_by_room: Dict[int, List[Tuple[str, np.ndarray]]] = {}
    count = 0
    for room in spec.rooms:
        lattice = place_lattice(room.footprint, mapping.place_spacing)
        if len(lattice) == 0:
            continue
        keep = boundary_distance(lattice, room.footprint) >= mapping.place_clearance
        for obj in spec.objects:
            rect = (obj.box[0], obj.box[1], obj.box[3], obj.box[4])
            keep &= rect_distance(lattice, rect) >= mapping.place_clearance
        items = []
        for xy in lattice[keep]:
            p = np.array([xy[0], xy[1], mapping.place_height])
            pid = f"place_{count}"
            count += 1
            g.add_node(pid, "place", "place", p, None)
            g.add_edge(pid, f"room_{room.id}", "contains")
            items.append((pid, p))
        places_by_room[room.id] = items
    add_traversable_edges(
        g,
        places_by_room,
        mapping.place_spacing,
        [(tuple(sorted(d.rooms)), d.center) for d in spec.doorways],
    )
    return g


def surface_samples(spec: SceneSpec, spacing: float) -> Tuple[np.ndarray, np.ndarray]:
    """在静态盒子表面按规则网格采样真值点云 (房间内部), 返回 (点, 标签)"""
    geo = scene_geometry(spec)
    pts_all, lbl_all = [], []
    for b, lbl in zip(geo.boxes, geo.labels):
        for axis in range(3):
            o1, o2 = [i for i in range(3) if i != axis]
            a1 = np.arange(b[o1] + spacing / 2, b[3 + o1], spacing)
            a2 = np.arange(b[o2] + spacing / 2, b[3 + o2], spacing)
            if len(a1) == 0 or len(a2) == 0:
                continue
            g1, g2 = np.meshgrid(a1, a2, indexing="ij")
            for side in (0, 1):
                pts = np.empty((g1.size, 3))
                pts[:, axis] = b[3 + axis] if side else b[axis]
                pts[:, o1] = g1.ravel()
                pts[:, o2] = g2.ravel()
                pts_all.append(pts)
                lbl_all.append(np.full(len(pts), lbl))
    if not pts_all:
        return np.zeros((0, 3)), np.zeros(0, dtype=np.int64)
    pts = np.vstack(pts_all)
    lbl = np.concatenate(lbl_all)
    keep = _inside_building(spec, pts)
    return pts[keep], lbl[keep]


# ---------- 序列 ----------
def simulate_sequence(spec: SceneSpec, sim: SimConfig) -> SimSequence:
    """生成完整的帧包序列

    帧 k 的 IMU 窗口覆盖 (t_{k-1}, t_k]; 第 0 帧只含 t=0 的样本。
    时长 D 秒、帧率 f 时输出 round(D·f) 帧 (0..N-1)。
    """
    K = intrinsics_from(sim)
    noise = sim.noise
    imu_traj = generate_trajectory(spec, sim.profile, sim.duration, sim.imu_rate)
    imu = synthesize_imu(imu_traj, noise)
    step = sim.imu_per_frame
    n_frames = max(int(round(sim.duration * sim.frame_rate)), 1)
    frame_traj = [imu_traj[k * step] for k in range(n_frames) if k * step < len(imu_traj)]
    landmarks = generate_landmarks(spec, sim.descriptor_dim, noise.seed)
    keypoints = track_keypoints(
        spec,
        [s.pose for s in frame_traj],
        [s.timestamp for s in frame_traj],
        K,
        noise,
        landmarks,
        d_max=sim.d_max_render,
    )
    packets = []
    for k, sample in enumerate(frame_traj):
        depth, labels = render_perception(
            spec, sample.pose, K, sample.timestamp, noise, frame_index=k, d_max=sim.d_max_render
        )
        start = 0 if k == 0 else (k - 1) * step + 1
        packets.append(
            FramePacket(
                frame_id=k,
                timestamp=sample.timestamp,
                depth=depth,
                labels=labels,
                keypoints=keypoints[k],
                imu=imu.slice(start, k * step + 1),
                gt_pose=sample.pose,
            )
        )
    return SimSequence(spec, sim, K, packets, frame_traj, landmarks, {"n_frames": len(packets)})


if __name__ == "__main__":
    import sys

    scene = load_scene_spec(sys.argv[1] if len(sys.argv) > 1 else "scenes/two_rooms.json")
    seq = simulate_sequence(scene, SimConfig(duration=1.0))
    print(f"【模拟】: {len(seq.packets)} 帧, 首帧关键点 {len(seq.packets[0].keypoints)}")
