"""
VIO 前端: 描述子匹配、轨迹管理、语义权重、稀疏深度候选选择与门控
"""

from dataclasses import dataclass, field
from typing import List, Dict, Optional, Sequence, Tuple, Iterable

import numpy as np
from scipy.spatial.distance import cdist

try:
    from ..model_types import MonoHydraError, GateConfig
    from ..tools.sim_world import KeypointSet
except ImportError:
    from monohydra.model_types import MonoHydraError, GateConfig
    from monohydra.tools.sim_world import KeypointSet


class PixelOutOfBoundsError(MonoHydraError):
    """像素不在图像内"""


@dataclass
class Observation:
    frame_id: int
    pixel: np.ndarray
    z: float  # 该帧深度图在像素处的采样, 无效为 0
    w: float  # 语义权重
    g: bool = True  # 运动门控


@dataclass
class Track:
    track_id: int
    landmark_id: int  # 首次观测的真值路标编号, 只用于评估
    observations: List[Observation] = field(default_factory=list)
    landmark: Optional[np.ndarray] = None

    def last(self) -> Observation:
        return self.observations[-1]

    def at(self, frame_id: int) -> Optional[Observation]:
        for obs in reversed(self.observations):
            if obs.frame_id == frame_id:
                return obs
            if obs.frame_id < frame_id:
                return None
        return None


@dataclass
class DepthFactor:
    track_id: int
    pixel: np.ndarray
    z: float
    sigma: float
    eta: float
    score: float = 0.0


def match_frames(
    prev_desc: np.ndarray, curr_desc: np.ndarray, ratio_threshold: float
) -> List[Tuple[int, int]]:
    """比值检验 + 互为最近邻的一对一匹配; 两个方向都做比值检验, 结果与参数顺序无关

    Args:
        prev_desc: (N, D) 上一帧描述子
        curr_desc: (M, D) 当前帧描述子
        ratio_threshold: 最近/次近距离比阈值

    Returns:
        按 (i, j) 排序的匹配对
    """
    prev_desc = np.asarray(prev_desc, dtype=np.float64)
    curr_desc = np.asarray(curr_desc, dtype=np.float64)
    if prev_desc.shape[0] == 0 or curr_desc.shape[0] == 0:
        return []
    return ratio_mutual_matches(cdist(prev_desc, curr_desc), ratio_threshold)


def ratio_mutual_matches(dist: np.ndarray, ratio_threshold: float) -> List[Tuple[int, int]]:
    """在距离矩阵上做双向比值检验与互最近邻检查"""
    dist = np.asarray(dist, dtype=float)
    if dist.size == 0:
        return []

    def _passes(d: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        best = np.argmin(d, axis=1)
        if d.shape[1] < 2:
            return best, np.ones(d.shape[0], dtype=bool)
        part = np.partition(d, 1, axis=1)
        first, second = part[:, 0], part[:, 1]
        ok = np.where(second > 0, first < ratio_threshold * second, False)
        return best, ok

    best_fwd, ok_fwd = _passes(dist)
    best_bwd, ok_bwd = _passes(dist.T)
    matches = []
    for i, j in enumerate(best_fwd):
        if ok_fwd[i] and best_bwd[j] == i and ok_bwd[j]:
            matches.append((i, int(j)))
    return sorted(matches)


def _pixel_index(pixel: np.ndarray, shape: Tuple[int, int]) -> Tuple[int, int]:
    u = int(np.rint(pixel[0]))
    v = int(np.rint(pixel[1]))
    if not (0 <= u < shape[1] and 0 <= v < shape[0]):
        raise PixelOutOfBoundsError(f"pixel {np.asarray(pixel).tolist()} outside {shape[1]}x{shape[0]}")
    return v, u


def semantic_weight(pixel: np.ndarray, label_map: np.ndarray, dynamic_ids: Iterable[int]) -> int:
    """像素标签属于动态类别则为 0, 否则为 1"""
    v, u = _pixel_index(pixel, label_map.shape)
    return 0 if int(label_map[v, u]) in set(dynamic_ids) else 1


def sample_depth(pixel: np.ndarray, depth_map: np.ndarray) -> float:
    v, u = _pixel_index(pixel, depth_map.shape)
    z = float(depth_map[v, u])
    return z if np.isfinite(z) and z > 0 else 0.0


def depth_gradient(pixel: np.ndarray, depth_map: np.ndarray) -> float:
    """3x3 中心差分深度梯度幅值, 边界处钳位到图像内"""
    v, u = _pixel_index(pixel, depth_map.shape)
    H, W = depth_map.shape
    d = np.asarray(depth_map, dtype=float)
    gx = 0.5 * (d[v, min(u + 1, W - 1)] - d[v, max(u - 1, 0)])
    gy = 0.5 * (d[min(v + 1, H - 1), u] - d[max(v - 1, 0), u])
    return float(np.hypot(gx, gy))


def huber(r: float, delta: float) -> Tuple[float, float]:
    """Huber 代价与 IRLS 权重"""
    a = abs(float(r))
    if a <= delta:
        return 0.5 * a * a, 1.0
    return delta * (a - 0.5 * delta), delta / a


def select_depth_candidates(
    candidates: Sequence[Tuple[int, np.ndarray]],
    depth_map: np.ndarray,
    label_map: np.ndarray,
    omega: np.ndarray,
    reprojection: Dict[int, float],
    cfg: GateConfig,
    dynamic_ids: Iterable[int] = (),
) -> List[DepthFactor]:
    """稀疏深度因子选择

    顺序: 无效深度 → 语义权重为 0 → 角速度门控 (整帧) → 重投影门控 →
    按图像行优先顺序排列并打分 → 每 s_d 个保留一个

    Args:
        candidates: (track_id, pixel) 列表
        depth_map: 深度图
        label_map: 标签图
        omega: 机体角速度 (rad/s)
        reprojection: track_id → 重投影误差范数 (像素), 缺失视为不通过
        cfg: 门控配置
        dynamic_ids: 动态类别编号 (为空则语义权重恒为 1)

    Returns:
        深度因子列表
    """
    dynamic_ids = list(dynamic_ids)
    survivors = []
    for track_id, pixel in candidates:
        z = sample_depth(pixel, depth_map)
        if z <= 0:
            continue
        w = semantic_weight(pixel, label_map, dynamic_ids)
        if w == 0:
            continue
        survivors.append((track_id, np.asarray(pixel, dtype=float), z, w))

    g = float(np.linalg.norm(omega)) <= cfg.tau_omega
    if not g:
        return []
    survivors = [s for s in survivors if reprojection.get(s[0], np.inf) <= cfg.tau_pi]

    survivors.sort(key=lambda s: (int(np.rint(s[1][1])), int(np.rint(s[1][0])), s[0]))
    factors = []
    for k, (track_id, pixel, z, w) in enumerate(survivors):
        if k % cfg.s_d != 0:
            continue
        factors.append(
            DepthFactor(
                track_id=track_id,
                pixel=pixel,
                z=z,
                sigma=cfg.sigma0 + cfg.sigma1 * z,
                eta=float(g) * w,
                score=depth_gradient(pixel, depth_map),
            )
        )
    return factors


class VioFrontend:
    """轨迹管理: 逐帧与上一帧匹配, 未匹配的关键点开启新轨迹"""

    def __init__(self, gates: GateConfig, dynamic_ids: Iterable[int] = (), semantic_mask: bool = False):
        self.gates = gates
        self.dynamic_ids = list(dynamic_ids)
        self.semantic_mask = semantic_mask
        self.tracks: Dict[int, Track] = {}
        self.active: List[int] = []
        self._prev_desc: Optional[np.ndarray] = None
        self._next_id = 0
        self.identity_errors = 0
        self.total_matches = 0
        self.masked = 0

    def process(
        self, frame_id: int, keypoints: KeypointSet, depth_map: np.ndarray, label_map: np.ndarray
    ) -> List[Track]:
        """处理一帧关键点

        Args:
            frame_id: 帧号
            keypoints: 当前帧关键点
            depth_map: 深度图 (采样 z)
            label_map: 标签图 (语义权重)

        Returns:
            本帧被观测的轨迹
        """
        # ---------- 1. 语义掩码: 动态像素上的关键点不参与匹配 ----------
        if self.semantic_mask and len(keypoints) > 0:
            weights = np.array(
                [semantic_weight(p, label_map, self.dynamic_ids) for p in keypoints.pixels]
            )
            self.masked += int(np.sum(weights == 0))
            keypoints = keypoints.subset(weights == 1)

        # ---------- 2. 匹配上一帧 ----------
        matches = []
        if self._prev_desc is not None:
            matches = match_frames(self._prev_desc, keypoints.descriptors, self.gates.ratio_threshold)
        matched_curr = {j: self.active[i] for i, j in matches}

        # ---------- 3. 延长或新建轨迹 ----------
        active = []
        for j in range(len(keypoints)):
            pixel = keypoints.pixels[j]
            obs = Observation(frame_id, pixel.copy(), sample_depth(pixel, depth_map), 1.0)
            lid = int(keypoints.ids[j])
            if j in matched_curr:
                track = self.tracks[matched_curr[j]]
                self.total_matches += 1
                if track.landmark_id != lid:
                    self.identity_errors += 1
            else:
                track = Track(self._next_id, lid)
                self.tracks[track.track_id] = track
                self._next_id += 1
            track.observations.append(obs)
            active.append(track.track_id)

        # 丢失的轨迹不再可匹配
        for tid in set(self.active) - set(active):
            self.tracks.pop(tid, None)
        self.active = active
        self._prev_desc = keypoints.descriptors
        return [self.tracks[t] for t in active]


if __name__ == "__main__":
    print("【huber】:", huber(2.0, 1.0))
    d = np.eye(3)
    print("【匹配】:", match_frames(d, d, 0.7))
