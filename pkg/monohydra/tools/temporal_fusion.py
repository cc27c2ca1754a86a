"""
时序位姿扭曲融合: 过去帧的深度/标签按相对位姿前向投影到当前帧 (z-buffer),
经深度一致性与动态类别门控后取均值 / 多数投票; 无支持的像素回退到当前帧预测
"""

from collections import deque
from dataclasses import dataclass
from typing import List, Deque, Iterable, Optional, Sequence

import numpy as np

try:
    from ..model_types import FusionConfig
    from ..utils.geometry import Pose, CameraIntrinsics, propagate_points, project_points
except ImportError:
    from monohydra.model_types import FusionConfig
    from monohydra.utils.geometry import Pose, CameraIntrinsics, propagate_points, project_points

INVALID_LABEL = -1


@dataclass
class WarpedFrame:
    depth: np.ndarray  # (H, W) float64, 无样本为 0
    labels: np.ndarray  # (H, W) int16, 无样本为 -1
    valid: np.ndarray  # (H, W) bool


@dataclass
class FusedFrame:
    depth: np.ndarray
    labels: np.ndarray
    support: np.ndarray  # 每个像素通过门控的样本数
    fallback: np.ndarray  # support == 0


@dataclass
class _WindowEntry:
    depth: np.ndarray
    labels: np.ndarray
    T_WC: Pose


def warp_frame(depth: np.ndarray, labels: np.ndarray, T_rel: Pose, K: CameraIntrinsics) -> WarpedFrame:
    """把过去帧前向投影到当前帧, 每个目标像素只保留最近的样本

    Args:
        depth: 过去帧深度 (无效为 0)
        labels: 过去帧标签
        T_rel: 过去相机系到当前相机系的相对位姿 T_{t-τ→t}
        K: 相机内参

    Returns:
        WarpedFrame, 标签随其获胜的深度样本一起搬运
    """
    H, W = depth.shape
    points, valid = propagate_points(depth, K, T_rel)
    src_labels = np.asarray(labels)[valid]
    pixels, z, front = project_points(points, K)
    u = np.rint(pixels[:, 0])
    v = np.rint(pixels[:, 1])
    keep = front & (u >= 0) & (u <= W - 1) & (v >= 0) & (v <= H - 1)

    out_depth = np.zeros(H * W)
    out_labels = np.full(H * W, INVALID_LABEL, dtype=np.int16)
    if np.any(keep):
        idx = (v[keep] * W + u[keep]).astype(np.int64)
        zk = z[keep]
        lk = src_labels[keep]
        # 按目标像素排序, 同一像素内深度升序, 取每组第一个
        order = np.lexsort((zk, idx))
        _, first = np.unique(idx[order], return_index=True)
        winners = order[first]
        out_depth[idx[winners]] = zk[winners]
        out_labels[idx[winners]] = lk[winners]
    out_depth = out_depth.reshape(H, W)
    return WarpedFrame(out_depth, out_labels.reshape(H, W), out_depth > 0)


def temporal_gate(
    warped_depth: np.ndarray,
    warped_labels: np.ndarray,
    current_depth: np.ndarray,
    delta_d: float,
    dynamic_ids: Iterable[int] = (),
) -> np.ndarray:
    """α = 1 当且仅当两侧深度有效、|D̃ − D̂| < δ_d 且扭曲标签不是动态类别"""
    warped_depth = np.asarray(warped_depth, dtype=float)
    current_depth = np.asarray(current_depth, dtype=float)
    alpha = (warped_depth > 0) & (current_depth > 0) & (np.asarray(warped_labels) >= 0)
    alpha &= np.abs(warped_depth - current_depth) < delta_d
    dyn = list(dynamic_ids)
    if dyn:
        alpha &= ~np.isin(warped_labels, dyn)
    return alpha


def fuse(
    current_depth: np.ndarray,
    current_labels: np.ndarray,
    window: Sequence[WarpedFrame],
    cfg: FusionConfig,
    dynamic_ids: Iterable[int] = (),
    n_classes: Optional[int] = None,
) -> FusedFrame:
    """门控均值与多数投票, 票数相同取最小类别号

    Args:
        current_depth: 当前帧深度预测 D̂_t
        current_labels: 当前帧标签预测 Ŝ_t
        window: 已扭曲到当前帧的过去帧 (最多 K 个)
        cfg: 融合配置
        dynamic_ids: 动态类别编号
        n_classes: 类别数 (默认由数据推断)

    Returns:
        FusedFrame
    """
    H, W = current_depth.shape
    window = list(window)[-cfg.K :] if cfg.K > 0 else []
    if not window:
        return FusedFrame(
            current_depth.copy(),
            current_labels.copy(),
            np.zeros((H, W), dtype=np.int32),
            np.ones((H, W), dtype=bool),
        )

    dynamic_ids = list(dynamic_ids)
    alphas = [temporal_gate(w.depth, w.labels, current_depth, cfg.delta_d, dynamic_ids) for w in window]
    support = np.sum(alphas, axis=0).astype(np.int32)
    depth_sum = np.zeros((H, W))
    for a, w in zip(alphas, window):
        depth_sum += np.where(a, w.depth, 0.0)
    fallback = support == 0

    fused_depth = np.asarray(current_depth).copy()
    has = ~fallback
    fused_depth[has] = (depth_sum[has] / np.maximum(support[has], cfg.epsilon)).astype(fused_depth.dtype)

    if n_classes is None:
        n_classes = int(max([np.max(current_labels, initial=0)] + [np.max(w.labels, initial=0) for w in window])) + 1
    votes = np.zeros((n_classes, H, W), dtype=np.int32)
    rows, cols = np.indices((H, W))
    for a, w in zip(alphas, window):
        np.add.at(votes, (w.labels[a], rows[a], cols[a]), 1)
    fused_labels = np.asarray(current_labels).copy()
    # argmax 返回第一个最大值, 即最小类别号
    fused_labels[has] = np.argmax(votes, axis=0)[has].astype(fused_labels.dtype)
    return FusedFrame(fused_depth, fused_labels, support, fallback)


def flicker_energy(previous: Optional[np.ndarray], current: np.ndarray) -> float:
    """½·mean((D_t − D_{t−1})²) over pixels valid in both frames"""
    if previous is None:
        return 0.0
    both = (previous > 0) & (current > 0)
    if not np.any(both):
        return 0.0
    diff = np.asarray(current, dtype=float)[both] - np.asarray(previous, dtype=float)[both]
    return float(0.5 * np.mean(diff * diff))


class TemporalFuser:
    """持有最近 K 帧原始预测与相机位姿, 每帧重新扭曲到当前帧"""

    def __init__(self, cfg: FusionConfig, K: CameraIntrinsics, dynamic_ids: Iterable[int] = (), n_classes: Optional[int] = None):
        self.cfg = cfg
        self.K = K
        self.dynamic_ids = list(dynamic_ids)
        self.n_classes = n_classes
        self.window: Deque[_WindowEntry] = deque(maxlen=max(cfg.K, 1))

    def fuse(self, depth: np.ndarray, labels: np.ndarray, T_WC: Pose) -> FusedFrame:
        """以当前相机位姿 T_WC 融合窗口内的过去帧"""
        if self.cfg.K == 0:
            return fuse(depth, labels, [], self.cfg)
        T_CW = T_WC.inverse()
        warped: List[WarpedFrame] = []
        for entry in self.window:
            T_rel = T_CW.relabel("world", "camera") @ entry.T_WC.relabel("camera", "world")
            warped.append(warp_frame(entry.depth, entry.labels, T_rel, self.K))
        return fuse(depth, labels, warped, self.cfg, self.dynamic_ids, self.n_classes)

    def push(self, depth: np.ndarray, labels: np.ndarray, T_WC: Pose) -> None:
        """把当前帧原始预测与位姿存入窗口"""
        if self.cfg.K > 0:
            self.window.append(_WindowEntry(depth, labels, T_WC))

    def reset(self) -> None:
        self.window.clear()


if __name__ == "__main__":
    K = CameraIntrinsics(fx=100, fy=100, cx=2, cy=2, width=5, height=5)
    d = np.full((5, 5), 3.0)
    w = warp_frame(d, np.zeros((5, 5), dtype=np.int16), Pose.identity(), K)
    print("【扭曲】:", w.depth[2])
