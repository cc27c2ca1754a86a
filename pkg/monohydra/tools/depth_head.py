"""
自适应分箱深度头数值与多任务损失

网络层 (宽度/偏移预测) 以给定数组输入; 这里只实现分箱、期望深度、截断、
各任务损失及其解析梯度、跨任务一致性惩罚与不确定性加权。
"""

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import softmax, expit, log_softmax

try:
    from ..model_types import MonoHydraError, BinConfig, DepthHeadConfig
    from ..utils.geometry import CameraIntrinsics, backproject_map
except ImportError:
    from monohydra.model_types import MonoHydraError, BinConfig, DepthHeadConfig
    from monohydra.utils.geometry import CameraIntrinsics, backproject_map

LossResult = Union[float, Tuple[float, np.ndarray]]


class DomainError(MonoHydraError):
    """损失或分箱输入超出定义域"""


@dataclass
class BinPartition:
    widths: np.ndarray  # 归一化宽度, 和为 1
    edges: np.ndarray  # e_0..e_N (米)
    centers: np.ndarray  # c_1..c_N (米)


@dataclass
class TaskLossState:
    losses: np.ndarray  # 各任务损失 L_a
    log_sigmas: np.ndarray  # 各任务 log σ_a


def build_bins(logits: np.ndarray, cfg: BinConfig) -> BinPartition:
    """softmax 宽度 → 累加边界 → 中点中心

    Args:
        logits: (n_bins,) 宽度 logits
        cfg: 分箱配置

    Returns:
        BinPartition
    """
    logits = np.asarray(logits, dtype=float).reshape(-1)
    if logits.shape[0] != cfg.n_bins:
        raise DomainError(f"expected {cfg.n_bins} logits, got {logits.shape[0]}")
    if not np.all(np.isfinite(logits)):
        raise DomainError("bin logits must be finite")
    w = softmax(logits)
    span = cfg.d_max - cfg.d_min
    edges = np.concatenate([[cfg.d_min], cfg.d_min + np.cumsum(span * w)])
    edges[-1] = cfg.d_max
    centers = 0.5 * (edges[:-1] + edges[1:])
    return BinPartition(w, edges, centers)


def expected_depth(bin_probs: np.ndarray, part: BinPartition) -> np.ndarray:
    """D_c(x) = Σ_i p_i(x) c_i

    Args:
        bin_probs: (..., n_bins) 每像素概率单纯形
        part: 分箱

    Returns:
        (...) 粗深度
    """
    p = np.asarray(bin_probs, dtype=float)
    if p.shape[-1] != part.centers.shape[0]:
        raise DomainError("bin probability dimension does not match partition")
    if np.any(p < 0) or np.any(np.abs(p.sum(axis=-1) - 1.0) > 1e-6):
        raise DomainError("bin probabilities must lie on the simplex")
    return p @ part.centers


def refine_and_clamp(D_c: np.ndarray, offsets: np.ndarray, cfg: BinConfig) -> np.ndarray:
    """D̂ = clamp(D_c + offset, d_min, d_max)"""
    D_c = np.asarray(D_c, dtype=float)
    offsets = np.asarray(offsets, dtype=float)
    if offsets.shape != D_c.shape and offsets.size != 1:
        raise DomainError(f"offset shape {offsets.shape} does not match depth shape {D_c.shape}")
    return np.clip(D_c + offsets, cfg.d_min, cfg.d_max)


def clamp_depth_map(depth: np.ndarray, cfg: BinConfig) -> np.ndarray:
    """只截断有效像素, 无效标记 (≤0) 保持为 0"""
    depth = np.asarray(depth, dtype=float)
    valid = np.isfinite(depth) & (depth > 0)
    return np.where(valid, refine_and_clamp(np.where(valid, depth, cfg.d_min), 0.0, cfg), 0.0)


def loss_silog(
    D: np.ndarray,
    D_star: np.ndarray,
    lam: float = 0.85,
    mask: Optional[np.ndarray] = None,
    return_grad: bool = False,
) -> LossResult:
    """尺度不变对数损失 mean(g²) − λ·mean(g)², g = ln D − ln D*"""
    D = np.asarray(D, dtype=float)
    D_star = np.asarray(D_star, dtype=float)
    valid = (D > 0) & (D_star > 0)
    if mask is not None:
        valid &= mask
    n = int(valid.sum())
    if n == 0:
        raise DomainError("SILog needs at least one valid pixel")
    g = np.log(D[valid]) - np.log(D_star[valid])
    mean_g = g.mean()
    loss = float(np.mean(g * g) - lam * mean_g * mean_g)
    if not return_grad:
        return loss
    grad = np.zeros_like(D)
    grad[valid] = (2.0 * g / n - 2.0 * lam * mean_g / n) / D[valid]
    return loss, grad


def _check_simplex(p: np.ndarray, name: str) -> None:
    if np.any(p < 0) or np.any(np.abs(p.sum(axis=-1) - 1.0) > 1e-6):
        raise DomainError(f"{name} must lie on the simplex")


def loss_ce(probs: np.ndarray, target: np.ndarray, return_grad: bool = False) -> LossResult:
    """类别交叉熵, 输入为概率, 目标为 one-hot 或软标签; 按像素取平均"""
    p = np.asarray(probs, dtype=float)
    t = np.asarray(target, dtype=float)
    if p.shape != t.shape:
        raise DomainError("CE prediction and target shapes differ")
    _check_simplex(p, "CE prediction")
    _check_simplex(t, "CE target")
    if np.any((p <= 0) & (t > 0)):
        raise DomainError("CE prediction has zero probability on a target class")
    n = p.reshape(-1, p.shape[-1]).shape[0]
    logp = np.log(np.where(t > 0, p, 1.0))
    loss = float(-np.sum(t * logp) / n)
    if not return_grad:
        return loss
    grad = np.where(t > 0, -t / np.where(p > 0, p, 1.0), 0.0) / n
    return loss, grad


def loss_ce_logits(logits: np.ndarray, target: np.ndarray, return_grad: bool = False) -> LossResult:
    """由 logits 计算的交叉熵, 梯度 (softmax − t)/n"""
    z = np.asarray(logits, dtype=float)
    t = np.asarray(target, dtype=float)
    if z.shape != t.shape:
        raise DomainError("CE logits and target shapes differ")
    _check_simplex(t, "CE target")
    n = z.reshape(-1, z.shape[-1]).shape[0]
    loss = float(-np.sum(t * log_softmax(z, axis=-1)) / n)
    if not return_grad:
        return loss
    return loss, (softmax(z, axis=-1) - t) / n


def loss_bce(pred: np.ndarray, target: np.ndarray, return_grad: bool = False) -> LossResult:
    """二值交叉熵, pred 与 target 都在 [0, 1]"""
    p = np.asarray(pred, dtype=float)
    t = np.asarray(target, dtype=float)
    if p.shape != t.shape:
        raise DomainError("BCE prediction and target shapes differ")
    if np.any((p < 0) | (p > 1)) or np.any((t < 0) | (t > 1)):
        raise DomainError("BCE inputs must lie in [0, 1]")
    n = p.size
    eps = 1e-12
    pc = np.clip(p, eps, 1.0 - eps)
    loss = float(-np.sum(t * np.log(pc) + (1.0 - t) * np.log(1.0 - pc)) / n)
    if not return_grad:
        return loss
    return loss, (pc - t) / (pc * (1.0 - pc)) / n


def loss_cosine(pred: np.ndarray, target: np.ndarray, return_grad: bool = False) -> LossResult:
    """余弦距离 mean(1 − ⟨p/|p|, t⟩), target 为单位向量"""
    p = np.asarray(pred, dtype=float).reshape(-1, 3)
    t = np.asarray(target, dtype=float).reshape(-1, 3)
    if p.shape != t.shape:
        raise DomainError("cosine prediction and target shapes differ")
    if np.any(np.abs(np.linalg.norm(t, axis=1) - 1.0) > 1e-6):
        raise DomainError("cosine target vectors must be unit-norm")
    norm = np.linalg.norm(p, axis=1, keepdims=True)
    if np.any(norm <= 0):
        raise DomainError("cosine prediction has a zero vector")
    n = p.shape[0]
    cos = np.sum(p * t, axis=1, keepdims=True) / norm
    loss = float(np.mean(1.0 - cos))
    if not return_grad:
        return loss
    grad = -(t / norm - cos * p / (norm * norm)) / n
    return loss, grad.reshape(np.shape(pred))


def depth_normals(depth: np.ndarray, K: CameraIntrinsics) -> Tuple[np.ndarray, np.ndarray]:
    """由深度图反投影点网格的中心差分求法向, 朝向相机; 边界像素排除

    Returns:
        (H, W, 3) 单位法向, (H, W) 有效掩码
    """
    points, valid = backproject_map(depth, K)
    H, W = depth.shape
    normals = np.zeros((H, W, 3))
    mask = np.zeros((H, W), dtype=bool)
    if H < 3 or W < 3:
        return normals, mask
    du = 0.5 * (points[1:-1, 2:] - points[1:-1, :-2])
    dv = 0.5 * (points[2:, 1:-1] - points[:-2, 1:-1])
    n = np.cross(du, dv)
    norm = np.linalg.norm(n, axis=-1, keepdims=True)
    inner = (
        valid[1:-1, 1:-1] & valid[1:-1, 2:] & valid[1:-1, :-2] & valid[2:, 1:-1] & valid[:-2, 1:-1]
    ) & (norm[..., 0] > 0)
    n = np.where(norm > 0, n / np.where(norm > 0, norm, 1.0), 0.0)
    facing = np.sum(n * points[1:-1, 1:-1], axis=-1) > 0
    n[facing] *= -1.0
    normals[1:-1, 1:-1] = np.where(inner[..., None], n, 0.0)
    mask[1:-1, 1:-1] = inner
    return normals, mask


def loss_depth_normal(depth: np.ndarray, normals_pred: np.ndarray, K: CameraIntrinsics) -> float:
    """L_dn: 深度导出法向与预测法向的 L1 差 (有效内部像素平均)"""
    n_depth, mask = depth_normals(depth, K)
    if not np.any(mask):
        return 0.0
    diff = np.abs(n_depth[mask] - np.asarray(normals_pred, dtype=float)[mask]).sum(axis=-1)
    return float(diff.mean())


def semantic_edges(semantics: np.ndarray) -> np.ndarray:
    """φ(S): 4 邻域中任一像素 argmax 标签不同即为边缘; 接受标签图或 (H, W, C) logits"""
    S = np.asarray(semantics)
    labels = S.argmax(axis=-1) if S.ndim == 3 else S
    edge = np.zeros(labels.shape, dtype=bool)
    diff_x = labels[:, 1:] != labels[:, :-1]
    diff_y = labels[1:, :] != labels[:-1, :]
    edge[:, 1:] |= diff_x
    edge[:, :-1] |= diff_x
    edge[1:, :] |= diff_y
    edge[:-1, :] |= diff_y
    return edge


def loss_semantic_edge(edge_logits: np.ndarray, semantics: np.ndarray) -> float:
    """L_se = mean |σ(E) − φ(S)|"""
    phi = semantic_edges(semantics).astype(float)
    return float(np.mean(np.abs(expit(np.asarray(edge_logits, dtype=float)) - phi)))


def loss_consistency(
    kind: str,
    prediction: np.ndarray,
    counterpart: np.ndarray,
    K: Optional[CameraIntrinsics] = None,
) -> float:
    """跨任务一致性惩罚

    Args:
        kind: "depth_normal" (prediction 为深度, counterpart 为法向) 或
              "semantic_edge" (prediction 为边缘 logits, counterpart 为语义)
        prediction: 见 kind
        counterpart: 见 kind
        K: depth_normal 需要的相机内参
    """
    if kind == "depth_normal":
        if K is None:
            raise DomainError("depth-normal consistency needs camera intrinsics")
        return loss_depth_normal(prediction, counterpart, K)
    if kind == "semantic_edge":
        return loss_semantic_edge(prediction, counterpart)
    raise DomainError(f"unknown consistency term {kind!r}")


def loss_uncertainty_weighted(state: TaskLossState) -> Tuple[float, np.ndarray]:
    """L = Σ_a (L_a / 2σ_a² + log σ_a), 对 log σ_a 的梯度 −L_a e^{−2s_a} + 1"""
    L = np.asarray(state.losses, dtype=float)
    s = np.asarray(state.log_sigmas, dtype=float)
    if L.shape != s.shape:
        raise DomainError("loss and log-sigma vectors differ in length")
    inv_var = np.exp(-2.0 * s)
    total = float(np.sum(0.5 * L * inv_var + s))
    grad = -L * inv_var + 1.0
    return total, grad


def auxiliary_loss(per_scale_losses: Sequence[float], weights: Optional[Sequence[float]] = None) -> float:
    """多尺度辅助监督的加权和, 默认权重 1"""
    losses = np.asarray(per_scale_losses, dtype=float)
    w = np.ones_like(losses) if weights is None else np.asarray(weights, dtype=float)
    if w.shape != losses.shape:
        raise DomainError("auxiliary weights do not match the number of scales")
    return float(np.sum(w * losses))


def depth_supervision(
    D: np.ndarray,
    D_star: np.ndarray,
    scales: Sequence[Tuple[np.ndarray, np.ndarray]],
    cfg: DepthHeadConfig,
    mask: Optional[np.ndarray] = None,
) -> float:
    """深度监督总损失: 全分辨率 SILog + 各解码尺度 SILog 的辅助加权和

    Args:
        D: 全分辨率预测深度
        D_star: 全分辨率真值深度
        scales: 每个辅助尺度的 (预测, 真值), 个数须与 cfg.aux_weights 一致
        cfg: 深度头配置, 取 silog_lambda 与 aux_weights
        mask: 全分辨率有效掩码

    Returns:
        总损失
    """
    main = loss_silog(D, D_star, lam=cfg.silog_lambda, mask=mask)
    per_scale = [loss_silog(p, t, lam=cfg.silog_lambda) for p, t in scales]
    return main + auxiliary_loss(per_scale, cfg.aux_weights)


if __name__ == "__main__":
    part = build_bins(np.zeros(2), BinConfig(n_bins=2))
    print("【分箱】:", part.edges, part.centers)
    print("【SILog】:", loss_silog(np.array([1.0, np.e]), np.array([1.0, 1.0]), lam=1.0))
