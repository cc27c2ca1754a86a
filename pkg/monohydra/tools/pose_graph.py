"""
关键帧位姿图: 里程计边 + 回环边, SE(3) 上的阻尼高斯-牛顿 (LM) 优化,
以及回环候选可用性诊断
"""

from dataclasses import dataclass, field
from typing import List, Dict, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse
import scipy.sparse.linalg
from scipy.spatial import cKDTree

try:
    from ..model_types import PoseGraphConfig, LoopCandidate
    from ..utils.geometry import Pose, exp_se3, log_se3, right_jacobian_inv_se3
except ImportError:
    from monohydra.model_types import PoseGraphConfig, LoopCandidate
    from monohydra.utils.geometry import Pose, exp_se3, log_se3, right_jacobian_inv_se3


@dataclass
class PoseGraphEdge:
    i: int
    j: int
    measurement: Pose  # Z_ij ≈ T_i⁻¹ T_j
    sqrt_info: np.ndarray  # (6, 6) 白化矩阵, 作用于 [angular; linear]
    kind: str = "odometry"


@dataclass
class PoseGraph:
    nodes: Dict[int, Pose] = field(default_factory=dict)
    edges: List[PoseGraphEdge] = field(default_factory=list)

    def add_node(self, node_id: int, pose: Pose) -> None:
        self.nodes[node_id] = pose.relabel()

    def add_edge(self, i: int, j: int, measurement: Pose, sqrt_info: np.ndarray, kind: str = "odometry") -> None:
        self.edges.append(PoseGraphEdge(i, j, measurement.relabel(), np.asarray(sqrt_info, dtype=float), kind))

    def node_ids(self) -> List[int]:
        return list(self.nodes)

    def copy(self) -> "PoseGraph":
        return PoseGraph(dict(self.nodes), list(self.edges))


@dataclass
class OptimizationResult:
    poses: Dict[int, Pose]
    initial_cost: float
    final_cost: float
    iterations: int
    converged: bool
    costs: List[float] = field(default_factory=list)


def sqrt_information(sigma_t: float, sigma_r: float) -> np.ndarray:
    """diag(1/σ_r ×3, 1/σ_t ×3)"""
    return np.diag([1.0 / sigma_r] * 3 + [1.0 / sigma_t] * 3)


def relative_pose(Ti: Pose, Tj: Pose) -> Pose:
    return Ti.relabel().inverse() @ Tj.relabel()


def edge_residual(Ti: Pose, Tj: Pose, Z: Pose) -> np.ndarray:
    """e = Log(Z⁻¹ · T_i⁻¹ · T_j), [angular; linear]"""
    return log_se3(Z.relabel().inverse() @ relative_pose(Ti, Tj)).vector


def build_graph(odometry: Sequence[Tuple[int, Pose]], cfg: PoseGraphConfig) -> PoseGraph:
    """由 VIO 位姿序列构建里程计链, 节点初值即 VIO 估计

    Args:
        odometry: (关键帧号, T_WB) 列表, 按时间排序
        cfg: 位姿图配置

    Returns:
        PoseGraph
    """
    graph = PoseGraph()
    W = sqrt_information(cfg.sigma_odom_t, cfg.sigma_odom_r)
    for k, (node_id, pose) in enumerate(odometry):
        graph.add_node(node_id, pose)
        if k > 0:
            prev_id, prev_pose = odometry[k - 1]
            graph.add_edge(prev_id, node_id, relative_pose(prev_pose, pose), W, "odometry")
    return graph


def residuals(graph: PoseGraph, poses: Optional[Dict[int, Pose]] = None) -> np.ndarray:
    """所有边的白化残差, 按边顺序堆叠"""
    poses = poses or graph.nodes
    if not graph.edges:
        return np.zeros(0)
    return np.concatenate(
        [e.sqrt_info @ edge_residual(poses[e.i], poses[e.j], e.measurement) for e in graph.edges]
    )


def graph_cost(graph: PoseGraph, poses: Optional[Dict[int, Pose]] = None) -> float:
    r = residuals(graph, poses)
    return float(r @ r)


def _linearize(graph: PoseGraph, poses: Dict[int, Pose], index: Dict[int, int]):
    n = 6 * len(index)
    rows, cols, vals = [], [], []
    r_all = []
    row = 0

    def _put(block: np.ndarray, node: int):
        if node not in index:
            return
        c0 = 6 * index[node]
        rr, cc = np.nonzero(np.ones((6, 6), dtype=bool))
        rows.extend(row + rr)
        cols.extend(c0 + cc)
        vals.extend(block[rr, cc])

    for e in graph.edges:
        Ti, Tj = poses[e.i], poses[e.j]
        err = edge_residual(Ti, Tj, e.measurement)
        Jr_inv = right_jacobian_inv_se3(err)
        J_j = e.sqrt_info @ Jr_inv
        J_i = -e.sqrt_info @ Jr_inv @ (Tj.inverse() @ Ti).adjoint()
        _put(J_i, e.i)
        _put(J_j, e.j)
        r_all.append(e.sqrt_info @ err)
        row += 6
    J = scipy.sparse.csr_matrix((vals, (rows, cols)), shape=(row, n))
    return J, np.concatenate(r_all) if r_all else np.zeros(0)


def _retract(poses: Dict[int, Pose], index: Dict[int, int], delta: np.ndarray) -> Dict[int, Pose]:
    out = dict(poses)
    for node, k in index.items():
        out[node] = poses[node] @ exp_se3(delta[6 * k : 6 * k + 6])
    return out


def optimize(graph: PoseGraph, cfg: PoseGraphConfig, anchor: Optional[int] = None) -> OptimizationResult:
    """阻尼高斯-牛顿: 代价上升时阻尼 ×10 并拒绝该步, 下降时 ÷10

    Args:
        graph: 位姿图 (第一个节点默认固定以消除规范自由度)
        cfg: max_iters、tol、initial_damping
        anchor: 固定节点, 默认第一个节点

    Returns:
        OptimizationResult, costs 为每次接受后的代价序列
    """
    ids = graph.node_ids()
    poses = dict(graph.nodes)
    cost = graph_cost(graph, poses)
    result = OptimizationResult(poses, cost, cost, 0, False, [cost])
    if not graph.edges or len(ids) < 2:
        result.converged = True
        return result
    anchor = ids[0] if anchor is None else anchor
    index = {node: k for k, node in enumerate(n for n in ids if n != anchor)}
    lam = cfg.initial_damping

    for it in range(1, cfg.max_iters + 1):
        result.iterations = it
        J, r = _linearize(graph, poses, index)
        H = (J.T @ J).tocsc()
        g = J.T @ r
        A = H + lam * scipy.sparse.identity(H.shape[0], format="csc")
        delta = -scipy.sparse.linalg.spsolve(A, g)
        if np.linalg.norm(delta) < cfg.tol:
            result.converged = True
            break
        candidate = _retract(poses, index, delta)
        new_cost = graph_cost(graph, candidate)
        if new_cost <= cost:
            poses, cost = candidate, new_cost
            lam = max(lam / 10.0, 1e-12)
            result.costs.append(cost)
        else:
            lam *= 10.0

    result.poses = poses
    result.final_cost = cost
    if not result.converged:
        print(f"【位姿图】未在 {cfg.max_iters} 次迭代内收敛, 最终代价 {cost:.6e}")
    return result


# ---------- 回环 ----------
def propose_loops(
    positions: np.ndarray, node_ids: Sequence[int], radius: float, min_separation: int
) -> List[LoopCandidate]:
    """估计轨迹上距离 ≤ radius 且间隔 ≥ min_separation 个关键帧的点对"""
    positions = np.asarray(positions, dtype=float).reshape(-1, 3)
    if len(positions) < 2:
        return []
    pairs = cKDTree(positions).query_pairs(r=radius, output_type="ndarray")
    out = []
    for a, b in sorted(map(tuple, pairs)):
        if abs(b - a) < min_separation:
            continue
        d = float(np.linalg.norm(positions[a] - positions[b]))
        out.append(LoopCandidate(pair=(int(node_ids[a]), int(node_ids[b])), distance=d))
    return out


def accept_loops(
    graph: PoseGraph,
    candidates: List[LoopCandidate],
    gt_poses: Dict[int, Pose],
    cfg: PoseGraphConfig,
    rng: Optional[np.random.Generator] = None,
) -> int:
    """接受钩子: 真值距离 ≤ accept_radius 的候选被接受, 测量取真值相对位姿加噪声

    Returns:
        加入的回环边数
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    W = sqrt_information(cfg.sigma_lc_t, cfg.sigma_lc_r)
    added = 0
    for cand in candidates:
        p, q = cand.pair
        if p not in gt_poses or q not in gt_poses:
            continue
        Z = relative_pose(gt_poses[p], gt_poses[q])
        cand.gt_distance = float(np.linalg.norm(Z.translation))
        if cand.gt_distance > cfg.accept_radius:
            continue
        noise = np.concatenate([rng.standard_normal(3) * cfg.loop_noise_r, rng.standard_normal(3) * cfg.loop_noise_t])
        if np.any(noise):
            Z = Z @ exp_se3(noise)
        graph.add_edge(p, q, Z, W, "loop")
        cand.accepted = True
        added += 1
    return added


if __name__ == "__main__":
    cfg = PoseGraphConfig()
    odo = [(k, Pose.from_yaw(0.1 * k, np.array([k, 0.0, 0.0]))) for k in range(4)]
    g = build_graph(odo, cfg)
    res = optimize(g, cfg)
    print("【位姿图】:", res.initial_cost, res.final_cost, res.iterations)
