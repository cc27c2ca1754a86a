"""
评估指标: 轨迹 ATE、重建精度/完整度/Chamfer、标签迁移 mIoU、
Radius F1、Box F1、场景图编辑相似度与各层 F1
"""

from dataclasses import dataclass, field
from typing import List, Dict, Optional, Sequence, Tuple, Iterable

import numpy as np
from scipy.spatial import cKDTree

try:
    from ..model_types import MonoHydraError, MetricsConfig
    from ..utils.geometry import Pose
    from ..utils.scene_graph import SceneGraph, ObjectRecord, UNDIRECTED
except ImportError:
    from monohydra.model_types import MonoHydraError, MetricsConfig
    from monohydra.utils.geometry import Pose
    from monohydra.utils.scene_graph import SceneGraph, ObjectRecord, UNDIRECTED

STRUCTURAL_RELATIONS = ("contains", "adjacent", "supports")


class MetricInputError(MonoHydraError):
    """指标输入不足或为空"""


# ---------- 轨迹 ----------
def associate(est_stamps: Sequence[float], ref_stamps: Sequence[float], tolerance: float) -> List[Tuple[int, int]]:
    """按时间差从小到大贪心一对一关联

    Returns:
        (估计下标, 参考下标) 列表, 按估计下标排序
    """
    est = np.asarray(est_stamps, dtype=float)
    ref = np.asarray(ref_stamps, dtype=float)
    if len(est) == 0 or len(ref) == 0:
        return []
    diff = np.abs(est[:, None] - ref[None, :])
    cand = np.argwhere(diff <= tolerance)
    order = np.lexsort((cand[:, 1], cand[:, 0], diff[cand[:, 0], cand[:, 1]]))
    used_e, used_r = set(), set()
    matches = []
    for a, b in cand[order]:
        if a in used_e or b in used_r:
            continue
        used_e.add(a)
        used_r.add(b)
        matches.append((int(a), int(b)))
    return sorted(matches)


def align_rigid(model: np.ndarray, data: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """闭式刚体对齐 (无尺度), 求 R, t 使 R·model + t ≈ data"""
    model = np.asarray(model, dtype=float)
    data = np.asarray(data, dtype=float)
    mu_m = model.mean(axis=0)
    mu_d = data.mean(axis=0)
    W = (data - mu_d).T @ (model - mu_m)
    U, _, Vt = np.linalg.svd(W)
    S = np.eye(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        S[2, 2] = -1.0
    R = U @ S @ Vt
    return R, mu_d - R @ mu_m


def translation_errors(est: np.ndarray, ref: np.ndarray, align: str = "rigid") -> np.ndarray:
    """逐位姿平移误差 (对齐后)"""
    est = np.asarray(est, dtype=float).reshape(-1, 3)
    ref = np.asarray(ref, dtype=float).reshape(-1, 3)
    if len(est) != len(ref):
        raise MetricInputError(f"trajectory length mismatch {len(est)} vs {len(ref)}")
    if align == "rigid":
        if len(est) < 3:
            raise MetricInputError(f"rigid alignment needs at least 3 associated poses, got {len(est)}")
        R, t = align_rigid(est, ref)
        est = est @ R.T + t
    elif len(est) == 0:
        raise MetricInputError("no associated poses")
    return np.linalg.norm(est - ref, axis=1)


def ate_rmse(est: np.ndarray, ref: np.ndarray, align: str = "rigid") -> float:
    """已关联位置序列的 ATE (RMSE)"""
    e = translation_errors(est, ref, align)
    return float(np.sqrt(np.mean(e * e)))


def trajectory_ate(
    est: Sequence[Tuple[float, Pose]],
    ref: Sequence[Tuple[float, Pose]],
    tolerance: float = 0.02,
    align: str = "rigid",
) -> float:
    pairs = associate([t for t, _ in est], [t for t, _ in ref], tolerance)
    e = np.array([est[a][1].translation for a, _ in pairs]).reshape(-1, 3)
    r = np.array([ref[b][1].translation for _, b in pairs]).reshape(-1, 3)
    return ate_rmse(e, r, align)


# ---------- 点云 ----------
def nearest_neighbors(query: np.ndarray, ref: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    query = np.asarray(query, dtype=float).reshape(-1, 3)
    ref = np.asarray(ref, dtype=float).reshape(-1, 3)
    if len(ref) == 0:
        raise MetricInputError("empty reference point set")
    dist, idx = cKDTree(ref).query(query)
    return np.asarray(dist, dtype=float), np.asarray(idx, dtype=np.int64)


def recon_quality(
    pred: np.ndarray, gt: np.ndarray, trim: Optional[float] = None
) -> Tuple[float, float, float]:
    """(accuracy, completeness, chamfer)

    accuracy: pred → gt 最近邻平均距离; completeness: gt → pred; chamfer 为两者均值。
    trim 给定时忽略大于 trim 的最近邻距离。
    """
    pred = np.asarray(pred, dtype=float).reshape(-1, 3)
    gt = np.asarray(gt, dtype=float).reshape(-1, 3)
    if len(pred) == 0 or len(gt) == 0:
        raise MetricInputError("reconstruction metrics need nonempty point sets")
    d_pg, _ = nearest_neighbors(pred, gt)
    d_gp, _ = nearest_neighbors(gt, pred)
    if trim is not None:
        d_pg = d_pg[d_pg <= trim]
        d_gp = d_gp[d_gp <= trim]
    acc = float(np.mean(d_pg)) if len(d_pg) else 0.0
    comp = float(np.mean(d_gp)) if len(d_gp) else 0.0
    return acc, comp, 0.5 * (acc + comp)


def mesh_label_miou(
    pred_points: np.ndarray,
    pred_labels: np.ndarray,
    gt_points: np.ndarray,
    gt_labels: np.ndarray,
    classes: Iterable[int],
) -> Tuple[Dict[int, float], float]:
    """每个有标签的真值点取最近预测点的标签, 按混淆矩阵计算逐类 IoU

    Returns:
        (类别 → IoU, 平均 IoU); 真值与预测中都不出现的类别不参与平均
    """
    gt_labels = np.asarray(gt_labels)
    labeled = gt_labels >= 0
    if not np.any(labeled):
        raise MetricInputError("ground truth has no labeled points")
    _, idx = nearest_neighbors(np.asarray(gt_points)[labeled], pred_points)
    transferred = np.asarray(pred_labels)[idx]
    truth = gt_labels[labeled]
    per_class: Dict[int, float] = {}
    for c in classes:
        tp = int(np.sum((transferred == c) & (truth == c)))
        fp = int(np.sum((transferred == c) & (truth != c)))
        fn = int(np.sum((transferred != c) & (truth == c)))
        if tp + fp + fn == 0:
            continue
        per_class[int(c)] = tp / (tp + fp + fn)
    mean = float(np.mean(list(per_class.values()))) if per_class else 0.0
    return per_class, mean


def icp(
    source: np.ndarray, target: np.ndarray, max_iters: int = 30, tol: float = 1e-8
) -> Tuple[Pose, np.ndarray, float]:
    """点到点 ICP (KD 树 + SVD)

    Returns:
        (source → target 位姿, 对齐后的 source, 最终 RMSE)
    """
    src = np.asarray(source, dtype=float).reshape(-1, 3)
    tree = cKDTree(np.asarray(target, dtype=float).reshape(-1, 3))
    R_tot, t_tot = np.eye(3), np.zeros(3)
    cur = src.copy()
    prev = np.inf
    rmse = np.inf
    for _ in range(max_iters):
        d, idx = tree.query(cur)
        rmse = float(np.sqrt(np.mean(d * d)))
        if abs(prev - rmse) < tol:
            break
        prev = rmse
        R, t = align_rigid(cur, tree.data[idx])
        cur = cur @ R.T + t
        R_tot, t_tot = R @ R_tot, R @ t_tot + t
    return Pose.from_rt(R_tot, t_tot), cur, rmse


# ---------- F1 ----------
@dataclass
class MatchResult:
    tp: int
    fp: int
    fn: int
    precision: float
    recall: float
    f1: float
    matches: List[Tuple[int, int, float]] = field(default_factory=list)


def f1_from_counts(tp: int, fp: int, fn: int) -> Tuple[float, float, float]:
    """(precision, recall, F1); 预测与真值都为空时记为 1"""
    if tp + fp == 0 and tp + fn == 0:
        return 1.0, 1.0, 1.0
    p = tp / (tp + fp) if tp + fp > 0 else 0.0
    r = tp / (tp + fn) if tp + fn > 0 else 0.0
    f = 2 * p * r / (p + r) if p + r > 0 else 0.0
    return p, r, f


def _greedy(scores: List[Tuple[float, int, int]]) -> List[Tuple[int, int, float]]:
    used_p, used_r = set(), set()
    out = []
    for s, i, j in sorted(scores):
        if i in used_p or j in used_r:
            continue
        used_p.add(i)
        used_r.add(j)
        out.append((i, j, s))
    return out


def radius_f1(pred: Sequence[ObjectRecord], ref: Sequence[ObjectRecord], r: float) -> MatchResult:
    """同类别、按中心距离升序贪心一对一匹配, 距离 ≤ r 计为 TP"""
    scores = []
    for i, a in enumerate(pred):
        for j, b in enumerate(ref):
            if a.label != b.label:
                continue
            d = float(np.linalg.norm(np.asarray(a.centroid) - np.asarray(b.centroid)))
            if d <= r:
                scores.append((d, i, j))
    matches = _greedy(scores)
    tp = len(matches)
    p, rec, f = f1_from_counts(tp, len(pred) - tp, len(ref) - tp)
    return MatchResult(tp, len(pred) - tp, len(ref) - tp, p, rec, f, matches)


def box_iou(a: np.ndarray, b: np.ndarray) -> float:
    """轴对齐 3D 包围盒 IoU, 盒子格式 (xmin, ymin, zmin, xmax, ymax, zmax)"""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    inter = np.prod(np.clip(np.minimum(a[3:], b[3:]) - np.maximum(a[:3], b[:3]), 0.0, None))
    va = np.prod(a[3:] - a[:3])
    vb = np.prod(b[3:] - b[:3])
    union = va + vb - inter
    return float(inter / union) if union > 0 else 0.0


def box_f1(pred: Sequence[ObjectRecord], ref: Sequence[ObjectRecord], iou_thresh: float) -> MatchResult:
    """同类别、按 IoU 降序贪心一对一匹配, IoU ≥ 阈值计为 TP"""
    scores = []
    for i, a in enumerate(pred):
        for j, b in enumerate(ref):
            if a.label != b.label:
                continue
            iou = box_iou(a.box, b.box)
            if iou > 0 and iou >= iou_thresh:
                scores.append((-iou, i, j))
    matches = [(i, j, -s) for i, j, s in _greedy(scores)]
    tp = len(matches)
    p, rec, f = f1_from_counts(tp, len(pred) - tp, len(ref) - tp)
    return MatchResult(tp, len(pred) - tp, len(ref) - tp, p, rec, f, matches)


# ---------- 场景图 ----------
@dataclass
class GraphEditResult:
    d_V: int
    d_E: int
    similarity: float
    matching: Dict[str, str] = field(default_factory=dict)
    substitutions: int = 0


def _footprint_iou(a: np.ndarray, b: np.ndarray) -> float:
    ix = max(0.0, min(a[3], b[3]) - max(a[0], b[0]))
    iy = max(0.0, min(a[4], b[4]) - max(a[1], b[1]))
    inter = ix * iy
    union = (a[3] - a[0]) * (a[4] - a[1]) + (b[3] - b[0]) * (b[4] - b[1]) - inter
    return inter / union if union > 0 else 0.0


def match_graph_nodes(pred: SceneGraph, ref: SceneGraph, cfg: MetricsConfig) -> Tuple[Dict[str, str], int]:
    """逐层空间匹配

    building 直接匹配; room 按地面轮廓 IoU 降序; object 先同类别按距离 ≤ r,
    剩余的跨类别距离 ≤ r 作为替换; place 按距离 ≤ place_radius。

    Returns:
        (pred 节点 → ref 节点, 类别替换数)
    """
    matching: Dict[str, str] = {}
    pb, rb = pred.nodes("building"), ref.nodes("building")
    if pb and rb:
        matching[pb[0]] = rb[0]

    p_rooms, r_rooms = pred.nodes("room"), ref.nodes("room")
    scores = []
    for i, a in enumerate(p_rooms):
        for j, b in enumerate(r_rooms):
            iou = _footprint_iou(pred.box(a), ref.box(b))
            if iou > 0:
                scores.append((-iou, i, j))
    for i, j, _ in _greedy(scores):
        matching[p_rooms[i]] = r_rooms[j]

    p_obj, r_obj = pred.objects(), ref.objects()
    same = radius_f1(p_obj, r_obj, cfg.object_radius)
    for i, j, _ in same.matches:
        matching[p_obj[i].node_id] = r_obj[j].node_id
    used_p = {i for i, _, _ in same.matches}
    used_r = {j for _, j, _ in same.matches}
    scores = []
    for i, a in enumerate(p_obj):
        if i in used_p:
            continue
        for j, b in enumerate(r_obj):
            if j in used_r:
                continue
            d = float(np.linalg.norm(a.centroid - b.centroid))
            if d <= cfg.object_radius:
                scores.append((d, i, j))
    cross = _greedy(scores)
    for i, j, _ in cross:
        matching[p_obj[i].node_id] = r_obj[j].node_id

    p_pl, r_pl = pred.nodes("place"), ref.nodes("place")
    scores = []
    for i, a in enumerate(p_pl):
        for j, b in enumerate(r_pl):
            d = float(np.linalg.norm(pred.centroid(a) - ref.centroid(b)))
            if d <= cfg.place_radius:
                scores.append((d, i, j))
    for i, j, _ in _greedy(scores):
        matching[p_pl[i]] = r_pl[j]
    return matching, len(cross)


def _edge_key(src: str, dst: str, relation: str) -> Tuple[str, str, str]:
    if relation in UNDIRECTED and dst < src:
        src, dst = dst, src
    return src, dst, relation


def _mapped_edges(pred: SceneGraph, matching: Dict[str, str], relations: Optional[Iterable[str]] = None):
    """把预测边映射到参考命名空间; 端点未匹配的边标记为无法对应"""
    relations = set(relations) if relations is not None else None
    mapped, unmatched = set(), 0
    for u, v, rel in pred.edges():
        if relations is not None and rel not in relations:
            continue
        if u in matching and v in matching:
            mapped.add(_edge_key(matching[u], matching[v], rel))
        else:
            unmatched += 1
    return mapped, unmatched


def graph_similarity(pred: SceneGraph, ref: SceneGraph, cfg: MetricsConfig) -> GraphEditResult:
    """S_SG = 1 − (d_V + d_E) / (|V̂| + |V| + |Ê| + |E| + ε)"""
    matching, subs = match_graph_nodes(pred, ref, cfg)
    n_match = len(matching)
    d_V = (pred.num_nodes() - n_match) + (ref.num_nodes() - n_match) + subs
    mapped, unmatched = _mapped_edges(pred, matching)
    ref_edges = {_edge_key(u, v, r) for u, v, r in ref.edges()}
    d_E = len(mapped - ref_edges) + unmatched + len(ref_edges - mapped)
    total = pred.num_nodes() + ref.num_nodes() + pred.num_edges() + ref.num_edges() + cfg.epsilon
    s = 1.0 - (d_V + d_E) / total
    return GraphEditResult(d_V, d_E, float(min(max(s, 0.0), 1.0)), matching, subs)


def layer_f1s(pred: SceneGraph, ref: SceneGraph, cfg: MetricsConfig) -> Dict[str, float]:
    """node F1、物体-房间准确率、room F1、place 覆盖 F1、结构关系 F1"""
    matching, _ = match_graph_nodes(pred, ref, cfg)
    out: Dict[str, float] = {}

    p_obj, r_obj = pred.objects(), ref.objects()
    nodes = radius_f1(p_obj, r_obj, cfg.object_radius)
    out["node_f1"] = nodes.f1

    if nodes.matches:
        correct = 0
        for i, j, _ in nodes.matches:
            pr = pred.parent_room(p_obj[i].node_id)
            rr = ref.parent_room(r_obj[j].node_id)
            correct += int(pr is not None and rr is not None and matching.get(pr) == rr)
        out["object_room_accuracy"] = correct / len(nodes.matches)
    else:
        out["object_room_accuracy"] = 1.0 if not p_obj and not r_obj else 0.0

    p_rooms, r_rooms = pred.nodes("room"), ref.nodes("room")
    room_tp = sum(1 for a in p_rooms if a in matching)
    out["room_f1"] = f1_from_counts(room_tp, len(p_rooms) - room_tp, len(r_rooms) - room_tp)[2]

    p_pl = np.array([pred.centroid(n) for n in pred.nodes("place")]).reshape(-1, 3)
    r_pl = np.array([ref.centroid(n) for n in ref.nodes("place")]).reshape(-1, 3)
    if len(p_pl) == 0 and len(r_pl) == 0:
        out["place_coverage_f1"] = 1.0
    elif len(p_pl) == 0 or len(r_pl) == 0:
        out["place_coverage_f1"] = 0.0
    else:
        d_pr, _ = nearest_neighbors(p_pl, r_pl)
        d_rp, _ = nearest_neighbors(r_pl, p_pl)
        prec = float(np.mean(d_pr <= cfg.place_radius))
        rec = float(np.mean(d_rp <= cfg.place_radius))
        out["place_coverage_f1"] = 2 * prec * rec / (prec + rec) if prec + rec > 0 else 0.0

    # 结构关系只比较两端都匹配的非 place 节点之间的边
    def _non_place(g: SceneGraph, u: str, v: str) -> bool:
        return g.node(u)["layer"] != "place" and g.node(v)["layer"] != "place"

    inv = {v: k for k, v in matching.items()}
    p_edges = {
        _edge_key(matching[u], matching[v], r)
        for u, v, r in pred.edges()
        if r in STRUCTURAL_RELATIONS and u in matching and v in matching and _non_place(pred, u, v)
    }
    r_edges = {
        _edge_key(u, v, r)
        for u, v, r in ref.edges()
        if r in STRUCTURAL_RELATIONS and u in inv and v in inv and _non_place(ref, u, v)
    }
    tp = len(p_edges & r_edges)
    out["relation_f1"] = f1_from_counts(tp, len(p_edges - r_edges), len(r_edges - p_edges))[2]
    return out


if __name__ == "__main__":
    print("【F1】:", f1_from_counts(15, 20, 26))
    print("【IoU】:", box_iou(np.array([0, 0, 0, 1, 1, 1.0]), np.array([0.5, 0, 0, 1.5, 1, 1.0])))
