import numpy as np
import pytest

from monohydra.model_types import MetricsConfig
from monohydra.tools.metrics import (
    MetricInputError,
    associate,
    ate_rmse,
    box_f1,
    box_iou,
    f1_from_counts,
    graph_similarity,
    icp,
    layer_f1s,
    mesh_label_miou,
    radius_f1,
    recon_quality,
    trajectory_ate,
)
from monohydra.utils.geometry import Pose, Twist, exp_se3
from monohydra.utils.scene_graph import ObjectRecord, SceneGraph


def _obj(i, label, c, half=0.2):
    c = np.asarray(c, dtype=float)
    return ObjectRecord(f"object_{i}", label, c, np.concatenate([c - half, c + half]))


def _graph(objects, rooms=((0, (-4, -2, 0, 2)), (1, (0, -2, 4, 2))), parents=None):
    g = SceneGraph()
    g.add_node("building", "building", "building", (0, 0, 1))
    for rid, (x0, y0, x1, y1) in rooms:
        g.add_node(f"room_{rid}", "room", "room", ((x0 + x1) / 2, (y0 + y1) / 2, 1), (x0, y0, 0, x1, y1, 2))
        g.add_edge(f"room_{rid}", "building", "contains")
    for k, o in enumerate(objects):
        g.add_node(o.node_id, "object", o.label, o.centroid, o.box)
        rid = parents[k] if parents is not None else (0 if o.centroid[0] < 0 else 1)
        g.add_edge(o.node_id, f"room_{rid}", "contains")
    return g


# ---------- 轨迹 ----------
def _traj(rng, n=30):
    return [(0.05 * k, Pose(np.array([0, 0, 0, 1.0]), rng.uniform(-2, 2, 3))) for k in range(n)]


def test_ate_identical_and_hand_case(rng):
    ref = _traj(rng)
    assert trajectory_ate(ref, ref) == pytest.approx(0.0, abs=1e-12)
    est = np.zeros((3, 3)) + np.array([0.1, 0.0, 0.0])
    assert ate_rmse(est, np.zeros((3, 3)), align="none") == pytest.approx(0.1)


def test_ate_rigid_invariance(rng):
    ref = _traj(rng)
    G = exp_se3(Twist([0.3, -0.2, 1.1], [4.0, -2.0, 0.5]))
    moved = [(t, G @ p) for t, p in ref]
    assert trajectory_ate(moved, ref) < 1e-9


def test_ate_needs_three_pairs(rng):
    ref = _traj(rng, 2)
    with pytest.raises(MetricInputError):
        trajectory_ate(ref, ref)


def test_association_tolerance():
    pairs = associate([0.0, 0.05, 0.101], [0.001, 0.05, 0.2], 0.02)
    assert pairs == [(0, 0), (1, 1)]


def test_icp_recovers_small_offset(rng):
    target = rng.uniform(-1, 1, (200, 3))
    source = target - np.array([0.02, -0.01, 0.03])
    _, aligned, rmse = icp(source, target)
    assert rmse < 1e-6
    assert np.allclose(aligned, target, atol=1e-6)


# ---------- 重建 ----------
def test_recon_quality_cases(rng):
    gt = rng.uniform(-3, 3, (200, 3))
    assert recon_quality(gt, gt) == (0.0, 0.0, 0.0)
    grid = np.stack(np.meshgrid(np.arange(5), np.arange(5), np.arange(5), indexing="ij"), -1).reshape(-1, 3) * 1.0
    acc, comp, cham = recon_quality(grid + np.array([0.1, 0, 0]), grid)
    assert acc == pytest.approx(0.1) and comp == pytest.approx(0.1) and cham == pytest.approx(0.1)
    acc0, comp0, _ = recon_quality(grid, grid)
    acc1, comp1, _ = recon_quality(np.vstack([grid, [[50.0, 50.0, 50.0]]]), grid)
    assert comp1 == comp0 and acc1 > acc0
    with pytest.raises(MetricInputError):
        recon_quality(np.zeros((0, 3)), gt)


def test_nearest_neighbour_metrics_match_brute_force(rng):
    pred = rng.uniform(-2, 2, (300, 3))
    gt = rng.uniform(-2, 2, (250, 3))
    d = np.linalg.norm(pred[:, None, :] - gt[None, :, :], axis=2)
    acc, comp, cham = recon_quality(pred, gt)
    assert acc == pytest.approx(d.min(axis=1).mean(), abs=1e-12)
    assert comp == pytest.approx(d.min(axis=0).mean(), abs=1e-12)
    assert cham == pytest.approx(0.5 * (acc + comp), abs=1e-12)


def test_mesh_label_miou(rng):
    pts = rng.uniform(-1, 1, (50, 3))
    labels = rng.integers(0, 3, 50)
    _, mean = mesh_label_miou(pts, labels, pts, labels, range(3))
    assert mean == pytest.approx(1.0)
    gt_labels = np.array([0, 0, 0, 1, -1])
    gt_pts = np.arange(15, dtype=float).reshape(5, 3)
    per, _ = mesh_label_miou(gt_pts, np.zeros(5, dtype=int), gt_pts, gt_labels, [0, 1, 2])
    assert per[0] == pytest.approx(0.75) and per[1] == 0.0
    assert 2 not in per
    with pytest.raises(MetricInputError):
        mesh_label_miou(gt_pts, np.zeros(5), gt_pts, np.full(5, -1), [0])


# ---------- 物体 F1 ----------
@pytest.mark.parametrize(
    "counts, expected",
    [((15, 20, 26), (0.4286, 0.3659, 0.3947)), ((11, 2, 6), (0.8462, 0.6471, 0.7333))],
)
def test_f1_from_counts(counts, expected):
    assert f1_from_counts(*counts) == pytest.approx(expected, abs=5e-5)


def test_radius_f1_matching():
    ref = [_obj(0, "chair", [0, 0, 0]), _obj(1, "chair", [2, 0, 0]), _obj(2, "table", [5, 0, 0])]
    assert radius_f1(ref, ref, 0.5).f1 == 1.0
    pred = [_obj(0, "chair", [0.3, 0, 0]), _obj(1, "table", [2.1, 0, 0]), _obj(2, "table", [9, 0, 0])]
    res = radius_f1(pred, ref, 0.5)
    assert (res.tp, res.fp, res.fn) == (1, 2, 2)
    swapped = radius_f1(ref, pred, 0.5)
    assert swapped.precision == pytest.approx(res.recall) and swapped.recall == pytest.approx(res.precision)


def test_box_iou_and_f1():
    a = np.array([0, 0, 0, 1, 1, 1.0])
    b = np.array([0.5, 0, 0, 1.5, 1, 1.0])
    assert box_iou(a, b) == pytest.approx(1 / 3)
    assert box_iou(a, a + np.array([5, 0, 0, 5, 0, 0])) == 0.0
    pred = [ObjectRecord("object_0", "chair", np.array([1.0, 0.5, 0.5]), b)]
    ref = [ObjectRecord("object_0", "chair", np.array([0.5, 0.5, 0.5]), a)]
    assert box_f1(pred, ref, 0.25).f1 == 1.0
    assert box_f1(pred, ref, 0.5).f1 == 0.0


# ---------- 场景图 ----------
def test_similarity_identical_and_empty():
    ref = _graph([_obj(0, "chair", [-1, 0, 0.5]), _obj(1, "table", [2, 0, 0.5])])
    res = graph_similarity(ref, ref.copy(), MetricsConfig())
    assert res.d_V == 0 and res.d_E == 0 and res.similarity == 1.0
    small = SceneGraph()
    small.add_node("building", "building", "building", (0, 0, 0))
    small.add_node("room_0", "room", "room", (0, 0, 1), (-1, -1, 0, 1, 1, 2))
    small.add_edge("room_0", "building", "contains")
    empty = graph_similarity(SceneGraph(), small, MetricsConfig())
    assert empty.d_V + empty.d_E == 3
    assert empty.similarity == pytest.approx(0.0, abs=1e-8)


def test_similarity_missing_node():
    ref = _graph([_obj(0, "chair", [-1, 0, 0.5])], rooms=((0, (-4, -2, 0, 2)),))
    pred = ref.copy()
    pred.remove_node("object_0")
    res = graph_similarity(pred, ref, MetricsConfig())
    assert res.d_V + res.d_E == 2
    assert res.similarity == pytest.approx(0.75)


def test_similarity_non_increasing_under_deletion():
    objs = [_obj(k, "chair", [-3 + 1.5 * k, 0, 0.5]) for k in range(5)]
    ref = _graph(objs)
    pred = ref.copy()
    last = 1.0
    for o in objs:
        pred.remove_node(o.node_id)
        s = graph_similarity(pred, ref, MetricsConfig()).similarity
        assert s <= last
        last = s


def test_class_substitution_counts_as_node_edit():
    ref = _graph([_obj(0, "chair", [-1, 0, 0.5])])
    pred = _graph([_obj(0, "table", [-1, 0, 0.5])])
    res = graph_similarity(pred, ref, MetricsConfig())
    assert res.substitutions == 1 and res.d_V == 1


def test_layer_f1s_perfect_and_wrong_room():
    objs = [_obj(k, "chair", [x, 0, 0.5]) for k, x in enumerate((-3, -1, 1, 3))]
    ref = _graph(objs)
    scores = layer_f1s(ref, ref.copy(), MetricsConfig())
    assert all(v == 1.0 for v in scores.values())
    assert set(scores) == {"node_f1", "object_room_accuracy", "room_f1", "place_coverage_f1", "relation_f1"}
    wrong = _graph(objs, parents=[0, 0, 1, 0])
    assert layer_f1s(wrong, ref, MetricsConfig())["object_room_accuracy"] == pytest.approx(0.75)


def test_relation_f1_matches_set_comparison():
    objs = [_obj(k, "chair", [x, 0, 0.5]) for k, x in enumerate((-3, -1, 1, 3))]
    ref = _graph(objs)
    ref.add_edge("room_0", "room_1", "adjacent")
    ref_edges = set(ref.edges())
    for seed in range(20):
        rng = np.random.default_rng(seed)
        pred = ref.copy()
        for u, v, r in ref.edges():
            if rng.random() < 0.3:
                pred.graph.remove_edge(u, v)
        if rng.random() < 0.5:
            pred.add_edge("object_0", "object_1", "supports")
        pred_edges = set(pred.edges())
        tp = len(pred_edges & ref_edges)
        expected = f1_from_counts(tp, len(pred_edges - ref_edges), len(ref_edges - pred_edges))[2]
        assert layer_f1s(pred, ref, MetricsConfig())["relation_f1"] == pytest.approx(expected)
