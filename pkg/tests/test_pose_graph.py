import numpy as np
import pytest

from monohydra.model_types import LoopCandidate, PoseGraphConfig
from monohydra.tools.pose_graph import (
    accept_loops,
    build_graph,
    edge_residual,
    graph_cost,
    optimize,
    propose_loops,
    relative_pose,
    residuals,
    sqrt_information,
)
from monohydra.utils.geometry import Pose, Twist, exp_se3


def _square(side=10, step=1.0):
    """沿 10 m 方形回到起点, 拐角处原地转 90°"""
    poses = []
    x, y, yaw = 0.0, 0.0, 0.0
    for leg in range(4):
        for _ in range(side):
            poses.append(Pose.from_yaw(yaw, np.array([x, y, 0.0])))
            x += step * np.cos(yaw)
            y += step * np.sin(yaw)
        yaw += np.pi / 2
    poses.append(Pose.from_yaw(0.0, np.array([x, y, 0.0])))
    return poses


def _drift(gt, yaw_error):
    out = [gt[0]]
    bias = Pose.from_yaw(yaw_error, np.zeros(3))
    for a, b in zip(gt, gt[1:]):
        out.append(out[-1] @ relative_pose(a, b) @ bias)
    return out


def test_chain_has_zero_residual():
    odo = list(enumerate(_square()))
    graph = build_graph(odo, PoseGraphConfig())
    assert len(graph.edges) == len(odo) - 1
    assert graph_cost(graph) == pytest.approx(0.0, abs=1e-20)
    assert len(build_graph(odo[:2], PoseGraphConfig()).edges) == 1


def test_residuals_match_per_edge_oracle(rng):
    odo = list(enumerate(_square()))
    graph = build_graph(odo, PoseGraphConfig())
    perturbed = {k: p @ exp_se3(Twist(rng.normal(0, 0.01, 3), rng.normal(0, 0.02, 3))) for k, p in graph.nodes.items()}
    stacked = residuals(graph, perturbed)
    oracle = np.concatenate(
        [e.sqrt_info @ edge_residual(perturbed[e.i], perturbed[e.j], e.measurement) for e in graph.edges]
    )
    assert np.allclose(stacked, oracle, atol=1e-12)


def test_residuals_are_gauge_invariant(rng):
    odo = list(enumerate(_square()))
    graph = build_graph(odo, PoseGraphConfig())
    perturbed = {k: p @ exp_se3(Twist(rng.normal(0, 0.01, 3), rng.normal(0, 0.02, 3))) for k, p in graph.nodes.items()}
    G = exp_se3(Twist([0.1, -0.2, 0.7], [3.0, -1.0, 0.5]))
    moved = {k: G @ p for k, p in perturbed.items()}
    assert np.allclose(residuals(graph, perturbed), residuals(graph, moved), atol=1e-9)


def test_zero_residual_graph_is_unchanged():
    odo = list(enumerate(_square()))
    graph = build_graph(odo, PoseGraphConfig())
    result = optimize(graph, PoseGraphConfig())
    assert result.converged and result.iterations == 1
    for k, pose in odo:
        assert np.allclose(result.poses[k].matrix, pose.matrix)


def test_loop_closure_corrects_yaw_drift():
    cfg = PoseGraphConfig()
    gt = _square()
    drifted = _drift(gt, 0.005)
    graph = build_graph(list(enumerate(drifted)), cfg)
    last = len(gt) - 1
    graph.add_edge(0, last, relative_pose(gt[0], gt[last]), sqrt_information(cfg.sigma_lc_t, cfg.sigma_lc_r), "loop")
    before = np.linalg.norm(drifted[last].translation - gt[last].translation)
    result = optimize(graph, cfg)
    after = np.linalg.norm(result.poses[last].translation - gt[last].translation)
    assert before > 0.5
    assert after < 0.05 * before
    assert all(b <= a for a, b in zip(result.costs, result.costs[1:]))
    assert result.final_cost <= result.initial_cost


def test_random_perturbations_never_increase_cost():
    cfg = PoseGraphConfig(max_iters=5)
    gt = _square(side=4)
    for seed in range(50):
        rng = np.random.default_rng(seed)
        graph = build_graph(list(enumerate(_drift(gt, 0.01))), cfg)
        graph.add_edge(0, len(gt) - 1, relative_pose(gt[0], gt[-1]), sqrt_information(cfg.sigma_lc_t, cfg.sigma_lc_r), "loop")
        for k in list(graph.nodes)[1:]:
            graph.nodes[k] = graph.nodes[k] @ exp_se3(Twist(rng.normal(0, 0.02, 3), rng.normal(0, 0.05, 3)))
        result = optimize(graph, cfg)
        assert result.final_cost <= result.initial_cost


# ---------- 回环候选 ----------
def test_straight_line_has_no_candidates():
    pos = np.column_stack([np.arange(100) * 0.1, np.zeros(100), np.zeros(100)])
    assert propose_loops(pos, list(range(100)), 1.0, 30) == []


def test_closed_loop_yields_candidates():
    gt = _square()
    pos = np.array([p.translation for p in gt])
    cands = propose_loops(pos, list(range(len(gt))), 1.0, 30)
    assert any(c.pair == (0, len(gt) - 1) for c in cands)
    assert all(abs(c.pair[1] - c.pair[0]) >= 30 for c in cands)


def test_candidates_match_brute_force(rng):
    pos = rng.uniform(-3, 3, (120, 3))
    pos[:, 2] = 0.0
    cands = propose_loops(pos, list(range(120)), 0.8, 10)
    brute = {
        (i, j)
        for i in range(120)
        for j in range(i + 10, 120)
        if np.linalg.norm(pos[i] - pos[j]) <= 0.8
    }
    assert {c.pair for c in cands} == brute


def test_accept_hook_uses_ground_truth_distance():
    cfg = PoseGraphConfig(accept_radius=0.5)
    gt = {0: Pose.identity(), 40: Pose.from_yaw(0.0, np.array([0.3, 0.0, 0.0])), 50: Pose.from_yaw(0.0, np.array([2.0, 0.0, 0.0]))}
    graph = build_graph([(0, gt[0]), (40, gt[40]), (50, gt[50])], cfg)
    cands = [LoopCandidate(pair=(0, 40), distance=0.2), LoopCandidate(pair=(0, 50), distance=0.4)]
    assert accept_loops(graph, cands, gt, cfg) == 1
    assert cands[0].accepted and not cands[1].accepted
    assert cands[1].gt_distance == pytest.approx(2.0)
    assert graph.edges[-1].kind == "loop"
