"""
单次运行的阶段链: 读包 → 里程计 (前端 + 融合 + 平方根滤波) → 建图,
各阶段之间是容量为 1 的有序队列; 结束后构建场景图、回环诊断、位姿图优化与评估
"""

import asyncio
import os
import time
from dataclasses import dataclass, field
from typing import List, Dict, Any, Optional, Sequence, Tuple

import numpy as np

try:
    from .config import DEBUG
    from .model_types import RunConfig, RunReport, SceneSpec, TrackerContext, LoopCandidate
    from .utils.stage_tracker import StageTracker
    from .utils.frame_tracker import FrameTracker
    from .utils.geometry import Pose, CameraIntrinsics, camera_pose
    from .utils.scene_graph import SceneGraph
    from .utils import io_tools
    from .tools.sim_world import FramePacket, reference_scene_graph, surface_samples
    from .tools.depth_head import clamp_depth_map
    from .tools.vio_frontend import VioFrontend, select_depth_candidates
    from .tools.vio_filter import SqrtVioEstimator, ImuNoise, OdometryRecord
    from .tools.temporal_fusion import TemporalFuser, FusedFrame, flicker_energy
    from .tools.mapping import VoxelMap, integrate_frame, extract_objects, build_scene_graph
    from .tools.pose_graph import build_graph, propose_loops, accept_loops, optimize
    from .tools import metrics
except ImportError:
    from monohydra.config import DEBUG
    from monohydra.model_types import RunConfig, RunReport, SceneSpec, TrackerContext, LoopCandidate
    from monohydra.utils.stage_tracker import StageTracker
    from monohydra.utils.frame_tracker import FrameTracker
    from monohydra.utils.geometry import Pose, CameraIntrinsics, camera_pose
    from monohydra.utils.scene_graph import SceneGraph
    from monohydra.utils import io_tools
    from monohydra.tools.sim_world import FramePacket, reference_scene_graph, surface_samples
    from monohydra.tools.depth_head import clamp_depth_map
    from monohydra.tools.vio_frontend import VioFrontend, select_depth_candidates
    from monohydra.tools.vio_filter import SqrtVioEstimator, ImuNoise, OdometryRecord
    from monohydra.tools.temporal_fusion import TemporalFuser, FusedFrame, flicker_energy
    from monohydra.tools.mapping import VoxelMap, integrate_frame, extract_objects, build_scene_graph
    from monohydra.tools.pose_graph import build_graph, propose_loops, accept_loops, optimize
    from monohydra.tools import metrics

FRAME_COLUMNS = [
    "frame_id",
    "timestamp",
    "n_tracks",
    "n_landmarks",
    "visual_rows",
    "depth_factors",
    "residual_norm",
    "oracle_error",
    "flicker_raw",
    "flicker_fused",
    "support_mean",
    "trans_error",
]


@dataclass
class PipelineResult:
    report: RunReport
    context: TrackerContext
    odometry: List[OdometryRecord]
    optimized: List[Tuple[float, Pose]]
    graph: SceneGraph
    reference: SceneGraph
    loops: List[LoopCandidate]
    voxel_map: VoxelMap
    extras: Dict[str, Any] = field(default_factory=dict)


class _RunState:
    """阶段间共享的运行期对象"""

    def __init__(self, cfg: RunConfig, spec: SceneSpec, K: CameraIntrinsics, first: FramePacket):
        self.cfg = cfg
        self.spec = spec
        self.K = K
        flags = cfg.flags
        self.dynamic_ids = spec.dynamic_ids()
        self.frontend = VioFrontend(cfg.vio.gates, self.dynamic_ids, flags.semantic_mask)
        v0 = np.asarray(cfg.sim.profile.velocity, dtype=float) if cfg.sim.profile.kind == "line" else np.zeros(3)
        self.estimator = SqrtVioEstimator(
            cfg.vio.filter,
            cfg.vio.gates,
            K,
            ImuNoise.from_spec(cfg.sim.noise, cfg.vio.filter),
            first.gt_pose,
            v0,
            first.timestamp,
            first.frame_id,
        )
        self.fuser = TemporalFuser(cfg.fusion, K, self.dynamic_ids, len(spec.label_set))
        self.voxel_map = VoxelMap(cfg.mapping.voxel_size, len(spec.label_set))
        self.odometry: List[OdometryRecord] = []
        self.gt: Dict[int, Tuple[float, Pose]] = {}
        self.prev_raw: Optional[np.ndarray] = None
        self.prev_fused: Optional[np.ndarray] = None
        self.depth_factor_total = 0
        self.landmarks_initialized = 0
        self.fused_dump_dir: Optional[str] = None


async def _reader(packets: Sequence[FramePacket], out_q: asyncio.Queue) -> None:
    for packet in packets:
        await out_q.put(packet)
    await out_q.put(None)


def _odometry_step(run: _RunState, packet: FramePacket, ctx: TrackerContext) -> Tuple[FusedFrame, OdometryRecord]:
    """单帧里程计: 传播 → 融合 (传播位姿) → 前端 → 路标管理 → 深度因子 → 更新"""
    cfg = run.cfg
    st = ctx.stage_tracker
    est = run.estimator
    ctx.frame_tracker.begin_frame(packet.frame_id, packet.timestamp)

    with st.time("vio_propagate"):
        if len(packet.imu):
            est.propagate(packet.imu, packet.frame_id)

    with st.time("fusion"):
        depth = clamp_depth_map(packet.depth, cfg.depth_head)
        labels = packet.labels
        fused = run.fuser.fuse(depth, labels, camera_pose(est.nav.pose))
    vio_depth = fused.depth if cfg.fusion.K > 0 else depth

    with st.time("frontend"):
        tracks = run.frontend.process(packet.frame_id, packet.keypoints, vio_depth, labels)

    with st.time("vio_update"):
        est.manage_landmarks(tracks)
        run.landmarks_initialized += len(est.new_landmarks)
        factors = []
        if cfg.flags.depth_factors:
            candidates, reprojection = [], {}
            for track in tracks:
                obs = track.at(packet.frame_id)
                if obs is None or track.track_id not in est.nav.landmarks:
                    continue
                err = est.reprojection_error(track.track_id, obs.pixel)
                candidates.append((track.track_id, obs.pixel))
                if err is not None:
                    reprojection[track.track_id] = err
            factors = select_depth_candidates(
                candidates,
                vio_depth,
                labels,
                est.body_rate(),
                reprojection,
                cfg.vio.gates,
                run.dynamic_ids if cfg.flags.semantic_mask else (),
            )
        run.depth_factor_total += len(factors)
        est.update(tracks, factors)
        odom = est.emit()
    run.odometry.append(odom)
    run.fuser.push(depth, labels, camera_pose(odom.pose))

    flicker_raw = flicker_energy(run.prev_raw, depth)
    flicker_fused = flicker_energy(run.prev_fused, fused.depth)
    run.prev_raw, run.prev_fused = depth, fused.depth
    trans_error = float(np.linalg.norm(odom.pose.translation - packet.gt_pose.translation))
    ctx.frame_tracker.track_frame(
        {
            "n_tracks": len(tracks),
            "n_landmarks": len(est.nav.landmarks),
            "visual_rows": est.last_counts.get("visual_rows", 0),
            "depth_factors": len(factors),
            "residual_norm": est.last_residual_norm,
            "oracle_error": est.last_oracle_error if cfg.vio.filter.oracle_check else "",
            "flicker_raw": flicker_raw,
            "flicker_fused": flicker_fused,
            "support_mean": float(np.mean(fused.support)),
            "trans_error": trans_error,
        }
    )
    if DEBUG:
        print(
            f"【帧 {packet.frame_id}】轨迹 {len(tracks)} 路标 {len(est.nav.landmarks)} "
            f"深度因子 {len(factors)} 误差 {trans_error:.4f} m"
        )
    return fused, odom


async def _odometry_stage(run: _RunState, in_q: asyncio.Queue, out_q: asyncio.Queue, ctx: TrackerContext) -> None:
    while True:
        packet = await in_q.get()
        if packet is None:
            await out_q.put(None)
            return
        run.gt[packet.frame_id] = (packet.timestamp, packet.gt_pose)
        fused, odom = _odometry_step(run, packet, ctx)
        if run.fused_dump_dir:
            io_tools.dump_fused_frame(
                os.path.join(run.fused_dump_dir, io_tools.packet_name(packet.frame_id)),
                fused.depth,
                fused.labels,
                packet.frame_id,
                packet.timestamp,
                odom.pose,
            )
        await out_q.put((fused, odom))


async def _mapping_stage(run: _RunState, in_q: asyncio.Queue, ctx: TrackerContext) -> None:
    while True:
        item = await in_q.get()
        if item is None:
            return
        fused, odom = item
        with ctx.stage_tracker.time("mapping"):
            integrate_frame(
                run.voxel_map, fused, odom.pose, run.K, run.dynamic_ids, run.cfg.mapping.carve_stride
            )


async def _run_stages(run: _RunState, packets: Sequence[FramePacket], ctx: TrackerContext) -> None:
    q_packets: asyncio.Queue = asyncio.Queue(maxsize=1)
    q_frames: asyncio.Queue = asyncio.Queue(maxsize=1)
    tasks = [
        asyncio.create_task(_reader(packets, q_packets)),
        asyncio.create_task(_odometry_stage(run, q_packets, q_frames, ctx)),
        asyncio.create_task(_mapping_stage(run, q_frames, ctx)),
    ]
    try:
        await asyncio.gather(*tasks)
    finally:
        for t in tasks:
            if not t.done():
                t.cancel()


def _evaluate(run: _RunState, graph: SceneGraph, reference: SceneGraph, objects, optimized, ctx: TrackerContext) -> Dict[str, float]:
    cfg = run.cfg
    mc = cfg.metrics
    out: Dict[str, float] = {}
    est_rows = [(o.timestamp, o.pose) for o in run.odometry]
    gt_rows = [run.gt[o.frame_id] for o in run.odometry]

    try:
        out["ate"] = metrics.trajectory_ate(est_rows, gt_rows, mc.association_tolerance, mc.ate_align)
        out["ate_optimized"] = metrics.trajectory_ate(optimized, gt_rows, mc.association_tolerance, mc.ate_align)
    except metrics.MetricInputError as e:
        print("【评估】ATE 跳过:", e)
    est_p = np.array([p.translation for _, p in est_rows])
    gt_p = np.array([p.translation for _, p in gt_rows])
    out["final_position_error"] = float(np.linalg.norm(est_p[-1] - gt_p[-1]))

    pred_pts, pred_lbl = run.voxel_map.export_points()
    gt_pts, gt_lbl = surface_samples(run.spec, cfg.mapping.voxel_size)
    if len(pred_pts) and len(gt_pts):
        acc, comp, cham = metrics.recon_quality(pred_pts, gt_pts)
        out.update({"accuracy": acc, "completeness": comp, "chamfer": cham})
        classes = [c for c in range(len(run.spec.label_set)) if c not in run.dynamic_ids]
        _, out["miou"] = metrics.mesh_label_miou(pred_pts, pred_lbl, gt_pts, gt_lbl, classes)

    ref_objects = reference.objects()
    radius = metrics.radius_f1(objects, ref_objects, mc.object_radius)
    boxes = metrics.box_f1(objects, ref_objects, mc.box_iou)
    out.update(
        {
            "radius_precision": radius.precision,
            "radius_recall": radius.recall,
            "box_f1": boxes.f1,
            "s_sg": metrics.graph_similarity(graph, reference, mc).similarity,
        }
    )
    out.update(metrics.layer_f1s(graph, reference, mc))

    for key in ("flicker_raw", "flicker_fused"):
        series = ctx.frame_tracker.column(key)
        out[key] = float(np.mean(series)) if series else 0.0
    if cfg.vio.filter.oracle_check and run.estimator.oracle_errors:
        out["max_oracle_error"] = float(np.max(run.estimator.oracle_errors))
    return out


def run_pipeline(
    packets: Sequence[FramePacket],
    spec: SceneSpec,
    cfg: RunConfig,
    K: CameraIntrinsics,
    output_dir: Optional[str] = None,
    existing_context: Optional[Dict[str, Any]] = None,
) -> PipelineResult:
    """执行一次完整运行

    Args:
        packets: 有序帧包
        spec: 场景规格
        cfg: 运行配置
        K: 相机内参
        output_dir: 产物目录 (None 时不写文件)
        existing_context: 可复用的跟踪器

    Returns:
        PipelineResult
    """
    if not packets:
        raise ValueError("no packets to process")
    # ---------- 初始化跟踪上下文 ----------
    tracker_context = TrackerContext(
        stage_tracker=(existing_context or {}).get("stage_tracker", StageTracker()),
        frame_tracker=(existing_context or {}).get("frame_tracker", FrameTracker()),
    )
    st = tracker_context.stage_tracker
    wall_start = time.perf_counter()

    run = _RunState(cfg, spec, K, packets[0])
    if output_dir:
        os.makedirs(output_dir, exist_ok=True)
        if cfg.fusion.K > 0 and DEBUG:
            run.fused_dump_dir = os.path.join(output_dir, "fused")
            os.makedirs(run.fused_dump_dir, exist_ok=True)

    # ---------- 1. 逐帧阶段链 ----------
    asyncio.run(_run_stages(run, packets, tracker_context))

    # ---------- 2. 场景图 ----------
    with st.time("scene_graph"):
        objects = extract_objects(run.voxel_map, spec, cfg.mapping.min_voxels)
        graph = build_scene_graph(run.voxel_map, objects, spec, cfg.mapping)
        reference = reference_scene_graph(spec, cfg.mapping)

    # ---------- 3. 回环诊断与位姿图 ----------
    with st.time("pose_graph"):
        pcfg = cfg.pose_graph
        node_ids = [o.frame_id for o in run.odometry]
        pg = build_graph([(o.frame_id, o.pose) for o in run.odometry], pcfg)
        positions = np.array([o.pose.translation for o in run.odometry])
        loops = propose_loops(positions, node_ids, pcfg.loop_radius, pcfg.min_separation)
        rng = np.random.default_rng([cfg.seed, 5])
        n_loops = accept_loops(pg, loops, {k: v[1] for k, v in run.gt.items()}, pcfg, rng)
        opt = optimize(pg, pcfg) if n_loops else None
        poses = opt.poses if opt else pg.nodes
        optimized = [(o.timestamp, poses[o.frame_id].relabel("body", "world")) for o in run.odometry]

    # ---------- 4. 评估 ----------
    with st.time("metrics"):
        values = _evaluate(run, graph, reference, objects, optimized, tracker_context)

    report = RunReport(
        label=cfg.flags.label(),
        name=cfg.name,
        n_frames=len(run.odometry),
        metrics={k: float(v) for k, v in values.items()},
        counters={
            "landmarks_initialized": run.landmarks_initialized,
            "identity_errors": run.frontend.identity_errors,
            "masked_keypoints": run.frontend.masked,
            "depth_factors": run.depth_factor_total,
            "loop_candidates": len(loops),
            "loops_accepted": n_loops,
            "objects": len(objects),
            "voxels": len(run.voxel_map),
        },
        config=cfg.model_dump(mode="json"),
    )

    # ---------- 5. 产物 ----------
    if output_dir:
        with st.time("io"):
            io_tools.write_trajectory_csv(
                os.path.join(output_dir, "trajectory.csv"), [(o.timestamp, o.pose) for o in run.odometry]
            )
            io_tools.write_trajectory_csv(os.path.join(output_dir, "trajectory_optimized.csv"), optimized)
            io_tools.write_trajectory_csv(
                os.path.join(output_dir, "gt_trajectory.csv"), [run.gt[o.frame_id] for o in run.odometry]
            )
            pts, lbl = run.voxel_map.export_points()
            io_tools.write_ply(os.path.join(output_dir, "map.ply"), pts, lbl)
            graph.save(os.path.join(output_dir, "scene_graph.json"))
            reference.save(os.path.join(output_dir, "reference_graph.json"))
            io_tools.write_json(
                os.path.join(output_dir, "loop_candidates.json"), [c.model_dump(mode="json") for c in loops]
            )
            rows = [[f.get(c, "") for c in FRAME_COLUMNS] for f in tracker_context.frame_tracker.frames()]
            io_tools.write_csv(os.path.join(output_dir, "frames.csv"), FRAME_COLUMNS, rows)
            io_tools.write_json(os.path.join(output_dir, "report.json"), report.model_dump(mode="json"))
        total_ms = 1000.0 * (time.perf_counter() - wall_start)
        io_tools.write_json(
            os.path.join(output_dir, "timing.json"),
            {"total_ms": total_ms, "stage_sum_ms": 1000.0 * st.get_total(), "breakdown_ms": st.get_breakdown()},
        )

    print(f"【运行】{report.label}: {report.n_frames} 帧, ATE {report.metrics.get('ate', float('nan')):.4f} m")
    return PipelineResult(
        report,
        tracker_context,
        run.odometry,
        optimized,
        graph,
        reference,
        loops,
        run.voxel_map,
        {"objects": objects, "wall_ms": 1000.0 * (time.perf_counter() - wall_start)},
    )
