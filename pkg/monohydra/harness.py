"""
批量实验入口: simulate / run / ablate / report

退出码: 0 成功; 1 流水线运行失败; 2 用法、配置或输入缺失
"""

import argparse
import csv
import os
import sys
from typing import List, Dict, Any, Optional, Sequence, Tuple

try:
    from .config import load_run_config, resolve_path, deep_merge, config_summary
    from .model_types import RunConfig, RunReport, SceneSpec, MonoHydraError, ConfigError, SpecError
    from .pipeline import run_pipeline, PipelineResult
    from .tools.sim_world import FramePacket, load_scene_spec, simulate_sequence, intrinsics_from, reference_scene_graph
    from .utils import io_tools
except ImportError:
    from monohydra.config import load_run_config, resolve_path, deep_merge, config_summary
    from monohydra.model_types import RunConfig, RunReport, SceneSpec, MonoHydraError, ConfigError, SpecError
    from monohydra.pipeline import run_pipeline, PipelineResult
    from monohydra.tools.sim_world import FramePacket, load_scene_spec, simulate_sequence, intrinsics_from, reference_scene_graph
    from monohydra.utils import io_tools

# 消融矩阵的行顺序: (depth_factors, semantic_mask, temporal_K)
ABLATION_ROWS: List[Tuple[bool, bool, int]] = [
    (False, False, 0),
    (True, False, 0),
    (False, True, 0),
    (True, True, 0),
    (True, True, 1),
    (True, True, 3),
    (True, True, 5),
]
ABLATION_METRICS = ["ate", "node_f1", "chamfer", "s_sg", "miou"]
ATE_CURVE_HEADER = ["run", "frame_id", "timestamp", "trans_error"]
FLICKER_CURVE_HEADER = ["run", "frame_id", "flicker_raw", "flicker_fused"]
LOOP_HEADER = ["run", "i", "j", "distance", "gt_distance", "accepted"]


def _load_inputs(cfg: RunConfig, packets_dir: Optional[str]) -> Tuple[RunConfig, SceneSpec, List[FramePacket]]:
    """读取帧包目录; 未指定时在内存中模拟"""
    if packets_dir:
        if not os.path.isdir(packets_dir):
            raise FileNotFoundError(f"packet directory not found: {packets_dir}")
        spec, sim, packets = io_tools.load_packet_dir(packets_dir)
        return cfg.model_copy(update={"sim": sim}), spec, packets
    spec = load_scene_spec(str(resolve_path(cfg.scene)))
    return cfg, spec, simulate_sequence(spec, cfg.sim).packets


def with_flags(cfg: RunConfig, depth_factors: bool, semantic_mask: bool, temporal_K: int) -> RunConfig:
    """替换消融开关, 重新校验以同步 fusion.K"""
    flags = {"depth_factors": depth_factors, "semantic_mask": semantic_mask, "temporal_K": temporal_K}
    return RunConfig.model_validate(deep_merge(cfg.model_dump(mode="json"), {"flags": flags}))


def relative_change(value: float, base: float, lower_is_better: bool) -> Optional[float]:
    """相对基线的改善百分比, 正值表示更好"""
    if base == 0:
        return None
    change = (base - value) / base if lower_is_better else (value - base) / base
    return 100.0 * change


def format_cell(value: float, rel: Optional[float], is_baseline: bool = False) -> str:
    """`0.051 (+25.0%)` 形式; 基线行为 `0.068 (--)`"""
    if is_baseline:
        return f"{value:.3f} (--)"
    if rel is None:
        return f"{value:.3f} (n/a)"
    return f"{value:.3f} ({rel:+.1f}%)"


# ---------- 1. simulate ----------
def cmd_simulate(cfg: RunConfig, out_dir: str) -> str:
    """生成帧包目录、参考场景图与真值轨迹

    Args:
        cfg: 运行配置 (scene + sim)
        out_dir: 输出目录

    Returns:
        帧包目录
    """
    spec = load_scene_spec(str(resolve_path(cfg.scene)))
    seq = simulate_sequence(spec, cfg.sim)
    io_tools.write_packets(seq, out_dir, {"seed": cfg.seed})
    reference_scene_graph(spec, cfg.mapping).save(os.path.join(out_dir, "reference_graph.json"))
    io_tools.write_trajectory_csv(
        os.path.join(out_dir, "gt_trajectory.csv"), [(p.timestamp, p.gt_pose) for p in seq.packets]
    )
    print(f"【模拟】{spec.name}: {len(seq.packets)} 帧 → {out_dir}")
    return out_dir


# ---------- 2. run ----------
def cmd_run(cfg: RunConfig, out_dir: str, packets_dir: Optional[str] = None) -> PipelineResult:
    """完整运行一次并写出报告与产物"""
    cfg, spec, packets = _load_inputs(cfg, packets_dir)
    config_summary(cfg)
    result = run_pipeline(packets, spec, cfg, intrinsics_from(cfg.sim), out_dir)
    result.context.stage_tracker.print_summary()
    return result


# ---------- 3. ablate ----------
def cmd_ablate(cfg: RunConfig, out_dir: str, packets_dir: Optional[str] = None) -> List[RunReport]:
    """7 行消融: baseline / depth / mask / depth+mask K=0,1,3,5, 共用同一帧包与种子

    Returns:
        各行报告 (relative 已填)
    """
    cfg, spec, packets = _load_inputs(cfg, packets_dir)
    K = intrinsics_from(cfg.sim)
    os.makedirs(out_dir, exist_ok=True)
    reports: List[RunReport] = []
    for depth_factors, semantic_mask, temporal_K in ABLATION_ROWS:
        row_cfg = with_flags(cfg, depth_factors, semantic_mask, temporal_K)
        label = row_cfg.flags.label()
        row_dir = os.path.join(out_dir, label.replace("+", "_").replace("=", ""))
        print(f"【消融】{label}")
        reports.append(run_pipeline(packets, spec, row_cfg, K, row_dir).report)

    base = reports[0]
    rows = []
    for k, report in enumerate(reports):
        for name in ("ate", "node_f1"):
            v, b = report.metrics.get(name), base.metrics.get(name)
            if v is None or b is None:
                report.relative[name] = "n/a"
                continue
            rel = relative_change(v, b, lower_is_better=(name == "ate"))
            report.relative[name] = format_cell(v, rel, is_baseline=(k == 0))
        row_dir = os.path.join(out_dir, report.label.replace("+", "_").replace("=", ""))
        io_tools.write_json(os.path.join(row_dir, "report.json"), report.model_dump(mode="json"))
        rows.append(
            [k, report.label]
            + [report.metrics.get(m, "") for m in ABLATION_METRICS]
            + [report.relative.get("ate", ""), report.relative.get("node_f1", "")]
        )

    io_tools.write_csv(
        os.path.join(out_dir, "ablation.csv"),
        ["row", "label"] + ABLATION_METRICS + ["ate_cell", "node_f1_cell"],
        rows,
    )
    io_tools.write_json(os.path.join(out_dir, "ablation.json"), [r.model_dump(mode="json") for r in reports])
    for report in reports:
        print(f"  {report.label:<16} ATE {report.relative.get('ate', '')}  Node F1 {report.relative.get('node_f1', '')}")
    return reports


# ---------- 4. report ----------
def _read_rows(path: str) -> List[Dict[str, str]]:
    with open(path, "r", encoding="utf-8") as f:
        return list(csv.DictReader(f))


def cmd_report(run_dirs: Sequence[str], out_dir: str) -> List[str]:
    """从已完成的运行目录导出绘图数据

    Returns:
        三个 CSV 路径: ate_curve、flicker_curve、loop_candidates
    """
    if not run_dirs:
        raise FileNotFoundError("no run directories given")
    for run_dir in run_dirs:
        for name in ("frames.csv", "loop_candidates.json"):
            if not os.path.isfile(os.path.join(run_dir, name)):
                raise FileNotFoundError(f"{run_dir}: missing {name}")

    ate_rows, flicker_rows, loop_rows = [], [], []
    for run_dir in run_dirs:
        run = os.path.basename(os.path.normpath(run_dir))
        for row in _read_rows(os.path.join(run_dir, "frames.csv")):
            ate_rows.append([run, row["frame_id"], row["timestamp"], row["trans_error"]])
            flicker_rows.append([run, row["frame_id"], row["flicker_raw"], row["flicker_fused"]])
        for cand in io_tools.read_json(os.path.join(run_dir, "loop_candidates.json")):
            i, j = cand["pair"]
            gt = cand.get("gt_distance")
            loop_rows.append([run, i, j, cand["distance"], "" if gt is None else gt, int(bool(cand["accepted"]))])

    os.makedirs(out_dir, exist_ok=True)
    paths = [os.path.join(out_dir, n) for n in ("ate_curve.csv", "flicker_curve.csv", "loop_candidates.csv")]
    io_tools.write_csv(paths[0], ATE_CURVE_HEADER, ate_rows)
    io_tools.write_csv(paths[1], FLICKER_CURVE_HEADER, flicker_rows)
    io_tools.write_csv(paths[2], LOOP_HEADER, loop_rows)
    print(f"【报告】{len(run_dirs)} 个运行 → {out_dir}")
    return paths


# ---------- 命令行 ----------
def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="monohydra", description="Mono RGB+IMU metric-semantic SLAM harness")
    sub = parser.add_subparsers(dest="command", required=True)

    def _common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", default=None, help="run config JSON")
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")
        p.add_argument("--out", default=None, help="output directory")

    p_sim = sub.add_parser("simulate", help="write a packet directory")
    _common(p_sim)
    p_run = sub.add_parser("run", help="run the full pipeline once")
    _common(p_run)
    p_run.add_argument("--packets", default=None, help="packet directory (simulated in memory if omitted)")
    p_abl = sub.add_parser("ablate", help="run the 7-row ablation matrix")
    _common(p_abl)
    p_abl.add_argument("--packets", default=None)
    p_rep = sub.add_parser("report", help="export plot data from run directories")
    p_rep.add_argument("run_dirs", nargs="+")
    p_rep.add_argument("--out", default="plots")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "report":
            cmd_report(args.run_dirs, args.out)
            return 0
        cfg = load_run_config(args.config, args.overrides)
        if args.command == "simulate":
            cmd_simulate(cfg, args.out or os.path.join(cfg.output_dir, f"{cfg.name}_packets"))
        elif args.command == "run":
            cmd_run(cfg, args.out or os.path.join(cfg.output_dir, cfg.name), args.packets)
        elif args.command == "ablate":
            cmd_ablate(cfg, args.out or os.path.join(cfg.output_dir, f"{cfg.name}_ablation"), args.packets)
        return 0
    except (ConfigError, SpecError, FileNotFoundError) as e:
        print(f"【错误】{e}", file=sys.stderr)
        return 2
    except MonoHydraError as e:
        print(f"【运行失败】{type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
