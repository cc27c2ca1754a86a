import csv
import json
import os

import pytest

from monohydra.config import load_run_config
from monohydra.harness import (
    ABLATION_ROWS,
    cmd_ablate,
    cmd_report,
    cmd_run,
    cmd_simulate,
    format_cell,
    main,
    relative_change,
    with_flags,
)
from monohydra.tools.sim_world import load_scene_spec


def test_relative_change_and_cells():
    assert relative_change(0.051, 0.068, lower_is_better=True) == pytest.approx(25.0)
    assert relative_change(0.8, 0.64, lower_is_better=False) == pytest.approx(25.0)
    assert relative_change(1.0, 0.0, lower_is_better=True) is None
    assert format_cell(0.051, 25.0) == "0.051 (+25.0%)"
    assert format_cell(0.068, 0.0, is_baseline=True) == "0.068 (--)"
    assert format_cell(0.5, None) == "0.500 (n/a)"


def test_with_flags_keeps_window_in_sync(short_run_config):
    cfg = with_flags(short_run_config(), True, True, 5)
    assert cfg.fusion.K == 5
    assert cfg.flags.label() == "depth+mask+K=5"
    assert len(ABLATION_ROWS) == 7


def test_malformed_config_exits_with_two(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{ nope")
    assert main(["run", "--config", str(bad), "--out", str(tmp_path / "o")]) == 2
    assert main(["run", "--set", "sim.duration=-3", "--out", str(tmp_path / "o")]) == 2
    assert main(["run", "--set", "flags.depth_factors", "--out", str(tmp_path / "o")]) == 2
    assert "【错误】" in capsys.readouterr().err


def test_missing_inputs_exit_with_two(tmp_path):
    assert main(["run", "--packets", str(tmp_path / "nowhere"), "--out", str(tmp_path / "o")]) == 2
    assert main(["report", str(tmp_path / "nowhere"), "--out", str(tmp_path / "plots")]) == 2


@pytest.mark.slow
def test_simulate_then_run_from_packets(short_run_config, tmp_path):
    cfg = short_run_config()
    packets_dir = cmd_simulate(cfg, str(tmp_path / "packets"))
    assert os.path.isfile(os.path.join(packets_dir, "reference_graph.json"))
    from_disk = cmd_run(cfg, str(tmp_path / "disk"), packets_dir)
    in_memory = cmd_run(cfg, str(tmp_path / "mem"))
    assert from_disk.report.n_frames == in_memory.report.n_frames
    assert from_disk.report.metrics["ate"] == pytest.approx(in_memory.report.metrics["ate"], abs=1e-3)


@pytest.mark.slow
def test_ablation_matrix(short_run_config, tmp_path):
    out = tmp_path / "ablation"
    reports = cmd_ablate(short_run_config(), str(out))
    assert [r.label for r in reports] == [
        "baseline",
        "depth",
        "mask",
        "depth+mask+K=0",
        "depth+mask+K=1",
        "depth+mask+K=3",
        "depth+mask+K=5",
    ]
    assert reports[0].relative["ate"].endswith("(--)")
    assert all(not r.relative["ate"].endswith("(--)") for r in reports[1:])
    with open(out / "ablation.csv", encoding="utf-8") as f:
        rows = list(csv.DictReader(f))
    assert len(rows) == 7
    assert rows[0]["label"] == "baseline"
    saved = json.loads((out / "ablation.json").read_text())
    assert [r["label"] for r in saved] == [r.label for r in reports]


@pytest.mark.slow
def test_dynamic_ablation_directions(config_path, repo_root, tmp_path):
    scene = os.path.join(repo_root, "scenes", "dynamic_office.json")
    cfg = load_run_config(config_path("dynamic.json"), [f"scene={scene}"])
    assert len(load_scene_spec(cfg.scene).dynamic_agents) >= 2
    reports = cmd_ablate(cfg, str(tmp_path / "dynamic"))
    assert all(r.n_frames >= 300 for r in reports)
    ate = {r.label: r.metrics["ate"] for r in reports}
    assert ate["depth"] < ate["baseline"]
    assert ate["mask"] < ate["baseline"]
    assert ate["depth+mask+K=3"] < ate["depth+mask+K=0"]


@pytest.mark.slow
def test_report_exports_three_tables(short_run_config, tmp_path):
    run_dir = tmp_path / "run_a"
    cmd_run(short_run_config(), str(run_dir))
    paths = cmd_report([str(run_dir)], str(tmp_path / "plots"))
    assert [os.path.basename(p) for p in paths] == ["ate_curve.csv", "flicker_curve.csv", "loop_candidates.csv"]
    with open(paths[0], encoding="utf-8") as f:
        ate_rows = list(csv.DictReader(f))
    assert len(ate_rows) == 40
    assert {r["run"] for r in ate_rows} == {"run_a"}
    assert main(["report", str(run_dir), "--out", str(tmp_path / "plots2")]) == 0
    with open(paths[2], encoding="utf-8") as f:
        assert f.readline().strip() == "run,i,j,distance,gt_distance,accepted"
