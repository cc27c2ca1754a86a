import pytest

from monohydra.utils.frame_tracker import FrameTracker
from monohydra.utils.stage_tracker import StageTracker


def test_stage_tracker_breakdown_and_events():
    tracker = StageTracker()
    seen = []
    tracker.on("stage", seen.append)
    tracker.track_stage("fusion", 0.5)
    tracker.track_stage("fusion", 0.25)
    tracker.track_stage("mapping", 1.0)
    with tracker.time("metrics"):
        pass
    assert len(seen) == 4 and seen[0] == {"stage": "fusion", "seconds": 0.5}
    breakdown = tracker.get_breakdown()
    assert breakdown["fusion"] == pytest.approx(750.0)
    assert breakdown["mapping"] == pytest.approx(1000.0)
    assert tracker.get_total() == pytest.approx(1.75 + breakdown["metrics"] / 1000.0)
    tracker.reset()
    assert tracker.get_total() == 0.0


def test_stage_timer_records_on_error():
    tracker = StageTracker()
    with pytest.raises(ValueError):
        with tracker.time("vio_update"):
            raise ValueError("boom")
    assert "vio_update" in tracker.get_breakdown()


def test_frame_tracker_rows_and_columns():
    tracker = FrameTracker()
    seen = []
    tracker.on("frame", lambda row: seen.append(row["frame_id"]))
    with pytest.raises(RuntimeError):
        tracker.track_frame({"n_tracks": 1})
    tracker.begin_frame(0, 0.0)
    tracker.track_frame({"n_tracks": 3, "flicker_raw": 0.0})
    tracker.begin_frame(1, 0.05)
    tracker.track_frame({"n_tracks": 5})
    assert seen == [0, 1]
    assert [r["frame_id"] for r in tracker.frames()] == [0, 1]
    assert tracker.column("n_tracks") == [3, 5]
    assert tracker.column("flicker_raw") == [0.0]
    tracker.reset()
    assert tracker.frames() == []
