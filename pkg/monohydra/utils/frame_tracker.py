"""
逐帧诊断跟踪器
"""

from typing import Dict, List, Any, Optional
from pyee import EventEmitter


class FrameTracker(EventEmitter):
    """
    逐帧诊断: 因子数量、闪烁统计、QR 与稠密解误差、残差范数

    每帧诊断写完后触发 "frame" 事件
    """

    def __init__(self):
        super().__init__()
        self.history: List[Dict[str, Any]] = []
        self.current: Optional[Dict[str, Any]] = None

    def begin_frame(self, frame_id: int, timestamp: float) -> None:
        """开始新帧; 上一帧进入历史"""
        if self.current is not None:
            self.history.append(self.current)
        self.current = {"frame_id": frame_id, "timestamp": timestamp}

    def track_frame(self, values: Dict[str, Any]) -> None:
        """
        合并当前帧的诊断量

        Args:
            values: 诊断量字典, 同名键覆盖
        """
        if self.current is None:
            raise RuntimeError("track_frame called before begin_frame")
        self.current.update(values)
        self.emit("frame", self.current)

    def frames(self) -> List[Dict[str, Any]]:
        """全部帧记录 (含当前帧)"""
        return self.history + ([self.current] if self.current is not None else [])

    def column(self, key: str) -> List[Any]:
        """某个诊断量的逐帧序列, 缺失的帧跳过"""
        return [row[key] for row in self.frames() if key in row]

    def reset(self) -> None:
        self.history = []
        self.current = None
