"""
阶段耗时跟踪器
"""

import time
from contextlib import contextmanager
from typing import Dict, Any, Optional, List
from pyee import EventEmitter


class StageTracker(EventEmitter):
    """
    按阶段累计运行耗时, 每次记录触发 "stage" 事件
    """

    def __init__(self, budget_s: Optional[float] = None):
        """
        初始化阶段跟踪器

        Args:
            budget_s: 可选的总耗时预算 (秒), 仅用于摘要显示
        """
        super().__init__()
        self.budget_s = budget_s
        self.records: List[Dict[str, Any]] = []

    def track_stage(self, stage: str, seconds: float) -> None:
        """
        记录一次阶段耗时

        Args:
            stage: 阶段名称
            seconds: 耗时 (秒)
        """
        record = {"stage": stage, "seconds": float(seconds)}
        self.records.append(record)
        self.emit("stage", record)

    @contextmanager
    def time(self, stage: str):
        """计时上下文, 退出时记录耗时"""
        start = time.perf_counter()
        try:
            yield
        finally:
            self.track_stage(stage, time.perf_counter() - start)

    def get_total(self) -> float:
        """
        获取累计耗时

        Returns:
            所有阶段耗时之和 (秒)
        """
        return float(sum(r["seconds"] for r in self.records))

    def get_breakdown(self) -> Dict[str, float]:
        """
        获取按阶段细分的耗时 (毫秒)

        Returns:
            以阶段名为键, 累计毫秒数为值的字典
        """
        result: Dict[str, float] = {}
        for item in self.records:
            stage = item["stage"]
            result[stage] = result.get(stage, 0.0) + 1000.0 * item["seconds"]
        return result

    def print_summary(self) -> None:
        """
        打印耗时摘要
        """
        print(
            "阶段耗时摘要:",
            {
                "budget_s": self.budget_s,
                "total_s": round(self.get_total(), 3),
                "breakdown_ms": {k: round(v, 1) for k, v in self.get_breakdown().items()},
            },
        )

    def reset(self) -> None:
        """
        重置耗时记录
        """
        self.records = []
