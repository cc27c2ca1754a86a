"""
分层场景图 (building / room / place / object) 及其共享构造规则
"""

import json
from typing import Dict, List, Optional, Tuple, Iterable, NamedTuple

import numpy as np
import networkx as nx

try:
    from ..model_types import MonoHydraError
except ImportError:
    from monohydra.model_types import MonoHydraError

LAYERS = ("building", "room", "place", "object")
RELATIONS = ("contains", "adjacent", "supports", "traversable")
UNDIRECTED = ("adjacent", "traversable")


class SceneGraphError(MonoHydraError):
    """场景图结构无效"""


class ObjectRecord(NamedTuple):
    """评估用的物体描述"""

    node_id: str
    label: str
    centroid: np.ndarray
    box: np.ndarray


class SceneGraph:
    """基于 networkx.DiGraph 的分层场景图"""

    def __init__(self):
        self.graph = nx.DiGraph()

    # ---------- 节点与边 ----------
    def add_node(
        self,
        node_id: str,
        layer: str,
        label: str,
        centroid: Iterable[float],
        box: Optional[Iterable[float]] = None,
    ) -> None:
        if layer not in LAYERS:
            raise SceneGraphError(f"unknown layer {layer!r}")
        c = tuple(float(x) for x in centroid)
        b = tuple(float(x) for x in box) if box is not None else c + c
        self.graph.add_node(node_id, layer=layer, label=label, centroid=c, box=b)

    def add_edge(self, src: str, dst: str, relation: str) -> None:
        if relation not in RELATIONS:
            raise SceneGraphError(f"unknown relation {relation!r}")
        if src not in self.graph or dst not in self.graph:
            raise SceneGraphError(f"edge {src}->{dst} references a missing node")
        if relation in UNDIRECTED and dst < src:
            src, dst = dst, src
        self.graph.add_edge(src, dst, relation=relation)

    def nodes(self, layer: Optional[str] = None) -> List[str]:
        return [n for n, d in self.graph.nodes(data=True) if layer is None or d["layer"] == layer]

    def node(self, node_id: str) -> Dict:
        return self.graph.nodes[node_id]

    def edges(self, relation: Optional[str] = None) -> List[Tuple[str, str, str]]:
        return [
            (u, v, d["relation"])
            for u, v, d in self.graph.edges(data=True)
            if relation is None or d["relation"] == relation
        ]

    def num_nodes(self) -> int:
        return self.graph.number_of_nodes()

    def num_edges(self) -> int:
        return self.graph.number_of_edges()

    def centroid(self, node_id: str) -> np.ndarray:
        return np.asarray(self.graph.nodes[node_id]["centroid"], dtype=float)

    def box(self, node_id: str) -> np.ndarray:
        return np.asarray(self.graph.nodes[node_id]["box"], dtype=float)

    def parent_room(self, node_id: str) -> Optional[str]:
        for _, dst, d in self.graph.out_edges(node_id, data=True):
            if d["relation"] == "contains" and self.graph.nodes[dst]["layer"] == "room":
                return dst
        return None

    def objects(self) -> List[ObjectRecord]:
        return [
            ObjectRecord(n, self.node(n)["label"], self.centroid(n), self.box(n))
            for n in self.nodes("object")
        ]

    def copy(self) -> "SceneGraph":
        g = SceneGraph()
        g.graph = self.graph.copy()
        return g

    def remove_node(self, node_id: str) -> None:
        self.graph.remove_node(node_id)

    def validate(self) -> None:
        """检查: 恰好一个 building 节点; 每个物体至多一个房间父节点; 包围盒包含中心"""
        if len(self.nodes("building")) != 1:
            raise SceneGraphError("scene graph must have exactly one building node")
        for n in self.nodes("object"):
            parents = [
                dst
                for _, dst, d in self.graph.out_edges(n, data=True)
                if d["relation"] == "contains"
            ]
            if len(parents) > 1:
                raise SceneGraphError(f"object {n} has {len(parents)} parent rooms")
        for n, d in self.graph.nodes(data=True):
            c, b = d["centroid"], d["box"]
            if any(c[i] < b[i] - 1e-9 or c[i] > b[i + 3] + 1e-9 for i in range(3)):
                raise SceneGraphError(f"node {n}: box does not contain centroid")

    # ---------- JSON ----------
    def to_dict(self) -> Dict:
        nodes = [
            {
                "id": n,
                "layer": d["layer"],
                "label": d["label"],
                "centroid": [round(x, 9) for x in d["centroid"]],
                "box": [round(x, 9) for x in d["box"]],
            }
            for n, d in self.graph.nodes(data=True)
        ]
        edges = [{"src": u, "dst": v, "relation": r} for u, v, r in self.edges()]
        return {"nodes": nodes, "edges": edges}

    @classmethod
    def from_dict(cls, data: Dict) -> "SceneGraph":
        g = cls()
        for n in data.get("nodes", []):
            g.add_node(n["id"], n["layer"], n["label"], n["centroid"], n["box"])
        for e in data.get("edges", []):
            g.add_edge(e["src"], e["dst"], e["relation"])
        return g

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f, indent=2)

    @classmethod
    def load(cls, path: str) -> "SceneGraph":
        with open(path, "r", encoding="utf-8") as f:
            return cls.from_dict(json.load(f))


def place_lattice(footprint: Tuple[float, float, float, float], spacing: float) -> np.ndarray:
    """房间轮廓内的规则位置网格 (xy), 起点偏移半个间距"""
    xmin, ymin, xmax, ymax = footprint
    xs = np.arange(xmin + 0.5 * spacing, xmax - 1e-9, spacing)
    ys = np.arange(ymin + 0.5 * spacing, ymax - 1e-9, spacing)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    return np.stack([gx.ravel(), gy.ravel()], axis=1)


def rect_distance(points: np.ndarray, rect: Tuple[float, float, float, float]) -> np.ndarray:
    """xy 点到轴对齐矩形的距离 (内部为 0)"""
    xmin, ymin, xmax, ymax = rect
    dx = np.maximum(np.maximum(xmin - points[:, 0], 0.0), points[:, 0] - xmax)
    dy = np.maximum(np.maximum(ymin - points[:, 1], 0.0), points[:, 1] - ymax)
    return np.hypot(dx, dy)


def boundary_distance(points: np.ndarray, footprint: Tuple[float, float, float, float]) -> np.ndarray:
    """轮廓内点到边界的距离"""
    xmin, ymin, xmax, ymax = footprint
    return np.minimum.reduce(
        [points[:, 0] - xmin, xmax - points[:, 0], points[:, 1] - ymin, ymax - points[:, 1]]
    )


def add_traversable_edges(
    graph: SceneGraph,
    places_by_room: Dict[int, List[Tuple[str, np.ndarray]]],
    spacing: float,
    doorways: Iterable[Tuple[Tuple[int, int], Tuple[float, float]]],
) -> None:
    """同一房间内 4 邻接位置相连; 每个门洞连接两侧最近的位置"""
    for items in places_by_room.values():
        for a in range(len(items)):
            for b in range(a + 1, len(items)):
                d = float(np.linalg.norm(items[a][1][:2] - items[b][1][:2]))
                if abs(d - spacing) < 1e-6:
                    graph.add_edge(items[a][0], items[b][0], "traversable")
    for (r1, r2), center in doorways:
        ends = []
        for rid in (r1, r2):
            items = places_by_room.get(rid, [])
            if not items:
                break
            dists = [float(np.linalg.norm(p[:2] - np.asarray(center))) for _, p in items]
            ends.append(items[int(np.argmin(dists))][0])
        if len(ends) == 2:
            graph.add_edge(ends[0], ends[1], "traversable")


def add_support_edges(graph: SceneGraph, z_tolerance: float) -> None:
    """物体 B 底面贴合物体 A 顶面且 xy 重叠时, A supports B"""
    objs = graph.nodes("object")
    for a in objs:
        ba = graph.box(a)
        for b in objs:
            if a == b:
                continue
            bb = graph.box(b)
            if abs(bb[2] - ba[5]) > z_tolerance:
                continue
            overlap_x = min(ba[3], bb[3]) - max(ba[0], bb[0])
            overlap_y = min(ba[4], bb[4]) - max(ba[1], bb[1])
            if overlap_x > 0 and overlap_y > 0:
                graph.add_edge(a, b, "supports")


if __name__ == "__main__":
    g = SceneGraph()
    g.add_node("building", "building", "building", (0, 0, 0))
    g.add_node("room_0", "room", "room", (0, 0, 0), (-1, -1, -1, 1, 1, 1))
    g.add_edge("room_0", "building", "contains")
    g.validate()
    print("【场景图】:", json.dumps(g.to_dict(), indent=2))
