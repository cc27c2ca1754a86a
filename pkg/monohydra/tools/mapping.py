"""
语义体素地图与场景图构建

- VoxelMap: 稀疏体素 (命中权重、自由空间权重、类别直方图), 累加满足交换律
- extract_objects: 非结构、非动态类别的 26 连通分量
- build_scene_graph: building / room / place / object 分层图
"""

from dataclasses import dataclass
from typing import List, Dict, Optional, Tuple, Iterable

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

try:
    from ..model_types import SceneSpec, MappingConfig
    from ..utils.geometry import Pose, CameraIntrinsics, backproject_map, camera_pose
    from ..utils.scene_graph import (
        SceneGraph,
        ObjectRecord,
        place_lattice,
        add_traversable_edges,
        add_support_edges,
    )
    from ..tools.temporal_fusion import FusedFrame
except ImportError:
    from monohydra.model_types import SceneSpec, MappingConfig
    from monohydra.utils.geometry import Pose, CameraIntrinsics, backproject_map, camera_pose
    from monohydra.utils.scene_graph import (
        SceneGraph,
        ObjectRecord,
        place_lattice,
        add_traversable_edges,
        add_support_edges,
    )
    from monohydra.tools.temporal_fusion import FusedFrame

KEY_RANGE = 1 << 20
KEY_OFFSET = 1 << 19


def voxel_keys(ijk: np.ndarray) -> np.ndarray:
    """整数体素坐标打包为 int64"""
    ijk = np.asarray(ijk, dtype=np.int64).reshape(-1, 3) + KEY_OFFSET
    return (ijk[:, 0] * KEY_RANGE + ijk[:, 1]) * KEY_RANGE + ijk[:, 2]


def decode_keys(keys: np.ndarray) -> np.ndarray:
    keys = np.asarray(keys, dtype=np.int64)
    k = keys % KEY_RANGE
    j = (keys // KEY_RANGE) % KEY_RANGE
    i = keys // (KEY_RANGE * KEY_RANGE)
    return np.stack([i, j, k], axis=1) - KEY_OFFSET


class VoxelMap:
    """稀疏体素网格: 键 → 行号, 各统计量按行存放"""

    def __init__(self, voxel_size: float, n_classes: int):
        self.voxel_size = float(voxel_size)
        self.n_classes = int(n_classes)
        self._index: Dict[int, int] = {}
        self.keys = np.zeros(0, dtype=np.int64)
        self.hit_weight = np.zeros(0)
        self.free_weight = np.zeros(0)
        self.label_hist = np.zeros((0, self.n_classes))

    def __len__(self) -> int:
        return len(self._index)

    def _rows_for(self, keys: np.ndarray) -> np.ndarray:
        uniq, inverse = np.unique(keys, return_inverse=True)
        rows = np.empty(len(uniq), dtype=np.int64)
        new = []
        for n, k in enumerate(uniq.tolist()):
            r = self._index.get(k)
            if r is None:
                r = len(self._index)
                self._index[k] = r
                new.append(k)
            rows[n] = r
        if new:
            m = len(new)
            self.keys = np.concatenate([self.keys, np.asarray(new, dtype=np.int64)])
            self.hit_weight = np.concatenate([self.hit_weight, np.zeros(m)])
            self.free_weight = np.concatenate([self.free_weight, np.zeros(m)])
            self.label_hist = np.vstack([self.label_hist, np.zeros((m, self.n_classes))])
        return rows[inverse]

    def voxel_of(self, points: np.ndarray) -> np.ndarray:
        return np.floor(np.asarray(points, dtype=float) / self.voxel_size).astype(np.int64)

    def centers(self, keys: Optional[np.ndarray] = None) -> np.ndarray:
        keys = self.keys if keys is None else keys
        return (decode_keys(keys) + 0.5) * self.voxel_size

    def add_hits(self, points: np.ndarray, labels: np.ndarray) -> None:
        if len(points) == 0:
            return
        rows = self._rows_for(voxel_keys(self.voxel_of(points)))
        np.add.at(self.hit_weight, rows, 1.0)
        np.add.at(self.label_hist, (rows, np.asarray(labels, dtype=np.int64)), 1.0)

    def add_free(self, points: np.ndarray) -> None:
        """每个体素每次调用最多计一次"""
        if len(points) == 0:
            return
        keys = np.unique(voxel_keys(self.voxel_of(points)))
        rows = self._rows_for(keys)
        np.add.at(self.free_weight, rows, 1.0)

    def lookup(self, ijk: np.ndarray) -> np.ndarray:
        """体素坐标 → 行号 (不存在为 -1)"""
        keys = voxel_keys(ijk)
        return np.array([self._index.get(int(k), -1) for k in keys], dtype=np.int64)

    def occupied(self) -> np.ndarray:
        return (self.hit_weight > 0) & (self.hit_weight >= self.free_weight)

    def argmax_labels(self) -> np.ndarray:
        """直方图 argmax (平票取最小类别号); 无命中为 -1"""
        if len(self) == 0:
            return np.zeros(0, dtype=np.int64)
        lab = np.argmax(self.label_hist, axis=1)
        return np.where(self.hit_weight > 0, lab, -1)

    def as_dict(self) -> Dict[int, Tuple[float, float, Tuple[float, ...]]]:
        return {
            int(k): (float(self.hit_weight[r]), float(self.free_weight[r]), tuple(self.label_hist[r].tolist()))
            for k, r in self._index.items()
        }

    def export_points(self) -> Tuple[np.ndarray, np.ndarray]:
        """被占据体素中心与其类别"""
        occ = self.occupied()
        return self.centers(self.keys[occ]), self.argmax_labels()[occ]


def integrate_frame(
    vmap: VoxelMap,
    fused: FusedFrame,
    pose: Pose,
    K: CameraIntrinsics,
    dynamic_ids: Iterable[int] = (),
    carve_stride: int = 4,
) -> VoxelMap:
    """把一帧融合后的深度/标签写入体素地图

    Args:
        vmap: 体素地图 (原地更新)
        fused: 融合帧
        pose: 机体位姿 T_WB
        K: 相机内参
        dynamic_ids: 动态类别, 其像素不写入地图
        carve_stride: 自由空间射线的像素步长

    Returns:
        同一个 vmap
    """
    T_WC = camera_pose(pose)
    depth = np.asarray(fused.depth, dtype=float)
    labels = np.asarray(fused.labels)
    points, valid = backproject_map(depth, K)
    valid &= (labels >= 0) & (labels < vmap.n_classes)
    dyn = list(dynamic_ids)
    if dyn:
        valid &= ~np.isin(labels, dyn)

    world = T_WC.transform(points[valid])
    vmap.add_hits(world, labels[valid])

    # ---------- 自由空间: 稀疏射线, 截止到表面前一个体素 ----------
    H, W = depth.shape
    grid = np.zeros((H, W), dtype=bool)
    grid[::carve_stride, ::carve_stride] = True
    carve = valid & grid
    if np.any(carve):
        pts_c = points[carve]
        lengths = np.linalg.norm(pts_c, axis=1)
        step = 0.5 * vmap.voxel_size
        free = []
        for p, L in zip(pts_c, lengths):
            s = np.arange(step, L - vmap.voxel_size, step)
            if len(s) == 0:
                continue
            free.append(np.outer(s / L, p))
        if free:
            vmap.add_free(T_WC.transform(np.vstack(free)))
    return vmap


def extract_objects(
    vmap: VoxelMap, spec: SceneSpec, min_voxels: int
) -> List[ObjectRecord]:
    """按类别做 26 连通分量, 体素数 ≥ min_voxels 的分量成为物体

    Returns:
        ObjectRecord 列表, 中心为命中权重加权的体素中心均值, 包围盒为体素 AABB
    """
    if len(vmap) == 0:
        return []
    skip = set(spec.structural_ids()) | set(spec.dynamic_ids())
    occ = vmap.occupied()
    lab = vmap.argmax_labels()
    ijk_all = decode_keys(vmap.keys)
    v = vmap.voxel_size
    structure = np.ones((3, 3, 3), dtype=bool)
    objects: List[ObjectRecord] = []
    for cls in range(vmap.n_classes):
        if cls in skip:
            continue
        sel = np.flatnonzero(occ & (lab == cls))
        if len(sel) < min_voxels:
            continue
        ijk = ijk_all[sel]
        lo = ijk.min(axis=0)
        dims = ijk.max(axis=0) - lo + 1
        grid = np.zeros(tuple(dims), dtype=bool)
        local = ijk - lo
        grid[local[:, 0], local[:, 1], local[:, 2]] = True
        components, n = ndimage.label(grid, structure=structure)
        comp_of = components[local[:, 0], local[:, 1], local[:, 2]]
        for c in range(1, n + 1):
            members = comp_of == c
            if np.sum(members) < min_voxels:
                continue
            rows = sel[members]
            w = vmap.hit_weight[rows]
            centers = (ijk[members] + 0.5) * v
            centroid = (centers * w[:, None]).sum(axis=0) / w.sum()
            box = np.concatenate([ijk[members].min(axis=0) * v, (ijk[members].max(axis=0) + 1) * v])
            objects.append(
                ObjectRecord(f"object_{len(objects)}", spec.label_set[cls], centroid, box)
            )
    return objects


def room_of(xy: np.ndarray, spec: SceneSpec) -> Optional[int]:
    """包含 xy 的第一个房间 (边界包含在内)"""
    for room in spec.rooms:
        xmin, ymin, xmax, ymax = room.footprint
        if xmin <= xy[0] <= xmax and ymin <= xy[1] <= ymax:
            return room.id
    return None


def assign_rooms(objects: List[ObjectRecord], spec: SceneSpec) -> Dict[str, Optional[int]]:
    """物体 → 房间编号, 落在所有房间外为 None"""
    return {obj.node_id: room_of(obj.centroid[:2], spec) for obj in objects}


def _observed_free(vmap: VoxelMap, points: np.ndarray) -> np.ndarray:
    if len(points) == 0:
        return np.zeros(0, dtype=bool)
    rows = vmap.lookup(vmap.voxel_of(points))
    ok = rows >= 0
    out = np.zeros(len(points), dtype=bool)
    out[ok] = (vmap.free_weight[rows[ok]] > 0) & ~vmap.occupied()[rows[ok]]
    return out


def build_scene_graph(
    vmap: VoxelMap,
    objects: List[ObjectRecord],
    spec: SceneSpec,
    cfg: MappingConfig,
) -> SceneGraph:
    """由体素地图与物体组装分层场景图

    Args:
        vmap: 体素地图
        objects: extract_objects 的结果
        spec: 场景规格 (房间轮廓与门洞)
        cfg: 位置网格参数

    Returns:
        SceneGraph
    """
    g = SceneGraph()
    occ = vmap.occupied() if len(vmap) else np.zeros(0, dtype=bool)
    occ_centers = vmap.centers(vmap.keys[occ]) if len(vmap) else np.zeros((0, 3))
    occ_labels = vmap.argmax_labels()[occ] if len(vmap) else np.zeros(0, dtype=np.int64)

    # ---------- 1. 房间: 轮廓内有被占据体素 ----------
    rooms = []
    for room in spec.rooms:
        xmin, ymin, xmax, ymax = room.footprint
        inside = (
            (occ_centers[:, 0] >= xmin)
            & (occ_centers[:, 0] <= xmax)
            & (occ_centers[:, 1] >= ymin)
            & (occ_centers[:, 1] <= ymax)
        )
        if np.any(inside):
            rooms.append(room)
    centers = [
        ((r.footprint[0] + r.footprint[2]) / 2, (r.footprint[1] + r.footprint[3]) / 2, spec.floor_z + r.wall_height / 2)
        for r in rooms
    ]
    g.add_node("building", "building", "building", np.mean(centers, axis=0) if centers else np.zeros(3))
    room_ids = set()
    for room, c in zip(rooms, centers):
        xmin, ymin, xmax, ymax = room.footprint
        rid = f"room_{room.id}"
        g.add_node(rid, "room", "room", c, (xmin, ymin, spec.floor_z, xmax, ymax, spec.floor_z + room.wall_height))
        g.add_edge(rid, "building", "contains")
        room_ids.add(room.id)

    # ---------- 2. 物体 ----------
    assignment = assign_rooms(objects, spec)
    for obj in objects:
        g.add_node(obj.node_id, "object", obj.label, obj.centroid, obj.box)
        rid = assignment[obj.node_id]
        if rid is not None and rid in room_ids:
            g.add_edge(obj.node_id, f"room_{rid}", "contains")
    add_support_edges(g, z_tolerance=1.5 * vmap.voxel_size)

    # ---------- 3. 门洞邻接: 门洞中心的竖直体素列被观测为自由 ----------
    for door in spec.doorways:
        r1, r2 = sorted(door.rooms)
        if r1 not in room_ids or r2 not in room_ids:
            continue
        zs = np.arange(spec.floor_z + vmap.voxel_size, spec.floor_z + door.height, vmap.voxel_size)
        column = np.stack([np.full(len(zs), door.center[0]), np.full(len(zs), door.center[1]), zs], axis=1)
        if np.any(_observed_free(vmap, column)):
            g.add_edge(f"room_{r1}", f"room_{r2}", "adjacent")

    # ---------- 4. 位置: 观测为自由且与墙/物体保持净空的网格点 ----------
    blockers = set(spec.structural_ids()) - {spec.label_id(c) for c in ("floor", "ceiling") if c in spec.label_set}
    blockers |= {i for i in range(len(spec.label_set)) if i not in spec.structural_ids() and i not in spec.dynamic_ids()}
    block_xy = occ_centers[np.isin(occ_labels, list(blockers))][:, :2]
    tree = cKDTree(block_xy) if len(block_xy) else None
    places_by_room: Dict[int, List[Tuple[str, np.ndarray]]] = {}
    count = 0
    for room in rooms:
        lattice = place_lattice(room.footprint, cfg.place_spacing)
        if len(lattice) == 0:
            continue
        pts = np.column_stack([lattice, np.full(len(lattice), cfg.place_height)])
        keep = _observed_free(vmap, pts)
        if tree is not None and np.any(keep):
            d, _ = tree.query(lattice)
            keep &= d >= cfg.place_clearance
        items = []
        for p in pts[keep]:
            pid = f"place_{count}"
            count += 1
            g.add_node(pid, "place", "place", p)
            g.add_edge(pid, f"room_{room.id}", "contains")
            items.append((pid, p))
        places_by_room[room.id] = items
    add_traversable_edges(
        g,
        places_by_room,
        cfg.place_spacing,
        [(tuple(sorted(d.rooms)), d.center) for d in spec.doorways],
    )
    return g


if __name__ == "__main__":
    vm = VoxelMap(0.1, 3)
    vm.add_hits(np.array([[0.05, 0.05, 0.05], [0.06, 0.04, 0.01]]), np.array([1, 1]))
    print("【体素】:", vm.as_dict())
