import numpy as np
import pytest

from monohydra.utils.scene_graph import (
    SceneGraph,
    SceneGraphError,
    add_support_edges,
    add_traversable_edges,
    boundary_distance,
    place_lattice,
    rect_distance,
)


def _base():
    g = SceneGraph()
    g.add_node("building", "building", "building", (0, 0, 0))
    g.add_node("room_0", "room", "room", (0, 0, 1), (-2, -2, 0, 2, 2, 2))
    g.add_node("room_1", "room", "room", (4, 0, 1), (2, -2, 0, 6, 2, 2))
    g.add_edge("room_0", "building", "contains")
    g.add_edge("room_1", "building", "contains")
    return g


def test_validate_accepts_well_formed_graph():
    g = _base()
    g.add_node("object_0", "object", "table", (0, 0, 0.4), (-0.5, -0.5, 0, 0.5, 0.5, 0.8))
    g.add_edge("object_0", "room_0", "contains")
    g.validate()
    assert g.parent_room("object_0") == "room_0"
    assert g.objects()[0].label == "table"


def test_validate_rejects_second_building():
    g = _base()
    g.add_node("building_2", "building", "building", (0, 0, 0))
    with pytest.raises(SceneGraphError):
        g.validate()


def test_validate_rejects_two_parents():
    g = _base()
    g.add_node("object_0", "object", "chair", (2, 0, 0.4), (1.8, -0.2, 0, 2.2, 0.2, 0.8))
    g.add_edge("object_0", "room_0", "contains")
    g.add_edge("object_0", "room_1", "contains")
    with pytest.raises(SceneGraphError):
        g.validate()


def test_validate_rejects_box_missing_centroid():
    g = _base()
    g.add_node("object_0", "object", "chair", (3, 0, 0.4), (0, 0, 0, 1, 1, 1))
    with pytest.raises(SceneGraphError):
        g.validate()


def test_unknown_layer_relation_and_missing_node():
    g = _base()
    with pytest.raises(SceneGraphError):
        g.add_node("x", "floor", "x", (0, 0, 0))
    with pytest.raises(SceneGraphError):
        g.add_edge("room_0", "room_1", "near")
    with pytest.raises(SceneGraphError):
        g.add_edge("room_0", "room_9", "adjacent")


def test_undirected_edges_are_canonical():
    g = _base()
    g.add_edge("room_1", "room_0", "adjacent")
    g.add_edge("room_0", "room_1", "adjacent")
    assert g.edges("adjacent") == [("room_0", "room_1", "adjacent")]


def test_json_preserves_structure(tmp_path):
    g = _base()
    g.add_edge("room_0", "room_1", "adjacent")
    path = tmp_path / "graph.json"
    g.save(str(path))
    back = SceneGraph.load(str(path))
    assert sorted(back.nodes()) == sorted(g.nodes())
    assert sorted(back.edges()) == sorted(g.edges())
    assert np.allclose(back.box("room_1"), g.box("room_1"))


def test_place_lattice_offsets_half_spacing():
    pts = place_lattice((0.0, 0.0, 2.0, 1.0), 0.5)
    assert len(pts) == 8
    assert np.allclose(sorted(set(pts[:, 0])), [0.25, 0.75, 1.25, 1.75])
    assert np.allclose(sorted(set(pts[:, 1])), [0.25, 0.75])


def test_rect_and_boundary_distance():
    pts = np.array([[0.5, 0.5], [3.0, 0.5], [3.0, 5.0]])
    assert np.allclose(rect_distance(pts, (0, 0, 1, 1)), [0.0, 2.0, np.hypot(2.0, 4.0)])
    assert boundary_distance(np.array([[0.25, 0.5]]), (0, 0, 1, 1))[0] == pytest.approx(0.25)


def test_traversable_edges_within_rooms_and_through_doors():
    g = _base()
    items = {0: [], 1: []}
    for rid, xs in ((0, (-1.0, 0.0, 1.0)), (1, (3.0, 4.0))):
        for x in xs:
            pid = f"place_{rid}_{int(x + 5)}"
            g.add_node(pid, "place", "place", (x, 0.0, 0.0))
            items[rid].append((pid, np.array([x, 0.0, 0.0])))
    add_traversable_edges(g, items, 1.0, [((0, 1), (2.0, 0.0))])
    edges = {(u, v) for u, v, _ in g.edges("traversable")}
    assert len(edges) == 4
    # 门洞连接两侧距离门中心最近的位置
    assert ("place_0_6", "place_1_8") in edges


def test_support_edges():
    g = _base()
    g.add_node("object_0", "object", "table", (0, 0, 0.35), (-0.5, -0.5, 0.0, 0.5, 0.5, 0.7))
    g.add_node("object_1", "object", "monitor", (0, 0, 0.9), (-0.2, -0.1, 0.72, 0.2, 0.1, 1.1))
    g.add_node("object_2", "object", "chair", (1.5, 0, 0.9), (1.2, -0.2, 0.7, 1.8, 0.2, 1.1))
    add_support_edges(g, z_tolerance=0.05)
    assert g.edges("supports") == [("object_0", "object_1", "supports")]
