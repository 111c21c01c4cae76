import json
import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from vrsync.core import Vec3, quat_angle
from vrsync.errors import ParseError, ValidationError
from vrsync.scene import (
    Box,
    SceneModel,
    dump_scene,
    load_scene,
    load_scene_file,
    nearest_obstacle_distance,
    point_walkable,
    scene_to_doc,
)

from .conftest import DATA

SQUARE = [[-2.0, -2.0], [2.0, -2.0], [2.0, 2.0], [-2.0, 2.0]]


def doc(**extra):
    d = {"name": "t", "walkable": [SQUARE]}
    d.update(extra)
    return d


def proxy(**over):
    p = {
        "physical_id": 1,
        "virtual_entity": 10,
        "physical_extents": [0.3, 0.3, 0.3],
        "virtual_extents": [0.3, 0.3, 0.3],
        "marker_size": 0.2,
        "initial_pose": {"pos": [0, 0.15, 0]},
    }
    p.update(over)
    return p


def load(d) -> SceneModel:
    return load_scene(json.dumps(d))


def test_minimal_document():
    s = load(doc())
    assert len(s.walkable) == 1
    assert s.obstacles == () and s.proxies == ()


def test_size_match_rule():
    with pytest.raises(ValidationError) as e:
        load(doc(proxies=[proxy(virtual_extents=[0.45, 0.3, 0.3])]))
    assert e.value.rule == "size match"


def test_bundled_demo_scene():
    s = load_scene_file(DATA / "demo_scene.json")
    assert len(s.walkable) == 1
    assert len(s.obstacles) == 2
    assert len(s.proxies) == 2
    assert all(p.physical_extents == Vec3(0.3, 0.3, 0.3) for p in s.proxies)


@pytest.mark.parametrize(
    "bad, rule",
    [
        (doc(walkable=[]), "walkable region"),
        (doc(walkable=[[[0, 0], [1, 0]]]), "polygon vertex count"),
        (doc(walkable=[[[0, 0], [1, 1], [1, 0], [0, 1]]]), "self-intersecting polygon"),
        (doc(walkable=[[[0, 0], [2, 0], [1, 0.5], [2, 2], [0, 2]]]), "convex polygon"),
        (doc(obstacles=[{"min": [0, 0, 0], "max": [0, 1, 1]}]), "obstacle extents"),
        (doc(spawn_points=[{"pos": [5, 0, 5]}]), "spawn point inside walkable region"),
        (doc(proxies=[proxy(marker_size=0)]), "marker size"),
        (doc(proxies=[proxy(physical_extents=[0.3, -0.3, 0.3])]), "proxy extents"),
        (doc(proxies=[proxy(), proxy(virtual_entity=11)]), "unique proxy ids"),
        (doc(proxies=[proxy(initial_pose={"pos": [0, 0, 0], "rot": [0, 0, 0, 0]})]), "unit rotation"),
    ],
)
def test_validation_rules(bad, rule):
    with pytest.raises(ValidationError) as e:
        load(bad)
    assert e.value.rule == rule


@pytest.mark.parametrize(
    "text",
    [b"", b"{", b"[]", b'{"name": 3, "walkable": []}', b'{"name": "x"}', b'{"name": "x", "walkable": [[[0, "a"]]]}',
     b'{"name": "x", "walkable": [], "obstacles": 5}', b"\xff\xfe"],
)
def test_parse_errors(text):
    with pytest.raises(ParseError):
        load_scene(text)


@given(st.binary(max_size=200) | st.text(max_size=200))
def test_load_is_total(raw):
    try:
        s = load_scene(raw)
    except (ParseError, ValidationError):
        return
    assert isinstance(s, SceneModel)


json_values = st.recursive(
    st.none() | st.booleans() | st.floats(-10, 10) | st.integers(-5, 5) | st.text(max_size=3),
    lambda c: st.lists(c, max_size=4) | st.dictionaries(st.sampled_from(["pos", "min", "max", "rot", "x"]), c, max_size=3),
    max_leaves=12,
)


@given(st.fixed_dictionaries({"name": st.text(max_size=3), "walkable": json_values},
                             optional={"obstacles": json_values, "spawn_points": json_values, "proxies": json_values}))
def test_load_is_total_on_structured_garbage(d):
    try:
        s = load(d)
    except (ParseError, ValidationError):
        return
    assert isinstance(s, SceneModel)


def test_point_walkable():
    s = load(doc(obstacles=[{"min": [0.5, 0, 0.5], "max": [1.0, 1, 1.0]}]))
    assert point_walkable(s, Vec3(0, 0, 0))
    assert not point_walkable(s, Vec3(10, 0, 10))
    assert not point_walkable(s, Vec3(0.75, 0, 0.75))


def test_nearest_distance_examples(oracles):
    s = load(doc())
    assert nearest_obstacle_distance(s, Vec3(0, 0, 0)) == pytest.approx(2.0)
    assert nearest_obstacle_distance(s, Vec3(2.0, 0, 0.3)) == pytest.approx(0.0)
    big = load(doc(walkable=[[[-10, -10], [10, -10], [10, 10], [-10, 10]]],
                   obstacles=[{"min": [2, -1, -1], "max": [3, 1, 1]}]))
    assert nearest_obstacle_distance(big, Vec3(1, 0, 0)) == pytest.approx(oracles["scene"]["point_to_box"])


def test_distance_inside_obstacle_is_zero():
    s = load(doc(obstacles=[{"min": [0, 0, 0], "max": [1, 1, 1]}]))
    assert nearest_obstacle_distance(s, Vec3(0.5, 0.5, 0.5)) == 0.0


coord = st.floats(-3, 3, allow_nan=False)


@given(coord, coord)
def test_walkable_implies_positive_clearance(x, z):
    s = load_scene_file(DATA / "demo_scene.json")
    p = Vec3(x, 0.0, z)
    if point_walkable(s, p):
        assert nearest_obstacle_distance(s, p) > 0


def test_round_trip_demo():
    s = load_scene_file(DATA / "demo_scene.json")
    again = load_scene(dump_scene(s))
    assert again.walkable == s.walkable
    assert again.obstacles == s.obstacles
    assert again.proxies == s.proxies
    for a, b in zip(again.spawn_points, s.spawn_points):
        assert a.position == b.position
        assert quat_angle(a.rotation, b.rotation) <= 1e-12


@given(st.lists(st.tuples(st.floats(-1.5, 1.5), st.floats(-1.5, 1.5)), max_size=3),
       st.floats(-180, 180))
def test_round_trip_generated(spawns, yaw):
    d = doc(spawn_points=[{"pos": [x, 0, z], "yaw_deg": yaw} for x, z in spawns],
            obstacles=[{"min": [0, 0, 0], "max": [0.5, 1, 0.5]}], proxies=[proxy()])
    s = load(d)
    again = load_scene(dump_scene(s))
    assert again.proxies == s.proxies and again.obstacles == s.obstacles
    for a, b in zip(again.spawn_points, s.spawn_points):
        assert a.position == b.position
        assert quat_angle(a.rotation, b.rotation) <= 1e-9
    assert scene_to_doc(again)["name"] == "t"


def test_box_distance():
    b = Box(Vec3(0, 0, 0), Vec3(1, 1, 1))
    assert b.distance(Vec3(2, 2, 2)) == pytest.approx(math.sqrt(3))
    assert b.distance(Vec3(0.5, 0.5, 0.5)) == 0.0
