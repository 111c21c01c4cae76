"""Scene model: walkable floor, obstacles, spawn points and proxy bindings.

The scan of the physical room is reduced upstream to convex walkable polygons on
the ground plane (y = 0) plus axis-aligned obstacle boxes. Polygons are given as
``[x, z]`` pairs.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Any

from .core import Transform, Vec3, canonical, quat_yaw_deg, yaw_quat
from .errors import ParseError, ValidationError

SIZE_MATCH_TOLERANCE = 0.25

Point2 = tuple[float, float]


@dataclass(frozen=True)
class Box:
    min: Vec3
    max: Vec3

    def footprint_contains(self, x: float, z: float) -> bool:
        return self.min.x <= x <= self.max.x and self.min.z <= z <= self.max.z

    def distance(self, p: Vec3) -> float:
        dx = max(self.min.x - p.x, 0.0, p.x - self.max.x)
        dy = max(self.min.y - p.y, 0.0, p.y - self.max.y)
        dz = max(self.min.z - p.z, 0.0, p.z - self.max.z)
        return math.sqrt(dx * dx + dy * dy + dz * dz)


@dataclass(frozen=True)
class ProxyBinding:
    physical_id: int
    virtual_entity: int
    physical_extents: Vec3
    virtual_extents: Vec3
    marker_size: float
    initial_pose: Transform = field(default_factory=Transform)


@dataclass(frozen=True)
class SceneModel:
    name: str
    walkable: tuple[tuple[Point2, ...], ...]
    obstacles: tuple[Box, ...] = ()
    spawn_points: tuple[Transform, ...] = ()
    proxies: tuple[ProxyBinding, ...] = ()

    def proxy_for_physical(self, physical_id: int) -> ProxyBinding | None:
        for p in self.proxies:
            if p.physical_id == physical_id:
                return p
        return None


# -- 2D helpers ---------------------------------------------------------------

def _cross(o: Point2, a: Point2, b: Point2) -> float:
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def _segments_intersect(p1: Point2, p2: Point2, q1: Point2, q2: Point2) -> bool:
    d1 = _cross(q1, q2, p1)
    d2 = _cross(q1, q2, p2)
    d3 = _cross(p1, p2, q1)
    d4 = _cross(p1, p2, q2)
    if ((d1 > 0) != (d2 > 0)) and ((d3 > 0) != (d4 > 0)) and d1 and d2 and d3 and d4:
        return True

    def on_seg(a: Point2, b: Point2, c: Point2, d: float) -> bool:
        return d == 0 and min(a[0], b[0]) <= c[0] <= max(a[0], b[0]) and min(a[1], b[1]) <= c[1] <= max(a[1], b[1])

    return on_seg(q1, q2, p1, d1) or on_seg(q1, q2, p2, d2) or on_seg(p1, p2, q1, d3) or on_seg(p1, p2, q2, d4)


def polygon_self_intersects(poly: tuple[Point2, ...]) -> bool:
    n = len(poly)
    for i in range(n):
        a1, a2 = poly[i], poly[(i + 1) % n]
        for j in range(i + 1, n):
            if j == i or (j + 1) % n == i or j == (i + 1) % n:
                continue
            if _segments_intersect(a1, a2, poly[j], poly[(j + 1) % n]):
                return True
    # repeated vertices also count
    return len(set(poly)) != n


def polygon_is_convex(poly: tuple[Point2, ...]) -> bool:
    n = len(poly)
    sign = 0
    for i in range(n):
        c = _cross(poly[i], poly[(i + 1) % n], poly[(i + 2) % n])
        if c == 0:
            continue
        s = 1 if c > 0 else -1
        if sign == 0:
            sign = s
        elif s != sign:
            return False
    return sign != 0


def _segment_distance(p: Point2, a: Point2, b: Point2) -> float:
    ax, az = b[0] - a[0], b[1] - a[1]
    px, pz = p[0] - a[0], p[1] - a[1]
    L2 = ax * ax + az * az
    t = 0.0 if L2 == 0 else max(0.0, min(1.0, (px * ax + pz * az) / L2))
    dx, dz = px - t * ax, pz - t * az
    return math.sqrt(dx * dx + dz * dz)


def _edge_distance(poly: tuple[Point2, ...], p: Point2) -> float:
    n = len(poly)
    return min(_segment_distance(p, poly[i], poly[(i + 1) % n]) for i in range(n))


def _contains(poly: tuple[Point2, ...], p: Point2, strict: bool) -> bool:
    # convex polygon: every edge sees p on the same side
    n = len(poly)
    sign = 0
    for i in range(n):
        c = _cross(poly[i], poly[(i + 1) % n], p)
        if c == 0:
            if strict:
                return False
            continue
        s = 1 if c > 0 else -1
        if sign == 0:
            sign = s
        elif s != sign:
            return False
    return True


# -- queries ------------------------------------------------------------------

def point_walkable(scene: SceneModel, p: Vec3) -> bool:
    """Ground projection strictly inside a walkable polygon and clear of every obstacle footprint."""
    q = (p.x, p.z)
    if not any(_contains(poly, q, strict=True) for poly in scene.walkable):
        return False
    return not any(b.footprint_contains(p.x, p.z) for b in scene.obstacles)


def nearest_obstacle_distance(scene: SceneModel, p: Vec3) -> float:
    """Distance (m) to the closest obstacle box or edge of the walkable region.

    Obstacles are measured in 3D (zero inside a box). The walkable boundary is
    measured on the ground plane: inside the region it is the depth within the
    deepest containing polygon, outside it the gap to the nearest polygon.
    """
    q = (p.x, p.z)
    inside = [_edge_distance(poly, q) for poly in scene.walkable if _contains(poly, q, strict=False)]
    if inside:
        best = max(inside)
    else:
        best = min((_edge_distance(poly, q) for poly in scene.walkable), default=math.inf)
    for b in scene.obstacles:
        best = min(best, b.distance(p))
    return best


# -- document I/O -------------------------------------------------------------

def _num(v: Any, what: str) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ParseError(f"{what}: expected a number, got {v!r}")
    f = float(v)
    if not math.isfinite(f):
        raise ValidationError("finite", what)
    return f


def _vec(v: Any, n: int, what: str) -> tuple[float, ...]:
    if not isinstance(v, list) or len(v) != n:
        raise ParseError(f"{what}: expected an array of {n} numbers")
    return tuple(_num(c, what) for c in v)


def _uint32(v: Any, what: str) -> int:
    if isinstance(v, bool) or not isinstance(v, int) or not 0 <= v <= 0xFFFFFFFF:
        raise ParseError(f"{what}: expected an unsigned 32-bit integer, got {v!r}")
    return v


def _list(d: dict, key: str) -> list:
    v = d.get(key, [])
    if not isinstance(v, list):
        raise ParseError(f"{key}: expected an array")
    return v


def _get(d: Any, key: str, what: str) -> Any:
    if not isinstance(d, dict):
        raise ParseError(f"{what}: expected an object")
    if key not in d:
        raise ParseError(f"{what}: missing field {key!r}")
    return d[key]


def parse_pose(d: Any, what: str) -> Transform:
    pos = Vec3(*_vec(_get(d, "pos", what), 3, f"{what}.pos"))
    rot = d.get("rot", [1.0, 0.0, 0.0, 0.0])
    q = _vec(rot, 4, f"{what}.rot")
    try:
        return Transform(pos, canonical(q))
    except ValueError as e:
        raise ValidationError("unit rotation", f"{what}.rot") from e


def pose_to_doc(t: Transform) -> dict:
    return {"pos": list(t.position), "rot": list(t.rotation)}


def _read_source(source: bytes | str | IO[bytes] | IO[str]) -> Any:
    if hasattr(source, "read"):
        source = source.read()  # type: ignore[union-attr]
    try:
        return json.loads(source)  # type: ignore[arg-type]
    except (json.JSONDecodeError, UnicodeDecodeError, TypeError) as e:
        raise ParseError(f"scene document is not valid JSON: {e}") from e


def scene_from_doc(doc: Any) -> SceneModel:
    name = _get(doc, "name", "scene")
    if not isinstance(name, str):
        raise ParseError("name: expected text")

    walk_doc = _get(doc, "walkable", "scene")
    if not isinstance(walk_doc, list):
        raise ParseError("walkable: expected an array of polygons")
    walkable = []
    for i, poly in enumerate(walk_doc):
        if not isinstance(poly, list):
            raise ParseError(f"walkable[{i}]: expected an array of [x, z] pairs")
        walkable.append(tuple(_vec(v, 2, f"walkable[{i}]") for v in poly))

    obstacles = []
    for i, ob in enumerate(_list(doc, "obstacles")):
        lo = Vec3(*_vec(_get(ob, "min", f"obstacles[{i}]"), 3, f"obstacles[{i}].min"))
        hi = Vec3(*_vec(_get(ob, "max", f"obstacles[{i}]"), 3, f"obstacles[{i}].max"))
        obstacles.append(Box(lo, hi))

    spawns = []
    for i, sp in enumerate(_list(doc, "spawn_points")):
        pos = Vec3(*_vec(_get(sp, "pos", f"spawn_points[{i}]"), 3, f"spawn_points[{i}].pos"))
        yaw = _num(sp.get("yaw_deg", 0.0), f"spawn_points[{i}].yaw_deg")
        spawns.append(Transform(pos, yaw_quat(yaw)))

    proxies = []
    for i, px in enumerate(_list(doc, "proxies")):
        w = f"proxies[{i}]"
        proxies.append(ProxyBinding(
            physical_id=_uint32(_get(px, "physical_id", w), f"{w}.physical_id"),
            virtual_entity=_uint32(_get(px, "virtual_entity", w), f"{w}.virtual_entity"),
            physical_extents=Vec3(*_vec(_get(px, "physical_extents", w), 3, f"{w}.physical_extents")),
            virtual_extents=Vec3(*_vec(_get(px, "virtual_extents", w), 3, f"{w}.virtual_extents")),
            marker_size=_num(_get(px, "marker_size", w), f"{w}.marker_size"),
            initial_pose=parse_pose(_get(px, "initial_pose", w), f"{w}.initial_pose"),
        ))

    scene = SceneModel(name, tuple(walkable), tuple(obstacles), tuple(spawns), tuple(proxies))
    validate_scene(scene)
    return scene


def validate_scene(scene: SceneModel) -> None:
    """Raise ValidationError naming the first violated invariant."""
    if not scene.walkable:
        raise ValidationError("walkable region", "at least one polygon required")
    for i, poly in enumerate(scene.walkable):
        if len(poly) < 3:
            raise ValidationError("polygon vertex count", f"walkable[{i}] has {len(poly)} vertices")
        if polygon_self_intersects(poly):
            raise ValidationError("self-intersecting polygon", f"walkable[{i}]")
        if not polygon_is_convex(poly):
            raise ValidationError("convex polygon", f"walkable[{i}]")
    for i, b in enumerate(scene.obstacles):
        if not (b.max.x > b.min.x and b.max.y > b.min.y and b.max.z > b.min.z):
            raise ValidationError("obstacle extents", f"obstacles[{i}] must have positive extents")
    for i, sp in enumerate(scene.spawn_points):
        q = (sp.position.x, sp.position.z)
        if not any(_contains(poly, q, strict=False) for poly in scene.walkable):
            raise ValidationError("spawn point inside walkable region", f"spawn_points[{i}]")
    seen_phys: set[int] = set()
    seen_virt: set[int] = set()
    for i, px in enumerate(scene.proxies):
        if min(px.physical_extents) <= 0 or min(px.virtual_extents) <= 0:
            raise ValidationError("proxy extents", f"proxies[{i}] extents must be positive")
        for axis, p, v in zip("xyz", px.physical_extents, px.virtual_extents):
            ratio = v / p
            if not (1.0 - SIZE_MATCH_TOLERANCE <= ratio <= 1.0 + SIZE_MATCH_TOLERANCE):
                raise ValidationError("size match", f"proxies[{i}] {axis} ratio {ratio:.3f}")
        if px.marker_size <= 0:
            raise ValidationError("marker size", f"proxies[{i}] marker_size must be positive")
        if px.physical_id in seen_phys or px.virtual_entity in seen_virt:
            raise ValidationError("unique proxy ids", f"proxies[{i}]")
        seen_phys.add(px.physical_id)
        seen_virt.add(px.virtual_entity)


def load_scene(source: bytes | str | IO[bytes] | IO[str]) -> SceneModel:
    """Parse and validate a scene document (JSON text or a readable stream)."""
    return scene_from_doc(_read_source(source))


def load_scene_file(path: str | Path) -> SceneModel:
    with open(path, "rb") as f:
        return load_scene(f)


def scene_to_doc(scene: SceneModel) -> dict:
    return {
        "name": scene.name,
        "walkable": [[list(v) for v in poly] for poly in scene.walkable],
        "obstacles": [{"min": list(b.min), "max": list(b.max)} for b in scene.obstacles],
        "spawn_points": [
            {"pos": list(sp.position), "yaw_deg": quat_yaw_deg(sp.rotation)} for sp in scene.spawn_points
        ],
        "proxies": [
            {
                "physical_id": p.physical_id,
                "virtual_entity": p.virtual_entity,
                "physical_extents": list(p.physical_extents),
                "virtual_extents": list(p.virtual_extents),
                "marker_size": p.marker_size,
                "initial_pose": pose_to_doc(p.initial_pose),
            }
            for p in scene.proxies
        ],
    }


def dump_scene(scene: SceneModel) -> bytes:
    return json.dumps(scene_to_doc(scene), indent=2).encode()
