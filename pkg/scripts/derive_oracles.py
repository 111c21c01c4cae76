"""Compute reference values independently of the package and freeze them.

Each value here comes from a route that shares no code with ``vrsync``:
homogeneous 4x4 matrices, Rodrigues' formula, hand pinhole arithmetic,
byte concatenation from the header table. The only package calls are for
regression pins (channel count, demo session, Monte-Carlo medians), which
are recorded rather than derived and are labelled as such.

    python scripts/derive_oracles.py          # rewrite tests/vectors/oracles.json
"""

from __future__ import annotations

import json
import math
import struct
import sys
from pathlib import Path

import numpy as np

ROOT = Path(__file__).resolve().parents[1]
OUT = ROOT / "tests" / "vectors" / "oracles.json"
CONFORMANCE = ROOT / "tests" / "vectors" / "wire_conformance.json"


def rodrigues(axis, angle_rad) -> np.ndarray:
    k = np.asarray(axis, float)
    k = k / np.linalg.norm(k)
    K = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    return np.eye(3) + math.sin(angle_rad) * K + (1 - math.cos(angle_rad)) * K @ K


def homogeneous(R, t) -> np.ndarray:
    M = np.eye(4)
    M[:3, :3] = R
    M[:3, 3] = t
    return M


def quat_wxyz_from_axis_angle(axis, angle_rad) -> list[float]:
    k = np.asarray(axis, float)
    k = k / np.linalg.norm(k)
    s = math.sin(angle_rad / 2)
    q = [math.cos(angle_rad / 2), *(k * s)]
    if q[0] < 0:
        q = [-c for c in q]
    return [float(c) for c in q]


def core_values() -> dict:
    # compose: a = (90 deg about Z, t=(1,0,0)), b = (identity, t=(0,1,0))
    A = homogeneous(rodrigues([0, 0, 1], math.pi / 2), [1, 0, 0])
    B = homogeneous(np.eye(3), [0, 1, 0])
    C = A @ B
    # shortest arc (1,0,0) -> (0,1,0): axis u x v, angle acos(u.v)
    u, v = np.array([1.0, 0, 0]), np.array([0, 1.0, 0])
    arc = quat_wxyz_from_axis_angle(np.cross(u, v), math.acos(u @ v))
    return {
        "compose_example": {
            "position": C[:3, 3].tolist(),
            "rotation_matrix": C[:3, :3].tolist(),
        },
        "shortest_arc_x_to_y": arc,
    }


def retarget_values() -> dict:
    rest, observed = np.array([0, 1.0, 0]), np.array([1.0, 0, 0])
    local = quat_wxyz_from_axis_angle(np.cross(rest, observed), math.acos(rest @ observed))
    distal = rodrigues([0, 0, 1], math.pi / 2) @ (rest * 0.5)
    return {"single_bone_local": local, "fk_distal_90_about_z": distal.tolist()}


def scene_values() -> dict:
    # point (1,0,0) to box x in [2,3], y in [-1,1], z in [-1,1]: clamp then measure
    p = np.array([1.0, 0, 0])
    lo, hi = np.array([2.0, -1, -1]), np.array([3.0, 1, 1])
    return {"point_to_box": float(np.linalg.norm(p - np.clip(p, lo, hi)))}


def marker_values() -> dict:
    f, cx, cy, h = 500.0, 320.0, 240.0, 0.05
    corners = [(-h, -h), (h, -h), (h, h), (-h, h)]
    pixels = [[f * x / 1.0 + cx, f * y / 1.0 + cy] for x, y in corners]
    # a synthetic homography and the points it maps
    H = np.array([[1.2, 0.1, 30.0], [-0.05, 0.9, 12.0], [1e-3, 2e-3, 1.0]])
    plane = np.array([[0, 0], [1, 0], [1, 1], [0, 1], [0.3, 0.7], [0.8, 0.2]], float) * 100
    mapped = []
    for x, y in plane:
        w = H @ [x, y, 1.0]
        mapped.append([w[0] / w[2], w[1] / w[2]])
    return {
        "identity_pose_pixels": pixels,
        "synthetic_homography": (H / np.linalg.norm(H)).tolist(),
        "synthetic_plane": plane.tolist(),
        "synthetic_pixels": mapped,
    }


def wire_values() -> dict:
    heartbeat = b"MS2" + bytes([1, 3]) + (0).to_bytes(4, "little") * 2 + (0).to_bytes(8, "little")
    header, user_head, quat, obj, snap_head = 21, 4 + 1 + 12, 16, 4 + 12 + 16 + 1, 3
    return {
        "heartbeat_hex": heartbeat.hex(),
        "snapshot_3x25_bytes": header + snap_head + 3 * (user_head + 25 * quat),
        "snapshot_3x25_2obj_bytes": header + snap_head + 3 * (user_head + 25 * quat) + 2 * obj,
        "snapshot_2x20_2obj_bytes": header + snap_head + 2 * (user_head + 20 * quat) + 2 * obj,
        "float_one_le": struct.pack("<f", 1.0).hex(),
    }


def _header(msg_type: int, seq: int, tick: int, ts: int) -> bytes:
    return b"MS2" + bytes([1, msg_type]) + seq.to_bytes(4, "little") + tick.to_bytes(4, "little") + ts.to_bytes(8, "little")


def _u32(v: int) -> bytes:
    return v.to_bytes(4, "little")


def _f32s(*vals: float) -> bytes:
    return b"".join(struct.pack("<f", v) for v in vals)


def wire_conformance() -> list[dict]:
    """Hex dumps built field by field from the layout table, with their decoded forms."""
    joints = [([0.5 * i, -0.25, 2.0], 2 if i % 3 else 1) for i in range(25)]
    skel = _u32(7) + b"".join(_f32s(*p) + bytes([c]) for p, c in joints)
    rot = [0.5, 0.5, -0.5, 0.5]
    snap = bytes([1, 1, 1]) + _u32(2) + bytes([2]) + _f32s(0.0, 1.0, -1.5) + _f32s(1, 0, 0, 0) + _f32s(*rot)
    snap += _u32(101) + _f32s(0.25, 0.75, 0.5) + _f32s(*rot) + bytes([1])
    cases = [
        ("join", 1, 0, 0, 0, _u32(3), {"user": 3}),
        ("join_ack", 2, 0, 120, 2_000_000, _u32(9) + (60).to_bytes(2, "little") + bytes([2]),
         {"client_id": 9, "tick_rate_hz": 60, "interpolation_delay_ticks": 2}),
        ("heartbeat", 3, 0, 0, 0, b"", {"event_ack": 0}),
        ("heartbeat_ack", 3, 0xFFFFFFFF, 7, 123_456, _u32(42), {"event_ack": 42}),
        ("skeleton_frame", 4, 17, 0, 566_661, skel,
         {"user": 7, "joints": [{"p": p, "c": c} for p, c in joints]}),
        ("object_pose", 5, 3, 0, 99, _u32(1) + _f32s(0.1 * 4, -0.5, 1.25) + _f32s(*rot) + _f32s(0.75) + bytes([0]),
         {"entity": 1, "pos": [0.4, -0.5, 1.25], "rot": rot, "reprojection_error": 0.75, "valid": False}),
        ("snapshot", 6, 1000, 1000, 16_666_666, snap,
         {"portal_unlocked": True,
          "users": [{"user": 2, "root": [0.0, 1.0, -1.5], "rotations": [[1, 0, 0, 0], rot]}],
          "objects": [{"entity": 101, "pos": [0.25, 0.75, 0.5], "rot": rot, "valid": True}]}),
        ("event", 7, 5, 397, 6_616_666, _u32(2) + bytes([3]) + _u32(397) + bytes([2]) + _u32(101) + _u32(102),
         {"event_id": 2, "kind": 3, "event_tick": 397, "participants": [101, 102]}),
    ]
    out = []
    for name, mtype, seq, tick, ts, body, decoded in cases:
        out.append({
            "name": name,
            "msg_type": mtype,
            "seq": seq,
            "tick": tick,
            "timestamp_us": ts,
            "body": decoded,
            "hex": (_header(mtype, seq, tick, ts) + body).hex(),
        })
    return out


def regression_pins() -> dict:
    """Values produced by running the package once; pinned to catch drift."""
    sys.path.insert(0, str(ROOT / "src"))
    from vrsync.client import Channel, ChannelConfig
    from vrsync.sim import load_scenario, simulate

    ch = Channel(ChannelConfig(latency_ms=10, jitter_ms=5, loss_fraction=0.5, rng_seed=12345))
    for i in range(10_000):
        ch.submit(i.to_bytes(4, "little"), "a", "b", i * 1000)
    delivered = len(ch.step(10**12))

    result = simulate(load_scenario(ROOT / "src" / "vrsync" / "data" / "demo.scenario"))
    fired = result.server.stats.events_fired
    return {
        "channel_loss_half_seed_12345_delivered": delivered,
        "demo_events_fired": {k: fired[k] for k in sorted(fired)},
    }


def main() -> None:
    doc = {
        "core": core_values(),
        "retarget": retarget_values(),
        "scene": scene_values(),
        "marker": marker_values(),
        "wire": wire_values(),
        "pins": regression_pins(),
    }
    if "--monte-carlo" in sys.argv:
        from marker_monte_carlo import run_study

        doc["pins"]["marker_noise"] = run_study()
    elif OUT.exists():
        old = json.loads(OUT.read_text())
        if "marker_noise" in old.get("pins", {}):
            doc["pins"]["marker_noise"] = old["pins"]["marker_noise"]
    OUT.parent.mkdir(parents=True, exist_ok=True)
    OUT.write_text(json.dumps(doc, indent=2) + "\n")
    CONFORMANCE.write_text(json.dumps(wire_conformance(), indent=2) + "\n")
    print(f"wrote {OUT} and {CONFORMANCE}")


if __name__ == "__main__":
    main()
