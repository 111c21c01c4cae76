"""Regenerate the bundled demo scene, rig, captures and scenario.

Story (16 s, looped by the scenario): user 1 stands at a desk, picks up cube A,
sets it on cube B, lets go, later carries it back. User 2 walks a circle on the
far side of the island and never comes near the cubes. The captures are
synthesized from the default rig so joint spacing matches its bone lengths.

    python scripts/make_demo_assets.py [--out DIR] [--noise-px 0.05]
"""

from __future__ import annotations

import argparse
import json
import math
from pathlib import Path

import numpy as np

from vrsync.core import Transform, UnitQuat, Vec3, transform_compose, transform_inverse, yaw_quat
from vrsync.marker import CameraIntrinsics, project_marker
from vrsync.retarget import (
    HAND_LEFT,
    HAND_RIGHT,
    REST_JOINTS,
    Confidence,
    Joint,
    SkeletonFrame,
    default_rig,
    frame_to_record,
    rig_to_doc,
)
from vrsync.scene import dump_scene, load_scene

DATA = Path(__file__).resolve().parents[1] / "src" / "vrsync" / "data"

RATE_HZ = 30
PERIOD_S = 16.0
FRAMES = int(PERIOD_S * RATE_HZ)
EDGE = 0.3
MARKER = 0.2
A0 = Vec3(0.35, 0.9, 0.5)
ON_B = Vec3(-0.35, 1.2, 0.5)
B0 = Vec3(-0.35, 0.9, 0.5)
LIFT = 0.08
GRIP = Vec3(0.0, 0.08, 0.08)  # hand position relative to a held cube's center
USER1_Z = 0.85
CIRCLE_CENTER = (0.0, 3.2)
CIRCLE_R = 0.8

CAMERA = CameraIntrinsics(525.0, 525.0, 319.5, 239.5, 640, 480)
# camera looks along world +Z with image y pointing down
CAMERA_POSE = Transform(Vec3(0.0, 1.1, -0.65), UnitQuat(0.0, 0.0, 0.0, 1.0))
# marker on the cube's camera-facing side
MARKER_MOUNT = Transform(Vec3(0.0, 0.0, -EDGE / 2), UnitQuat(0.0, 0.0, 0.0, 1.0))

ARM = {  # shoulder, elbow, wrist, hand, hand tip, thumb
    HAND_LEFT: (4, 5, 6, 7, 21, 22),
    HAND_RIGHT: (8, 9, 10, 11, 23, 24),
}


def smoothstep(x: float) -> float:
    x = min(1.0, max(0.0, x))
    return x * x * (3 - 2 * x)


def seg(t: float, t0: float, t1: float) -> float:
    return smoothstep((t - t0) / (t1 - t0))


def carry_path(s: float, start: Vec3, end: Vec3) -> Vec3:
    """Lift, traverse, lower; ``s`` in [0, 1]."""
    top0 = Vec3(start.x, max(start.y, end.y) + LIFT, start.z)
    top1 = Vec3(end.x, top0.y, end.z)
    if s < 0.27:
        return start.lerp(top0, smoothstep(s / 0.27))
    if s < 0.73:
        return top0.lerp(top1, smoothstep((s - 0.27) / 0.46))
    return top1.lerp(end, smoothstep((s - 0.73) / 0.27))


def user1_script(t: float) -> tuple[Vec3, float]:
    """Cube A center and how far the right hand is committed to it (0 hanging, 1 gripping)."""
    if t < 1.5:
        return A0, 0.0
    if t < 2.5:
        return A0, seg(t, 1.5, 2.5)
    if t < 3.5:
        return A0, 1.0
    if t < 6.5:
        return carry_path((t - 3.5) / 3.0, A0, ON_B), 1.0
    if t < 8.0:
        return ON_B, 1.0
    if t < 9.0:
        return ON_B, 1.0 - seg(t, 8.0, 9.0)
    if t < 10.0:
        return ON_B, 0.0
    if t < 11.0:
        return ON_B, seg(t, 10.0, 11.0)
    if t < 11.5:
        return ON_B, 1.0
    if t < 14.5:
        return carry_path((t - 11.5) / 3.0, ON_B, A0), 1.0
    if t < 15.0:
        return A0, 1.0
    return A0, 1.0 - seg(t, 15.0, 16.0)


def body(root: Vec3, yaw_deg: float) -> list[Vec3]:
    q = yaw_quat(yaw_deg)
    pelvis = REST_JOINTS[0]
    return [root + q.rotate(p - pelvis) for p in REST_JOINTS]


def place_arm(joints: list[Vec3], hand: int, target: Vec3, yaw_deg: float) -> None:
    """Two-bone arm solve putting the hand joint at ``target``; elbow bends down and out."""
    s_i, e_i, w_i, h_i, tip_i, th_i = ARM[hand]
    rest = REST_JOINTS
    l1 = rest[e_i].distance(rest[s_i])
    l_fore = rest[w_i].distance(rest[e_i])
    l2 = l_fore + rest[h_i].distance(rest[w_i])
    s = joints[s_i]
    d_vec = target - s
    d = min(max(d_vec.norm(), abs(l1 - l2) + 1e-3), l1 + l2 - 1e-4)
    u = d_vec.normalized()
    t = s + u.scale(d)
    side = 1.0 if rest[s_i].x > 0 else -1.0
    hint = Vec3(0.0, -1.0, 0.0) + yaw_quat(yaw_deg).rotate(Vec3(0.3 * side, 0.0, 0.0))
    v = hint - u.scale(hint.dot(u))
    v = v.normalized()
    a = (l1 * l1 - l2 * l2 + d * d) / (2 * d)
    h = math.sqrt(max(l1 * l1 - a * a, 0.0))
    e = s + u.scale(a) + v.scale(h)
    fore = (t - e).normalized()
    w = e + fore.scale(l_fore)
    joints[e_i], joints[w_i], joints[h_i] = e, w, t
    joints[tip_i] = t + fore.scale(rest[tip_i].distance(rest[h_i]))
    joints[th_i] = t + yaw_quat(yaw_deg).rotate(rest[th_i] - rest[h_i])


def user1_frame(t: float) -> tuple[list[Vec3], Vec3]:
    cube, grip = user1_script(t)
    root = Vec3(0.5 * cube.x, REST_JOINTS[0].y, USER1_Z)
    joints = body(root, 180.0)
    # facing -Z puts the right arm on the +X side, toward cube A's home
    hanging = joints[HAND_RIGHT]
    place_arm(joints, HAND_RIGHT, hanging.lerp(cube + GRIP, grip), 180.0)
    return joints, cube


def user2_frame(t: float) -> list[Vec3]:
    phase = 2 * math.pi * t / PERIOD_S
    cx, cz = CIRCLE_CENTER
    root = Vec3(cx + CIRCLE_R * math.cos(phase), REST_JOINTS[0].y, cz + CIRCLE_R * math.sin(phase))
    # walking counter-clockwise seen from above: heading is the circle tangent
    heading = Vec3(-math.sin(phase), 0.0, math.cos(phase))
    yaw = math.degrees(math.atan2(heading.x, heading.z))
    joints = body(root, yaw)
    swing = 0.12 * math.sin(2 * math.pi * t)
    for hand, sign in ((HAND_LEFT, 1.0), (HAND_RIGHT, -1.0)):
        target = joints[hand] + heading.scale(sign * swing) + Vec3(0.0, 0.02, 0.0)
        place_arm(joints, hand, target, yaw)
    return joints


def skeleton_frames() -> list[SkeletonFrame]:
    frames = []
    for k in range(FRAMES):
        ts = k * 1_000_000 // RATE_HZ
        t = k / RATE_HZ
        j1, _ = user1_frame(t)
        frames.append(SkeletonFrame(1, ts, tuple(Joint(_r(p)) for p in j1)))
        j2 = user2_frame(t)
        joints2 = [Joint(_r(p)) for p in j2]
        if k % 50 == 25:
            # occasional dropout of a foot joint, as a depth tracker would report
            joints2[15] = Joint(joints2[15].position, Confidence.NOT_TRACKED)
        frames.append(SkeletonFrame(2, ts, tuple(joints2)))
    return frames


def _r(p: Vec3) -> Vec3:
    return Vec3(*(round(c, 6) for c in p))


def marker_records(noise_px: float, seed: int) -> list[dict]:
    rng = np.random.default_rng(seed)
    cam_inv = transform_inverse(CAMERA_POSE)
    recs = []
    for k in range(FRAMES):
        ts = k * 1_000_000 // RATE_HZ
        _, cube_a = user1_frame(k / RATE_HZ)
        for marker_id, center in ((1, cube_a), (2, B0)):
            cam_T_marker = transform_compose(transform_compose(cam_inv, Transform(center)), MARKER_MOUNT)
            px = project_marker(cam_T_marker, MARKER, CAMERA) + rng.normal(0.0, noise_px, (4, 2))
            recs.append({
                "marker_id": marker_id,
                "timestamp_us": ts,
                "corners": [[round(float(u), 4), round(float(v), 4)] for u, v in px],
                "edge_m": MARKER,
            })
    return recs


def scene_doc() -> dict:
    def proxy(pid: int, vid: int, center: Vec3) -> dict:
        return {
            "physical_id": pid,
            "virtual_entity": vid,
            "physical_extents": [EDGE] * 3,
            "virtual_extents": [0.32] * 3,
            "marker_size": MARKER,
            "initial_pose": {"pos": list(center), "rot": [1.0, 0.0, 0.0, 0.0]},
        }

    return {
        "name": "floating-island",
        "walkable": [[[-3.0, -2.0], [3.0, -2.0], [3.5, 1.5], [3.0, 5.0], [-3.0, 5.0], [-3.5, 1.5]]],
        "obstacles": [
            {"min": [0.2, 0.0, 0.35], "max": [0.5, 0.75, 0.65]},
            {"min": [-0.5, 0.0, 0.35], "max": [-0.2, 0.75, 0.65]},
        ],
        "spawn_points": [
            {"pos": [0.0, 0.0, 1.2], "yaw_deg": 180.0},
            {"pos": [0.8, 0.0, 3.2], "yaw_deg": 0.0},
        ],
        "proxies": [proxy(1, 101, A0), proxy(2, 102, B0)],
    }


def scenario_doc(seed: int) -> dict:
    return {
        "name": "demo",
        "seed": seed,
        "scene": "demo_scene.json",
        "rig": "rig_kinect24.json",
        "skeleton_capture": "demo_skeleton.jsonl",
        "marker_capture": "demo_markers.jsonl",
        "camera": "camera.json",
        "camera_pose": {"pos": list(CAMERA_POSE.position), "rot": list(CAMERA_POSE.rotation)},
        "marker_mount": {"pos": list(MARKER_MOUNT.position), "rot": list(MARKER_MOUNT.rotation)},
        "capture_period_us": int(PERIOD_S * 1_000_000),
        "tick_rate_hz": 60,
        "skeleton_input_hz": RATE_HZ,
        "duration_ticks": 10_000,
        "input_ticks": 9_600,
        "channel": {"latency_ms": 100.0, "jitter_ms": 20.0, "loss_fraction": 0.1, "duplication_fraction": 0.0},
        "clients": [{"user": 1, "join_tick": 0}, {"user": 2, "join_tick": 300}],
    }


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, default=DATA)
    ap.add_argument("--noise-px", type=float, default=0.05)
    ap.add_argument("--seed", type=int, default=7)
    args = ap.parse_args()
    out: Path = args.out
    out.mkdir(parents=True, exist_ok=True)

    scene = load_scene(json.dumps(scene_doc()))
    (out / "demo_scene.json").write_bytes(dump_scene(scene) + b"\n")
    (out / "rig_kinect24.json").write_text(json.dumps(rig_to_doc(default_rig()), indent=2) + "\n")
    (out / "camera.json").write_text(json.dumps({
        "fx": CAMERA.fx, "fy": CAMERA.fy, "cx": CAMERA.cx, "cy": CAMERA.cy,
        "width": CAMERA.width, "height": CAMERA.height,
    }, indent=2) + "\n")
    with open(out / "demo_skeleton.jsonl", "w") as f:
        for fr in skeleton_frames():
            f.write(json.dumps(frame_to_record(fr)) + "\n")
    with open(out / "demo_markers.jsonl", "w") as f:
        for r in marker_records(args.noise_px, args.seed):
            f.write(json.dumps(r) + "\n")
    (out / "demo.scenario").write_text(json.dumps(scenario_doc(1), indent=2) + "\n")
    print(f"wrote demo assets to {out}")


if __name__ == "__main__":
    main()
