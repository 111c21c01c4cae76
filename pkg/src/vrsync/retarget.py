"""Skeleton retargeting: 25 tracked joint positions -> avatar bone rotations.

Joint indices follow the common 25-joint body-tracking layout (see
``JOINT_NAMES``). Rig files refer to joints by index only.

Twist about a bone's own axis cannot be observed from joint positions, so every
global bone rotation is the minimal arc from the rest direction to the observed
direction.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Any, Iterable, Iterator, Sequence

from .core import (
    IDENTITY_QUAT,
    UnitQuat,
    Vec3,
    canonical,
    nlerp,
    shortest_arc_unit,
)
from .errors import ParseError, ValidationError

NUM_JOINTS = 25
PELVIS = 0
HEAD = 3
HAND_LEFT = 7
HAND_RIGHT = 11

JOINT_NAMES = (
    "SpineBase", "SpineMid", "Neck", "Head",
    "ShoulderLeft", "ElbowLeft", "WristLeft", "HandLeft",
    "ShoulderRight", "ElbowRight", "WristRight", "HandRight",
    "HipLeft", "KneeLeft", "AnkleLeft", "FootLeft",
    "HipRight", "KneeRight", "AnkleRight", "FootRight",
    "SpineShoulder", "HandTipLeft", "ThumbLeft", "HandTipRight", "ThumbRight",
)

# parent of each joint in the tracker's joint tree (-1 for the pelvis)
JOINT_PARENT = (
    -1, 0, 20, 2,
    20, 4, 5, 6,
    20, 8, 9, 10,
    0, 12, 13, 14,
    0, 16, 17, 18,
    1, 7, 7, 11, 11,
)

# Standing rest pose, arms hanging, facing +Z, left side on +X. Meters.
REST_JOINTS: tuple[Vec3, ...] = tuple(Vec3(*p) for p in (
    (0.0, 0.95, 0.0),      # SpineBase
    (0.0, 1.20, 0.0),      # SpineMid
    (0.0, 1.50, 0.0),      # Neck
    (0.0, 1.65, 0.0),      # Head
    (0.18, 1.40, 0.0),     # ShoulderLeft
    (0.18, 1.12, 0.0),     # ElbowLeft
    (0.18, 0.87, 0.0),     # WristLeft
    (0.18, 0.80, 0.0),     # HandLeft
    (-0.18, 1.40, 0.0),    # ShoulderRight
    (-0.18, 1.12, 0.0),    # ElbowRight
    (-0.18, 0.87, 0.0),    # WristRight
    (-0.18, 0.80, 0.0),    # HandRight
    (0.09, 0.90, 0.0),     # HipLeft
    (0.09, 0.50, 0.0),     # KneeLeft
    (0.09, 0.08, 0.0),     # AnkleLeft
    (0.09, 0.03, 0.12),    # FootLeft
    (-0.09, 0.90, 0.0),    # HipRight
    (-0.09, 0.50, 0.0),    # KneeRight
    (-0.09, 0.08, 0.0),    # AnkleRight
    (-0.09, 0.03, 0.12),   # FootRight
    (0.0, 1.42, 0.0),      # SpineShoulder
    (0.18, 0.72, 0.0),     # HandTipLeft
    (0.21, 0.78, 0.02),    # ThumbLeft
    (-0.18, 0.72, 0.0),    # HandTipRight
    (-0.21, 0.78, 0.02),   # ThumbRight
))


class Confidence(enum.IntEnum):
    NOT_TRACKED = 0
    INFERRED = 1
    TRACKED = 2


class BadFrame(ValueError):
    """Skeleton frame with the wrong joint count or non-finite coordinates."""


@dataclass(frozen=True, slots=True)
class Joint:
    position: Vec3
    confidence: Confidence = Confidence.TRACKED


@dataclass(frozen=True, slots=True)
class SkeletonFrame:
    user: int
    timestamp_us: int
    joints: tuple[Joint, ...]


@dataclass(frozen=True, slots=True)
class Bone:
    name: str
    parent_index: int
    proximal_joint: int
    distal_joint: int
    rest_direction: Vec3
    rest_length: float


@dataclass(frozen=True)
class RigDefinition:
    bones: tuple[Bone, ...]

    def __post_init__(self) -> None:
        validate_rig(self)

    def bone_index(self, name: str) -> int:
        for i, b in enumerate(self.bones):
            if b.name == name:
                return i
        raise KeyError(name)

    def bone_with_distal(self, joint: int) -> int | None:
        for i, b in enumerate(self.bones):
            if b.distal_joint == joint:
                return i
        return None


@dataclass(frozen=True, slots=True)
class BoneOrientationSet:
    user: int
    timestamp_us: int
    root_position: Vec3
    local_rotations: tuple[UnitQuat, ...]


@dataclass(frozen=True)
class RetargetConfig:
    length_tolerance: float = 0.20
    degenerate_length: float = 1e-4
    smoothing_alpha: float = 0.5


def validate_rig(rig: RigDefinition) -> None:
    placed = {PELVIS}
    if not rig.bones:
        raise ValidationError("rig bones", "rig has no bones")
    for i, b in enumerate(rig.bones):
        w = f"bones[{i}] ({b.name})"
        if not (0 <= b.proximal_joint < NUM_JOINTS and 0 <= b.distal_joint < NUM_JOINTS):
            raise ValidationError("joint index", f"{w} joints must be in 0..24")
        if b.parent_index >= i or b.parent_index < -1:
            raise ValidationError("topological order", f"{w} parent must precede it")
        if b.parent_index == -1 and b.proximal_joint != PELVIS:
            raise ValidationError("root bone", f"{w} root bones start at the pelvis joint")
        if b.proximal_joint not in placed:
            raise ValidationError("bone chain", f"{w} proximal joint {b.proximal_joint} not reached by earlier bones")
        if b.distal_joint in placed:
            raise ValidationError("bone chain", f"{w} distal joint {b.distal_joint} already placed")
        if not b.rest_length > 0:
            raise ValidationError("rest length", f"{w} rest_length must be positive")
        if abs(b.rest_direction.norm() - 1.0) > 1e-6:
            raise ValidationError("unit rest direction", w)
        placed.add(b.distal_joint)


def rig_from_rest_pose(
    bone_joints: Sequence[tuple[str, int, int, int]],
    rest: Sequence[Vec3] = REST_JOINTS,
) -> RigDefinition:
    """Build a rig from ``(name, parent_index, proximal, distal)`` rows and rest joint positions."""
    bones = []
    for name, parent, a, b in bone_joints:
        d = rest[b] - rest[a]
        n = d.norm()
        bones.append(Bone(name, parent, a, b, d.scale(1.0 / n), n))
    return RigDefinition(tuple(bones))


DEFAULT_BONES = (
    ("spine_lower", -1, 0, 1),
    ("spine_upper", 0, 1, 20),
    ("neck", 1, 20, 2),
    ("head", 2, 2, 3),
    ("clavicle_l", 1, 20, 4),
    ("upperarm_l", 4, 4, 5),
    ("forearm_l", 5, 5, 6),
    ("hand_l", 6, 6, 7),
    ("handtip_l", 7, 7, 21),
    ("thumb_l", 7, 7, 22),
    ("clavicle_r", 1, 20, 8),
    ("upperarm_r", 10, 8, 9),
    ("forearm_r", 11, 9, 10),
    ("hand_r", 12, 10, 11),
    ("handtip_r", 13, 11, 23),
    ("thumb_r", 13, 11, 24),
    ("hip_l", 0, 0, 12),
    ("thigh_l", 16, 12, 13),
    ("shin_l", 17, 13, 14),
    ("foot_l", 18, 14, 15),
    ("hip_r", 0, 0, 16),
    ("thigh_r", 20, 16, 17),
    ("shin_r", 21, 17, 18),
    ("foot_r", 22, 18, 19),
)


def default_rig() -> RigDefinition:
    """24-bone rig covering all 25 joints, built from ``REST_JOINTS``."""
    return rig_from_rest_pose(DEFAULT_BONES)


# -- frame checks and retargeting -----------------------------------------------

def validate_frame(
    frame: SkeletonFrame, rig: RigDefinition, config: RetargetConfig = RetargetConfig()
) -> tuple[SkeletonFrame, tuple[bool, ...]]:
    """Return the frame plus one Unreliable flag per bone."""
    if len(frame.joints) != NUM_JOINTS:
        raise BadFrame(f"expected {NUM_JOINTS} joints, got {len(frame.joints)}")
    for i, j in enumerate(frame.joints):
        if not j.position.is_finite():
            raise BadFrame(f"joint {i} has non-finite coordinates")
    flags = []
    for b in rig.bones:
        a, d = frame.joints[b.proximal_joint], frame.joints[b.distal_joint]
        if a.confidence == Confidence.NOT_TRACKED or d.confidence == Confidence.NOT_TRACKED:
            flags.append(True)
            continue
        length = d.position.distance(a.position)
        flags.append(abs(length - b.rest_length) > config.length_tolerance * b.rest_length)
    return frame, tuple(flags)


def retarget_frame(
    frame: SkeletonFrame,
    rig: RigDefinition,
    previous: BoneOrientationSet | None = None,
    config: RetargetConfig = RetargetConfig(),
) -> BoneOrientationSet:
    _, unreliable = validate_frame(frame, rig, config)
    joints = frame.joints
    globals_: list[UnitQuat] = []
    locals_: list[UnitQuat] = []
    for i, b in enumerate(rig.bones):
        parent = globals_[b.parent_index] if b.parent_index >= 0 else IDENTITY_QUAT
        d = joints[b.distal_joint].position - joints[b.proximal_joint].position
        n = d.norm()
        if unreliable[i] or n < config.degenerate_length:
            local = previous.local_rotations[i] if previous is not None else IDENTITY_QUAT
            glob = canonical(parent * local)
        else:
            glob = shortest_arc_unit(b.rest_direction, d.scale(1.0 / n))
            local = canonical(parent.conj() * glob)
        globals_.append(glob)
        locals_.append(local)
    return BoneOrientationSet(frame.user, frame.timestamp_us, joints[PELVIS].position, tuple(locals_))


def global_rotations(rig: RigDefinition, pose: BoneOrientationSet) -> list[UnitQuat]:
    out: list[UnitQuat] = []
    for b, local in zip(rig.bones, pose.local_rotations):
        out.append(canonical(out[b.parent_index] * local) if b.parent_index >= 0 else local)
    return out


def forward_kinematics(rig: RigDefinition, pose: BoneOrientationSet) -> list[Vec3]:
    """Joint positions implied by ``pose``.

    Joints no bone reaches keep their rest offset from the nearest placed
    ancestor in the joint tree.
    """
    if len(pose.local_rotations) != len(rig.bones):
        raise ValueError("pose does not match rig")
    pos: list[Vec3 | None] = [None] * NUM_JOINTS
    pos[PELVIS] = pose.root_position
    # unnormalized products: sign and ulp-level drift do not move the joints measurably
    globals_: list[UnitQuat] = []
    for b, local in zip(rig.bones, pose.local_rotations):
        globals_.append(globals_[b.parent_index] * local if b.parent_index >= 0 else local)
    for b, g in zip(rig.bones, globals_):
        pos[b.distal_joint] = pos[b.proximal_joint] + g.rotate(b.rest_direction).scale(b.rest_length)  # type: ignore[operator]
    for j in _JOINT_ORDER:
        if pos[j] is None:
            a = JOINT_PARENT[j]
            pos[j] = pos[a] + (REST_JOINTS[j] - REST_JOINTS[a])  # type: ignore[operator]
    return pos  # type: ignore[return-value]


def _joint_order() -> tuple[int, ...]:
    order, seen = [], set()

    def visit(j: int) -> None:
        if j in seen:
            return
        if JOINT_PARENT[j] >= 0:
            visit(JOINT_PARENT[j])
        seen.add(j)
        order.append(j)

    for j in range(NUM_JOINTS):
        visit(j)
    return tuple(order)


_JOINT_ORDER = _joint_order()


def smooth_pose(current: BoneOrientationSet, incoming: BoneOrientationSet, alpha: float) -> BoneOrientationSet:
    """Single-pole exponential blend of ``current`` toward ``incoming``."""
    if not 0.0 < alpha <= 1.0:
        raise ValueError("alpha must be in (0, 1]")
    if len(current.local_rotations) != len(incoming.local_rotations):
        raise ValueError("poses come from different rigs")
    if alpha == 1.0:
        return incoming
    return BoneOrientationSet(
        incoming.user,
        incoming.timestamp_us,
        current.root_position.lerp(incoming.root_position, alpha),
        tuple(nlerp(c, n, alpha) for c, n in zip(current.local_rotations, incoming.local_rotations)),
    )


def identity_pose(rig: RigDefinition, user: int = 0, timestamp_us: int = 0, root: Vec3 | None = None) -> BoneOrientationSet:
    return BoneOrientationSet(
        user, timestamp_us, REST_JOINTS[PELVIS] if root is None else root, (IDENTITY_QUAT,) * len(rig.bones)
    )


def frame_from_positions(
    user: int, timestamp_us: int, positions: Sequence[Vec3], confidence: Confidence = Confidence.TRACKED
) -> SkeletonFrame:
    return SkeletonFrame(user, timestamp_us, tuple(Joint(Vec3(*p), confidence) for p in positions))


def rest_frame(rig: RigDefinition, user: int = 0, timestamp_us: int = 0) -> SkeletonFrame:
    return frame_from_positions(user, timestamp_us, forward_kinematics(rig, identity_pose(rig)))


# -- file formats -------------------------------------------------------------------

def rig_to_doc(rig: RigDefinition) -> dict:
    return {"bones": [
        {
            "name": b.name,
            "parent_index": b.parent_index,
            "proximal_joint": b.proximal_joint,
            "distal_joint": b.distal_joint,
            "rest_direction": list(b.rest_direction),
            "rest_length": b.rest_length,
        }
        for b in rig.bones
    ]}


def rig_from_doc(doc: Any) -> RigDefinition:
    try:
        rows = doc["bones"]
        bones = tuple(
            Bone(
                str(r["name"]),
                int(r["parent_index"]),
                int(r["proximal_joint"]),
                int(r["distal_joint"]),
                Vec3(*(float(c) for c in r["rest_direction"])),
                float(r["rest_length"]),
            )
            for r in rows
        )
    except (KeyError, TypeError, ValueError) as e:
        raise ParseError(f"rig document: {e!r}") from e
    return RigDefinition(bones)


def load_rig(source: str | Path | IO[str]) -> RigDefinition:
    if hasattr(source, "read"):
        text = source.read()  # type: ignore[union-attr]
    else:
        text = Path(source).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ParseError(f"rig document is not valid JSON: {e}") from e
    return rig_from_doc(doc)


def frame_to_record(frame: SkeletonFrame) -> dict:
    return {
        "user": frame.user,
        "timestamp_us": frame.timestamp_us,
        "joints": [{"p": list(j.position), "c": int(j.confidence)} for j in frame.joints],
    }


def frame_from_record(rec: Any) -> SkeletonFrame:
    try:
        joints = tuple(
            Joint(Vec3(*(float(c) for c in j["p"])), Confidence(int(j["c"]))) for j in rec["joints"]
        )
        return SkeletonFrame(int(rec["user"]), int(rec["timestamp_us"]), joints)
    except (KeyError, TypeError, ValueError) as e:
        raise ParseError(f"capture record: {e!r}") from e


def read_capture(lines: Iterable[str]) -> Iterator[SkeletonFrame]:
    """Parse line-delimited capture records, checking per-user timestamp order."""
    last: dict[int, int] = {}
    for n, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as e:
            raise ParseError(f"capture line {n}: {e}") from e
        frame = frame_from_record(rec)
        if frame.user in last and frame.timestamp_us < last[frame.user]:
            raise ValidationError("timestamp monotonic", f"capture line {n}, user {frame.user}")
        last[frame.user] = frame.timestamp_us
        yield frame


def load_capture(path: str | Path) -> list[SkeletonFrame]:
    with open(path) as f:
        return list(read_capture(f))


def pose_to_record(pose: BoneOrientationSet) -> dict:
    return {
        "user": pose.user,
        "timestamp_us": pose.timestamp_us,
        "root": list(pose.root_position),
        "rotations": [list(q) for q in pose.local_rotations],
    }


def joint_distance_max(a: Sequence[Vec3], b: Sequence[Vec3]) -> float:
    return max(p.distance(q) for p, q in zip(a, b))


def bone_lengths(rig: RigDefinition, joints: Sequence[Vec3]) -> list[float]:
    return [joints[b.distal_joint].distance(joints[b.proximal_joint]) for b in rig.bones]

