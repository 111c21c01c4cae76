"""Datagram encoding for the connectionless sync protocol.

Every datagram is a 21-byte little-endian header followed by a type-specific
payload; see docs/protocol.md for the field table. Floats travel as IEEE-754
binary32, so a message round-trips exactly only when its floats are already
binary32-representable (``f32`` rounds a value).

``decode`` is total: any byte string yields a ``Datagram`` or a ``DecodeError``
subclass, and reads are bounds-checked before every field.
"""

from __future__ import annotations

import enum
import functools
import math
import struct
from dataclasses import dataclass
from typing import Union

from .core import Transform, UnitQuat, Vec3
from .retarget import NUM_JOINTS, Confidence, Joint

MAGIC = b"MS2"
VERSION = 1
HEADER = struct.Struct("<3sBBIIQ")
HEADER_SIZE = HEADER.size  # 21
MAX_DATAGRAM = 1400
UINT32_MASK = 0xFFFFFFFF

_F32 = struct.Struct("<f")


class MsgType(enum.IntEnum):
    JOIN = 1
    JOIN_ACK = 2
    HEARTBEAT = 3
    SKELETON_FRAME = 4
    OBJECT_POSE = 5
    SNAPSHOT = 6
    EVENT = 7


class WireError(ValueError):
    pass


class Oversize(WireError):
    pass


class DecodeError(WireError):
    pass


class BadMagic(DecodeError):
    pass


class BadVersion(DecodeError):
    pass


class UnknownType(DecodeError):
    pass


class Truncated(DecodeError):
    pass


class Malformed(DecodeError):
    """Structurally complete but carries an invalid value or trailing bytes."""


def f32(x: float) -> float:
    return _F32.unpack(_F32.pack(x))[0]


def seq_newer(a: int, b: int) -> bool:
    """True iff ``a`` is newer than ``b`` under 32-bit serial arithmetic."""
    d = (a - b) & UINT32_MASK
    return 0 < d < 0x80000000


# -- message bodies -----------------------------------------------------------------

@dataclass(frozen=True)
class Join:
    user: int = 0


@dataclass(frozen=True)
class JoinAck:
    client_id: int
    tick_rate_hz: int
    interpolation_delay_ticks: int


@dataclass(frozen=True)
class Heartbeat:
    # highest event id the sender has surfaced; 0 = none
    event_ack: int = 0


@dataclass(frozen=True)
class SkeletonFrameMsg:
    user: int
    joints: tuple[Joint, ...]


@dataclass(frozen=True)
class ObjectPoseMsg:
    entity: int
    pose: Transform
    reprojection_error: float
    valid: bool


@dataclass(frozen=True)
class UserState:
    user: int
    root_position: Vec3
    rotations: tuple[UnitQuat, ...]


@dataclass(frozen=True)
class ObjectState:
    entity: int
    pose: Transform
    valid: bool


@dataclass(frozen=True)
class Snapshot:
    portal_unlocked: bool
    users: tuple[UserState, ...] = ()
    objects: tuple[ObjectState, ...] = ()


@dataclass(frozen=True)
class EventMsg:
    event_id: int
    kind: int
    event_tick: int
    participants: tuple[int, ...] = ()


Body = Union[Join, JoinAck, Heartbeat, SkeletonFrameMsg, ObjectPoseMsg, Snapshot, EventMsg]

_TYPE_OF = {
    Join: MsgType.JOIN,
    JoinAck: MsgType.JOIN_ACK,
    Heartbeat: MsgType.HEARTBEAT,
    SkeletonFrameMsg: MsgType.SKELETON_FRAME,
    ObjectPoseMsg: MsgType.OBJECT_POSE,
    Snapshot: MsgType.SNAPSHOT,
    EventMsg: MsgType.EVENT,
}


@dataclass(frozen=True)
class Datagram:
    seq: int
    tick: int
    timestamp_us: int
    body: Body

    @property
    def msg_type(self) -> MsgType:
        return _TYPE_OF[type(self.body)]


# -- encoding -------------------------------------------------------------------------

def _u(value: int, bits: int, what: str) -> int:
    if not isinstance(value, int) or not 0 <= value < (1 << bits):
        raise WireError(f"{what}={value!r} out of range for u{bits}")
    return value


def _floats(vals, what: str):
    # one sum catches any inf/nan; only finite overflow needs the slow path
    if not math.isfinite(sum(vals)) and not all(map(math.isfinite, vals)):
        raise WireError(f"{what} has non-finite value")
    return vals


def encode_body(body: Body) -> bytes:
    if isinstance(body, Join):
        return struct.pack("<I", _u(body.user, 32, "user"))
    if isinstance(body, JoinAck):
        return struct.pack(
            "<IHB",
            _u(body.client_id, 32, "client_id"),
            _u(body.tick_rate_hz, 16, "tick_rate_hz"),
            _u(body.interpolation_delay_ticks, 8, "interpolation_delay_ticks"),
        )
    if isinstance(body, Heartbeat):
        if body.event_ack == 0:
            return b""
        return struct.pack("<I", _u(body.event_ack, 32, "event_ack"))
    if isinstance(body, SkeletonFrameMsg):
        if len(body.joints) != NUM_JOINTS:
            raise WireError(f"skeleton frame needs {NUM_JOINTS} joints")
        parts = [struct.pack("<I", _u(body.user, 32, "user"))]
        for j in body.joints:
            parts.append(struct.pack("<3fB", *_floats(j.position, "joint"), int(j.confidence)))
        return b"".join(parts)
    if isinstance(body, ObjectPoseMsg):
        p = body.pose
        return struct.pack(
            "<I3f4ffB",
            _u(body.entity, 32, "entity"),
            *_floats(p.position, "position"),
            *_floats(p.rotation, "rotation"),
            *_floats([body.reprojection_error], "reprojection_error"),
            1 if body.valid else 0,
        )
    if isinstance(body, Snapshot):
        parts = [struct.pack(
            "<BBB",
            1 if body.portal_unlocked else 0,
            _u(len(body.users), 8, "user count"),
            _u(len(body.objects), 8, "object count"),
        )]
        for u in body.users:
            parts.append(struct.pack(
                "<IB3f", _u(u.user, 32, "user"), _u(len(u.rotations), 8, "bone count"),
                *_floats(u.root_position, "root"),
            ))
            flat = [c for q in u.rotations for c in q]
            parts.append(struct.pack(f"<{len(flat)}f", *_floats(flat, "rotation")))
        for o in body.objects:
            parts.append(struct.pack(
                "<I3f4fB", _u(o.entity, 32, "entity"),
                *_floats(o.pose.position, "position"), *_floats(o.pose.rotation, "rotation"),
                1 if o.valid else 0,
            ))
        return b"".join(parts)
    if isinstance(body, EventMsg):
        return struct.pack(
            "<IBIB",
            _u(body.event_id, 32, "event_id"),
            _u(body.kind, 8, "kind"),
            _u(body.event_tick, 32, "event_tick"),
            _u(len(body.participants), 8, "participant count"),
        ) + b"".join(struct.pack("<I", _u(p, 32, "participant")) for p in body.participants)
    raise WireError(f"unsupported message body {type(body).__name__}")


def encode(dgram: Datagram) -> bytes:
    return frame(dgram.msg_type, dgram.seq, dgram.tick, dgram.timestamp_us, encode_body(dgram.body))


def frame(msg_type: MsgType, seq: int, tick: int, timestamp_us: int, body: bytes) -> bytes:
    """Prefix an already-encoded payload with a header.

    Lets a sender encode one payload and address it to many peers.
    """
    header = HEADER.pack(
        MAGIC,
        VERSION,
        msg_type,
        _u(seq, 32, "seq"),
        _u(tick, 32, "tick"),
        _u(timestamp_us, 64, "timestamp_us"),
    )
    out = header + body
    if len(out) > MAX_DATAGRAM:
        raise Oversize(f"{MsgType(msg_type).name} is {len(out)} bytes (limit {MAX_DATAGRAM})")
    return out


# -- decoding -------------------------------------------------------------------------

class _Reader:
    __slots__ = ("buf", "pos")

    def __init__(self, buf: bytes, pos: int):
        self.buf = buf
        self.pos = pos

    def take(self, fmt: struct.Struct) -> tuple:
        end = self.pos + fmt.size
        if end > len(self.buf):
            raise Truncated(f"need {end} bytes, have {len(self.buf)}")
        vals = fmt.unpack_from(self.buf, self.pos)
        self.pos = end
        return vals

    def remaining(self) -> int:
        return len(self.buf) - self.pos


_S_U32 = struct.Struct("<I")
_S_JOINACK = struct.Struct("<IHB")
_S_JOINT = struct.Struct("<3fB")
_S_OBJPOSE = struct.Struct("<I3f4ffB")
_S_SNAPHEAD = struct.Struct("<BBB")
_S_USERHEAD = struct.Struct("<IB3f")
_S_OBJ = struct.Struct("<I3f4fB")
_S_EVENTHEAD = struct.Struct("<IBIB")


def _finite(vals, what: str) -> tuple:
    if not math.isfinite(sum(vals)) and not all(map(math.isfinite, vals)):
        raise Malformed(f"non-finite {what}")
    return vals


@functools.lru_cache(maxsize=None)
def _floats_struct(n: int) -> struct.Struct:
    return struct.Struct(f"<{n}f")


def _flag(v: int, what: str) -> bool:
    if v > 1:
        raise Malformed(f"{what} flag must be 0 or 1, got {v}")
    return bool(v)


def _decode_body(t: MsgType, r: _Reader) -> Body:
    if t is MsgType.JOIN:
        return Join(*r.take(_S_U32))
    if t is MsgType.JOIN_ACK:
        return JoinAck(*r.take(_S_JOINACK))
    if t is MsgType.HEARTBEAT:
        if r.remaining() == 0:
            return Heartbeat(0)
        return Heartbeat(*r.take(_S_U32))
    if t is MsgType.SKELETON_FRAME:
        (user,) = r.take(_S_U32)
        joints = []
        for _ in range(NUM_JOINTS):
            x, y, z, c = r.take(_S_JOINT)
            if c > 2:
                raise Malformed(f"joint confidence {c}")
            joints.append(Joint(Vec3(*_finite((x, y, z), "joint")), Confidence(c)))
        return SkeletonFrameMsg(user, tuple(joints))
    if t is MsgType.OBJECT_POSE:
        e, px, py, pz, qw, qx, qy, qz, err, valid = r.take(_S_OBJPOSE)
        _finite((px, py, pz, qw, qx, qy, qz, err), "object pose")
        return ObjectPoseMsg(e, Transform(Vec3(px, py, pz), UnitQuat(qw, qx, qy, qz)), err, _flag(valid, "valid"))
    if t is MsgType.SNAPSHOT:
        portal, nu, no = r.take(_S_SNAPHEAD)
        users = []
        for _ in range(nu):
            uid, nb, x, y, z = r.take(_S_USERHEAD)
            root = Vec3(*_finite((x, y, z), "root"))
            flat = _finite(r.take(_floats_struct(4 * nb)), "rotation")
            rots = tuple(UnitQuat(*flat[i:i + 4]) for i in range(0, 4 * nb, 4))
            users.append(UserState(uid, root, rots))
        objects = []
        for _ in range(no):
            e, px, py, pz, qw, qx, qy, qz, valid = r.take(_S_OBJ)
            _finite((px, py, pz, qw, qx, qy, qz), "object")
            objects.append(ObjectState(e, Transform(Vec3(px, py, pz), UnitQuat(qw, qx, qy, qz)), _flag(valid, "valid")))
        return Snapshot(_flag(portal, "portal"), tuple(users), tuple(objects))
    if t is MsgType.EVENT:
        eid, kind, etick, n = r.take(_S_EVENTHEAD)
        parts = tuple(r.take(_S_U32)[0] for _ in range(n))
        return EventMsg(eid, kind, etick, parts)
    raise UnknownType(int(t))


def decode(buf: bytes) -> Datagram:
    if len(buf) < HEADER_SIZE:
        raise Truncated(f"{len(buf)} bytes is shorter than the {HEADER_SIZE}-byte header")
    magic, version, mtype, seq, tick, ts = HEADER.unpack_from(buf, 0)
    if magic != MAGIC:
        raise BadMagic(magic.hex())
    if version != VERSION:
        raise BadVersion(str(version))
    try:
        t = MsgType(mtype)
    except ValueError:
        raise UnknownType(str(mtype)) from None
    r = _Reader(bytes(buf), HEADER_SIZE)
    body = _decode_body(t, r)
    if r.remaining():
        raise Malformed(f"{r.remaining()} trailing bytes after {t.name}")
    return Datagram(seq, tick, ts, body)


def decode_body(msg_type: MsgType, body: bytes) -> Body:
    """Decode a bare payload of a known type (no header)."""
    r = _Reader(bytes(body), 0)
    out = _decode_body(MsgType(msg_type), r)
    if r.remaining():
        raise Malformed(f"{r.remaining()} trailing bytes after {MsgType(msg_type).name}")
    return out


def payload(buf: bytes) -> bytes:
    """Bytes after the header."""
    return bytes(buf[HEADER_SIZE:])
