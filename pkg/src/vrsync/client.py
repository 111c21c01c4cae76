"""Simulated network channel and the client-side replicated world."""

from __future__ import annotations

import heapq
import math
import random
from dataclasses import dataclass, field
from typing import Hashable

from .core import Transform, UnitQuat, Vec3, nlerp
from .retarget import HEAD, BoneOrientationSet, RigDefinition, forward_kinematics
from .wire import EventMsg, Snapshot, encode_body


class UnknownUser(KeyError):
    pass


# -- channel ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ChannelConfig:
    latency_ms: float = 0.0
    jitter_ms: float = 0.0
    loss_fraction: float = 0.0
    duplication_fraction: float = 0.0
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if self.latency_ms < 0 or self.jitter_ms < 0:
            raise ValueError("latency and jitter must be non-negative")
        if not 0.0 <= self.loss_fraction < 1.0:
            raise ValueError("loss_fraction must be in [0, 1)")
        if not 0.0 <= self.duplication_fraction < 1.0:
            raise ValueError("duplication_fraction must be in [0, 1)")


@dataclass(frozen=True, order=True)
class Delivery:
    time_us: int
    order: int
    src: Hashable = field(compare=False)
    dst: Hashable = field(compare=False)
    data: bytes = field(compare=False)


class Channel:
    """Seeded datagram channel with latency, symmetric uniform jitter, loss and duplication.

    Each submitted datagram consumes a fixed number of RNG draws, so the
    delivery schedule depends only on the seed and the submission sequence.
    """

    def __init__(self, config: ChannelConfig):
        self.config = config
        self._rng = random.Random(config.rng_seed)
        self._queue: list[Delivery] = []
        self._order = 0
        self.submitted = 0
        self.lost = 0
        self.duplicated = 0
        self.delivered = 0

    def _delay_us(self, u: float) -> int:
        c = self.config
        ms = c.latency_ms + (2.0 * u - 1.0) * c.jitter_ms
        return max(0, round(ms * 1000.0))

    def submit(self, data: bytes, src: Hashable, dst: Hashable, now_us: int) -> None:
        c = self.config
        r = self._rng
        u_loss, u_dup, u_j1, u_j2 = r.random(), r.random(), r.random(), r.random()
        self.submitted += 1
        if u_loss < c.loss_fraction:
            self.lost += 1
            return
        delays = [self._delay_us(u_j1)]
        if u_dup < c.duplication_fraction:
            self.duplicated += 1
            delays.append(self._delay_us(u_j2))
        for d in delays:
            heapq.heappush(self._queue, Delivery(now_us + d, self._order, src, dst, data))
            self._order += 1

    def step(self, now_us: int) -> list[Delivery]:
        """Pop every datagram due at or before ``now_us``, in delivery-time order."""
        out = []
        while self._queue and self._queue[0].time_us <= now_us:
            out.append(heapq.heappop(self._queue))
        self.delivered += len(out)
        return out

    def pending(self) -> int:
        return len(self._queue)

    def next_due_us(self) -> int | None:
        return self._queue[0].time_us if self._queue else None

    def stats(self) -> dict:
        return {
            "submitted": self.submitted,
            "delivered": self.delivered,
            "lost": self.lost,
            "duplicated": self.duplicated,
        }


def channel_step(channel: Channel, now_us: int) -> list[Delivery]:
    return channel.step(now_us)


# -- replicated world --------------------------------------------------------------------

@dataclass(frozen=True)
class WorldView:
    """Interpolated state at one render time."""

    render_tick: float
    users: dict[int, BoneOrientationSet]
    objects: dict[int, tuple[Transform, bool]]
    portal_unlocked: bool


def _users(s: Snapshot) -> dict[int, tuple[Vec3, tuple[UnitQuat, ...]]]:
    return {u.user: (u.root_position, u.rotations) for u in s.users}


def _objects(s: Snapshot) -> dict[int, tuple[Transform, bool]]:
    return {o.entity: (o.pose, o.valid) for o in s.objects}


def exact_view(tick: float, s: Snapshot) -> WorldView:
    return WorldView(
        tick,
        {uid: BoneOrientationSet(uid, 0, r, q) for uid, (r, q) in _users(s).items()},
        _objects(s),
        s.portal_unlocked,
    )


def blend_snapshots(s0: Snapshot, s1: Snapshot, t: float, render_tick: float) -> WorldView:
    """Interpolate from ``s0`` (t = 0) to ``s1`` (t = 1).

    Entities present in only one snapshot are taken from whichever has them.
    """
    u0, u1 = _users(s0), _users(s1)
    users = {}
    for uid in sorted(set(u0) | set(u1)):
        if uid in u0 and uid in u1 and len(u0[uid][1]) == len(u1[uid][1]):
            (r0, q0), (r1, q1) = u0[uid], u1[uid]
            users[uid] = BoneOrientationSet(uid, 0, r0.lerp(r1, t), tuple(nlerp(a, b, t) for a, b in zip(q0, q1)))
        else:
            r, q = u0[uid] if uid in u0 else u1[uid]
            users[uid] = BoneOrientationSet(uid, 0, r, q)
    o0, o1 = _objects(s0), _objects(s1)
    objects = {}
    for eid in sorted(set(o0) | set(o1)):
        if eid in o0 and eid in o1:
            (p0, v0), (p1, v1) = o0[eid], o1[eid]
            pose = Transform(p0.position.lerp(p1.position, t), nlerp(p0.rotation, p1.rotation, t))
            objects[eid] = (pose, v0 if t < 0.5 else v1)
        else:
            objects[eid] = o0[eid] if eid in o0 else o1[eid]
    portal = s0.portal_unlocked if t < 1.0 else s1.portal_unlocked
    return WorldView(render_tick, users, objects, portal)


def _extrapolate(s0: Snapshot, t0: int, s1: Snapshot, t1: int, ahead: float, render_tick: float) -> WorldView:
    # positions continue at the last observed velocity; rotations hold
    k = ahead / (t1 - t0)
    base = exact_view(render_tick, s1)
    u0, o0 = _users(s0), _objects(s0)
    users = {}
    for uid, pose in base.users.items():
        if uid in u0:
            r0 = u0[uid][0]
            root = pose.root_position + (pose.root_position - r0).scale(k)
            pose = BoneOrientationSet(uid, 0, root, pose.local_rotations)
        users[uid] = pose
    objects = {}
    for eid, (tr, valid) in base.objects.items():
        if eid in o0:
            p0 = o0[eid][0].position
            tr = Transform(tr.position + (tr.position - p0).scale(k), tr.rotation)
        objects[eid] = (tr, valid)
    return WorldView(render_tick, users, objects, s1.portal_unlocked)


@dataclass
class ClientWorld:
    rig: RigDefinition | None = None
    interpolation_delay_ticks: int = 2
    buffer_size: int = 64
    extrapolation_cap_ticks: float = 3.0

    buffer: dict[int, Snapshot] = field(default_factory=dict)
    latest_tick: int | None = None
    latest_payload: bytes = b""
    render_tick: float = -math.inf
    view: WorldView | None = None

    applied: int = 0
    stale: int = 0
    duplicates: int = 0
    late_fills: int = 0

    event_hwm: int = 0
    pending_events: dict[int, EventMsg] = field(default_factory=dict)
    surfaced: list[EventMsg] = field(default_factory=list)

    def apply_snapshot(self, tick: int, snapshot: Snapshot) -> bool:
        """Buffer a snapshot; returns False if it was stale or a duplicate."""
        if tick <= self.render_tick:
            self.stale += 1
            return False
        if tick in self.buffer:
            self.duplicates += 1
            return False
        self.buffer[tick] = snapshot
        if self.latest_tick is None or tick > self.latest_tick:
            self.latest_tick = tick
            self.latest_payload = encode_body(snapshot)
            self.applied += 1
        else:
            # older than the newest but still ahead of the render clock: fills a gap
            self.late_fills += 1
        while len(self.buffer) > self.buffer_size:
            del self.buffer[min(self.buffer)]
        return True

    def apply_event(self, msg: EventMsg) -> list[EventMsg]:
        """Surface events in id order, each exactly once."""
        if msg.event_id <= self.event_hwm:
            return []
        self.pending_events.setdefault(msg.event_id, msg)
        out = []
        while self.event_hwm + 1 in self.pending_events:
            self.event_hwm += 1
            out.append(self.pending_events.pop(self.event_hwm))
        self.surfaced.extend(out)
        return out

    def target_render_tick(self) -> float | None:
        if self.latest_tick is None:
            return None
        return float(self.latest_tick - self.interpolation_delay_ticks)

    def sample(self, render_tick: float) -> WorldView | None:
        """Interpolated world at ``render_tick``; advances the render clock (never backward)."""
        if not self.buffer:
            return None
        render_tick = max(render_tick, self.render_tick)
        self.render_tick = render_tick
        self.view = sample_buffer(self.buffer, render_tick, self.extrapolation_cap_ticks)
        return self.view

    def view_pose(self, user: int, hmd_orientation: UnitQuat) -> Transform:
        """Egocentric camera pose: tracked head position, headset orientation."""
        if self.view is None or user not in self.view.users:
            raise UnknownUser(user)
        if self.rig is None:
            raise ValueError("client world has no rig")
        joints = forward_kinematics(self.rig, self.view.users[user])
        return Transform(joints[HEAD], hmd_orientation)


def sample_buffer(buffer: dict[int, Snapshot], render_tick: float, cap: float = 3.0) -> WorldView:
    ticks = sorted(buffer)
    lo = [t for t in ticks if t <= render_tick]
    hi = [t for t in ticks if t >= render_tick]
    if lo and hi:
        t0, t1 = lo[-1], hi[0]
        if t0 == t1:
            return exact_view(render_tick, buffer[t0])
        return blend_snapshots(buffer[t0], buffer[t1], (render_tick - t0) / (t1 - t0), render_tick)
    if not lo:
        return exact_view(render_tick, buffer[ticks[0]])
    newest = ticks[-1]
    if len(ticks) < 2:
        return exact_view(render_tick, buffer[newest])
    prev = ticks[-2]
    ahead = min(render_tick - newest, cap)
    return _extrapolate(buffer[prev], prev, buffer[newest], newest, ahead, render_tick)


def apply_snapshot(world: ClientWorld, tick: int, snapshot: Snapshot) -> ClientWorld:
    world.apply_snapshot(tick, snapshot)
    return world


def sample(world: ClientWorld, render_tick: float) -> WorldView | None:
    return world.sample(render_tick)


def view_pose(world: ClientWorld, user: int, hmd_orientation: UnitQuat) -> Transform:
    return world.view_pose(user, hmd_orientation)
