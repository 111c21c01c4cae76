"""Grab attribution and the cube-stacking portal trigger.

Both updates are pure: they take the previous ``InteractionState`` and return a
new one plus the events fired on that tick. Re-evaluating a tick that was
already processed (replay, duplicate, or late delivery) is a no-op, which is
what keeps the portal unlock one-shot.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping

from .core import Vec3
from .marker import ObjectPose


class EventKind(enum.IntEnum):
    GRABBED = 1
    RELEASED = 2
    PORTAL_UNLOCKED = 3
    TREX_SPAWNED = 4

    @property
    def label(self) -> str:
        return _LABELS[self]


_LABELS = {
    EventKind.GRABBED: "Grabbed",
    EventKind.RELEASED: "Released",
    EventKind.PORTAL_UNLOCKED: "PortalUnlocked",
    EventKind.TREX_SPAWNED: "TRexSpawned",
}
KIND_BY_LABEL = {v: k for k, v in _LABELS.items()}


class Hand(enum.IntEnum):
    LEFT = 0
    RIGHT = 1


@dataclass(frozen=True)
class WorldEvent:
    kind: EventKind
    tick: int
    participants: tuple[int, ...] = ()

    def to_record(self) -> dict:
        return {"tick": self.tick, "kind": self.kind.label, "participants": list(self.participants)}


@dataclass(frozen=True)
class Grab:
    user: int
    hand: Hand
    since_tick: int


@dataclass(frozen=True)
class InteractionConfig:
    grab_radius_m: float = 0.15
    release_radius_m: float = 0.25
    grab_ticks: int = 3
    release_ticks: int = 3
    stack_gap_m: float = 0.02
    rest_speed_mps: float = 0.05
    stack_ticks: int = 10


# (count, last tick) for a run of consecutive ticks
Streak = tuple[int, int]


def _bump(streaks: Mapping, key, tick: int) -> int:
    count, last = streaks.get(key, (0, -2))
    return count + 1 if last == tick - 1 else 1


@dataclass(frozen=True)
class InteractionState:
    grabs: Mapping[int, Grab] = field(default_factory=dict)
    portal_unlocked_at: int | None = None
    grab_streaks: Mapping[tuple[int, int, int], Streak] = field(default_factory=dict)
    release_streaks: Mapping[int, Streak] = field(default_factory=dict)
    stack_streak: Streak = (0, -2)
    # last two distinct (timestamp_us, position) samples per object
    motion: Mapping[int, tuple[tuple[int, Vec3], ...]] = field(default_factory=dict)
    last_grab_tick: int = -1
    last_stack_tick: int = -1

    @property
    def portal_unlocked(self) -> bool:
        return self.portal_unlocked_at is not None


HandPositions = Mapping[int, Mapping[Hand, Vec3]]


def grab_update(
    state: InteractionState,
    tick: int,
    hands: HandPositions,
    objects: Mapping[int, ObjectPose],
    config: InteractionConfig = InteractionConfig(),
) -> tuple[InteractionState, list[WorldEvent]]:
    """Advance grab/release attribution by one tick.

    ``hands`` maps user -> hand -> position; ``objects`` maps entity -> pose.
    """
    if tick <= state.last_grab_tick:
        return state, []
    events: list[WorldEvent] = []
    grabs = dict(state.grabs)
    release_streaks: dict[int, Streak] = {}
    grab_streaks: dict[tuple[int, int, int], Streak] = {}

    # releases first so a freed hand can take another object next tick
    for entity in sorted(grabs):
        g = grabs[entity]
        obj = objects.get(entity)
        pos = hands.get(g.user, {}).get(g.hand)
        d = math.inf if obj is None or pos is None else pos.distance(obj.pose.position)
        if d > config.release_radius_m:
            n = _bump(state.release_streaks, entity, tick)
            if n >= config.release_ticks:
                del grabs[entity]
                events.append(WorldEvent(EventKind.RELEASED, tick, (g.user, entity, int(g.hand))))
            else:
                release_streaks[entity] = (n, tick)

    busy = {(g.user, g.hand) for g in grabs.values()}
    for entity in sorted(objects):
        center = objects[entity].pose.position
        ready = []
        for user in sorted(hands):
            for hand, pos in sorted(hands[user].items()):
                d = pos.distance(center)
                if d > config.grab_radius_m or entity in grabs:
                    continue
                key = (user, int(hand), entity)
                n = _bump(state.grab_streaks, key, tick)
                grab_streaks[key] = (n, tick)
                if n >= config.grab_ticks and (user, hand) not in busy:
                    ready.append((d, user, int(hand)))
        if ready:
            _, user, hand = min(ready)
            grabs[entity] = Grab(user, Hand(hand), tick)
            busy.add((user, Hand(hand)))
            events.append(WorldEvent(EventKind.GRABBED, tick, (user, entity, hand)))
            for key in [k for k in grab_streaks if k[2] == entity]:
                del grab_streaks[key]

    new = replace(
        state,
        grabs=grabs,
        grab_streaks=grab_streaks,
        release_streaks=release_streaks,
        last_grab_tick=tick,
    )
    return new, events


def _speed(samples: tuple[tuple[int, Vec3], ...]) -> float:
    # a single sample reads as at rest; the dwell streak guards against a cube just set down
    if len(samples) < 2:
        return 0.0
    (t0, p0), (t1, p1) = samples[-2], samples[-1]
    return p1.distance(p0) / ((t1 - t0) * 1e-6)


def _record_motion(motion: dict, pose: ObjectPose) -> None:
    hist = motion.get(pose.entity, ())
    if hist and hist[-1][0] >= pose.timestamp_us:
        return
    motion[pose.entity] = (hist[-1:] + ((pose.timestamp_us, pose.pose.position),))


def is_stacked(upper: Vec3, lower: Vec3, edge: float, gap_tol: float) -> bool:
    if upper.y < lower.y:
        upper, lower = lower, upper
    horizontal = math.hypot(upper.x - lower.x, upper.z - lower.z)
    gap = abs((upper.y - edge / 2.0) - (lower.y + edge / 2.0))
    return horizontal <= 0.5 * edge and gap <= gap_tol


def stack_update(
    state: InteractionState,
    tick: int,
    cube_a: ObjectPose,
    cube_b: ObjectPose,
    edge: float,
    config: InteractionConfig = InteractionConfig(),
) -> tuple[InteractionState, list[WorldEvent]]:
    """Fire PortalUnlocked and TRexSpawned (same tick) once the cubes stay stacked and at rest."""
    if tick <= state.last_stack_tick:
        return state, []
    motion = dict(state.motion)
    for p in (cube_a, cube_b):
        if p.valid:
            _record_motion(motion, p)

    holds = (
        cube_a.valid
        and cube_b.valid
        and is_stacked(cube_a.pose.position, cube_b.pose.position, edge, config.stack_gap_m)
        and _speed(motion.get(cube_a.entity, ())) < config.rest_speed_mps
        and _speed(motion.get(cube_b.entity, ())) < config.rest_speed_mps
    )
    events: list[WorldEvent] = []
    streak: Streak = (0, -2)
    unlocked_at = state.portal_unlocked_at
    if holds:
        n = _bump({0: state.stack_streak}, 0, tick)
        streak = (n, tick)
        if n >= config.stack_ticks and unlocked_at is None:
            unlocked_at = tick
            pair = tuple(sorted((cube_a.entity, cube_b.entity)))
            events.append(WorldEvent(EventKind.PORTAL_UNLOCKED, tick, pair))
            events.append(WorldEvent(EventKind.TREX_SPAWNED, tick, ()))
    new = replace(
        state,
        motion=motion,
        stack_streak=streak,
        portal_unlocked_at=unlocked_at,
        last_stack_tick=tick,
    )
    return new, events


def write_event_log(events: Iterable[WorldEvent], fp) -> None:
    for e in events:
        fp.write(json.dumps(e.to_record()) + "\n")


def read_event_log(lines: Iterable[str]) -> list[WorldEvent]:
    out = []
    for line in lines:
        if line.strip():
            r = json.loads(line)
            out.append(WorldEvent(KIND_BY_LABEL[r["kind"]], int(r["tick"]), tuple(r["participants"])))
    return out
