"""Authoritative fixed-timestep server.

All state mutation happens on the thread that calls ``ingest``/``tick``.
Network reception for ``run`` goes through a transport whose ``receive`` drains
a multi-producer queue, so sockets never touch ``Server`` directly.
"""

from __future__ import annotations

import logging
import queue
import socket
import threading
import time
from collections import Counter
from dataclasses import dataclass, field
from typing import Hashable, Iterable, Protocol

from .core import Transform, canonical
from .interaction import (
    EventKind,
    Hand,
    InteractionConfig,
    InteractionState,
    WorldEvent,
    grab_update,
    stack_update,
)
from .marker import ObjectPose, TrackerConfig, TrackState, track_update
from .retarget import (
    HAND_LEFT,
    HAND_RIGHT,
    BadFrame,
    BoneOrientationSet,
    RetargetConfig,
    RigDefinition,
    SkeletonFrame,
    forward_kinematics,
    retarget_frame,
    smooth_pose,
)
from .scene import ProxyBinding, SceneModel
from .wire import (
    Datagram,
    DecodeError,
    MsgType,
    EventMsg,
    Heartbeat,
    Join,
    JoinAck,
    ObjectPoseMsg,
    ObjectState,
    SkeletonFrameMsg,
    Snapshot,
    UserState,
    decode,
    decode_body,
    encode_body,
    frame,
    seq_newer,
)

log = logging.getLogger(__name__)

Address = Hashable


@dataclass(frozen=True)
class SessionConfig:
    scene: SceneModel
    rig: RigDefinition
    tick_rate_hz: int = 60
    skeleton_input_hz: float = 30.0
    client_timeout_ticks: int = 300
    interpolation_delay_ticks: int = 2
    retarget: RetargetConfig = RetargetConfig()
    tracker: TrackerConfig = TrackerConfig()
    interaction: InteractionConfig = InteractionConfig()

    def __post_init__(self) -> None:
        if self.tick_rate_hz < self.skeleton_input_hz:
            raise ValueError("tick rate must be at least the skeleton input rate")
        if self.client_timeout_ticks <= 0:
            raise ValueError("client timeout must be positive")

    def tick_time_us(self, tick: int) -> int:
        return tick * 1_000_000 // self.tick_rate_hz


@dataclass
class SessionStats:
    ticks: int = 0
    datagrams_in: int = 0
    datagrams_out: int = 0
    stale_drops: int = 0
    decode_errors: int = 0
    decode_errors_by_source: Counter = field(default_factory=Counter)
    unknown_heartbeats: int = 0
    unknown_objects: int = 0
    unexpected: int = 0
    bad_frames: int = 0
    clients_joined: int = 0
    clients_expired: int = 0
    events_fired: Counter = field(default_factory=Counter)

    def to_record(self) -> dict:
        return {
            "ticks": self.ticks,
            "datagrams_in": self.datagrams_in,
            "datagrams_out": self.datagrams_out,
            "stale_drops": self.stale_drops,
            "decode_errors": self.decode_errors,
            "unknown_heartbeats": self.unknown_heartbeats,
            "unknown_objects": self.unknown_objects,
            "unexpected": self.unexpected,
            "bad_frames": self.bad_frames,
            "clients_joined": self.clients_joined,
            "clients_expired": self.clients_expired,
            "events_fired": {k: self.events_fired[k] for k in sorted(self.events_fired)},
        }


@dataclass
class UserStream:
    seq: int
    last_heard_tick: int
    raw: BoneOrientationSet
    pending: bool = True
    smoothed: BoneOrientationSet | None = None
    hands: dict[Hand, object] = field(default_factory=dict)


@dataclass
class ObjectStream:
    proxy: ProxyBinding
    current: ObjectPose
    seq: int | None = None
    track: TrackState = field(default_factory=TrackState)
    pending: list[ObjectPose] = field(default_factory=list)


@dataclass
class ClientRecord:
    client_id: int
    address: Address
    user: int
    last_heard_tick: int
    seq: int = 0
    event_ack: int = 0


class Server:
    def __init__(self, config: SessionConfig):
        self.config = config
        self.tick_count = 0
        self.users: dict[int, UserStream] = {}
        self.objects: dict[int, ObjectStream] = {}
        self._by_physical: dict[int, int] = {}
        for p in config.scene.proxies:
            self.objects[p.virtual_entity] = ObjectStream(
                p, ObjectPose(p.virtual_entity, 0, p.initial_pose, 0.0, True)
            )
            self._by_physical[p.physical_id] = p.virtual_entity
        self.interaction = InteractionState()
        self.clients: dict[Address, ClientRecord] = {}
        self._next_client_id = 1
        self.events: list[tuple[int, WorldEvent]] = []
        self._event_payloads: list[bytes] = []
        self.stats = SessionStats()
        self._outbox: list[tuple[Address, bytes]] = []
        self.cached_snapshot: Snapshot
        self.cached_payload: bytes
        self._refresh_cache()
        self.cached_tick = 0

    # -- ingest ----------------------------------------------------------------------

    def receive(self, data: bytes, addr: Address) -> None:
        """Decode and ingest one raw datagram; decode failures are counted, never raised."""
        self.stats.datagrams_in += 1
        try:
            dgram = decode(data)
        except DecodeError as e:
            self.stats.decode_errors += 1
            self.stats.decode_errors_by_source[str(addr)] += 1
            log.debug("decode error from %s: %s", addr, e)
            return
        self.ingest(dgram, addr)

    def ingest(self, dgram: Datagram, addr: Address) -> None:
        body = dgram.body
        if isinstance(body, Join):
            self._on_join(body, addr)
        elif isinstance(body, Heartbeat):
            c = self.clients.get(addr)
            if c is None:
                self.stats.unknown_heartbeats += 1
                return
            c.last_heard_tick = self.tick_count
            c.event_ack = max(c.event_ack, body.event_ack)
        elif isinstance(body, SkeletonFrameMsg):
            self._on_skeleton(dgram, body)
        elif isinstance(body, ObjectPoseMsg):
            self._on_object(dgram, body)
        else:
            self.stats.unexpected += 1

    def _send_payload(self, client: ClientRecord, tick: int, msg_type: MsgType, body: bytes) -> None:
        data = frame(msg_type, client.seq, tick, self.config.tick_time_us(tick), body)
        client.seq = (client.seq + 1) & 0xFFFFFFFF
        self._outbox.append((client.address, data))

    def _on_join(self, body: Join, addr: Address) -> None:
        c = self.clients.get(addr)
        if c is None:
            c = ClientRecord(self._next_client_id, addr, body.user, self.tick_count)
            self._next_client_id += 1
            self.clients[addr] = c
            self.stats.clients_joined += 1
        c.last_heard_tick = self.tick_count
        # late joiners get the full cached state right away
        ack = JoinAck(c.client_id, self.config.tick_rate_hz, self.config.interpolation_delay_ticks)
        self._send_payload(c, self.cached_tick, MsgType.JOIN_ACK, encode_body(ack))
        self._send_payload(c, self.cached_tick, MsgType.SNAPSHOT, self.cached_payload)

    def _on_skeleton(self, dgram: Datagram, body: SkeletonFrameMsg) -> None:
        stream = self.users.get(body.user)
        if stream is not None and not seq_newer(dgram.seq, stream.seq):
            self.stats.stale_drops += 1
            return
        frame = SkeletonFrame(body.user, dgram.timestamp_us, body.joints)
        try:
            pose = retarget_frame(frame, self.config.rig, stream.raw if stream else None, self.config.retarget)
        except BadFrame:
            self.stats.bad_frames += 1
            return
        if stream is None:
            self.users[body.user] = UserStream(dgram.seq, self.tick_count, pose)
        else:
            stream.seq = dgram.seq
            stream.last_heard_tick = self.tick_count
            stream.raw = pose
            stream.pending = True

    def _on_object(self, dgram: Datagram, body: ObjectPoseMsg) -> None:
        vid = self._by_physical.get(body.entity)
        if vid is None:
            self.stats.unknown_objects += 1
            return
        stream = self.objects[vid]
        if stream.seq is not None and not seq_newer(dgram.seq, stream.seq):
            self.stats.stale_drops += 1
            return
        try:
            rot = canonical(body.pose.rotation)
        except ValueError:
            self.stats.bad_frames += 1
            return
        stream.seq = dgram.seq
        stream.pending.append(ObjectPose(
            vid, dgram.timestamp_us, Transform(body.pose.position, rot), body.reprojection_error, body.valid
        ))

    # -- simulation step -------------------------------------------------------------

    def _build_snapshot(self) -> Snapshot:
        users = tuple(
            UserState(uid, s.smoothed.root_position, s.smoothed.local_rotations)
            for uid, s in sorted(self.users.items())
            if s.smoothed is not None
        )
        objects = tuple(
            ObjectState(vid, o.current.pose, o.current.valid) for vid, o in sorted(self.objects.items())
        )
        return Snapshot(self.interaction.portal_unlocked, users, objects)

    def _refresh_cache(self) -> None:
        payload = encode_body(self._build_snapshot())
        # keep exactly what goes on the wire so every reader sees the same numbers
        self.cached_snapshot = decode_body(MsgType.SNAPSHOT, payload)  # type: ignore[assignment]
        self.cached_payload = payload

    def tick(self) -> list[tuple[Address, bytes]]:
        """Advance one tick; returns (address, datagram) pairs to send."""
        cfg = self.config
        self.tick_count += 1
        t = self.tick_count
        now_us = cfg.tick_time_us(t)
        self.stats.ticks += 1
        changed = False

        hands: dict[int, dict[Hand, object]] = {}
        for uid, s in sorted(self.users.items()):
            if s.pending:
                sm = s.raw if s.smoothed is None else smooth_pose(s.smoothed, s.raw, cfg.retarget.smoothing_alpha)
                s.smoothed = BoneOrientationSet(uid, now_us, sm.root_position, sm.local_rotations)
                s.pending = False
                joints = forward_kinematics(cfg.rig, s.smoothed)
                s.hands = {Hand.LEFT: joints[HAND_LEFT], Hand.RIGHT: joints[HAND_RIGHT]}
                changed = True
            hands[uid] = s.hands  # type: ignore[assignment]

        for o in self.objects.values():
            for p in o.pending:
                o.current = track_update(o.track, p, cfg.tracker)
                changed = True
            o.pending.clear()

        poses = {vid: o.current for vid, o in self.objects.items()}
        new_events: list[WorldEvent] = []
        self.interaction, ev = grab_update(self.interaction, t, hands, poses, cfg.interaction)  # type: ignore[arg-type]
        new_events += ev
        cubes = sorted(self.objects)
        if len(cubes) >= 2:
            a, b = self.objects[cubes[0]], self.objects[cubes[1]]
            edge = a.proxy.physical_extents.y
            self.interaction, ev = stack_update(self.interaction, t, a.current, b.current, edge, cfg.interaction)
            new_events += ev
        for e in new_events:
            eid = len(self.events) + 1
            self.events.append((eid, e))
            self._event_payloads.append(encode_body(EventMsg(eid, int(e.kind), e.tick, e.participants)))
            self.stats.events_fired[e.kind.label] += 1
            changed |= e.kind is EventKind.PORTAL_UNLOCKED

        for addr in [a for a, c in self.clients.items() if t - c.last_heard_tick > cfg.client_timeout_ticks]:
            del self.clients[addr]
            self.stats.clients_expired += 1

        if changed:
            self._refresh_cache()
        self.cached_tick = t
        for c in self.clients.values():
            self._send_payload(c, t, MsgType.SNAPSHOT, self.cached_payload)
            for i in range(c.event_ack, len(self._event_payloads)):
                self._send_payload(c, t, MsgType.EVENT, self._event_payloads[i])

        out, self._outbox = self._outbox, []
        self.stats.datagrams_out += len(out)
        return out

    def flush(self) -> list[tuple[Address, bytes]]:
        """Datagrams queued by ingest (JOIN replies) since the last tick."""
        out, self._outbox = self._outbox, []
        self.stats.datagrams_out += len(out)
        return out

    @property
    def event_log(self) -> list[WorldEvent]:
        return [e for _, e in self.events]


# -- run loop ----------------------------------------------------------------------------

class Transport(Protocol):
    def receive(self) -> Iterable[tuple[bytes, Address]]: ...

    def send(self, data: bytes, addr: Address) -> None: ...


class UdpTransport:
    """Non-blocking UDP endpoint; a reader thread feeds a queue drained by the tick loop."""

    def __init__(self, host: str, port: int):
        self.sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        self.sock.bind((host, port))
        self.sock.settimeout(0.1)
        self.address = self.sock.getsockname()
        self._queue: queue.Queue[tuple[bytes, Address]] = queue.Queue()
        self._stop = threading.Event()
        self._thread = threading.Thread(target=self._reader, daemon=True)
        self._thread.start()

    def _reader(self) -> None:
        while not self._stop.is_set():
            try:
                data, addr = self.sock.recvfrom(65535)
            except socket.timeout:
                continue
            except OSError:
                if self._stop.is_set():
                    return
                continue
            self._queue.put((data, addr))

    def receive(self) -> list[tuple[bytes, Address]]:
        out = []
        while True:
            try:
                out.append(self._queue.get_nowait())
            except queue.Empty:
                return out

    def send(self, data: bytes, addr: Address) -> None:
        self.sock.sendto(data, addr)

    def close(self) -> None:
        self._stop.set()
        self._thread.join(timeout=1.0)
        self.sock.close()


def run(
    config: SessionConfig,
    transport: Transport,
    max_ticks: int | None = None,
    realtime: bool = True,
    stop: threading.Event | None = None,
    server: Server | None = None,
) -> SessionStats:
    """Drive ingest/tick at the configured rate until ``max_ticks`` or ``stop``.

    The tick counter is the only clock: when the loop falls behind it runs
    ticks back to back rather than stretching the timestep.
    """
    server = server or Server(config)
    period = 1.0 / config.tick_rate_hz
    deadline = time.monotonic()

    def send_all(out: list[tuple[Address, bytes]]) -> None:
        for addr, data in out:
            try:
                transport.send(data, addr)
            except OSError as e:
                log.warning("send to %s failed: %s", addr, e)

    while (max_ticks is None or server.stats.ticks < max_ticks) and not (stop and stop.is_set()):
        try:
            for data, addr in transport.receive():
                server.receive(data, addr)
        except OSError as e:
            log.warning("receive failed: %s", e)
        send_all(server.flush())
        send_all(server.tick())
        if realtime:
            deadline += period
            delay = deadline - time.monotonic()
            if delay > 0:
                time.sleep(delay)
    return server.stats
