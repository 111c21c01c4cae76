"""Deterministic in-process session: trackers, server, lossy channel and clients.

Everything runs in one scheduler loop keyed on the server tick, so a scenario
and a seed fully determine every datagram, event and statistic.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .client import Channel, ChannelConfig, ClientWorld
from .core import Transform, transform_compose, transform_inverse, yaw_quat
from .errors import ParseError, ValidationError
from .interaction import EventKind, WorldEvent, write_event_log
from .marker import CameraIntrinsics, Degenerate, MarkerObservation, load_camera, load_observations, pose_from_marker
from .retarget import RigDefinition, SkeletonFrame, load_capture, load_rig
from .scene import SceneModel, load_scene_file, parse_pose
from .server import Server, SessionConfig
from .wire import (
    Datagram,
    EventMsg,
    Heartbeat,
    Join,
    JoinAck,
    ObjectPoseMsg,
    SkeletonFrameMsg,
    Snapshot,
    decode,
    encode,
)

SERVER = "server"
TRACKER = "tracker"


@dataclass(frozen=True)
class ClientSpec:
    user: int
    join_tick: int = 0


@dataclass(frozen=True)
class Scenario:
    name: str
    scene: SceneModel
    rig: RigDefinition
    skeleton: tuple[SkeletonFrame, ...]
    markers: tuple[MarkerObservation, ...]
    camera: CameraIntrinsics | None
    camera_pose: Transform
    marker_mount: Transform
    channel: ChannelConfig
    tracker_channel: ChannelConfig
    clients: tuple[ClientSpec, ...]
    duration_ticks: int = 10_000
    input_ticks: int | None = None
    capture_period_us: int | None = None
    tick_rate_hz: int = 60
    skeleton_input_hz: float = 30.0
    interpolation_delay_ticks: int = 2
    client_timeout_ticks: int = 300
    heartbeat_every_ticks: int = 30
    seed: int = 0
    stats_out: Path | None = None
    events_out: Path | None = None

    def __post_init__(self) -> None:
        if self.duration_ticks <= 0:
            raise ValidationError("duration_ticks", "must be positive")
        if self.markers and self.camera is None:
            raise ValidationError("camera", "marker capture given without camera intrinsics")
        users = [c.user for c in self.clients]
        if len(set(users)) != len(users):
            raise ValidationError("clients", "duplicate client user ids")


# -- scenario file ---------------------------------------------------------------------

def _field(doc: dict, key: str, kind: type, default: Any = ...) -> Any:
    if key not in doc:
        if default is ...:
            raise ParseError(f"scenario: missing field {key!r}")
        return default
    v = doc[key]
    if kind is float and isinstance(v, int) and not isinstance(v, bool):
        v = float(v)
    if not isinstance(v, kind) or isinstance(v, bool) and kind is not bool:
        raise ParseError(f"scenario: field {key!r} must be {kind.__name__}")
    return v


def _channel(doc: Any, seed: int, what: str) -> ChannelConfig:
    if doc is None:
        return ChannelConfig(rng_seed=seed)
    if not isinstance(doc, dict):
        raise ParseError(f"scenario: {what} must be an object")
    try:
        return ChannelConfig(
            latency_ms=float(doc.get("latency_ms", 0.0)),
            jitter_ms=float(doc.get("jitter_ms", 0.0)),
            loss_fraction=float(doc.get("loss_fraction", 0.0)),
            duplication_fraction=float(doc.get("duplication_fraction", 0.0)),
            rng_seed=seed,
        )
    except (TypeError, ValueError) as e:
        raise ValidationError(what, str(e)) from e


def load_scenario(path: str | Path, seed: int | None = None) -> Scenario:
    """Read a scenario file; relative paths inside it resolve against its directory."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ParseError(f"scenario is not valid JSON: {e}") from e
    if not isinstance(doc, dict):
        raise ParseError("scenario: expected an object")
    base = path.parent

    def rel(key: str, required: bool = True) -> Path | None:
        v = _field(doc, key, str, ... if required else None)
        return None if v is None else base / v

    seed = _field(doc, "seed", int, 0) if seed is None else seed
    camera_path = rel("camera", required=False)
    camera = load_camera(camera_path) if camera_path else None
    marker_path = rel("marker_capture", required=False)
    markers = tuple(load_observations(marker_path, camera)) if marker_path else ()
    clients = []
    for i, c in enumerate(_field(doc, "clients", list)):
        if not isinstance(c, dict) or "user" not in c:
            raise ParseError(f"scenario: clients[{i}] needs a user")
        clients.append(ClientSpec(int(c["user"]), int(c.get("join_tick", 0))))
    stem = path.name.removesuffix(".scenario")
    stats_out = rel("stats_out", required=False) or base / f"{stem}.stats.jsonl"
    events_out = rel("events_out", required=False) or base / f"{stem}.events.jsonl"
    return Scenario(
        name=_field(doc, "name", str, stem),
        scene=load_scene_file(rel("scene")),  # type: ignore[arg-type]
        rig=load_rig(rel("rig")),  # type: ignore[arg-type]
        skeleton=tuple(load_capture(rel("skeleton_capture"))),  # type: ignore[arg-type]
        markers=markers,
        camera=camera,
        camera_pose=parse_pose(doc.get("camera_pose", {"pos": [0, 0, 0]}), "camera_pose"),
        marker_mount=parse_pose(doc.get("marker_mount", {"pos": [0, 0, 0]}), "marker_mount"),
        channel=_channel(doc.get("channel"), seed, "channel"),
        tracker_channel=_channel(doc.get("tracker_channel"), seed + 1, "tracker_channel"),
        clients=tuple(clients),
        duration_ticks=_field(doc, "duration_ticks", int, 10_000),
        input_ticks=_field(doc, "input_ticks", int, None),
        capture_period_us=_field(doc, "capture_period_us", int, None),
        tick_rate_hz=_field(doc, "tick_rate_hz", int, 60),
        skeleton_input_hz=_field(doc, "skeleton_input_hz", float, 30.0),
        interpolation_delay_ticks=_field(doc, "interpolation_delay_ticks", int, 2),
        client_timeout_ticks=_field(doc, "client_timeout_ticks", int, 300),
        seed=seed,
        stats_out=stats_out,
        events_out=events_out,
    )


# -- simulated parties --------------------------------------------------------------------

class _Tracker:
    """Replays skeleton and marker captures, looping with a fixed period."""

    def __init__(self, sc: Scenario):
        self.sc = sc
        items: list[tuple[int, int, Any]] = []
        for f in sc.skeleton:
            items.append((f.timestamp_us, 0, f))
        for o in sc.markers:
            items.append((o.timestamp_us, 1, o))
        items.sort(key=lambda x: (x[0], x[1]))
        self.items = items
        last = items[-1][0] if items else 0
        self.period_us = sc.capture_period_us or (last + 1)
        self.loop = 0
        self.cursor = 0
        self.seq: dict[tuple[int, int], int] = {}
        self.marker_inv = transform_inverse(sc.marker_mount)
        self._solved: dict[int, ObjectPoseMsg | None] = {}

    def _next_seq(self, key: tuple[int, int]) -> int:
        s = self.seq.get(key, 0)
        self.seq[key] = (s + 1) & 0xFFFFFFFF
        return s

    def due(self, now_us: int, tick: int) -> list[bytes]:
        out: list[bytes] = []
        if not self.items:
            return out
        while True:
            ts, kind, item = self.items[self.cursor]
            at = ts + self.loop * self.period_us
            if at > now_us:
                return out
            if kind == 0:
                body = SkeletonFrameMsg(item.user, item.joints)
                key = (0, item.user)
            else:
                body = self._object_msg(self.cursor, item)
                key = (1, item.marker_id)
            if body is not None:
                out.append(encode(Datagram(self._next_seq(key), tick, at, body)))
            self.cursor += 1
            if self.cursor == len(self.items):
                self.cursor = 0
                self.loop += 1

    def _object_msg(self, index: int, obs: MarkerObservation) -> ObjectPoseMsg | None:
        # looping replays the same observations, so each is solved once
        if index in self._solved:
            return self._solved[index]
        try:
            est = pose_from_marker(obs, self.sc.camera)  # type: ignore[arg-type]
        except Degenerate:
            msg = None
        else:
            world = transform_compose(transform_compose(self.sc.camera_pose, est.pose), self.marker_inv)
            ok = est.valid and math.isfinite(est.reprojection_error)
            msg = ObjectPoseMsg(obs.marker_id, world, est.reprojection_error if ok else 1e9, ok)
        self._solved[index] = msg
        return msg


@dataclass
class SimClient:
    spec: ClientSpec
    address: str
    world: ClientWorld
    client_id: int | None = None
    seq: int = 0
    last_heartbeat_tick: int = -(10**9)
    last_join_tick: int = -(10**9)
    acked_hwm: int = 0
    backward_applications: int = 0
    backward_render: int = 0
    decode_errors: int = 0
    latency_sum: int = 0
    latency_max: int = 0
    latency_n: int = 0
    divergent_ticks: int = 0
    applied_ticks: list[int] = field(default_factory=list)

    def datagram(self, tick: int, now_us: int, body) -> bytes:
        data = encode(Datagram(self.seq, tick, now_us, body))
        self.seq = (self.seq + 1) & 0xFFFFFFFF
        return data


def _hmd_orientation(user: int, tick: int):
    # scripted head yaw standing in for headset tracking
    return yaw_quat(20.0 * math.sin(tick / 90.0 + user))


@dataclass
class SimResult:
    scenario: Scenario
    server: Server
    clients: list[SimClient]
    channel: Channel
    tracker_channel: Channel
    converged: dict[int, bool]
    server_tick_seconds: list[float]
    drained_at_us: int

    @property
    def events(self) -> list[WorldEvent]:
        return self.server.event_log

    def surfaced(self, user: int) -> list[EventMsg]:
        for c in self.clients:
            if c.spec.user == user:
                return c.world.surfaced
        raise KeyError(user)

    def stats_records(self) -> list[dict]:
        sc = self.scenario
        recs: list[dict] = [{
            "record": "scenario",
            "name": sc.name,
            "seed": sc.seed,
            "duration_ticks": sc.duration_ticks,
            "input_ticks": sc.input_ticks,
            "tick_rate_hz": sc.tick_rate_hz,
        }]
        recs.append({"record": "server", **self.server.stats.to_record(),
                     "events": len(self.server.events), "final_tick": self.server.tick_count})
        for c in self.clients:
            w = c.world
            kinds: dict[str, int] = {}
            for e in w.surfaced:
                label = EventKind(e.kind).label
                kinds[label] = kinds.get(label, 0) + 1
            recs.append({
                "record": "client",
                "user": c.spec.user,
                "client_id": c.client_id,
                "snapshots_applied": w.applied,
                "stale_drops": w.stale,
                "duplicates": w.duplicates,
                "late_fills": w.late_fills,
                "decode_errors": c.decode_errors,
                "backward_applications": c.backward_applications,
                "backward_render": c.backward_render,
                "latest_tick": w.latest_tick,
                "latency_mean_ticks": round(c.latency_sum / c.latency_n, 6) if c.latency_n else None,
                "latency_max_ticks": c.latency_max,
                "divergent_ticks": c.divergent_ticks,
                "converged": self.converged[c.spec.user],
                "events_surfaced": {k: kinds[k] for k in sorted(kinds)},
            })
        recs.append({"record": "channel", "link": "clients", **self.channel.stats()})
        recs.append({"record": "channel", "link": "tracker", **self.tracker_channel.stats()})
        return recs

    def write(self, stats_path: Path | None = None, events_path: Path | None = None) -> None:
        stats_path = stats_path or self.scenario.stats_out
        events_path = events_path or self.scenario.events_out
        if stats_path is not None:
            with open(stats_path, "w") as f:
                for r in self.stats_records():
                    f.write(json.dumps(r, sort_keys=True) + "\n")
        if events_path is not None:
            with open(events_path, "w") as f:
                write_event_log(self.events, f)


def simulate(sc: Scenario) -> SimResult:
    cfg = SessionConfig(
        scene=sc.scene,
        rig=sc.rig,
        tick_rate_hz=sc.tick_rate_hz,
        skeleton_input_hz=sc.skeleton_input_hz,
        client_timeout_ticks=sc.client_timeout_ticks,
        interpolation_delay_ticks=sc.interpolation_delay_ticks,
    )
    server = Server(cfg)
    channel = Channel(sc.channel)
    tracker_link = Channel(sc.tracker_channel)
    tracker = _Tracker(sc)
    clients = [
        SimClient(spec, f"client-{spec.user}", ClientWorld(sc.rig, sc.interpolation_delay_ticks))
        for spec in sc.clients
    ]
    by_addr = {c.address: c for c in clients}
    input_ticks = sc.duration_ticks if sc.input_ticks is None else sc.input_ticks
    tick_seconds: list[float] = []

    def to_clients(out) -> None:
        for addr, data in out:
            channel.submit(data, SERVER, addr, now_us)

    def deliver_client(c: SimClient, data: bytes, tick: int) -> None:
        try:
            d = decode(data)
        except ValueError:
            c.decode_errors += 1
            return
        w = c.world
        body = d.body
        if isinstance(body, JoinAck):
            c.client_id = body.client_id
        elif isinstance(body, Snapshot):
            before = w.latest_tick
            w.apply_snapshot(d.tick, body)
            if w.latest_tick != before:
                if before is not None and w.latest_tick <= before:  # type: ignore[operator]
                    c.backward_applications += 1
                c.applied_ticks.append(w.latest_tick)  # type: ignore[arg-type]
                lag = tick - d.tick
                c.latency_sum += lag
                c.latency_n += 1
                c.latency_max = max(c.latency_max, lag)
        elif isinstance(body, EventMsg):
            w.apply_event(body)

    def client_frame(c: SimClient, tick: int) -> None:
        w = c.world
        if c.client_id is None and w.latest_tick is None:
            if tick >= c.spec.join_tick and tick - c.last_join_tick >= sc.heartbeat_every_ticks:
                channel.submit(c.datagram(tick, now_us, Join(c.spec.user)), c.address, SERVER, now_us)
                c.last_join_tick = tick
            return
        if w.event_hwm > c.acked_hwm or tick - c.last_heartbeat_tick >= sc.heartbeat_every_ticks:
            channel.submit(c.datagram(tick, now_us, Heartbeat(w.event_hwm)), c.address, SERVER, now_us)
            c.last_heartbeat_tick = tick
            c.acked_hwm = w.event_hwm
        target = w.target_render_tick()
        if target is not None:
            before = w.render_tick
            w.sample(target)
            if w.render_tick < before:
                c.backward_render += 1
            if w.view is not None and c.spec.user in w.view.users:
                w.view_pose(c.spec.user, _hmd_orientation(c.spec.user, tick))
        if w.latest_payload != server.cached_payload:
            c.divergent_ticks += 1

    now_us = 0
    for tick in range(1, sc.duration_ticks + 1):
        now_us = cfg.tick_time_us(tick)
        if tick <= input_ticks:
            for data in tracker.due(now_us, server.tick_count):
                tracker_link.submit(data, TRACKER, SERVER, now_us)
        arrivals = channel.step(now_us)

        t0 = time.perf_counter()
        for dl in tracker_link.step(now_us):
            server.receive(dl.data, dl.src)
        for dl in arrivals:
            if dl.dst == SERVER:
                server.receive(dl.data, dl.src)
        out = server.flush() + server.tick()
        tick_seconds.append(time.perf_counter() - t0)

        for dl in arrivals:
            if dl.dst in by_addr:
                deliver_client(by_addr[dl.dst], dl.data, tick)
        to_clients(out)
        for c in clients:
            client_frame(c, tick)

    # quiescence: stop ticking and let everything in flight land
    while channel.pending():
        now_us = channel.next_due_us()  # type: ignore[assignment]
        for dl in channel.step(now_us):
            if dl.dst in by_addr:
                deliver_client(by_addr[dl.dst], dl.data, server.tick_count)
    converged = {c.spec.user: c.world.latest_payload == server.cached_payload for c in clients}
    return SimResult(sc, server, clients, channel, tracker_link, converged, tick_seconds, now_us)
