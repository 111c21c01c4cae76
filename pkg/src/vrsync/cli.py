"""Command-line entry point: ``vrsync <subcommand> ...``.

Exit codes: 0 success, 1 invalid input (bad flags, missing or invalid files),
2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from collections import Counter
from pathlib import Path
from typing import Sequence

from .errors import ParseError, ValidationError
from .interaction import KIND_BY_LABEL
from .marker import Degenerate, TrackerConfig, TrackState, load_camera, load_observations, object_pose_to_record
from .marker import pose_from_marker, track_update
from .retarget import BadFrame, load_capture, load_rig, pose_to_record, retarget_frame
from .scene import SceneModel, load_scene_file
from .server import Server, SessionConfig, UdpTransport, run
from .sim import load_scenario, simulate
from .wire import Datagram, SkeletonFrameMsg, encode

log = logging.getLogger("vrsync")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on bad usage; this CLI reserves 2 for runtime errors
    def error(self, message: str) -> None:  # type: ignore[override]
        raise UsageError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="vrsync", description="Multi-user VR state synchronization engine.")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("serve", help="run the authoritative server on UDP")
    s.add_argument("--scene", required=True, type=Path)
    s.add_argument("--rig", required=True, type=Path)
    s.add_argument("--bind", default="127.0.0.1:7777", help="HOST:PORT")
    s.add_argument("--tick-rate", type=int, default=60)

    s = sub.add_parser("simulate", help="run a scenario in the deterministic in-process simulator")
    s.add_argument("--scenario", required=True, type=Path)
    s.add_argument("--seed", type=int)

    s = sub.add_parser("replay", help="retarget a capture through the server and print poses and events")
    s.add_argument("--capture", required=True, type=Path)
    s.add_argument("--rig", required=True, type=Path)
    s.add_argument("--scene", type=Path, help="scene whose proxies the replayed users can interact with")
    s.add_argument("--seed", type=int, default=0)

    s = sub.add_parser("retarget", help="convert a skeleton capture to bone orientations")
    s.add_argument("--capture", required=True, type=Path)
    s.add_argument("--rig", required=True, type=Path)
    s.add_argument("--out", required=True, type=Path)

    s = sub.add_parser("track", help="convert marker observations to filtered object poses")
    s.add_argument("--obs", required=True, type=Path)
    s.add_argument("--camera", required=True, type=Path)
    s.add_argument("--out", required=True, type=Path)

    s = sub.add_parser("stats", help="summarize a statistics or event log")
    s.add_argument("--log", required=True, type=Path)
    return p


def _parse_bind(text: str) -> tuple[str, int]:
    host, sep, port = text.rpartition(":")
    if not sep or not port.isdigit() or not 0 <= int(port) <= 65535:
        raise ValidationError("bind", f"expected HOST:PORT, got {text!r}")
    return host or "0.0.0.0", int(port)


def cmd_serve(args: argparse.Namespace) -> int:
    scene = load_scene_file(args.scene)
    rig = load_rig(args.rig)
    try:
        config = SessionConfig(scene=scene, rig=rig, tick_rate_hz=args.tick_rate)
    except ValueError as e:
        raise ValidationError("tick-rate", str(e)) from e
    host, port = _parse_bind(args.bind)
    transport = UdpTransport(host, port)
    log.info("serving %s on %s:%d at %d Hz", scene.name, *transport.address[:2], args.tick_rate)
    server = Server(config)
    try:
        run(config, transport, server=server)
    except KeyboardInterrupt:
        log.info("stopped")
    finally:
        transport.close()
    print(json.dumps(server.stats.to_record(), sort_keys=True))
    return EXIT_OK


def cmd_simulate(args: argparse.Namespace) -> int:
    sc = load_scenario(args.scenario, seed=args.seed)
    result = simulate(sc)
    result.write()
    for r in result.stats_records():
        if r["record"] in ("server", "client"):
            print(json.dumps(r, sort_keys=True))
    print(f"statistics: {sc.stats_out}\nevents: {sc.events_out}")
    return EXIT_OK


def cmd_replay(args: argparse.Namespace) -> int:
    rig = load_rig(args.rig)
    frames = load_capture(args.capture)
    if args.scene is not None:
        scene = load_scene_file(args.scene)
    else:
        # no proxies: only the avatars are replayed
        scene = SceneModel("replay", (((-1e3, -1e3), (1e3, -1e3), (1e3, 1e3), (-1e3, 1e3)),))
    server = Server(SessionConfig(scene=scene, rig=rig))
    seq: dict[int, int] = {}
    out = sys.stdout
    fired = 0
    i = 0
    # each frame is delivered on the first tick whose time has reached its timestamp
    t0 = frames[0].timestamp_us if frames else 0
    while i < len(frames):
        now = server.config.tick_time_us(server.tick_count + 1)
        while i < len(frames) and frames[i].timestamp_us - t0 <= now:
            f = frames[i]
            s = seq.get(f.user, 0)
            seq[f.user] = s + 1
            server.receive(encode(Datagram(s, server.tick_count, f.timestamp_us, SkeletonFrameMsg(f.user, f.joints))), "replay")
            i += 1
        server.tick()
        for uid in sorted(server.users):
            st = server.users[uid]
            if st.smoothed is not None and st.smoothed.timestamp_us == now:
                out.write(json.dumps({"tick": server.tick_count, "pose": pose_to_record(st.smoothed)}) + "\n")
        for _, e in server.events[fired:]:
            out.write(json.dumps({"event": e.to_record()}) + "\n")
        fired = len(server.events)
    return EXIT_OK


def cmd_retarget(args: argparse.Namespace) -> int:
    rig = load_rig(args.rig)
    previous = {}
    with open(args.out, "w") as f:
        for frame in load_capture(args.capture):
            try:
                pose = retarget_frame(frame, rig, previous.get(frame.user))
            except BadFrame as e:
                raise ValidationError("capture frame", f"user {frame.user} at {frame.timestamp_us}: {e}") from e
            previous[frame.user] = pose
            f.write(json.dumps(pose_to_record(pose)) + "\n")
    return EXIT_OK


def cmd_track(args: argparse.Namespace) -> int:
    cam = load_camera(args.camera)
    config = TrackerConfig()
    states: dict[int, TrackState] = {}
    with open(args.out, "w") as f:
        for obs in load_observations(args.obs, cam):
            try:
                raw = pose_from_marker(obs, cam, config)
            except Degenerate as e:
                log.warning("marker %d at %d: %s", obs.marker_id, obs.timestamp_us, e)
                continue
            pose = track_update(states.setdefault(obs.marker_id, TrackState()), raw, config)
            f.write(json.dumps(object_pose_to_record(pose)) + "\n")
    return EXIT_OK


def cmd_stats(args: argparse.Namespace) -> int:
    records = []
    with open(args.log) as f:
        for n, line in enumerate(f, 1):
            if line.strip():
                try:
                    records.append(json.loads(line))
                except json.JSONDecodeError as e:
                    raise ParseError(f"log line {n}: {e}") from e
    if all(isinstance(r, dict) and "kind" in r and "tick" in r for r in records):
        kinds = Counter(r["kind"] for r in records)
        unknown = set(kinds) - set(KIND_BY_LABEL)
        if unknown:
            raise ValidationError("kind", f"unknown event kinds {sorted(unknown)}")
        ticks = [r["tick"] for r in records]
        summary = {"type": "events", "count": len(records), "by_kind": dict(sorted(kinds.items()))}
        if ticks:
            summary.update(first_tick=min(ticks), last_tick=max(ticks))
    elif all(isinstance(r, dict) and "record" in r for r in records):
        summary = {"type": "session"}
        for r in records:
            if r["record"] == "server":
                summary["server"] = {k: r[k] for k in ("ticks", "datagrams_in", "datagrams_out", "stale_drops",
                                                       "decode_errors", "events_fired") if k in r}
            elif r["record"] == "client":
                summary.setdefault("clients", []).append({k: r.get(k) for k in (
                    "user", "snapshots_applied", "stale_drops", "latency_mean_ticks", "converged", "events_surfaced")})
    else:
        raise ValidationError("log", "neither a statistics log nor an event log")
    print(json.dumps(summary, indent=2, sort_keys=True))
    return EXIT_OK


COMMANDS = {
    "serve": cmd_serve,
    "simulate": cmd_simulate,
    "replay": cmd_replay,
    "retarget": cmd_retarget,
    "track": cmd_track,
    "stats": cmd_stats,
}


def run_cli(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(e, file=sys.stderr)
        return EXIT_INVALID
    except SystemExit as e:  # --help
        return EXIT_OK if e.code in (0, None) else EXIT_INVALID
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ParseError, ValidationError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID
    except FileNotFoundError as e:
        print(f"error: file not found: {e.filename}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as e:  # noqa: BLE001
        log.exception("runtime failure")
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


def main() -> None:
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
