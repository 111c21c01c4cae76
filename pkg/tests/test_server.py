import socket
import threading

import numpy as np
import pytest

from vrsync.core import Transform, UnitQuat, Vec3
from vrsync.retarget import forward_kinematics, frame_from_positions, rest_frame
from vrsync.scene import load_scene_file
from vrsync.server import Server, SessionConfig, UdpTransport, run
from vrsync.synthetic import random_pose
from vrsync.wire import (
    Datagram,
    EventMsg,
    Heartbeat,
    Join,
    JoinAck,
    MsgType,
    ObjectPoseMsg,
    SkeletonFrameMsg,
    Snapshot,
    decode,
    encode,
    payload,
)

from .conftest import DATA


@pytest.fixture
def config(rig):
    return SessionConfig(load_scene_file(DATA / "demo_scene.json"), rig)


def skel(rig, user, seq, ts=0, positions=None):
    joints = (positions or rest_frame(rig, user)).joints
    return encode(Datagram(seq, 0, ts, SkeletonFrameMsg(user, joints)))


def join(srv, addr, user=1):
    srv.receive(encode(Datagram(0, 0, 0, Join(user))), addr)
    return [decode(d) for _, d in srv.flush()]


def test_join_gets_ack_and_cached_snapshot(config):
    srv = Server(config)
    replies = join(srv, "a")
    assert [type(r.body) for r in replies] == [JoinAck, Snapshot]
    assert replies[0].body.client_id == 1 and replies[0].body.tick_rate_hz == 60
    assert replies[1].body == srv.cached_snapshot
    assert len(replies[1].body.objects) == 2
    # a second JOIN from the same address keeps the id
    assert join(srv, "a")[0].body.client_id == 1
    assert srv.stats.clients_joined == 1


def test_late_joiner_gets_current_state(config, rig):
    srv = Server(config)
    srv.receive(skel(rig, 1, 1), "tracker")
    srv.tick()
    snap = join(srv, "late")[1].body
    assert [u.user for u in snap.users] == [1]


def test_stale_skeleton_dropped(config, rig):
    srv = Server(config)
    srv.receive(skel(rig, 1, 10), "tracker")
    srv.receive(skel(rig, 1, 9), "tracker")
    srv.receive(skel(rig, 1, 10), "tracker")
    assert srv.stats.stale_drops == 2
    assert srv.users[1].seq == 10


def test_stale_object_dropped(config):
    srv = Server(config)
    pose = Transform(Vec3(0, 1, 0))
    for seq in (5, 4, 6):
        srv.receive(encode(Datagram(seq, 0, seq, ObjectPoseMsg(1, pose, 0.1, True))), "tracker")
    assert srv.stats.stale_drops == 1
    srv.receive(encode(Datagram(7, 0, 7, ObjectPoseMsg(99, pose, 0.1, True))), "tracker")
    assert srv.stats.unknown_objects == 1


def test_unknown_heartbeat_ignored(config):
    srv = Server(config)
    srv.receive(encode(Datagram(0, 0, 0, Heartbeat())), "stranger")
    assert srv.stats.unknown_heartbeats == 1
    assert srv.clients == {} and srv.flush() == []


def test_decode_errors_counted_per_source(config):
    srv = Server(config)
    srv.receive(b"junk", "x")
    srv.receive(b"MS2", "x")
    srv.receive(bytes(30), "y")
    assert srv.stats.decode_errors == 3
    assert srv.stats.decode_errors_by_source == {"x": 2, "y": 1}


def test_bad_frame_counted(config, rig):
    srv = Server(config)
    joints = list(rest_frame(rig).joints)
    body = SkeletonFrameMsg(1, tuple(joints))
    ok = encode(Datagram(1, 0, 0, body))
    srv.receive(ok, "t")
    assert srv.stats.bad_frames == 0
    srv.ingest(Datagram(2, 0, 0, SkeletonFrameMsg(1, tuple(joints[:24]))), "t")
    assert srv.stats.bad_frames == 1


def test_quiescent_rebroadcast(config):
    srv = Server(config)
    join(srv, "a")
    first = srv.tick()
    second = srv.tick()
    d1, d2 = decode(first[0][1]), decode(second[0][1])
    assert d2.tick == d1.tick + 1
    assert payload(first[0][1]) == payload(second[0][1])
    assert d2.seq == d1.seq + 1


def test_clients_receive_identical_payloads(config, rig):
    srv = Server(config)
    join(srv, "a", 1)
    join(srv, "b", 2)
    rng = np.random.default_rng(1)
    for k in range(5):
        pos = forward_kinematics(rig, random_pose(rig, rng, 1))
        srv.receive(skel(rig, 1, k + 1, positions=frame_from_positions(1, 0, pos)), "tracker")
        out = srv.tick()
        snaps = {addr: data for addr, data in out if decode(data).msg_type is MsgType.SNAPSHOT}
        assert set(snaps) == {"a", "b"}
        assert payload(snaps["a"]) == payload(snaps["b"]) == srv.cached_payload
        assert decode(snaps["a"]).tick == srv.tick_count


def test_client_expires_on_301st_tick(config):
    srv = Server(config)
    join(srv, "a")
    for _ in range(300):
        srv.tick()
    assert "a" in srv.clients
    srv.tick()
    assert "a" not in srv.clients
    assert srv.stats.clients_expired == 1
    assert srv.tick() == []


def test_heartbeat_keeps_client_alive(config):
    srv = Server(config)
    join(srv, "a")
    for i in range(900):
        if i % 100 == 0:
            srv.receive(encode(Datagram(i, 0, 0, Heartbeat())), "a")
        srv.tick()
    assert "a" in srv.clients


def test_events_retransmitted_until_acked(config):
    srv = Server(config)
    join(srv, "a")
    cubes = sorted(srv._by_physical)
    # place cube 1 on cube 2 and hold it there
    for t in range(1, 14):
        for phys, y in zip(cubes, (1.2, 0.9)):
            pose = Transform(Vec3(-0.35, y, 0.5), UnitQuat(1.0, 0.0, 0.0, 0.0))
            srv.receive(encode(Datagram(t, 0, t * 33_333, ObjectPoseMsg(phys, pose, 0.1, True))), "tracker")
        out = srv.tick()
    labels = [e.kind.label for e in srv.event_log]
    assert labels == ["PortalUnlocked", "TRexSpawned"]
    events = [decode(d).body for _, d in out if decode(d).msg_type is MsgType.EVENT]
    assert [e.event_id for e in events] == [1, 2]
    assert srv.cached_snapshot.portal_unlocked
    srv.receive(encode(Datagram(99, 0, 0, Heartbeat(1))), "a")
    out = srv.tick()
    assert [decode(d).body.event_id for _, d in out if isinstance(decode(d).body, EventMsg)] == [2]
    srv.receive(encode(Datagram(100, 0, 0, Heartbeat(2))), "a")
    assert [decode(d).msg_type for _, d in srv.tick()] == [MsgType.SNAPSHOT]


def test_ticks_strictly_increase(config):
    srv = Server(config)
    join(srv, "a")
    ticks = [decode(srv.tick()[0][1]).tick for _ in range(50)]
    assert ticks == list(range(1, 51))


class NullTransport:
    def __init__(self):
        self.sent = []

    def receive(self):
        return []

    def send(self, data, addr):
        self.sent.append((addr, data))


def test_run_without_clients(config):
    t = NullTransport()
    stats = run(config, t, max_ticks=600, realtime=False)
    assert stats.ticks == 600
    assert stats.datagrams_out == 0 and t.sent == []


def test_config_validation(config):
    with pytest.raises(ValueError):
        SessionConfig(config.scene, config.rig, tick_rate_hz=20)
    with pytest.raises(ValueError):
        SessionConfig(config.scene, config.rig, client_timeout_ticks=0)


def test_udp_round_trip(config):
    transport = UdpTransport("127.0.0.1", 0)
    stop = threading.Event()
    th = threading.Thread(target=run, args=(config, transport), kwargs={"stop": stop}, daemon=True)
    th.start()
    sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
    sock.settimeout(5.0)
    try:
        sock.sendto(encode(Datagram(0, 0, 0, Join(1))), transport.address)
        kinds = set()
        while MsgType.SNAPSHOT not in kinds or MsgType.JOIN_ACK not in kinds:
            data, _ = sock.recvfrom(2048)
            kinds.add(decode(data).msg_type)
    finally:
        stop.set()
        th.join(timeout=2.0)
        transport.close()
        sock.close()


def test_demo_events(demo_run, oracles):
    fired = demo_run.server.stats.events_fired
    assert dict(fired) == oracles["pins"]["demo_events_fired"]
    assert fired["PortalUnlocked"] == 1 and fired["TRexSpawned"] == 1
