import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from vrsync.client import (
    Channel,
    ChannelConfig,
    ClientWorld,
    UnknownUser,
    channel_step,
    sample_buffer,
)
from vrsync.core import IDENTITY_QUAT, Transform, Vec3, quat_angle, quat_from_axis_angle
from vrsync.retarget import REST_JOINTS, HEAD
from vrsync.wire import EventMsg, ObjectState, Snapshot, UserState


def obj_snap(x, y=0.0, z=0.0, rot=IDENTITY_QUAT, portal=False):
    return Snapshot(portal, (), (ObjectState(101, Transform(Vec3(x, y, z), rot), True),))


def pos(view, eid=101):
    return view.objects[eid][0].position


def schedule(cfg, n=200):
    ch = Channel(cfg)
    for i in range(n):
        ch.submit(i.to_bytes(4, "little"), "s", "d", i * 16_667)
    return [(d.time_us, d.data) for d in ch.step(10**12)]


def test_lossless_fixed_latency_in_order():
    ch = Channel(ChannelConfig(latency_ms=50))
    for i in range(100):
        ch.submit(bytes([i]), "s", "d", i * 1000)
    got = channel_step(ch, 10**9)
    assert [d.data[0] for d in got] == list(range(100))
    assert all(d.time_us == i * 1000 + 50_000 for i, d in enumerate(got))
    assert ch.step(10**9) == []


def test_loss_half_pinned(oracles):
    ch = Channel(ChannelConfig(latency_ms=10, jitter_ms=5, loss_fraction=0.5, rng_seed=12345))
    for i in range(10_000):
        ch.submit(i.to_bytes(4, "little"), "a", "b", i * 1000)
    n = len(ch.step(10**12))
    assert n == oracles["pins"]["channel_loss_half_seed_12345_delivered"]
    assert 4800 < n < 5200


def test_same_seed_same_schedule():
    cfg = ChannelConfig(latency_ms=100, jitter_ms=20, loss_fraction=0.1, duplication_fraction=0.05, rng_seed=9)
    assert schedule(cfg) == schedule(cfg)
    assert schedule(cfg) != schedule(ChannelConfig(100, 20, 0.1, 0.05, 10))


def test_step_respects_time():
    ch = Channel(ChannelConfig(latency_ms=10))
    ch.submit(b"x", "s", "d", 0)
    assert ch.step(9_999) == []
    assert ch.next_due_us() == 10_000
    assert [d.data for d in ch.step(10_000)] == [b"x"]


@given(st.floats(0, 200), st.floats(0, 50), st.floats(0, 0.99), st.floats(0, 0.99), st.integers(0, 2**64 - 1))
def test_channel_accounting(lat, jit, loss, dup, seed):
    ch = Channel(ChannelConfig(lat, jit, loss, dup, seed))
    for i in range(50):
        ch.submit(bytes([i]), "s", "d", i * 1000)
    got = ch.step(10**12)
    assert len(got) == 50 - ch.lost + ch.duplicated
    assert [d.time_us for d in got] == sorted(d.time_us for d in got)
    for d in got:
        delay_ms = (d.time_us - d.data[0] * 1000) / 1000
        assert max(0.0, lat - jit) - 1e-3 <= delay_ms <= lat + jit + 1e-3


def test_channel_config_rejects_bad_values():
    for bad in ({"loss_fraction": 1.0}, {"duplication_fraction": -0.1}, {"latency_ms": -1}):
        with pytest.raises(ValueError):
            ChannelConfig(**bad)


def test_duplicate_snapshot_ignored():
    w = ClientWorld()
    assert w.apply_snapshot(10, obj_snap(0))
    assert not w.apply_snapshot(10, obj_snap(0))
    assert w.duplicates == 1 and w.applied == 1


def test_snapshot_behind_render_tick_is_stale():
    w = ClientWorld()
    w.apply_snapshot(10, obj_snap(0))
    w.apply_snapshot(12, obj_snap(1))
    w.sample(11.0)
    assert not w.apply_snapshot(11, obj_snap(5))
    assert not w.apply_snapshot(9, obj_snap(5))
    assert w.stale == 2


def test_late_fill_ahead_of_render_clock():
    w = ClientWorld()
    w.apply_snapshot(10, obj_snap(0))
    w.apply_snapshot(14, obj_snap(4))
    w.sample(10.0)
    assert w.apply_snapshot(12, obj_snap(9))
    assert w.late_fills == 1 and w.latest_tick == 14


def test_event_surfaced_once():
    w = ClientWorld()
    e = EventMsg(1, 3, 397, (101, 102))
    out = [w.apply_event(e) for _ in range(5)]
    assert out[0] == [e] and all(o == [] for o in out[1:])
    assert w.surfaced == [e]


def test_events_surface_in_id_order():
    w = ClientWorld()
    e1, e2 = EventMsg(1, 3, 5), EventMsg(2, 4, 5)
    assert w.apply_event(e2) == []
    assert w.apply_event(e1) == [e1, e2]
    assert w.event_hwm == 2


def test_midpoint_interpolation():
    v = sample_buffer({10: obj_snap(0), 12: obj_snap(1)}, 11.0)
    assert pos(v) == Vec3(0.5, 0, 0)


def test_exact_tick_returns_snapshot_pose():
    rot = quat_from_axis_angle(Vec3(0, 1, 0), 0.7)
    v = sample_buffer({10: obj_snap(0), 12: obj_snap(0.3, rot=rot), 14: obj_snap(1)}, 12.0)
    assert v.objects[101][0] == Transform(Vec3(0.3, 0, 0), rot)


def test_extrapolation_capped_at_three_ticks():
    buf = {8: obj_snap(0), 10: obj_snap(1)}
    # 0.5 m per tick beyond tick 10
    assert pos(sample_buffer(buf, 11.0)).x == pytest.approx(1.5)
    assert pos(sample_buffer(buf, 13.0)).x == pytest.approx(2.5)
    assert pos(sample_buffer(buf, 15.0)).x == pytest.approx(2.5)
    assert pos(sample_buffer(buf, 40.0)).x == pytest.approx(2.5)


def test_before_first_snapshot_holds_first():
    assert pos(sample_buffer({10: obj_snap(2)}, 3.0)).x == 2


def test_render_clock_never_moves_backward():
    w = ClientWorld()
    w.apply_snapshot(10, obj_snap(0))
    w.apply_snapshot(12, obj_snap(1))
    w.sample(11.5)
    v = w.sample(10.5)
    assert v.render_tick == 11.5


@given(st.tuples(*[st.floats(-5, 5)] * 6), st.integers(1, 6), st.floats(0, 1), st.floats(0, 1))
def test_sample_is_continuous(coords, gap, a, b):
    p0, p1 = Vec3(*coords[:3]), Vec3(*coords[3:])
    r0 = quat_from_axis_angle(Vec3(0, 1, 0), coords[0])
    r1 = quat_from_axis_angle(Vec3(1, 0, 0), coords[1])
    buf = {
        10: Snapshot(False, (), (ObjectState(101, Transform(p0, r0), True),)),
        10 + gap: Snapshot(False, (), (ObjectState(101, Transform(p1, r1), True),)),
    }
    ta, tb = sorted((10 + a * gap, 10 + b * gap))
    va, vb = sample_buffer(buf, ta), sample_buffer(buf, tb)
    delta = p0.distance(p1)
    assert pos(va).distance(p0) <= delta + 1e-9
    assert pos(va).distance(pos(vb)) <= delta * (tb - ta) / gap + 1e-9
    assert quat_angle(va.objects[101][0].rotation, vb.objects[101][0].rotation) <= quat_angle(r0, r1) + 1e-6


def user_world(rig, root):
    w = ClientWorld(rig=rig)
    w.apply_snapshot(1, Snapshot(False, (UserState(1, root, (IDENTITY_QUAT,) * len(rig.bones)),)))
    w.sample(1.0)
    return w


def test_view_pose_uses_head_and_hmd(rig):
    root = Vec3(0.0, 0.0, 0.0)
    w = user_world(rig, root)
    head = REST_JOINTS[HEAD] - REST_JOINTS[0]
    assert w.view_pose(1, IDENTITY_QUAT) == Transform(head, IDENTITY_QUAT)
    yaw = quat_from_axis_angle(Vec3(0, 1, 0), math.pi / 2)
    vp = w.view_pose(1, yaw)
    assert vp.position == head and vp.rotation == yaw


def test_view_pose_head_at_example_height(rig):
    root = Vec3(0.0, 1.7, 0.0) - (REST_JOINTS[HEAD] - REST_JOINTS[0])
    vp = user_world(rig, root).view_pose(1, IDENTITY_QUAT)
    assert vp.position.distance(Vec3(0, 1.7, 0)) <= 1e-12


def test_view_pose_unknown_user(rig):
    w = user_world(rig, Vec3(0, 0, 0))
    with pytest.raises(UnknownUser):
        w.view_pose(2, IDENTITY_QUAT)
    with pytest.raises(UnknownUser):
        ClientWorld(rig=rig).view_pose(1, IDENTITY_QUAT)


@given(st.lists(st.tuples(st.integers(0, 60), st.floats(0, 3)), max_size=80))
def test_applied_ticks_strictly_increase(events):
    w = ClientWorld()
    applied = []
    for tick, advance in events:
        if w.apply_snapshot(tick, obj_snap(tick)) and tick == w.latest_tick:
            applied.append(tick)
        target = w.target_render_tick()
        if target is not None:
            w.sample(target + advance)
    assert applied == sorted(set(applied))
    assert len(applied) == len(set(applied))


def test_latest_payload_matches_encoding():
    from vrsync.wire import encode_body

    w = ClientWorld()
    s = obj_snap(0.25, portal=True)
    w.apply_snapshot(3, s)
    assert w.latest_payload == encode_body(s)
    assert w.target_render_tick() == 1.0
