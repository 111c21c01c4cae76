import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from vrsync.core import IDENTITY_QUAT, Transform, Vec3, quat_angle, quat_from_axis_angle
from vrsync.errors import ParseError, ValidationError
from vrsync.marker import (
    BehindCamera,
    CameraIntrinsics,
    Degenerate,
    MarkerObservation,
    ObjectPose,
    TrackState,
    TrackerConfig,
    estimate_homography,
    load_camera,
    nearest_rotation,
    observation_from_record,
    observation_to_record,
    pose_from_homography,
    pose_from_marker,
    project_marker,
    project_points,
    track_update,
)
from vrsync.synthetic import random_marker_pose, random_unit_quat

from .conftest import DATA

CAM = CameraIntrinsics(500.0, 500.0, 320.0, 240.0, 640, 480)
VGA = CameraIntrinsics(525.0, 525.0, 319.5, 239.5, 640, 480)


def observe(pose: Transform, edge: float, cam=CAM, noise=None) -> MarkerObservation:
    px = project_marker(pose, edge, cam)
    if noise is not None:
        px = px + noise
    return MarkerObservation(1, 0, tuple((float(u), float(v)) for u, v in px), edge)


def test_identity_homography():
    sq = [[0, 0], [1, 0], [1, 1], [0, 1]]
    H = estimate_homography(sq, sq)
    assert np.allclose(H, np.eye(3) / math.sqrt(3), atol=1e-12)


def test_synthetic_homography_recovered(oracles):
    m = oracles["marker"]
    H = estimate_homography(m["synthetic_plane"], m["synthetic_pixels"])
    ref = np.array(m["synthetic_homography"])
    ref = ref / np.linalg.norm(ref) * np.sign(ref[2, 2])
    assert np.abs(H - ref).max() <= 1e-8


def test_collinear_points_are_degenerate():
    with pytest.raises(Degenerate):
        estimate_homography([[0, 0], [1, 0], [2, 0], [0, 1]], [[0, 0], [1, 0], [2, 0], [0, 1]])
    with pytest.raises(Degenerate):
        estimate_homography([[0, 0], [1, 0], [1, 1]], [[0, 0], [1, 0], [1, 1]])


def test_identity_pose_projection(oracles):
    pose = Transform(Vec3(0, 0, 1))
    px = project_marker(pose, 0.1, CAM)
    assert np.allclose(px, oracles["marker"]["identity_pose_pixels"], atol=1e-12)
    est = pose_from_marker(observe(pose, 0.1), CAM)
    assert est.pose.position.distance(Vec3(0, 0, 1)) <= 1e-4
    assert quat_angle(est.pose.rotation, IDENTITY_QUAT) <= 1e-4
    assert est.valid


def test_principal_point_and_behind_camera():
    assert np.allclose(project_points(Transform(), np.array([[0.0, 0.0, 1.0]]), CAM), [[320, 240]])
    with pytest.raises(BehindCamera):
        project_marker(Transform(Vec3(0, 0, -1)), 0.1, CAM)


def test_noiseless_round_trip():
    rng = np.random.default_rng(5)
    for _ in range(200):
        truth = random_marker_pose(rng, VGA, 0.2)
        est = pose_from_marker(observe(truth, 0.2, VGA), VGA)
        assert quat_angle(est.pose.rotation, truth.rotation) <= 1e-4
        assert est.pose.position.distance(truth.position) <= 1e-4


def test_large_reprojection_error_is_invalid():
    pose = Transform(Vec3(0, 0, 1))
    noise = np.array([[8.0, 0.0], [0.0, 0.0], [-8.0, 6.0], [0.0, -6.0]])
    est = pose_from_marker(observe(pose, 0.1, noise=noise), CAM)
    assert est.reprojection_error > 3.0
    assert not est.valid
    assert est.pose.position.z > 0


@given(st.integers(0, 2**32 - 1), st.floats(0.0, 2.0))
def test_recovered_rotation_is_proper(seed, noise_px):
    rng = np.random.default_rng(seed)
    truth = random_marker_pose(rng, VGA, 0.2)
    obs = observe(truth, 0.2, VGA, rng.normal(0, noise_px, (4, 2)))
    H = estimate_homography([[-0.1, -0.1], [0.1, -0.1], [0.1, 0.1], [-0.1, 0.1]], obs.corners)
    R, t = pose_from_homography(H, VGA)
    assert np.abs(R.T @ R - np.eye(3)).max() <= 1e-9
    assert abs(np.linalg.det(R) - 1.0) <= 1e-9
    assert t[2] > 0


@given(st.lists(st.floats(-3, 3), min_size=9, max_size=9))
def test_nearest_rotation_is_rotation(vals):
    M = np.array(vals).reshape(3, 3)
    if np.linalg.matrix_rank(M) < 3:
        return
    R = nearest_rotation(M)
    assert np.allclose(R.T @ R, np.eye(3), atol=1e-9)
    assert np.linalg.det(R) == pytest.approx(1.0, abs=1e-9)


def op(x, t=0, valid=True, rot=IDENTITY_QUAT):
    return ObjectPose(1, t, Transform(Vec3(x, 0, 1), rot), 0.1, valid)


def test_track_first_pose_passes_through():
    p = op(0.3)
    assert track_update(TrackState(), p) == p


def test_track_jump_is_held():
    st_ = TrackState()
    track_update(st_, op(0.0, 0))
    out = track_update(st_, op(2.0, 1))
    assert not out.valid
    assert out.pose.position == Vec3(0, 0, 1)
    assert out.timestamp_us == 1


def test_track_rotation_jump_is_held():
    st_ = TrackState()
    track_update(st_, op(0.0, 0))
    out = track_update(st_, op(0.0, 1, rot=quat_from_axis_angle(Vec3(0, 1, 0), math.radians(80))))
    assert not out.valid


def test_track_identical_poses_fixed_point():
    st_ = TrackState()
    p = op(0.25, 0, rot=quat_from_axis_angle(Vec3(1, 1, 0).normalized(), 0.4))
    track_update(st_, p)
    assert track_update(st_, p) == p


def test_track_blends():
    st_ = TrackState()
    track_update(st_, op(0.0, 0))
    assert track_update(st_, op(0.1, 1)).pose.position.x == pytest.approx(0.06)


def test_track_reacquires_after_streak():
    cfg = TrackerConfig(reacquire_after=3)
    st_ = TrackState()
    track_update(st_, op(0.0, 0), cfg)
    outs = [track_update(st_, op(2.0, t), cfg) for t in (1, 2, 3)]
    assert [o.valid for o in outs] == [False, False, True]
    assert outs[-1].pose.position.x == 2.0


pose_steps = st.lists(
    st.tuples(st.floats(-3, 3), st.floats(-3, 3), st.floats(0.2, 4), st.integers(0, 2**31), st.booleans()),
    min_size=1, max_size=40,
)


@given(pose_steps, st.sampled_from([None, 2, 15]))
def test_filter_never_amplifies(steps, reacquire):
    cfg = TrackerConfig(reacquire_after=reacquire)
    state = TrackState()
    emitted = None
    for i, (x, y, z, seed, valid) in enumerate(steps):
        rot = random_unit_quat(np.random.default_rng(seed))
        incoming = ObjectPose(1, i, Transform(Vec3(x, y, z), rot), 0.0, valid)
        out = track_update(state, incoming, cfg)
        if emitted is not None:
            moved = out.pose.position.distance(emitted.pose.position)
            assert moved <= incoming.pose.position.distance(emitted.pose.position) + 1e-12
        emitted = out


def test_camera_file_and_observation_records():
    cam = load_camera(DATA / "camera.json")
    assert cam == VGA
    obs = observe(Transform(Vec3(0, 0, 1)), 0.1, VGA)
    assert observation_from_record(observation_to_record(obs), cam) == obs
    with pytest.raises(ValidationError):
        observation_from_record({"marker_id": 1, "timestamp_us": 0, "corners": [[0, 0]] * 3, "edge_m": 0.1})
    with pytest.raises(ValidationError):
        observation_from_record({"marker_id": 1, "timestamp_us": 0, "corners": [[-5, 0]] * 4, "edge_m": 0.1}, cam)
    with pytest.raises(ParseError):
        observation_from_record({"marker_id": 1})
    with pytest.raises(ValidationError):
        CameraIntrinsics(0, 1, 0, 0, 10, 10)
