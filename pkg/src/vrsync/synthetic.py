"""Random poses and observations for oracle tests and Monte-Carlo studies."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import Transform, UnitQuat, Vec3, canonical, quat_angle, quat_from_axis_angle
from .marker import BehindCamera, CameraIntrinsics, MarkerObservation, pose_from_marker, project_marker
from .retarget import BoneOrientationSet, RigDefinition


def random_unit_quat(rng: np.random.Generator) -> UnitQuat:
    """Uniform over rotations (normalized 4-D Gaussian)."""
    while True:
        q = rng.normal(size=4)
        if np.linalg.norm(q) > 1e-6:
            return canonical(tuple(float(c) for c in q))


def random_pose(rig: RigDefinition, rng: np.random.Generator, user: int = 0) -> BoneOrientationSet:
    root = Vec3(*(float(c) for c in rng.uniform(-2.0, 2.0, 3)))
    rots = tuple(random_unit_quat(rng) for _ in rig.bones)
    return BoneOrientationSet(user, 0, root, rots)


def random_marker_pose(
    rng: np.random.Generator,
    cam: CameraIntrinsics,
    edge: float,
    depth: tuple[float, float] = (0.5, 3.0),
    max_tilt_deg: float = 70.0,
) -> Transform:
    """Marker pose facing the camera with every corner inside the image.

    Tilt is the angle between the marker normal and the optical axis.
    """
    while True:
        z = float(rng.uniform(*depth))
        spin = quat_from_axis_angle(Vec3(0.0, 0.0, 1.0), float(rng.uniform(0.0, 2 * math.pi)))
        phi = float(rng.uniform(0.0, 2 * math.pi))
        tilt = math.radians(float(rng.uniform(0.0, max_tilt_deg)))
        axis = Vec3(math.cos(phi), math.sin(phi), 0.0)
        rot = canonical(quat_from_axis_angle(axis, tilt) * spin) if tilt > 0 else spin
        u = float(rng.uniform(0.15, 0.85)) * cam.width
        v = float(rng.uniform(0.15, 0.85)) * cam.height
        pose = Transform(Vec3((u - cam.cx) * z / cam.fx, (v - cam.cy) * z / cam.fy, z), rot)
        try:
            px = project_marker(pose, edge, cam)
        except BehindCamera:
            continue
        if np.all(px[:, 0] >= 0) and np.all(px[:, 0] <= cam.width) and np.all(px[:, 1] >= 0) and np.all(px[:, 1] <= cam.height):
            return pose


@dataclass(frozen=True)
class NoiseTrial:
    rotation_err_deg: float
    translation_err_frac: float


def marker_noise_trial(
    rng: np.random.Generator, cam: CameraIntrinsics, edge: float, noise_px: float,
    depth: tuple[float, float], max_tilt_deg: float = 70.0,
) -> NoiseTrial:
    truth = random_marker_pose(rng, cam, edge, depth, max_tilt_deg)
    px = project_marker(truth, edge, cam) + rng.normal(0.0, noise_px, (4, 2))
    obs = MarkerObservation(0, 0, tuple((float(a), float(b)) for a, b in px), edge)
    est = pose_from_marker(obs, cam)
    return NoiseTrial(
        math.degrees(quat_angle(est.pose.rotation, truth.rotation)),
        est.pose.position.distance(truth.position) / truth.position.z,
    )


def marker_noise_medians(
    n: int, seed: int, cam: CameraIntrinsics, edge: float, noise_px: float,
    depth: tuple[float, float], max_tilt_deg: float = 70.0,
) -> tuple[float, float]:
    """Median rotation error (deg) and median translation error (fraction of depth)."""
    rng = np.random.default_rng(seed)
    trials = [marker_noise_trial(rng, cam, edge, noise_px, depth, max_tilt_deg) for _ in range(n)]
    return (
        float(np.median([t.rotation_err_deg for t in trials])),
        float(np.median([t.translation_err_frac for t in trials])),
    )
