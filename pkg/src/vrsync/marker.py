"""Planar square marker pose from four image corners, plus a per-entity pose filter.

Camera frame: x right, y down, z forward. The marker lies in its own z = 0
plane with corners ordered from (-s/2, -s/2) through (s/2, -s/2), (s/2, s/2),
(-s/2, s/2).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Iterable, Iterator, Sequence

import numpy as np

from .core import Transform, Vec3, nlerp, quat_angle, quat_from_matrix, quat_to_matrix
from .errors import ParseError, ValidationError


class Degenerate(ValueError):
    """Correspondences do not determine a homography (collinear or too few points)."""


class BehindCamera(ValueError):
    pass


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self) -> None:
        if not (self.fx > 0 and self.fy > 0):
            raise ValidationError("focal length", "fx and fy must be positive")
        if not (0 <= self.cx <= self.width and 0 <= self.cy <= self.height):
            raise ValidationError("principal point", "must lie inside the image")

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])


@dataclass(frozen=True)
class MarkerObservation:
    marker_id: int
    timestamp_us: int
    corners: tuple[tuple[float, float], ...]
    edge_m: float


@dataclass(frozen=True)
class ObjectPose:
    entity: int
    timestamp_us: int
    pose: Transform
    reprojection_error: float = 0.0
    valid: bool = True


@dataclass(frozen=True)
class TrackerConfig:
    max_reprojection_px: float = 3.0
    max_jump_m: float = 0.5
    max_jump_deg: float = 60.0
    alpha: float = 0.6
    # consecutive rejections before the filter re-locks onto the incoming stream
    reacquire_after: int | None = 15


def marker_corners(s: float) -> np.ndarray:
    h = s / 2.0
    return np.array([[-h, -h], [h, -h], [h, h], [-h, h]])


def _normalizer(pts: np.ndarray) -> np.ndarray:
    c = pts.mean(axis=0)
    d = np.sqrt(((pts - c) ** 2).sum(axis=1)).mean()
    if d < 1e-12:
        raise Degenerate("points coincide")
    s = math.sqrt(2.0) / d
    return np.array([[s, 0.0, -s * c[0]], [0.0, s, -s * c[1]], [0.0, 0.0, 1.0]])


def estimate_homography(plane_pts: Sequence[Sequence[float]], pixels: Sequence[Sequence[float]]) -> np.ndarray:
    """Normalized DLT: plane (x, y) -> pixel (u, v).

    Returns H with unit Frobenius norm and H[2, 2] >= 0.
    """
    X = np.asarray(plane_pts, dtype=float)
    U = np.asarray(pixels, dtype=float)
    if X.shape != U.shape or X.ndim != 2 or X.shape[1] != 2:
        raise ValueError("expected two (n, 2) arrays")
    n = X.shape[0]
    if n < 4:
        raise Degenerate(f"need at least 4 correspondences, got {n}")

    Tx, Tu = _normalizer(X), _normalizer(U)
    Xn = (Tx @ np.column_stack([X, np.ones(n)]).T).T
    Un = (Tu @ np.column_stack([U, np.ones(n)]).T).T

    A = np.zeros((2 * n, 9))
    for i in range(n):
        x, y, w = Xn[i]
        u, v, _ = Un[i]
        A[2 * i] = [0, 0, 0, -x, -y, -w, v * x, v * y, v * w]
        A[2 * i + 1] = [x, y, w, 0, 0, 0, -u * x, -u * y, -u * w]
    _, sv, Vt = np.linalg.svd(A)
    # the solution must be the only null direction
    if sv[7] <= 1e-9 * sv[0]:
        raise Degenerate("design matrix is rank deficient (collinear points?)")
    Hn = Vt[-1].reshape(3, 3)
    H = np.linalg.inv(Tu) @ Hn @ Tx
    H /= np.linalg.norm(H)
    if H[2, 2] < 0:
        H = -H
    return H


def nearest_rotation(M: np.ndarray) -> np.ndarray:
    """Closest proper rotation to ``M`` in the Frobenius sense."""
    U, _, Vt = np.linalg.svd(M)
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(U @ Vt))])
    return U @ D @ Vt


def project_points(pose: Transform, pts3: np.ndarray, cam: CameraIntrinsics) -> np.ndarray:
    R = np.array(quat_to_matrix(pose.rotation))
    P = pts3 @ R.T + np.array(pose.position)
    if np.any(P[:, 2] <= 0):
        raise BehindCamera("point at or behind the camera plane")
    u = cam.fx * P[:, 0] / P[:, 2] + cam.cx
    v = cam.fy * P[:, 1] / P[:, 2] + cam.cy
    return np.column_stack([u, v])


def project_marker(pose: Transform, s: float, cam: CameraIntrinsics) -> np.ndarray:
    """Pinhole image of the four marker corners, (4, 2) pixels."""
    pts = np.column_stack([marker_corners(s), np.zeros(4)])
    return project_points(pose, pts, cam)


def pose_from_homography(H: np.ndarray, cam: CameraIntrinsics) -> tuple[np.ndarray, np.ndarray]:
    M = np.linalg.solve(cam.K, H)
    m1, m2, m3 = M[:, 0], M[:, 1], M[:, 2]
    lam = 2.0 / (np.linalg.norm(m1) + np.linalg.norm(m2))
    # marker must sit in front of the camera
    if m3[2] < 0:
        lam = -lam
    r1, r2 = lam * m1, lam * m2
    R = nearest_rotation(np.column_stack([r1, r2, np.cross(r1, r2)]))
    return R, lam * m3


def pose_from_marker(
    obs: MarkerObservation, cam: CameraIntrinsics, config: TrackerConfig = TrackerConfig()
) -> ObjectPose:
    corners = np.asarray(obs.corners, dtype=float)
    H = estimate_homography(marker_corners(obs.edge_m), corners)
    R, t = pose_from_homography(H, cam)
    pose = Transform(Vec3(*map(float, t)), quat_from_matrix(R))
    try:
        reproj = project_marker(pose, obs.edge_m, cam)
        err = float(np.sqrt(((reproj - corners) ** 2).sum(axis=1).mean()))
    except BehindCamera:
        err = math.inf
    valid = err <= config.max_reprojection_px and pose.position.z > 0
    return ObjectPose(obs.marker_id, obs.timestamp_us, pose, err, valid)


def rotation_error_rad(a: Transform, b: Transform) -> float:
    return quat_angle(a.rotation, b.rotation)


# -- temporal filter -------------------------------------------------------------

@dataclass
class TrackState:
    last: ObjectPose | None = None
    rejected_streak: int = 0


def track_update(state: TrackState, pose: ObjectPose, config: TrackerConfig = TrackerConfig()) -> ObjectPose:
    """Gate and smooth one entity's pose stream; mutates ``state``."""
    prev = state.last
    if prev is None:
        if pose.valid:
            state.last = pose
        return pose

    reject = not pose.valid
    if not reject:
        jump = pose.pose.position.distance(prev.pose.position)
        turn = math.degrees(quat_angle(pose.pose.rotation, prev.pose.rotation))
        reject = jump > config.max_jump_m or turn > config.max_jump_deg
        if reject and config.reacquire_after is not None and state.rejected_streak + 1 >= config.reacquire_after:
            state.rejected_streak = 0
            state.last = pose
            return pose
    if reject:
        if pose.valid:
            state.rejected_streak += 1
        return replace(prev, timestamp_us=pose.timestamp_us, valid=False)

    state.rejected_streak = 0
    a = config.alpha
    out = ObjectPose(
        pose.entity,
        pose.timestamp_us,
        Transform(
            prev.pose.position.lerp(pose.pose.position, a),
            nlerp(prev.pose.rotation, pose.pose.rotation, a),
        ),
        pose.reprojection_error,
        True,
    )
    state.last = out
    return out


# -- file formats -------------------------------------------------------------------

def camera_from_doc(doc: Any) -> CameraIntrinsics:
    try:
        return CameraIntrinsics(
            float(doc["fx"]), float(doc["fy"]), float(doc["cx"]), float(doc["cy"]),
            int(doc["width"]), int(doc["height"]),
        )
    except (KeyError, TypeError, ValueError) as e:
        if isinstance(e, ValidationError):
            raise
        raise ParseError(f"camera document: {e!r}") from e


def load_camera(path: str | Path) -> CameraIntrinsics:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise ParseError(f"camera document is not valid JSON: {e}") from e
    return camera_from_doc(doc)


def observation_from_record(rec: Any, cam: CameraIntrinsics | None = None) -> MarkerObservation:
    try:
        corners = tuple((float(c[0]), float(c[1])) for c in rec["corners"])
        obs = MarkerObservation(int(rec["marker_id"]), int(rec["timestamp_us"]), corners, float(rec["edge_m"]))
    except (KeyError, TypeError, ValueError, IndexError) as e:
        raise ParseError(f"observation record: {e!r}") from e
    if len(obs.corners) != 4:
        raise ValidationError("corner count", f"marker {obs.marker_id} has {len(obs.corners)} corners")
    if not obs.edge_m > 0:
        raise ValidationError("marker edge", f"marker {obs.marker_id}")
    if cam is not None:
        for u, v in obs.corners:
            if not (0 <= u <= cam.width and 0 <= v <= cam.height):
                raise ValidationError("corner in image", f"marker {obs.marker_id} at t={obs.timestamp_us}")
    return obs


def observation_to_record(obs: MarkerObservation) -> dict:
    return {
        "marker_id": obs.marker_id,
        "timestamp_us": obs.timestamp_us,
        "corners": [list(c) for c in obs.corners],
        "edge_m": obs.edge_m,
    }


def read_observations(lines: Iterable[str], cam: CameraIntrinsics | None = None) -> Iterator[MarkerObservation]:
    for n, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as e:
            raise ParseError(f"observation line {n}: {e}") from e
        yield observation_from_record(rec, cam)


def load_observations(path: str | Path, cam: CameraIntrinsics | None = None) -> list[MarkerObservation]:
    with open(path) as f:
        return list(read_observations(f, cam))


def object_pose_to_record(p: ObjectPose) -> dict:
    return {
        "entity": p.entity,
        "timestamp_us": p.timestamp_us,
        "pos": list(p.pose.position),
        "rot": list(p.pose.rotation),
        "reprojection_error": p.reprojection_error,
        "valid": p.valid,
    }
