"""Geometric primitives shared by every module.

Conventions: right-handed, +Y up, meters. Quaternions are (w, x, y, z) and are
kept in canonical sign (w >= 0) after every normalization so that two
encodings of the same rotation compare bit-for-bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple


class ZeroVector(ValueError):
    """A direction was requested from a vector of (near) zero length."""


class Vec3(NamedTuple):
    x: float
    y: float
    z: float

    def __add__(self, o: Vec3) -> Vec3:  # type: ignore[override]
        return Vec3(self.x + o.x, self.y + o.y, self.z + o.z)

    def __sub__(self, o: Vec3) -> Vec3:
        return Vec3(self.x - o.x, self.y - o.y, self.z - o.z)

    def __neg__(self) -> Vec3:
        return Vec3(-self.x, -self.y, -self.z)

    def scale(self, s: float) -> Vec3:
        return Vec3(self.x * s, self.y * s, self.z * s)

    def dot(self, o: Vec3) -> float:
        return self.x * o.x + self.y * o.y + self.z * o.z

    def cross(self, o: Vec3) -> Vec3:
        return Vec3(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )

    def norm(self) -> float:
        return math.sqrt(self.x * self.x + self.y * self.y + self.z * self.z)

    def normalized(self) -> Vec3:
        n = self.norm()
        if n < 1e-8:
            raise ZeroVector(f"cannot normalize {self!r}")
        return Vec3(self.x / n, self.y / n, self.z / n)

    def distance(self, o: Vec3) -> float:
        return (self - o).norm()

    def lerp(self, o: Vec3, t: float) -> Vec3:
        return Vec3(
            self.x + (o.x - self.x) * t,
            self.y + (o.y - self.y) * t,
            self.z + (o.z - self.z) * t,
        )

    def is_finite(self) -> bool:
        return math.isfinite(self.x) and math.isfinite(self.y) and math.isfinite(self.z)


ZERO = Vec3(0.0, 0.0, 0.0)


class UnitQuat(NamedTuple):
    w: float
    x: float
    y: float
    z: float

    def __mul__(self, o: UnitQuat) -> UnitQuat:  # type: ignore[override]
        """Hamilton product; not renormalized (call ``normalized`` when needed)."""
        aw, ax, ay, az = self
        bw, bx, by, bz = o
        return UnitQuat(
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        )

    def conj(self) -> UnitQuat:
        return UnitQuat(self.w, -self.x, -self.y, -self.z)

    def norm(self) -> float:
        return math.sqrt(self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z)

    def normalized(self) -> UnitQuat:
        return canonical(self)

    def rotate(self, v: Vec3) -> Vec3:
        # v' = v + 2w(u x v) + 2u x (u x v), u = vector part
        w, x, y, z = self
        tx = 2.0 * (y * v.z - z * v.y)
        ty = 2.0 * (z * v.x - x * v.z)
        tz = 2.0 * (x * v.y - y * v.x)
        return Vec3(
            v.x + w * tx + (y * tz - z * ty),
            v.y + w * ty + (z * tx - x * tz),
            v.z + w * tz + (x * ty - y * tx),
        )

    def dot(self, o: UnitQuat) -> float:
        return self.w * o.w + self.x * o.x + self.y * o.y + self.z * o.z

    def is_finite(self) -> bool:
        return all(math.isfinite(c) for c in self)


IDENTITY_QUAT = UnitQuat(1.0, 0.0, 0.0, 0.0)


def canonical(q: UnitQuat | tuple[float, float, float, float]) -> UnitQuat:
    """Normalize ``q`` and pick the sign with w >= 0.

    For w == 0 the first non-zero vector component is made positive so the
    representation stays unique.
    """
    w, x, y, z = q
    n = math.sqrt(w * w + x * x + y * y + z * z)
    if n < 1e-12 or not math.isfinite(n):
        raise ValueError(f"cannot normalize quaternion {tuple(q)!r}")
    w, x, y, z = w / n, x / n, y / n, z / n
    flip = w < 0.0
    if w == 0.0:
        for c in (x, y, z):
            if c != 0.0:
                flip = c < 0.0
                break
    if flip:
        return UnitQuat(-w + 0.0, -x + 0.0, -y + 0.0, -z + 0.0)
    return UnitQuat(w + 0.0, x + 0.0, y + 0.0, z + 0.0)


def quat_from_axis_angle(axis: Vec3, angle: float) -> UnitQuat:
    a = Vec3(*axis).normalized()
    s = math.sin(angle / 2.0)
    return canonical((math.cos(angle / 2.0), a.x * s, a.y * s, a.z * s))


def quat_angle(a: UnitQuat, b: UnitQuat) -> float:
    """Rotation angle (rad) taking ``a`` to ``b``; in [0, pi]."""
    d = min(1.0, abs(a.dot(b)))
    return 2.0 * math.acos(d)


def nlerp(a: UnitQuat, b: UnitQuat, t: float) -> UnitQuat:
    """Normalized linear blend toward ``b`` by weight ``t``, nearest hemisphere."""
    if a == b:
        return a
    if a.dot(b) < 0.0:
        b = UnitQuat(-b.w, -b.x, -b.y, -b.z)
    s = 1.0 - t
    return canonical((
        s * a.w + t * b.w,
        s * a.x + t * b.x,
        s * a.y + t * b.y,
        s * a.z + t * b.z,
    ))


def quat_to_matrix(q: UnitQuat) -> list[list[float]]:
    w, x, y, z = q
    return [
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ]


def quat_from_matrix(m) -> UnitQuat:
    """Rotation matrix (any 3x3 indexable) to quaternion, Shepperd's method."""
    m00, m01, m02 = float(m[0][0]), float(m[0][1]), float(m[0][2])
    m10, m11, m12 = float(m[1][0]), float(m[1][1]), float(m[1][2])
    m20, m21, m22 = float(m[2][0]), float(m[2][1]), float(m[2][2])
    tr = m00 + m11 + m22
    if tr > 0.0:
        s = math.sqrt(tr + 1.0) * 2.0
        q = (0.25 * s, (m21 - m12) / s, (m02 - m20) / s, (m10 - m01) / s)
    elif m00 > m11 and m00 > m22:
        s = math.sqrt(1.0 + m00 - m11 - m22) * 2.0
        q = ((m21 - m12) / s, 0.25 * s, (m01 + m10) / s, (m02 + m20) / s)
    elif m11 > m22:
        s = math.sqrt(1.0 + m11 - m00 - m22) * 2.0
        q = ((m02 - m20) / s, (m01 + m10) / s, 0.25 * s, (m12 + m21) / s)
    else:
        s = math.sqrt(1.0 + m22 - m00 - m11) * 2.0
        q = ((m10 - m01) / s, (m02 + m20) / s, (m12 + m21) / s, 0.25 * s)
    return canonical(q)


def yaw_quat(yaw_deg: float) -> UnitQuat:
    """Rotation about +Y."""
    h = math.radians(yaw_deg) / 2.0
    return canonical((math.cos(h), 0.0, math.sin(h), 0.0))


def quat_yaw_deg(q: UnitQuat) -> float:
    """Yaw (deg) of a pure rotation about +Y; inverse of ``yaw_quat``."""
    return math.degrees(2.0 * math.atan2(q.y, q.w))


@dataclass(frozen=True, slots=True)
class Transform:
    position: Vec3 = ZERO
    rotation: UnitQuat = IDENTITY_QUAT

    def apply(self, p: Vec3) -> Vec3:
        return self.rotation.rotate(p) + self.position

    def is_valid(self) -> bool:
        return (
            self.position.is_finite()
            and self.rotation.is_finite()
            and abs(self.rotation.norm() - 1.0) <= 1e-6
        )


IDENTITY = Transform()


def transform_compose(a: Transform, b: Transform) -> Transform:
    """``a ∘ b``: applies ``b`` first, then ``a``."""
    return Transform(
        a.rotation.rotate(b.position) + a.position,
        canonical(a.rotation * b.rotation),
    )


def transform_inverse(t: Transform) -> Transform:
    inv = t.rotation.conj()
    return Transform(-inv.rotate(t.position), canonical(inv))


def shortest_arc(src: Vec3, dst: Vec3) -> UnitQuat:
    """Minimal rotation taking direction ``src`` onto ``dst``.

    Uses the half-vector construction, which stays accurate right up to the
    antiparallel case. Exactly opposite inputs rotate 180° about
    ``cross(src, X)`` (or ``cross(src, Y)`` when ``|src.x| >= 0.9``).
    """
    return shortest_arc_unit(Vec3(*src).normalized(), Vec3(*dst).normalized())


def shortest_arc_unit(u: Vec3, v: Vec3) -> UnitQuat:
    """``shortest_arc`` for inputs already known to be unit length."""
    h = u + v
    hn = h.norm()
    if hn < 1e-12:
        ref = Vec3(1.0, 0.0, 0.0) if abs(u.x) < 0.9 else Vec3(0.0, 1.0, 0.0)
        axis = u.cross(ref).normalized()
        return canonical((0.0, axis.x, axis.y, axis.z))
    h = h.scale(1.0 / hn)
    c = u.cross(h)
    return canonical((u.dot(h), c.x, c.y, c.z))

