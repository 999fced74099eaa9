"""SE(3) pose algebra on unit quaternions.

Conventions:
    - Quaternions are (w, x, y, z), unit norm, canonicalized to w >= 0.
    - Poses act by left multiplication of homogeneous 4x4 matrices:
      compose(a, b) corresponds to M(a) @ M(b).
    - Euler angles are intrinsic Z-Y-X (yaw, then pitch, then roll),
      degrees at the type boundary, radians internally.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "Quat",
    "Pose",
    "EulerAngles",
    "PoseError",
    "compose",
    "inverse",
    "relative_label",
    "apply_estimate",
    "quat_to_euler",
    "euler_to_quat",
    "pose_error",
    "rotate_vector",
]

GIMBAL_EPS_DEG = 1e-6


@dataclass(frozen=True)
class Quat:
    """Unit quaternion, components ordered (w, x, y, z)."""

    w: float
    x: float
    y: float
    z: float

    @staticmethod
    def identity() -> "Quat":
        return Quat(1.0, 0.0, 0.0, 0.0)

    def normalized(self) -> "Quat":
        """Unit-norm, sign-canonical (w >= 0) copy."""
        n = math.sqrt(self.w**2 + self.x**2 + self.y**2 + self.z**2)
        if n == 0.0:
            raise ValueError("cannot normalize zero quaternion")
        w, x, y, z = self.w / n, self.x / n, self.y / n, self.z / n
        if w < 0.0:
            w, x, y, z = -w, -x, -y, -z
        return Quat(w, x, y, z)

    def conjugate(self) -> "Quat":
        return Quat(self.w, -self.x, -self.y, -self.z)

    def norm(self) -> float:
        return math.sqrt(self.w**2 + self.x**2 + self.y**2 + self.z**2)

    def multiply(self, other: "Quat") -> "Quat":
        """Hamilton product self * other (not normalized)."""
        w1, x1, y1, z1 = self.w, self.x, self.y, self.z
        w2, x2, y2, z2 = other.w, other.x, other.y, other.z
        return Quat(
            w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
            w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
            w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
            w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
        )

    def to_matrix(self) -> np.ndarray:
        """3x3 rotation matrix."""
        w, x, y, z = self.w, self.x, self.y, self.z
        return np.array(
            [
                [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
                [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
                [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
            ]
        )

    @staticmethod
    def from_matrix(m: np.ndarray) -> "Quat":
        """Quaternion from a 3x3 rotation matrix (Shepperd's method)."""
        m = np.asarray(m, dtype=float)
        t = m[0, 0] + m[1, 1] + m[2, 2]
        if t > 0.0:
            s = math.sqrt(t + 1.0) * 2.0
            q = Quat(
                0.25 * s,
                (m[2, 1] - m[1, 2]) / s,
                (m[0, 2] - m[2, 0]) / s,
                (m[1, 0] - m[0, 1]) / s,
            )
        elif m[0, 0] >= m[1, 1] and m[0, 0] >= m[2, 2]:
            s = math.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2.0
            q = Quat(
                (m[2, 1] - m[1, 2]) / s,
                0.25 * s,
                (m[0, 1] + m[1, 0]) / s,
                (m[0, 2] + m[2, 0]) / s,
            )
        elif m[1, 1] >= m[2, 2]:
            s = math.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2.0
            q = Quat(
                (m[0, 2] - m[2, 0]) / s,
                (m[0, 1] + m[1, 0]) / s,
                0.25 * s,
                (m[1, 2] + m[2, 1]) / s,
            )
        else:
            s = math.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2.0
            q = Quat(
                (m[1, 0] - m[0, 1]) / s,
                (m[0, 2] + m[2, 0]) / s,
                (m[1, 2] + m[2, 1]) / s,
                0.25 * s,
            )
        return q.normalized()

    @staticmethod
    def from_axis_angle(axis, angle_rad: float) -> "Quat":
        ax = np.asarray(axis, dtype=float)
        ax = ax / np.linalg.norm(ax)
        h = 0.5 * angle_rad
        s = math.sin(h)
        return Quat(math.cos(h), s * ax[0], s * ax[1], s * ax[2]).normalized()


@dataclass(frozen=True)
class Pose:
    """Rigid transform: rotation quaternion + translation in meters."""

    rotation: Quat
    translation: tuple

    def __init__(self, rotation: Quat, translation):
        object.__setattr__(self, "rotation", rotation)
        t = tuple(float(v) for v in translation)
        if len(t) != 3:
            raise ValueError("translation must have 3 components")
        object.__setattr__(self, "translation", t)

    @staticmethod
    def identity() -> "Pose":
        return Pose(Quat.identity(), (0.0, 0.0, 0.0))

    @staticmethod
    def from_translation(x: float, y: float, z: float) -> "Pose":
        return Pose(Quat.identity(), (x, y, z))

    def to_matrix(self) -> np.ndarray:
        """Homogeneous 4x4 matrix."""
        m = np.eye(4)
        m[:3, :3] = self.rotation.to_matrix()
        m[:3, 3] = self.translation
        return m

    @staticmethod
    def from_matrix(m: np.ndarray) -> "Pose":
        m = np.asarray(m, dtype=float)
        return Pose(Quat.from_matrix(m[:3, :3]), tuple(m[:3, 3]))

    def to_list(self) -> list:
        """Wire layout: [tx, ty, tz, qw, qx, qy, qz]."""
        q = self.rotation
        t = self.translation
        return [t[0], t[1], t[2], q.w, q.x, q.y, q.z]

    @staticmethod
    def from_list(values) -> "Pose":
        v = [float(x) for x in values]
        if len(v) != 7:
            raise ValueError("pose wire layout needs 7 numbers")
        return Pose(Quat(v[3], v[4], v[5], v[6]).normalized(), (v[0], v[1], v[2]))


@dataclass(frozen=True)
class EulerAngles:
    """Intrinsic Z-Y-X angles in degrees; pitch in [-90, 90]."""

    roll: float
    pitch: float
    yaw: float
    gimbal_lock: bool = False


@dataclass(frozen=True)
class PoseError:
    """Per-axis absolute errors: translation in mm, rotation in degrees."""

    e_x: float
    e_y: float
    e_z: float
    e_roll: float
    e_pitch: float
    e_yaw: float

    def translation_mm(self) -> tuple:
        return (self.e_x, self.e_y, self.e_z)

    def rotation_deg(self) -> tuple:
        return (self.e_roll, self.e_pitch, self.e_yaw)


def rotate_vector(q: Quat, v) -> np.ndarray:
    """Rotate a 3-vector by q."""
    return q.to_matrix() @ np.asarray(v, dtype=float)


def compose(a: Pose, b: Pose) -> Pose:
    """Pose product, M(a) @ M(b); result quaternion normalized and w >= 0."""
    q = a.rotation.multiply(b.rotation).normalized()
    t = rotate_vector(a.rotation, b.translation) + np.asarray(a.translation)
    return Pose(q, tuple(t))


def inverse(p: Pose) -> Pose:
    """Pose inverse: compose(p, inverse(p)) is identity."""
    qi = p.rotation.conjugate().normalized()
    t = -rotate_vector(qi, p.translation)
    return Pose(qi, tuple(t))


def relative_label(t_d2e_a: Pose, t_d2e_b: Pose) -> Pose:
    """Training label between two samples: a composed with inverse(b)."""
    return compose(t_d2e_a, inverse(t_d2e_b))


def apply_estimate(t_delta: Pose, t_test: Pose) -> Pose:
    """Corrected pose after applying a relative estimate to the test pose."""
    return compose(t_delta, t_test)


def euler_to_quat(e: EulerAngles) -> Quat:
    """Quaternion for intrinsic Z-Y-X angles given in degrees."""
    hr = math.radians(e.roll) * 0.5
    hp = math.radians(e.pitch) * 0.5
    hy = math.radians(e.yaw) * 0.5
    qz = Quat(math.cos(hy), 0.0, 0.0, math.sin(hy))
    qy = Quat(math.cos(hp), 0.0, math.sin(hp), 0.0)
    qx = Quat(math.cos(hr), math.sin(hr), 0.0, 0.0)
    return qz.multiply(qy).multiply(qx).normalized()


def quat_to_euler(q: Quat) -> EulerAngles:
    """Intrinsic Z-Y-X angles in degrees for a unit quaternion.

    Near gimbal lock (|pitch| within GIMBAL_EPS_DEG of 90 degrees) the
    roll/yaw split is unobservable; roll is set to 0 and the result is
    flagged.
    """
    q = q.normalized()
    w, x, y, z = q.w, q.x, q.y, q.z
    s = 2.0 * (w * y - z * x)
    s = max(-1.0, min(1.0, s))
    pitch = math.degrees(math.asin(s))
    if 90.0 - abs(pitch) <= GIMBAL_EPS_DEG:
        # only yaw -/+ roll is determined; resolve by setting roll = 0
        if pitch > 0.0:
            yaw = math.degrees(-2.0 * math.atan2(x, w))
        else:
            yaw = math.degrees(2.0 * math.atan2(x, w))
        return EulerAngles(0.0, pitch, yaw, gimbal_lock=True)
    roll = math.degrees(math.atan2(2.0 * (w * x + y * z), 1.0 - 2.0 * (x * x + y * y)))
    yaw = math.degrees(math.atan2(2.0 * (w * z + x * y), 1.0 - 2.0 * (y * y + z * z)))
    return EulerAngles(roll, pitch, yaw)


def pose_error(truth: Pose, estimate: Pose) -> PoseError:
    """Per-axis absolute errors between a truth and an estimated pose.

    Translation errors are component-wise in millimeters. Rotation errors
    are the absolute Euler angles (degrees) of the relative rotation
    inverse(estimate) * truth.
    """
    dt = np.abs(np.asarray(truth.translation) - np.asarray(estimate.translation)) * 1000.0
    rel = estimate.rotation.conjugate().normalized().multiply(truth.rotation).normalized()
    e = quat_to_euler(rel)
    return PoseError(dt[0], dt[1], dt[2], abs(e.roll), abs(e.pitch), abs(e.yaw))
