"""Quaternion and rigid-pose helpers shared across the simulator.

Quaternions are stored as (w, x, y, z) numpy arrays and kept unit-norm.
All functions are pure and operate on float64.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

QUAT_IDENTITY = np.array([1.0, 0.0, 0.0, 0.0])


def quat_normalize(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    n = np.linalg.norm(q)
    if n == 0.0 or not np.isfinite(n):
        raise ValueError("cannot normalize zero or non-finite quaternion")
    return q / n


def quat_multiply(q1: np.ndarray, q2: np.ndarray) -> np.ndarray:
    """Hamilton product q1 * q2 (apply q2 first, then q1)."""
    w1, x1, y1, z1 = q1
    w2, x2, y2, z2 = q2
    return np.array(
        [
            w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
            w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
            w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
            w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
        ]
    )


def quat_conjugate(q: np.ndarray) -> np.ndarray:
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_rotate(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Rotate vector v by unit quaternion q."""
    w = q[0]
    u = q[1:]
    v = np.asarray(v, dtype=float)
    # Rodrigues form of q v q*
    return v + 2.0 * np.cross(u, np.cross(u, v) + w * v)


def quat_from_axis_angle(axis: np.ndarray, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=float)
    n = np.linalg.norm(axis)
    if n == 0.0:
        return QUAT_IDENTITY.copy()
    half = 0.5 * angle
    return np.concatenate([[np.cos(half)], np.sin(half) * axis / n])


def quat_exp(rotvec: np.ndarray) -> np.ndarray:
    """Exponential map: rotation vector (axis * angle) to quaternion."""
    rotvec = np.asarray(rotvec, dtype=float)
    angle = np.linalg.norm(rotvec)
    if angle < 1e-12:
        # first-order expansion keeps the map smooth near zero
        q = np.concatenate([[1.0], 0.5 * rotvec])
        return quat_normalize(q)
    return quat_from_axis_angle(rotvec, angle)


def quat_log(q: np.ndarray) -> np.ndarray:
    """Inverse of quat_exp: unit quaternion to rotation vector."""
    q = np.asarray(q, dtype=float)
    if q[0] < 0.0:
        q = -q
    w = min(1.0, max(-1.0, q[0]))
    s = np.linalg.norm(q[1:])
    if s < 1e-12:
        return 2.0 * q[1:]
    angle = 2.0 * np.arctan2(s, w)
    return angle * q[1:] / s


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def quat_from_matrix(m: np.ndarray) -> np.ndarray:
    """Shepperd's method, numerically stable for all rotation matrices."""
    m = np.asarray(m, dtype=float)
    t = np.trace(m)
    if t > 0:
        s = np.sqrt(t + 1.0) * 2.0
        q = np.array(
            [0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s]
        )
    elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
        s = np.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2.0
        q = np.array(
            [(m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s]
        )
    elif m[1, 1] > m[2, 2]:
        s = np.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2.0
        q = np.array(
            [(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s]
        )
    else:
        s = np.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2.0
        q = np.array(
            [(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s]
        )
    return quat_normalize(q)


@dataclass
class Pose:
    """Rigid pose: position in meters plus a unit orientation quaternion."""

    position: np.ndarray = field(default_factory=lambda: np.zeros(3))
    orientation: np.ndarray = field(default_factory=lambda: QUAT_IDENTITY.copy())

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float).reshape(3)
        self.orientation = np.asarray(self.orientation, dtype=float).reshape(4)
        n = np.linalg.norm(self.orientation)
        if abs(n - 1.0) > 1e-9:
            if n == 0.0 or not np.isfinite(n):
                raise ValueError("pose orientation must be a unit quaternion")
            self.orientation = self.orientation / n

    def compose(self, other: "Pose") -> "Pose":
        """self then other expressed in self's frame (self * other)."""
        return Pose(
            position=self.position + quat_rotate(self.orientation, other.position),
            orientation=quat_multiply(self.orientation, other.orientation),
        )

    def inverse(self) -> "Pose":
        q_inv = quat_conjugate(self.orientation)
        return Pose(position=-quat_rotate(q_inv, self.position), orientation=q_inv)

    def transform_point(self, p: np.ndarray) -> np.ndarray:
        return self.position + quat_rotate(self.orientation, np.asarray(p, dtype=float))

    def copy(self) -> "Pose":
        return Pose(self.position.copy(), self.orientation.copy())

    def as_vector(self) -> np.ndarray:
        """Flat (x, y, z, qw, qx, qy, qz) layout used in records and proprio."""
        return np.concatenate([self.position, self.orientation])

    @staticmethod
    def from_vector(v: np.ndarray) -> "Pose":
        v = np.asarray(v, dtype=float).reshape(7)
        return Pose(v[:3], v[3:])

    @staticmethod
    def identity() -> "Pose":
        return Pose()


def yaw_of_axis(axis: np.ndarray, fallback: float = 0.0) -> float:
    """Azimuth of a direction vector in the xy plane; fallback when vertical."""
    x, y = axis[0], axis[1]
    if x * x + y * y < 1e-16:
        return fallback
    return float(np.arctan2(y, x))


def pitch_of_axis(axis: np.ndarray) -> float:
    """Elevation of a direction vector above the xy plane, in radians."""
    n = np.linalg.norm(axis)
    if n == 0.0:
        return 0.0
    return float(np.arcsin(np.clip(axis[2] / n, -1.0, 1.0)))


def unwrap_angle(prev_unwrapped: float, new_wrapped: float) -> float:
    """Continue an unwrapped angle series with a new wrapped sample."""
    two_pi = 2.0 * np.pi
    delta = (new_wrapped - prev_unwrapped) % two_pi
    if delta > np.pi:
        delta -= two_pi
    return prev_unwrapped + delta
