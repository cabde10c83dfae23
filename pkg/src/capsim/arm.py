"""7-DoF serial arm: D-H forward kinematics, magnet mount, Cartesian servo.

The arm is driven in Cartesian space (velocity commands integrate the magnet
pose directly); joint angles are recovered best-effort with damped
least-squares IK so trajectory records can carry them.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import Pose, quat_exp, quat_from_matrix, quat_multiply, quat_to_matrix


@dataclass(frozen=True)
class DHRow:
    """Classic Denavit-Hartenberg link row: a (m), alpha (rad), d (m), theta offset (rad)."""

    a: float
    alpha: float
    d: float
    theta_offset: float = 0.0


# Publicly documented iiwa 7 R800 geometry: link offsets 0.34/0.4/0.4/0.126 m.
# The arm's real table is configuration, not ground truth; tests derive their
# expectations from whatever table is configured.
DEFAULT_DH_TABLE: tuple[DHRow, ...] = (
    DHRow(0.0, -np.pi / 2, 0.34, 0.0),
    DHRow(0.0, np.pi / 2, 0.0, 0.0),
    DHRow(0.0, np.pi / 2, 0.40, 0.0),
    DHRow(0.0, -np.pi / 2, 0.0, 0.0),
    DHRow(0.0, -np.pi / 2, 0.40, 0.0),
    DHRow(0.0, np.pi / 2, 0.0, 0.0),
    DHRow(0.0, 0.0, 0.126, 0.0),
)

DEFAULT_JOINT_LIMITS = tuple(np.deg2rad([170, 120, 170, 120, 170, 120, 175]))


class JointLimitError(ValueError):
    """A joint angle is outside its configured range."""


@dataclass
class ArmState:
    joints: np.ndarray

    def __post_init__(self):
        self.joints = np.asarray(self.joints, dtype=float).reshape(7)


@dataclass
class MountTransform:
    """Rigid transform from the TCP to the magnet center (37 mm offset)."""

    translation: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 0.037]))
    rotation: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))

    def as_pose(self) -> Pose:
        return Pose(self.translation, self.rotation)


def dh_matrix(row: DHRow, theta: float) -> np.ndarray:
    """Homogeneous transform Rz(theta+offset) Tz(d) Tx(a) Rx(alpha)."""
    th = theta + row.theta_offset
    ct, st = np.cos(th), np.sin(th)
    ca, sa = np.cos(row.alpha), np.sin(row.alpha)
    return np.array(
        [
            [ct, -st * ca, st * sa, row.a * ct],
            [st, ct * ca, -ct * sa, row.a * st],
            [0.0, sa, ca, row.d],
            [0.0, 0.0, 0.0, 1.0],
        ]
    )


def validate_joints(joints: np.ndarray, limits: tuple[float, ...] = DEFAULT_JOINT_LIMITS) -> None:
    joints = np.asarray(joints, dtype=float)
    if joints.shape != (7,):
        raise ValueError(f"expected 7 joint angles, got shape {joints.shape}")
    for i, (q, lim) in enumerate(zip(joints, limits)):
        if not np.isfinite(q) or abs(q) > lim + 1e-12:
            raise JointLimitError(f"joint {i + 1} angle {q:.4f} outside +/-{lim:.4f} rad")


def forward_kinematics(
    dh: tuple[DHRow, ...],
    state: ArmState,
    limits: tuple[float, ...] | None = DEFAULT_JOINT_LIMITS,
) -> Pose:
    """TCP pose: product of the seven D-H link transforms from the base frame."""
    if len(dh) != 7:
        raise ValueError(f"expected a 7-row D-H table, got {len(dh)}")
    if limits is not None:
        validate_joints(state.joints, limits)
    t = np.eye(4)
    for row, theta in zip(dh, state.joints):
        t = t @ dh_matrix(row, theta)
    return Pose(position=t[:3, 3].copy(), orientation=quat_from_matrix(t[:3, :3]))


def magnet_pose(tcp: Pose, mount: MountTransform) -> Pose:
    """Magnet center pose = TCP composed with the rigid mount transform."""
    return tcp.compose(mount.as_pose())


def magnet_moment_vector(pose: Pose, magnitude: float) -> np.ndarray:
    """Magnet moment points along the magnet frame -z (downward at home)."""
    return magnitude * quat_to_matrix(pose.orientation) @ np.array([0.0, 0.0, -1.0])


def orientation_for_moment(direction: np.ndarray) -> np.ndarray:
    """Magnet quaternion whose body -z (the moment) points along `direction`."""
    from .geometry import quat_from_axis_angle

    d = np.asarray(direction, dtype=float)
    d = d / np.linalg.norm(d)
    azimuth = float(np.arctan2(d[1], d[0]))
    elevation = float(np.arcsin(np.clip(d[2], -1.0, 1.0)))
    qz = quat_from_axis_angle(np.array([0.0, 0.0, 1.0]), azimuth + np.pi)
    qy = quat_from_axis_angle(np.array([0.0, 1.0, 0.0]), np.pi / 2.0 + elevation)
    return quat_multiply(qz, qy)


def tcp_from_magnet(magnet: Pose, mount: MountTransform) -> Pose:
    return magnet.compose(mount.as_pose().inverse())


def integrate_velocity_command(
    pose: Pose,
    action: np.ndarray,
    dt: float,
    workspace_min: np.ndarray | None = None,
    workspace_max: np.ndarray | None = None,
) -> Pose:
    """Advance a magnet pose by one velocity command.

    action lays out (dx, dy, dz) in mm/s, (droll, dpitch, dyaw) in rad/s and a
    gripper scalar that the mount ignores. Position integrates linearly; the
    orientation advances by the exponential of the world-frame rates. The
    result is clamped to the configured workspace box.
    """
    if dt <= 0.0:
        raise ValueError(f"dt must be positive, got {dt}")
    action = np.asarray(action, dtype=float)
    if action.shape[-1] != 7 or not np.all(np.isfinite(action)):
        raise ValueError("action must be 7 finite scalars")
    new_pos = pose.position + action[:3] * 1e-3 * dt
    if workspace_min is not None:
        new_pos = np.clip(new_pos, workspace_min, workspace_max)
    dq = quat_exp(action[3:6] * dt)
    return Pose(position=new_pos, orientation=quat_multiply(dq, pose.orientation))


def arm_jacobian(dh: tuple[DHRow, ...], joints: np.ndarray) -> np.ndarray:
    """Geometric Jacobian (6x7): rows are linear then angular TCP velocity."""
    t = np.eye(4)
    origins = [t[:3, 3].copy()]
    axes = [t[:3, 2].copy()]
    for row, theta in zip(dh, joints):
        t = t @ dh_matrix(row, theta)
        origins.append(t[:3, 3].copy())
        axes.append(t[:3, 2].copy())
    p_end = origins[-1]
    jac = np.zeros((6, 7))
    for i in range(7):
        z = axes[i]
        jac[:3, i] = np.cross(z, p_end - origins[i])
        jac[3:, i] = z
    return jac


def damped_ls_ik(
    dh: tuple[DHRow, ...],
    target: Pose,
    initial: ArmState,
    limits: tuple[float, ...] = DEFAULT_JOINT_LIMITS,
    iterations: int = 12,
    damping: float = 0.05,
) -> tuple[ArmState, float]:
    """Best-effort inverse kinematics toward a TCP target.

    Returns the solution state and the residual position error (m). Callers
    flag records when the residual exceeds 1e-3 m; the servo itself never
    depends on IK succeeding.
    """
    q = initial.joints.copy()
    lim = np.asarray(limits)
    for _ in range(iterations):
        current = forward_kinematics(dh, ArmState(q), limits=None)
        err_pos = target.position - current.position
        # orientation error as a rotation vector of target * current^-1
        q_err = quat_multiply(target.orientation, np.array([1, -1, -1, -1]) * current.orientation)
        if q_err[0] < 0:
            q_err = -q_err
        rot_err = 2.0 * q_err[1:]
        err = np.concatenate([err_pos, rot_err])
        if np.linalg.norm(err_pos) < 1e-10:
            break
        jac = arm_jacobian(dh, q)
        jjt = jac @ jac.T + damping**2 * np.eye(6)
        dq = jac.T @ np.linalg.solve(jjt, err)
        q = np.clip(q + dq, -lim, lim)
    final = forward_kinematics(dh, ArmState(q), limits=None)
    residual = float(np.linalg.norm(target.position - final.position))
    return ArmState(q), residual
