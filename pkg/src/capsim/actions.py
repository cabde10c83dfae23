"""The 7-D action vector and chunk containers shared across the stack.

Layout: (dx, dy, dz) translational velocity in mm/s, (droll, dpitch, dyaw)
rotational velocity in rad/s, and a normalized gripper signal in [0, 1].
The gripper is carried end to end but stays 1.0 in all demos; the magnet
mount has nothing to actuate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import WorkspaceConfig

ACTION_DIM = 7


@dataclass
class Action:
    dx: float = 0.0
    dy: float = 0.0
    dz: float = 0.0
    droll: float = 0.0
    dpitch: float = 0.0
    dyaw: float = 0.0
    gripper: float = 1.0

    def __post_init__(self):
        values = self.as_array()
        if not np.all(np.isfinite(values)):
            raise ValueError("action components must be finite")
        if not 0.0 <= self.gripper <= 1.0:
            raise ValueError(f"gripper must lie in [0, 1], got {self.gripper}")

    def as_array(self) -> np.ndarray:
        return np.array(
            [self.dx, self.dy, self.dz, self.droll, self.dpitch, self.dyaw, self.gripper]
        )

    @staticmethod
    def from_array(a: np.ndarray) -> "Action":
        a = np.asarray(a, dtype=float).reshape(ACTION_DIM)
        return Action(*a[:6], gripper=float(a[6]))


def action_bounds(ws: WorkspaceConfig) -> np.ndarray:
    """Per-dimension magnitude bounds (the gripper bound is its upper limit)."""
    lin, ang = ws.max_linear_mm_s, ws.max_angular_rad_s
    return np.array([lin, lin, lin, ang, ang, ang, 1.0])


def clamp_action_array(a: np.ndarray, bounds: np.ndarray) -> np.ndarray:
    """Clamp velocities to +/-bound and the gripper to [0, 1]."""
    a = np.asarray(a, dtype=float)
    out = np.clip(a, -bounds, bounds)
    out[..., 6] = np.clip(a[..., 6], 0.0, 1.0)
    return out


@dataclass
class ActionChunk:
    """A fixed-length sequence of future actions, shape (chunk_len, 7)."""

    array: np.ndarray

    def __post_init__(self):
        self.array = np.asarray(self.array, dtype=float)
        if self.array.ndim != 2 or self.array.shape[1] != ACTION_DIM:
            raise ValueError(f"chunk must be (T, {ACTION_DIM}), got {self.array.shape}")

    def __len__(self) -> int:
        return self.array.shape[0]

    def action(self, i: int) -> np.ndarray:
        return self.array[i]

    def flat(self) -> np.ndarray:
        return self.array.reshape(-1)

    @staticmethod
    def from_flat(flat: np.ndarray, chunk_len: int) -> "ActionChunk":
        return ActionChunk(np.asarray(flat, dtype=float).reshape(chunk_len, ACTION_DIM))


@dataclass
class ActionNormalizer:
    """Per-dimension affine map to roughly [-1, 1] from dataset statistics.

    Degenerate (constant) dimensions get a half-range floor of 5% of the
    action bound so denormalization stays well conditioned.
    """

    mid: np.ndarray
    half_range: np.ndarray

    def __post_init__(self):
        self.mid = np.asarray(self.mid, dtype=float).reshape(ACTION_DIM)
        self.half_range = np.asarray(self.half_range, dtype=float).reshape(ACTION_DIM)
        if np.any(self.half_range <= 0):
            raise ValueError("half_range must be positive")

    @staticmethod
    def fit(actions: np.ndarray, bounds: np.ndarray) -> "ActionNormalizer":
        actions = np.asarray(actions, dtype=float).reshape(-1, ACTION_DIM)
        lo = actions.min(axis=0)
        hi = actions.max(axis=0)
        mid = 0.5 * (lo + hi)
        half = np.maximum(0.5 * (hi - lo), 0.05 * bounds)
        return ActionNormalizer(mid=mid, half_range=half)

    def normalize(self, a: np.ndarray) -> np.ndarray:
        return (np.asarray(a, dtype=float) - self.mid) / self.half_range

    def denormalize(self, a: np.ndarray) -> np.ndarray:
        return np.asarray(a, dtype=float) * self.half_range + self.mid

    def to_dict(self) -> dict:
        return {"mid": self.mid.tolist(), "half_range": self.half_range.tolist()}

    @staticmethod
    def from_dict(d: dict) -> "ActionNormalizer":
        return ActionNormalizer(np.array(d["mid"]), np.array(d["half_range"]))
