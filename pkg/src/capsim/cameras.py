"""Synthetic camera rendering against the stomach SDF.

capsule_cam: first-person sphere-trace from the capsule tip along its long
axis, depth-shaded, dimmed below the water surface. exterior_cam: fixed
orthographic top-down occupancy/depth render with capsule and magnet
markers (each with a small heading dot). Both are deterministic functions
of the simulation state.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import CameraConfig
from .geometry import quat_rotate
from .simulate import GastroEnv, SimState

CAMERA_NAMES = ("capsule_cam", "exterior_cam")


@dataclass
class CameraFrame:
    width: int
    height: int
    intensity: np.ndarray  # (height, width) float32 in [0, 1]

    def __post_init__(self):
        self.intensity = np.asarray(self.intensity, dtype=np.float32)
        if self.intensity.shape != (self.height, self.width):
            raise ValueError("intensity grid does not match width/height")


def _pixel_grid(width: int, height: int) -> tuple[np.ndarray, np.ndarray]:
    u = (np.arange(width) + 0.5) / width * 2.0 - 1.0
    v = (np.arange(height) + 0.5) / height * 2.0 - 1.0
    return np.meshgrid(u, v)


def _render_capsule_cam(env: GastroEnv, state: SimState, cam: CameraConfig) -> np.ndarray:
    cap = state.capsule
    forward = cap.axis
    right = quat_rotate(cap.pose.orientation, np.array([1.0, 0.0, 0.0]))
    up = quat_rotate(cap.pose.orientation, np.array([0.0, 1.0, 0.0]))
    origin = cap.pose.position + forward * (cap.length / 2.0)

    uu, vv = _pixel_grid(cam.width, cam.height)
    half_tan = np.tan(np.deg2rad(cam.fov_deg) / 2.0)
    dirs = (
        forward[None, None, :]
        + half_tan * (uu[..., None] * right[None, None, :] + vv[..., None] * up[None, None, :])
    )
    dirs /= np.linalg.norm(dirs, axis=-1, keepdims=True)
    flat_dirs = dirs.reshape(-1, 3)

    offset = env.wall_offset(state.time, state.rng_seed, state.water)
    n = flat_dirs.shape[0]
    t = np.zeros(n)
    active = np.ones(n, dtype=bool)
    for _ in range(cam.march_steps):
        if not active.any():
            break
        pts = origin[None, :] + t[active, None] * flat_dirs[active]
        d = env.model.sdf(pts - offset)
        # inside the wall d < 0; |d| lower-bounds the distance to the surface
        step = np.maximum(-d, 5e-5)
        t_new = t[active] + step
        hit = (d >= -1e-4) | (t_new >= cam.max_depth)
        t[active] = np.minimum(t_new, cam.max_depth)
        active[np.flatnonzero(active)[hit]] = False

    depth = t.reshape(cam.height, cam.width)
    shade = np.exp(-depth / (0.35 * cam.max_depth))
    hits = origin[None, :] + t[:, None] * flat_dirs
    below = (hits[:, 2] < state.water.surface_height).reshape(cam.height, cam.width)
    shade = np.where(below, shade * 0.55, shade)
    return np.clip(shade, 0.0, 1.0)


def _blob(xx: np.ndarray, yy: np.ndarray, center: np.ndarray, sigma: float) -> np.ndarray:
    d2 = (xx - center[0]) ** 2 + (yy - center[1]) ** 2
    return np.exp(-0.5 * d2 / (sigma * sigma))


def _render_exterior_cam(env: GastroEnv, state: SimState, cam: CameraConfig) -> np.ndarray:
    lo, hi = env.model.bounds()
    margin = 0.012
    xs = np.linspace(lo[0] - margin, hi[0] + margin, cam.width)
    ys = np.linspace(lo[1] - margin, hi[1] + margin, cam.height)
    xx, yy = np.meshgrid(xs, ys)

    offset = env.wall_offset(state.time, state.rng_seed, state.water)
    # occupancy: lowest SDF across three horizontal slices, shaded by depth
    slices = np.linspace(lo[2] + 0.012, hi[2] - 0.018, 3)
    occ = np.full(xx.shape, np.inf)
    for z in slices:
        pts = np.stack([xx, yy, np.full_like(xx, z)], axis=-1)
        occ = np.minimum(occ, env.model.sdf(pts - offset))
    img = np.where(occ < 0.0, 0.42 + np.clip(-occ, 0.0, 0.03) * 4.0, 0.12)

    cap_pos = state.capsule.pose.position
    axis = state.capsule.axis
    img = np.maximum(img, 1.0 * _blob(xx, yy, cap_pos[:2], 0.0028))
    head = cap_pos[:2] + axis[:2] * 0.007
    img = np.maximum(img, 0.8 * _blob(xx, yy, head, 0.0020))

    mag_pos = state.magnet.position
    mag_dir = state.magnet.moment
    norm = np.linalg.norm(mag_dir)
    img = np.maximum(img, 0.65 * _blob(xx, yy, mag_pos[:2], 0.0040))
    if norm > 0:
        mhead = mag_pos[:2] + (mag_dir[:2] / norm) * 0.009
        img = np.maximum(img, 0.5 * _blob(xx, yy, mhead, 0.0025))
    return np.clip(img, 0.0, 1.0)


def render(env: GastroEnv, state: SimState, which: str) -> CameraFrame:
    """Render one camera; bit-identical for identical states."""
    cam = env.config.camera
    if which == "capsule_cam":
        img = _render_capsule_cam(env, state, cam)
    elif which == "exterior_cam":
        img = _render_exterior_cam(env, state, cam)
    else:
        raise ValueError(f"unknown camera {which!r}")
    return CameraFrame(width=cam.width, height=cam.height, intensity=img.astype(np.float32))


def render_pair(env: GastroEnv, state: SimState) -> tuple[CameraFrame, CameraFrame]:
    return render(env, state, "capsule_cam"), render(env, state, "exterior_cam")
