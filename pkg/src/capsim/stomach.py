"""Analytic stomach geometry: a bean-shaped signed distance field.

The interior is the smooth union of three chambers (fundus, body, antrum)
and a tilted esophageal tube, about 120 x 80 x 90 mm overall. Landmark
regions (esophagus_entry, fundus, gastric_antrum) drive the navigation task
checker. SDF is negative inside, positive outside; queries are vectorized
over (..., 3) point arrays.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

WATER_FRACTIONS = ("one_third", "one_half", "full")


@dataclass(frozen=True)
class Landmark:
    name: str
    center: np.ndarray
    radius: float

    def contains(self, p: np.ndarray) -> bool:
        return bool(np.linalg.norm(np.asarray(p) - self.center) <= self.radius)


@dataclass(frozen=True)
class WaterLine:
    """Fluid fill level: named fraction plus the derived surface height (m)."""

    fraction: str
    surface_height: float

    def __post_init__(self):
        if self.fraction not in WATER_FRACTIONS:
            raise ValueError(f"unknown water fraction {self.fraction!r}")


def _smooth_min(a: np.ndarray, b: np.ndarray, k: float) -> np.ndarray:
    h = np.clip(0.5 + 0.5 * (b - a) / k, 0.0, 1.0)
    return b * (1.0 - h) + a * h - k * h * (1.0 - h)


def _sphere_sdf(p: np.ndarray, center: np.ndarray, radius: float) -> np.ndarray:
    return np.linalg.norm(p - center, axis=-1) - radius


def _segment_sdf(p: np.ndarray, a: np.ndarray, b: np.ndarray, radius: float) -> np.ndarray:
    ab = b - a
    t = np.clip(((p - a) @ ab) / (ab @ ab), 0.0, 1.0)
    closest = a + t[..., None] * ab
    return np.linalg.norm(p - closest, axis=-1) - radius


@dataclass
class StomachModel:
    """Smooth-blended union of spheres and tube segments with named landmarks."""

    spheres: list[tuple[np.ndarray, float]]
    tubes: list[tuple[np.ndarray, np.ndarray, float]]
    landmarks: dict[str, Landmark]
    blend: float = 0.015

    def __post_init__(self):
        for lm in self.landmarks.values():
            if self.sdf(lm.center) >= 0.0:
                raise ValueError(f"landmark {lm.name!r} center lies outside the model")

    def sdf(self, points: np.ndarray) -> np.ndarray:
        """Signed distance (approximate inside the blend regions), negative inside."""
        p = np.asarray(points, dtype=float)
        d = None
        for center, radius in self.spheres:
            ds = _sphere_sdf(p, center, radius)
            d = ds if d is None else _smooth_min(d, ds, self.blend)
        for a, b, radius in self.tubes:
            dt = _segment_sdf(p, a, b, radius)
            d = dt if d is None else _smooth_min(d, dt, self.blend)
        return d

    def sdf_gradient(self, points: np.ndarray, h: float = 1e-5) -> np.ndarray:
        """Central-difference gradient, vectorized over leading axes."""
        p = np.asarray(points, dtype=float)
        grad = np.empty(p.shape)
        for axis in range(3):
            dp = np.zeros(3)
            dp[axis] = h
            grad[..., axis] = (self.sdf(p + dp) - self.sdf(p - dp)) / (2.0 * h)
        return grad

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        """Axis-aligned bounding box of the interior (with blend margin)."""
        lo = np.full(3, np.inf)
        hi = np.full(3, -np.inf)
        for center, radius in self.spheres:
            lo = np.minimum(lo, center - radius)
            hi = np.maximum(hi, center + radius)
        for a, b, radius in self.tubes:
            lo = np.minimum(lo, np.minimum(a, b) - radius)
            hi = np.maximum(hi, np.maximum(a, b) + radius)
        margin = self.blend / 4.0
        return lo - margin, hi + margin

    def water_line(self, fraction: str) -> WaterLine:
        """Surface height for a named fill fraction; monotone in fraction."""
        lo, hi = self.bounds()
        span = hi[2] - lo[2]
        if fraction == "one_third":
            height = lo[2] + span / 3.0
        elif fraction == "one_half":
            height = lo[2] + span / 2.0
        elif fraction == "full":
            height = hi[2] + 0.01  # strictly above everything: fully flooded
        else:
            raise ValueError(f"unknown water fraction {fraction!r}")
        return WaterLine(fraction=fraction, surface_height=float(height))

    def landmark(self, name: str) -> Landmark:
        return self.landmarks[name]

    @staticmethod
    def default(scale: float = 1.0, center: np.ndarray | None = None) -> "StomachModel":
        """The desk-scale bean: esophageal tube into fundus, body, antrum."""
        c = np.zeros(3) if center is None else np.asarray(center, dtype=float)

        def at(x, y, z):
            return c + scale * np.array([x, y, z])

        spheres = [
            (at(-0.030, 0.0, 0.010), 0.035 * scale),  # fundus chamber
            (at(0.000, 0.0, -0.008), 0.030 * scale),  # gastric body
            (at(0.035, 0.0, -0.015), 0.020 * scale),  # antrum
        ]
        tubes = [
            (at(-0.044, 0.0, 0.058), at(-0.032, 0.0, 0.020), 0.012 * scale),  # esophagus
        ]
        landmarks = {
            "esophagus_entry": Landmark("esophagus_entry", at(-0.036, 0.0, 0.031), 0.009 * scale),
            "fundus": Landmark("fundus", at(-0.030, 0.0, 0.010), 0.015 * scale),
            "gastric_antrum": Landmark("gastric_antrum", at(0.035, 0.0, -0.020), 0.012 * scale),
        }
        return StomachModel(
            spheres=spheres, tubes=tubes, landmarks=landmarks, blend=0.015 * scale
        )

    @staticmethod
    def sphere(radius: float, center: np.ndarray | None = None) -> "StomachModel":
        """Single-sphere model, used by rendering symmetry tests."""
        c = np.zeros(3) if center is None else np.asarray(center, dtype=float)
        lm = Landmark("fundus", c.copy(), radius / 4.0)
        return StomachModel(spheres=[(c, radius)], tubes=[], landmarks={"fundus": lm})


LANDMARK_ORDER = ("esophagus_entry", "fundus", "gastric_antrum")

# Capsule release point: on the esophageal centerline, above the entry region.
DEFAULT_START_POSITION = np.array([-0.0425, 0.0, 0.053])
