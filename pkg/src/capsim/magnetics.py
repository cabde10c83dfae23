"""Point-dipole magnetics: field, interaction force/torque, coaxial pull.

The actuating magnet and the capsule's internal magnet are both modeled as
point dipoles. The force on the target dipole is the analytic gradient of
m_t . B_s; the coaxial specialization 3*mu0*M*m / (2*pi*r^4) is kept as an
independent cross-check of the vector form.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class PhysicalConstants:
    """Physical constants shared by the magnetics and simulation modules."""

    mu0: float = 4.0e-7 * np.pi  # vacuum permeability, N/A^2


@dataclass
class Dipole:
    """A magnetic point dipole: moment in A*m^2 at a position in meters."""

    moment: np.ndarray
    position: np.ndarray

    def __post_init__(self):
        self.moment = np.asarray(self.moment, dtype=float).reshape(3)
        self.position = np.asarray(self.position, dtype=float).reshape(3)
        if not (np.all(np.isfinite(self.moment)) and np.all(np.isfinite(self.position))):
            raise ValueError("dipole moment and position must be finite")


@dataclass
class Wrench:
    force: np.ndarray = field(default_factory=lambda: np.zeros(3))
    torque: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.force = np.asarray(self.force, dtype=float).reshape(3)
        self.torque = np.asarray(self.torque, dtype=float).reshape(3)


class SingularityError(ValueError):
    """Raised when field or force is requested at the dipole's own location."""


def dipole_field(
    source: Dipole, at: np.ndarray, constants: PhysicalConstants = PhysicalConstants()
) -> np.ndarray:
    """Magnetic flux density (tesla) of `source` at point `at`.

    B(r) = mu0 / (4 pi |r|^3) * (3 rhat (m . rhat) - m), with r = at - source.position.
    """
    at = np.asarray(at, dtype=float).reshape(3)
    r = at - source.position
    dist = np.linalg.norm(r)
    if dist == 0.0:
        raise SingularityError("field evaluated at the dipole position")
    rhat = r / dist
    m = source.moment
    return constants.mu0 / (4.0 * np.pi * dist**3) * (3.0 * rhat * (m @ rhat) - m)


def dipole_wrench(
    source: Dipole, target: Dipole, constants: PhysicalConstants = PhysicalConstants()
) -> Wrench:
    """Force and torque exerted by `source` on `target`.

    Force is the analytic gradient of (m_t . B_s) evaluated at the target:

        F = 3 mu0 / (4 pi |r|^4) * [ (rhat.m_s) m_t + (rhat.m_t) m_s
                                     + (m_s.m_t) rhat - 5 rhat (rhat.m_s)(rhat.m_t) ]

    Torque is m_t x B_s(target.position).
    """
    r = target.position - source.position
    dist = np.linalg.norm(r)
    if dist == 0.0:
        raise SingularityError("dipoles at coincident positions")
    rhat = r / dist
    ms, mt = source.moment, target.moment
    ms_r = ms @ rhat
    mt_r = mt @ rhat
    pref = 3.0 * constants.mu0 / (4.0 * np.pi * dist**4)
    force = pref * (ms_r * mt + mt_r * ms + (ms @ mt) * rhat - 5.0 * rhat * ms_r * mt_r)
    torque = np.cross(mt, dipole_field(source, target.position, constants))
    return Wrench(force=force, torque=torque)


def coaxial_force_magnitude(
    M_mag: float, m_mag: float, r_mag: float, constants: PhysicalConstants = PhysicalConstants()
) -> float:
    """Attractive pull between coaxial, co-aligned dipoles at separation r_mag.

    |F| = 3 mu0 |M| |m| / (2 pi r^4)
    """
    if r_mag <= 0.0:
        raise ValueError(f"separation must be positive, got {r_mag}")
    return 3.0 * constants.mu0 * M_mag * m_mag / (2.0 * np.pi * r_mag**4)
