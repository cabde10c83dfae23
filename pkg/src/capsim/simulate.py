"""Capsule rigid-body simulation inside the stomach model.

Semi-implicit Euler over gravity, Archimedes buoyancy (partial submersion),
the magnet's dipole wrench, linear/angular viscous drag, and wall contact by
SDF projection with zero restitution and Coulomb-style tangential damping.
A step is a pure transition on SimState values; the environment object only
holds immutable geometry and configuration.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import magnetics
from .config import Config
from .geometry import Pose, quat_exp, quat_multiply, quat_rotate
from .magnetics import Dipole
from .stomach import DEFAULT_START_POSITION, StomachModel, WaterLine


class SimulationFault(RuntimeError):
    """The integrator produced a state outside its guarantees."""


def capsule_volume(length: float, diameter: float) -> float:
    """Cylinder with hemispherical end caps (total length includes the caps)."""
    r = diameter / 2.0
    cyl = length - diameter
    if cyl < 0:
        raise ValueError("capsule length must be at least its diameter")
    return np.pi * r * r * cyl + (4.0 / 3.0) * np.pi * r**3


def submerged_fraction(z_center: float, sphere_radius: float, surface_height: float) -> float:
    """Submerged volume fraction of the equal-volume sphere below the surface."""
    depth = np.clip(surface_height - (z_center - sphere_radius), 0.0, 2.0 * sphere_radius)
    r = sphere_radius
    return float(depth * depth * (3.0 * r - depth) / (4.0 * r**3))


def coaxial_pull_constant(mu0: float, magnet_moment: float, capsule_moment: float) -> float:
    """C in |F| = C / r^4 for the coaxial moment-down geometry."""
    return 3.0 * mu0 * magnet_moment * capsule_moment / (2.0 * np.pi)


@dataclass
class CapsuleBody:
    pose: Pose
    linear_velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    angular_velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    mass: float = 4.56e-3
    length: float = 0.026
    diameter: float = 0.015
    moment: float = 0.126  # A*m^2 along the long axis

    def __post_init__(self):
        self.linear_velocity = np.asarray(self.linear_velocity, dtype=float).reshape(3)
        self.angular_velocity = np.asarray(self.angular_velocity, dtype=float).reshape(3)
        if self.mass <= 0 or self.length <= 0 or self.diameter <= 0:
            raise ValueError("capsule mass and dimensions must be positive")

    @property
    def volume(self) -> float:
        return capsule_volume(self.length, self.diameter)

    @property
    def axis(self) -> np.ndarray:
        """Long-axis direction (body +z) in world coordinates."""
        return quat_rotate(self.pose.orientation, np.array([0.0, 0.0, 1.0]))

    @property
    def contact_radius(self) -> float:
        return self.diameter / 2.0

    @property
    def buoyancy_radius(self) -> float:
        """Radius of the equal-volume sphere used for partial submersion."""
        return float((3.0 * self.volume / (4.0 * np.pi)) ** (1.0 / 3.0))

    @property
    def transverse_inertia(self) -> float:
        r = self.diameter / 2.0
        return self.mass * (3.0 * r * r + self.length * self.length) / 12.0

    def dipole(self) -> Dipole:
        return Dipole(moment=self.moment * self.axis, position=self.pose.position)

    def copy(self) -> "CapsuleBody":
        return CapsuleBody(
            pose=self.pose.copy(),
            linear_velocity=self.linear_velocity.copy(),
            angular_velocity=self.angular_velocity.copy(),
            mass=self.mass,
            length=self.length,
            diameter=self.diameter,
            moment=self.moment,
        )


@dataclass
class SimState:
    time: float
    capsule: CapsuleBody
    magnet: Dipole
    water: WaterLine
    rng_seed: int = 0

    def copy(self) -> "SimState":
        return SimState(
            time=self.time,
            capsule=self.capsule.copy(),
            magnet=Dipole(self.magnet.moment.copy(), self.magnet.position.copy()),
            water=self.water,
            rng_seed=self.rng_seed,
        )


# numerical safeguards; generous relative to anything the expert commands
MAX_LINEAR_SPEED = 0.75  # m/s
MAX_ANGULAR_SPEED = 50.0  # rad/s
MAX_TORQUE = 2e-3  # N*m, keeps field alignment integrable at close range


class GastroEnv:
    """Immutable environment: stomach geometry plus physical configuration."""

    def __init__(self, config: Config | None = None, model: StomachModel | None = None):
        self.config = config or Config()
        self.model = model or StomachModel.default(
            scale=self.config.stomach.scale, center=np.array(self.config.stomach.center)
        )
        self._wall_params: dict[int, tuple[np.ndarray, np.ndarray]] = {}

    # -- wall motion -------------------------------------------------------

    def wall_offset(self, time: float, seed: int, water: WaterLine) -> np.ndarray:
        """Low-amplitude stomach translation at the full water line.

        The floating model drifts as a seeded sum of two incommensurate
        sinusoids per axis; a pure function of (time, seed) so replays agree.
        """
        amp = self.config.stomach.wall_noise_amplitude
        if water.fraction != "full" or amp == 0.0:
            return np.zeros(3)
        if seed not in self._wall_params:
            rng = np.random.default_rng(seed)
            freqs = rng.uniform(0.15, 0.45, size=(3, 2))
            phases = rng.uniform(0.0, 2.0 * np.pi, size=(3, 2))
            self._wall_params[seed] = (freqs, phases)
        freqs, phases = self._wall_params[seed]
        arg = 2.0 * np.pi * freqs * time + phases
        return amp * (0.65 * np.sin(arg[:, 0]) + 0.35 * np.sin(arg[:, 1]))

    def wall_sdf(self, points: np.ndarray, state: SimState) -> np.ndarray:
        offset = self.wall_offset(state.time, state.rng_seed, state.water)
        return self.model.sdf(np.asarray(points, dtype=float) - offset)

    # -- forces ------------------------------------------------------------

    def magnetic_wrench(self, magnet: Dipole, capsule: CapsuleBody) -> magnetics.Wrench:
        """Dipole wrench with the near-field clamp applied.

        Below the configured minimum separation the wrench is evaluated at
        the separation floor (the point-dipole model diverges there; the real
        50 mm magnet geometry keeps separation bounded).
        """
        mcfg = self.config.magnetics
        r = capsule.pose.position - magnet.position
        dist = np.linalg.norm(r)
        target = capsule.dipole()
        if dist < mcfg.min_separation:
            if dist == 0.0:
                rhat = np.array([0.0, 0.0, 1.0])
            else:
                rhat = r / dist
            target = Dipole(target.moment, magnet.position + rhat * mcfg.min_separation)
        wrench = magnetics.dipole_wrench(magnet, target, mcfg.constants())
        fmag = np.linalg.norm(wrench.force)
        if fmag > mcfg.max_force:
            wrench.force = wrench.force * (mcfg.max_force / fmag)
        tmag = np.linalg.norm(wrench.torque)
        if tmag > MAX_TORQUE:
            wrench.torque = wrench.torque * (MAX_TORQUE / tmag)
        return wrench

    def buoyancy_force(self, capsule: CapsuleBody, water: WaterLine) -> tuple[np.ndarray, float]:
        frac = submerged_fraction(
            capsule.pose.position[2], capsule.buoyancy_radius, water.surface_height
        )
        f = self.config.fluid
        force = np.array([0.0, 0.0, f.water_density * capsule.volume * frac * f.gravity])
        return force, frac

    # -- stepping ----------------------------------------------------------

    def step(self, state: SimState, magnet_pose: Pose, dt: float) -> SimState:
        """One semi-implicit Euler substep; pure in (state, magnet_pose, dt)."""
        if not 0.0 < dt <= 0.05:
            raise ValueError(f"dt must lie in (0, 0.05], got {dt}")
        from .arm import magnet_moment_vector  # local import avoids a cycle

        cfg = self.config
        cap = state.capsule.copy()
        magnet = Dipole(
            moment=magnet_moment_vector(magnet_pose, cfg.magnetics.magnet_moment),
            position=magnet_pose.position,
        )

        buoy, frac = self.buoyancy_force(cap, state.water)
        gravity = np.array([0.0, 0.0, -cap.mass * cfg.fluid.gravity])
        wrench = self.magnetic_wrench(magnet, cap)
        drag_coeff = cfg.fluid.drag_air + frac * (cfg.fluid.drag_water - cfg.fluid.drag_air)
        force = gravity + buoy + wrench.force - drag_coeff * cap.linear_velocity
        torque = wrench.torque - cfg.fluid.drag_angular * cap.angular_velocity

        v = cap.linear_velocity + (dt / cap.mass) * force
        w = cap.angular_velocity + (dt / cap.transverse_inertia) * torque
        speed = np.linalg.norm(v)
        if speed > MAX_LINEAR_SPEED:
            v = v * (MAX_LINEAR_SPEED / speed)
        wmag = np.linalg.norm(w)
        if wmag > MAX_ANGULAR_SPEED:
            w = w * (MAX_ANGULAR_SPEED / wmag)

        pos = cap.pose.position + dt * v
        orient = quat_multiply(quat_exp(w * dt), cap.pose.orientation)

        new_time = state.time + dt
        offset = self.wall_offset(new_time, state.rng_seed, state.water)
        pos, v = self._resolve_contact(pos, v, cap.contact_radius, offset)

        cap.pose = Pose(position=pos, orientation=orient)
        cap.linear_velocity = v
        cap.angular_velocity = w
        return SimState(
            time=new_time, capsule=cap, magnet=magnet, water=state.water, rng_seed=state.rng_seed
        )

    def _resolve_contact(
        self, pos: np.ndarray, vel: np.ndarray, radius: float, offset: np.ndarray
    ) -> tuple[np.ndarray, np.ndarray]:
        """Project the capsule center back to sdf <= -radius; damp velocity."""
        query = pos - offset
        d = float(self.model.sdf(query))
        if d <= -radius:
            return pos, vel
        normal = np.zeros(3)
        for _ in range(4):
            grad = self.model.sdf_gradient(query)
            norm = np.linalg.norm(grad)
            if norm < 1e-9:
                break
            normal = grad / norm
            query = query - (d + radius) * normal
            d = float(self.model.sdf(query))
            if d <= -radius:
                break
        if d > -radius + self.config.sim.escape_tolerance:
            raise SimulationFault(f"capsule escaped the stomach wall (sdf {d:+.4f} m)")
        # zero restitution: remove the outward normal velocity component,
        # then Coulomb-style damping of the tangential remainder
        vn = vel @ normal
        if vn > 0.0:
            vel = vel - vn * normal
            vt = np.linalg.norm(vel)
            if vt > 1e-12:
                fric = self.config.sim.contact_friction
                vel = vel * max(0.0, 1.0 - fric * vn / vt)
        return query + offset, vel

    # -- state construction -------------------------------------------------

    def initial_state(
        self,
        water_fraction: str = "one_half",
        seed: int = 0,
        start_jitter: float | None = None,
        start_position: np.ndarray | None = None,
    ) -> SimState:
        """Capsule released on the esophageal centerline, axis along +x."""
        cfg = self.config
        rng = np.random.default_rng(seed)
        jitter = cfg.expert.start_jitter if start_jitter is None else start_jitter
        base = DEFAULT_START_POSITION if start_position is None else np.asarray(start_position)
        start = base + np.array(cfg.stomach.center)
        start = start + rng.uniform(-jitter, jitter, size=3) * np.array([1.0, 1.0, 0.5])
        q0 = quat_exp(np.array([0.0, np.pi / 2.0, 0.0]))  # body z -> world +x
        capsule = CapsuleBody(
            pose=Pose(position=start, orientation=q0),
            mass=cfg.capsule.mass,
            length=cfg.capsule.length,
            diameter=cfg.capsule.diameter,
            moment=cfg.magnetics.capsule_moment,
        )
        if float(self.model.sdf(start)) > -capsule.contact_radius:
            raise SimulationFault("capsule start position is not inside the stomach")
        water = self.model.water_line(water_fraction)
        magnet = Dipole(
            moment=np.array([0.0, 0.0, -cfg.magnetics.magnet_moment]),
            position=self.initial_magnet_pose(start, water, capsule).position,
        )
        return SimState(
            time=0.0, capsule=capsule, magnet=magnet, water=water, rng_seed=seed
        )

    def initial_magnet_pose(
        self, capsule_start: np.ndarray, water: WaterLine, capsule: CapsuleBody | None = None,
        support: float = 0.92,
    ) -> Pose:
        """Magnet parked above the release point, moment down, near hover.

        The height is set so the pull is `support` times the capsule's
        effective weight at release: a controlled settle instead of a free
        fall the 10 Hz checker could miss.
        """
        cfg = self.config
        if capsule is None:
            capsule = CapsuleBody(
                pose=Pose(position=np.asarray(capsule_start, dtype=float)),
                mass=cfg.capsule.mass,
                length=cfg.capsule.length,
                diameter=cfg.capsule.diameter,
                moment=cfg.magnetics.capsule_moment,
            )
        frac = submerged_fraction(
            float(capsule_start[2]), capsule.buoyancy_radius, water.surface_height
        )
        g = cfg.fluid.gravity
        w_eff = max(capsule.mass * g - cfg.fluid.water_density * capsule.volume * frac * g, 1e-4)
        c = coaxial_pull_constant(
            cfg.magnetics.mu0, cfg.magnetics.magnet_moment, cfg.magnetics.capsule_moment
        )
        height = (c / (support * w_eff)) ** 0.25
        z0 = float(capsule_start[2] + height)
        lo, hi = self.config.workspace.minimum, self.config.workspace.maximum
        pos = np.clip(
            np.array([capsule_start[0], capsule_start[1], z0]), np.array(lo), np.array(hi)
        )
        return Pose(position=pos)
