"""Scripted expert demonstrators for the four task families.

The expert drives the magnet, not the capsule: a waypoint controller offsets
the magnet laterally so the dipole pull drags the capsule along the landmark
route (navigation), sweeps the magnet moment azimuth so the capsule yaw
follows a 90-out / back / 90-opposite profile (rotation), and tilts the
moment so the field pitch at the capsule matches commanded view setpoints
(view adjustment). Magnet height runs on incremental force feedback around
the dipole-pull law. Seeded action noise diversifies demonstrations; the
emitted action is exactly what the rollout applied.
"""

from __future__ import annotations

import numpy as np

from .actions import action_bounds
from .arm import orientation_for_moment
from .geometry import Pose, quat_conjugate, quat_log, quat_multiply, yaw_of_axis
from .rollout import RolloutEngine
from .simulate import GastroEnv, SimState, submerged_fraction
from .tasks import TaskSpec


def _moment_for_field_direction(b_dir: np.ndarray) -> np.ndarray:
    """Moment direction whose field directly below points along b_dir.

    Below the magnet (r along -z) the dipole field is (-mx, -my, 2mz), so
    the moment (-bx, -by, bz/2) (normalized) realizes a requested direction.
    """
    b = np.asarray(b_dir, dtype=float)
    m = np.array([-b[0], -b[1], b[2] / 2.0])
    return m / np.linalg.norm(m)


class _HeightServo:
    """Magnet-height control: vertical velocity tracking via the pull law.

    The loop commands a descent/ascent rate toward the target height, maps
    the needed pull (as a multiple of the capsule's effective weight) to a
    magnet separation through the dipole force law, and rate-limits the
    separation so the r^-4 force never jumps.
    """

    def __init__(self, env: GastroEnv, geometry_factor: float = 2.0):
        # geometry_factor: 2 for coaxial pull, 1 for a horizontal moment
        self.env = env
        self.geometry_factor = geometry_factor
        cfg = env.config
        self._pull_const = (
            3.0
            * cfg.magnetics.mu0
            * cfg.magnetics.magnet_moment
            * cfg.magnetics.capsule_moment
            * geometry_factor
            / (4.0 * np.pi)
        )
        self.height: float | None = None

    def effective_weight(self, state: SimState) -> float:
        cap = state.capsule
        frac = submerged_fraction(
            cap.pose.position[2], cap.buoyancy_radius, state.water.surface_height
        )
        g = self.env.config.fluid.gravity
        w = cap.mass * g - self.env.config.fluid.water_density * cap.volume * frac * g
        return max(w, 1e-4)

    def separation_for_force(self, force: float) -> float:
        return float((self._pull_const / max(force, 1e-5)) ** 0.25)

    def update(self, state: SimState, target_z: float, gain: float) -> float:
        """Magnet height above the capsule for this tick."""
        cap = state.capsule
        w_eff = self.effective_weight(state)
        err = target_z - cap.pose.position[2]
        v_des = np.clip(err / 3.0, -0.02, 0.012)
        ratio = np.clip(1.0 + gain * (v_des - cap.linear_velocity[2]), 0.3, 4.0)
        if err > 0.004:
            # climbs need a steady feedforward or surface buoyancy loss stalls them
            ratio = max(ratio, 1.25)
        desired = self.separation_for_force(w_eff * ratio)
        if self.height is None:
            self.height = desired
        else:
            # rate-limit so the r^-4 law sees at most ~12% force change/tick
            self.height += np.clip(desired - self.height, -0.004, 0.004)
        return float(np.clip(self.height, 0.05, 0.35))


class ExpertController:
    """Base: pose servo to a target magnet pose plus seeded action noise."""

    def __init__(self, env: GastroEnv, task: TaskSpec, seed: int):
        self.env = env
        self.task = task
        self.cfg = env.config
        self.rng = np.random.default_rng((seed * 7919 + 13) & 0x7FFFFFFF)
        self.bounds = action_bounds(self.cfg.workspace)
        self.dt = 1.0 / self.cfg.sim.control_hz

    def target_pose(self, state: SimState, magnet_pose: Pose) -> Pose:
        raise NotImplementedError

    def done(self, state: SimState) -> bool:
        return False

    def action(self, state: SimState, magnet_pose: Pose) -> np.ndarray:
        # proportional (mostly unsaturated) tracking: clones of these demos
        # inherit corrective feedback instead of bang-bang commands
        target = self.target_pose(state, magnet_pose)
        v = self.cfg.expert.servo_gain * (target.position - magnet_pose.position) * 1e3
        q_err = quat_multiply(target.orientation, quat_conjugate(magnet_pose.orientation))
        w = self.cfg.expert.servo_gain_ang * quat_log(q_err)
        act = np.concatenate([v, w, [1.0]])
        noise = self.cfg.expert.noise_std * self.bounds[:6]
        act[:6] += self.rng.normal(0.0, noise)
        return np.clip(act, -self.bounds, self.bounds)


class NavigationExpert(ExpertController):
    def __init__(self, env: GastroEnv, task: TaskSpec, seed: int):
        super().__init__(env, task, seed)
        self.waypoints = [env.model.landmark(name) for name in task.landmarks]
        self.idx = 0
        self.servo = _HeightServo(env, geometry_factor=2.0)
        self.hold_ticks = 0

    def target_pose(self, state: SimState, magnet_pose: Pose) -> Pose:
        cap = state.capsule.pose.position
        # advance with the checker's own containment criterion
        while self.idx < len(self.waypoints) and self.waypoints[self.idx].contains(cap):
            self.idx += 1
        if self.idx >= len(self.waypoints):
            self.hold_ticks += 1
            wp = self.waypoints[-1].center
        else:
            wp = self.waypoints[self.idx].center

        lead = wp[:2] - cap[:2]
        lead_norm = np.linalg.norm(lead)
        max_lead = self.cfg.expert.lateral_lead
        if lead_norm > max_lead:
            lead = lead * (max_lead / lead_norm)
        height = self.servo.update(state, wp[2], self.cfg.expert.hover_gain)
        pos = np.array([cap[0] + lead[0], cap[1] + lead[1], cap[2] + height])
        return Pose(position=pos)  # identity orientation: moment straight down

    def done(self, state: SimState) -> bool:
        return self.hold_ticks > 5


class RotationExpert(ExpertController):
    """Horizontal moment, azimuth swept 90 deg out, back through zero, 90 deg
    the other way.

    The initial direction alternates with the seed (clockwise on even seeds),
    so demo sets are direction-balanced: at the symmetric start state the
    demonstrated action is genuinely two-moded, which is exactly the regime
    where mode averaging produces an invalid "stand still". The profile has
    no intermediate holds; every later state is disambiguated by the yaw and
    the magnet's small tracking lag.
    """

    def __init__(self, env: GastroEnv, task: TaskSpec, seed: int):
        super().__init__(env, task, seed)
        self.servo = _HeightServo(env, geometry_factor=1.0)
        self.base_yaw: float | None = None
        self.z_hold: float | None = None
        angle = np.deg2rad(task.rotation_angle_deg)
        direction = -1.0 if seed % 2 == 0 else 1.0  # clockwise (negative) on even seeds
        rate = np.deg2rad(self.cfg.expert.yaw_rate_deg_s)
        settle = self.cfg.expert.settle_s
        # the magnet tracks the ramp with lag rate/gain; sweep past the target
        # by that much so the capsule itself peaks at the commanded angle
        reach = angle + rate / self.cfg.expert.servo_gain_ang + np.deg2rad(3.0)
        sweep = reach / rate
        self.knots = [
            (0.0, 0.0),
            (settle, 0.0),
            (settle + sweep, direction * reach),
            (settle + 3 * sweep, -direction * reach),
            (settle + 3 * sweep + 1.0, -direction * reach),
        ]
        self.total = self.knots[-1][0]
        self.t0: float | None = None

    def _profile(self, t: float) -> float:
        for (t0, v0), (t1, v1) in zip(self.knots[:-1], self.knots[1:]):
            if t <= t1:
                if t1 == t0:
                    return v1
                u = (t - t0) / (t1 - t0)
                return v0 + u * (v1 - v0)
        return self.knots[-1][1]

    def target_pose(self, state: SimState, magnet_pose: Pose) -> Pose:
        cap = state.capsule
        if self.t0 is None:
            self.t0 = state.time
            self.base_yaw = yaw_of_axis(cap.axis)
            self.z_hold = cap.pose.position[2] + 0.004
        t = state.time - self.t0
        # the capsule axis settles antiparallel to the horizontal moment
        psi = self.base_yaw + self._profile(t) + np.pi
        moment_dir = np.array([np.cos(psi), np.sin(psi), 0.0])
        height = self.servo.update(state, self.z_hold, self.cfg.expert.hover_gain)
        pos = np.array([cap.pose.position[0], cap.pose.position[1], cap.pose.position[2] + height])
        return Pose(position=pos, orientation=orientation_for_moment(moment_dir))

    def done(self, state: SimState) -> bool:
        return self.t0 is not None and (state.time - self.t0) > self.total + 1.0


class ViewExpert(ExpertController):
    """Hold each commanded capsule pitch via the field direction."""

    def __init__(self, env: GastroEnv, task: TaskSpec, seed: int):
        super().__init__(env, task, seed)
        self.servo = _HeightServo(env, geometry_factor=1.5)
        self.targets = [np.deg2rad(v) for v in task.view_targets_deg]
        self.hold_per_target = task.view_dwell_s + 1.8
        self.base_yaw: float | None = None
        self.z_hold: float | None = None
        self.t0: float | None = None
        self.total = self.cfg.expert.settle_s + self.hold_per_target * len(self.targets)

    def current_target(self, t: float) -> float:
        t_active = t - self.cfg.expert.settle_s
        if t_active < 0:
            return self.targets[0] if self.targets else 0.0
        i = min(int(t_active / self.hold_per_target), len(self.targets) - 1)
        return self.targets[i]

    def target_pose(self, state: SimState, magnet_pose: Pose) -> Pose:
        cap = state.capsule
        if self.t0 is None:
            self.t0 = state.time
            self.base_yaw = yaw_of_axis(cap.axis)
            self.z_hold = cap.pose.position[2] + 0.004
        t = state.time - self.t0
        pitch = self.current_target(t)
        b_dir = np.array(
            [
                np.cos(self.base_yaw) * np.cos(pitch),
                np.sin(self.base_yaw) * np.cos(pitch),
                np.sin(pitch),
            ]
        )
        moment_dir = _moment_for_field_direction(b_dir)
        height = self.servo.update(state, self.z_hold, self.cfg.expert.hover_gain)
        pos = np.array([cap.pose.position[0], cap.pose.position[1], cap.pose.position[2] + height])
        return Pose(position=pos, orientation=orientation_for_moment(moment_dir))

    def done(self, state: SimState) -> bool:
        return self.t0 is not None and (state.time - self.t0) > self.total + 1.0


class ViewRotationExpert(ExpertController):
    """Rotation profile first, then the view setpoints."""

    def __init__(self, env: GastroEnv, task: TaskSpec, seed: int):
        super().__init__(env, task, seed)
        self.rotation = RotationExpert(env, task, seed)
        self.view = ViewExpert(env, task, seed + 1)
        self.phase = 0

    def target_pose(self, state: SimState, magnet_pose: Pose) -> Pose:
        if self.phase == 0:
            if self.rotation.done(state):
                self.phase = 1
            else:
                return self.rotation.target_pose(state, magnet_pose)
        return self.view.target_pose(state, magnet_pose)

    def done(self, state: SimState) -> bool:
        return self.phase == 1 and self.view.done(state)


EXPERTS = {
    "navigation": NavigationExpert,
    "rotation": RotationExpert,
    "view_adjustment": ViewExpert,
    "view_rotation": ViewRotationExpert,
}


def make_expert(env: GastroEnv, task: TaskSpec, seed: int) -> ExpertController:
    if task.task_id not in EXPERTS:
        raise ValueError(f"no expert for task {task.task_id!r}")
    return EXPERTS[task.task_id](env, task, seed)


class ExpertRollout:
    """Iterable expert rollout yielding (TickData, outcome-so-far) pairs.

    Ends shortly after the controller finishes or at the task time budget;
    the caller decides whether a non-successful outcome is kept (flagged) or
    dropped.
    """

    def __init__(
        self,
        env: GastroEnv,
        task: TaskSpec,
        seed: int,
        render: bool = True,
        max_ticks: int | None = None,
    ):
        self.engine = RolloutEngine(env, task, seed=seed)
        self.expert = make_expert(env, task, seed)
        self.render = render
        self.max_ticks = max_ticks or int(task.time_budget_s * env.config.sim.control_hz)

    def __iter__(self):
        engine, expert = self.engine, self.expert
        for _ in range(self.max_ticks):
            act = expert.action(engine.state, engine.magnet_pose)
            tick = engine.tick(act, render=self.render)
            yield tick, engine.outcome()
            if expert.done(engine.state) and engine.succeeded:
                break


def scripted_expert(
    env: GastroEnv,
    task: TaskSpec,
    seed: int,
    render: bool = True,
    max_ticks: int | None = None,
) -> ExpertRollout:
    return ExpertRollout(env, task, seed, render=render, max_ticks=max_ticks)


def collect_demos(
    env: GastroEnv,
    task: TaskSpec,
    count: int,
    out_dir,
    instructions: list[str],
    start_seed: int = 0,
    keep_failed: bool = True,
):
    """Record expert demos until `count` succeed; failures stay flagged on disk.

    Returns (successful demos, all demo paths). Seeds advance from start_seed;
    a run that cannot reach the count within 4x the budget raises.
    """
    from pathlib import Path

    from .records import record_demo

    cfg = env.config
    out = Path(out_dir)
    successes = []
    paths = []
    seed = start_seed
    attempts = 0
    # rotation-family demos alternate initial direction with seed parity; keep
    # the collected set direction-balanced by holding per-parity quotas
    balanced = "rotation" in task.task_id
    quota = {0: (count + 1) // 2, 1: count // 2}
    got = {0: 0, 1: 0}
    while len(successes) < count:
        if attempts >= 4 * count + 8:
            raise RuntimeError(
                f"expert produced {len(successes)}/{count} successes in {attempts} attempts"
            )
        if balanced and got[seed % 2] >= quota[seed % 2]:
            seed += 1
            continue
        rollout = scripted_expert(env, task, seed=seed, render=True)
        stem = out / f"{task.task_id}_{task.water}_{seed:04d}"
        instruction = instructions[len(paths) % len(instructions)]
        demo = record_demo(
            iter(rollout),
            stem,
            task,
            instruction,
            seed,
            rollout.engine.initial_snapshot(),
            cfg.sim.control_hz,
            (cfg.camera.height, cfg.camera.width),
        )
        if demo.outcome.success:
            successes.append(demo)
            got[seed % 2] += 1
            paths.append(demo.path)
        elif keep_failed:
            paths.append(demo.path)  # stored and flagged, excluded from training
        seed += 1
        attempts += 1
    return successes, paths
