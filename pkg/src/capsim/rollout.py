"""Closed-loop rollout engine at the 10 Hz control rate.

One engine instance owns a SimState, the magnet pose, best-effort joint
angles, and the task checker. Every control tick integrates the velocity
command, runs the physics substeps, refreshes IK, and feeds the checker.
The expert, the policy evaluator, demo replay, and the teleop service all
drive the same engine.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .actions import action_bounds, clamp_action_array
from .arm import (
    ArmState,
    damped_ls_ik,
    integrate_velocity_command,
    magnet_moment_vector,
    orientation_for_moment,
    tcp_from_magnet,
)
from .cameras import CameraFrame, render_pair
from .conditioning import Observation, encode_instruction, normalized_proprio
from .geometry import Pose
from .magnetics import Dipole
from .simulate import GastroEnv, SimState
from .tasks import BODY_START_POSITION, TaskChecker, TaskOutcome, TaskSpec


@dataclass
class TickData:
    index: int
    state: SimState
    magnet_pose: Pose
    joints: np.ndarray
    ik_residual: float
    action: np.ndarray
    frames: tuple[CameraFrame, CameraFrame] | None


class RolloutEngine:
    def __init__(
        self,
        env: GastroEnv,
        task: TaskSpec,
        seed: int = 0,
        initial: dict | None = None,
        magnet_jitter: float | None = None,
    ):
        self.env = env
        self.task = task
        self.seed = seed
        cfg = env.config
        self.bounds = action_bounds(cfg.workspace)
        self.dt_ctrl = 1.0 / cfg.sim.control_hz
        self.n_sub = max(1, round(self.dt_ctrl / cfg.sim.substep_dt))
        self.sub_dt = self.dt_ctrl / self.n_sub
        self.ws_min = np.array(cfg.workspace.minimum)
        self.ws_max = np.array(cfg.workspace.maximum)

        if initial is not None:
            self.state = _state_from_snapshot(env, initial, task.water)
            self.magnet_pose = Pose.from_vector(np.array(initial["magnet_pose"]))
            self.joints = np.array(initial["joints"])
        else:
            start = BODY_START_POSITION if task.start_in_body else None
            self.state = env.initial_state(task.water, seed=seed, start_position=start)
            self.magnet_pose = env.initial_magnet_pose(
                self.state.capsule.pose.position, self.state.water, self.state.capsule
            )
            jitter = cfg.expert.magnet_start_jitter if magnet_jitter is None else magnet_jitter
            if jitter > 0:
                jrng = np.random.default_rng((seed * 2654435761 + 97) % 2**31)
                offset = jrng.uniform(-jitter, jitter, size=2)
                pos = self.magnet_pose.position.copy()
                pos[:2] = np.clip(pos[:2] + offset, self.ws_min[:2], self.ws_max[:2])
                self.magnet_pose = Pose(pos, self.magnet_pose.orientation)
            if task.start_in_body:
                # in-body tasks park the magnet with a horizontal moment that
                # already holds the capsule's heading (field = -moment here,
                # at half the coaxial pull, hence the sqrt(2) height trim)
                axis = self.state.capsule.axis
                moment_dir = -np.array([axis[0], axis[1], 0.0])
                moment_dir /= np.linalg.norm(moment_dir)
                pos = self.magnet_pose.position.copy()
                cap_z = self.state.capsule.pose.position[2]
                pos[2] = cap_z + (pos[2] - cap_z) / np.sqrt(np.sqrt(2.0))
                self.magnet_pose = Pose(
                    position=pos, orientation=orientation_for_moment(moment_dir)
                )
                self.state.magnet = Dipole(
                    moment=magnet_moment_vector(self.magnet_pose, cfg.magnetics.magnet_moment),
                    position=self.magnet_pose.position.copy(),
                )
            self.joints, _ = self._solve_joints(np.array(cfg.arm.home_joints))
        self.ik_residual = 0.0
        self.checker = TaskChecker(task, env.model)
        self.checker.update(self.state)
        self.tick_index = 0

    def _solve_joints(self, guess: np.ndarray) -> tuple[np.ndarray, float]:
        cfg = self.env.config
        tcp = tcp_from_magnet(self.magnet_pose, cfg.arm.mount())
        solved, residual = damped_ls_ik(cfg.arm.dh_table, tcp, ArmState(guess), cfg.arm.joint_limits)
        return solved.joints, residual

    def initial_snapshot(self) -> dict:
        """Everything a replay needs to restart this rollout exactly."""
        cap = self.state.capsule
        return {
            "capsule_pose": cap.pose.as_vector().tolist(),
            "linear_velocity": cap.linear_velocity.tolist(),
            "angular_velocity": cap.angular_velocity.tolist(),
            "magnet_pose": self.magnet_pose.as_vector().tolist(),
            "joints": self.joints.tolist(),
            "rng_seed": self.state.rng_seed,
            "time": self.state.time,
        }

    def render(self) -> tuple[CameraFrame, CameraFrame]:
        return render_pair(self.env, self.state)

    def tick(self, action: np.ndarray, render: bool = False) -> TickData:
        """Apply one 7-D velocity command for one control period."""
        action = clamp_action_array(np.asarray(action, dtype=float).reshape(7), self.bounds)
        self.magnet_pose = integrate_velocity_command(
            self.magnet_pose, action, self.dt_ctrl, self.ws_min, self.ws_max
        )
        for _ in range(self.n_sub):
            self.state = self.env.step(self.state, self.magnet_pose, self.sub_dt)
        self.joints, self.ik_residual = self._solve_joints(self.joints)
        self.checker.update(self.state)
        self.tick_index += 1
        frames = self.render() if render else None
        return TickData(
            index=self.tick_index,
            state=self.state,
            magnet_pose=self.magnet_pose,
            joints=self.joints.copy(),
            ik_residual=self.ik_residual,
            action=action,
            frames=frames,
        )

    def observation(
        self, instruction: str, frames: tuple[CameraFrame, CameraFrame] | None = None
    ) -> Observation:
        cfg = self.env.config
        if frames is None:
            frames = self.render()
        proprio = normalized_proprio(
            self.joints, self.magnet_pose, self.state.capsule.pose, cfg, self.env.model.bounds()
        )
        return Observation(
            frames=frames,
            proprio=proprio,
            control_frequency=cfg.sim.control_hz,
            instruction=encode_instruction(instruction, cfg.policy.feature_seed),
        )

    def outcome(self) -> TaskOutcome:
        return self.checker.outcome()

    @property
    def time(self) -> float:
        return self.state.time

    @property
    def succeeded(self) -> bool:
        return self.checker.outcome().success


def _state_from_snapshot(env: GastroEnv, snap: dict, water_fraction: str) -> SimState:
    from .magnetics import Dipole
    from .simulate import CapsuleBody

    cfg = env.config
    cap = CapsuleBody(
        pose=Pose.from_vector(np.array(snap["capsule_pose"])),
        linear_velocity=np.array(snap["linear_velocity"]),
        angular_velocity=np.array(snap["angular_velocity"]),
        mass=cfg.capsule.mass,
        length=cfg.capsule.length,
        diameter=cfg.capsule.diameter,
        moment=cfg.magnetics.capsule_moment,
    )
    magnet_pose = Pose.from_vector(np.array(snap["magnet_pose"]))
    from .arm import magnet_moment_vector

    magnet = Dipole(
        moment=magnet_moment_vector(magnet_pose, cfg.magnetics.magnet_moment),
        position=magnet_pose.position,
    )
    return SimState(
        time=float(snap.get("time", 0.0)),
        capsule=cap,
        magnet=magnet,
        water=env.model.water_line(water_fraction),
        rng_seed=int(snap["rng_seed"]),
    )
