"""Dataclass configuration for the whole stack plus INI-file load/save.

Every tunable the simulator, expert, policy, and harness use lives here so a
single human-readable config file pins a run. `config_hash` names run
directories; two runs with equal hashes saw identical configuration.
"""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import io
import os
from dataclasses import dataclass, field

import numpy as np

from .arm import DEFAULT_DH_TABLE, DEFAULT_JOINT_LIMITS, DHRow, MountTransform
from .magnetics import PhysicalConstants

CONFIG_ENV_VAR = "CAPSIM_CONFIG"


@dataclass
class MagneticsConfig:
    mu0: float = PhysicalConstants().mu0
    magnet_moment: float = 119.6  # actuating magnet, A*m^2
    capsule_moment: float = 0.126  # capsule internal magnet, A*m^2
    min_separation: float = 0.02  # force clamp floor, m
    max_force: float = 5.0  # hard cap on applied force, N

    def constants(self) -> PhysicalConstants:
        return PhysicalConstants(mu0=self.mu0)


@dataclass
class ArmConfig:
    dh_table: tuple[DHRow, ...] = DEFAULT_DH_TABLE
    joint_limits: tuple[float, ...] = DEFAULT_JOINT_LIMITS
    mount_translation: tuple[float, float, float] = (0.0, 0.0, 0.037)
    mount_rotation: tuple[float, float, float, float] = (1.0, 0.0, 0.0, 0.0)
    home_joints: tuple[float, ...] = (0.0, 0.5, 0.0, -1.2, 0.0, 0.9, 0.0)

    def mount(self) -> MountTransform:
        return MountTransform(
            translation=np.array(self.mount_translation),
            rotation=np.array(self.mount_rotation),
        )


@dataclass
class WorkspaceConfig:
    minimum: tuple[float, float, float] = (-0.13, -0.13, 0.105)
    maximum: tuple[float, float, float] = (0.13, 0.13, 0.40)
    max_linear_mm_s: float = 60.0
    max_angular_rad_s: float = 2.0


@dataclass
class CapsuleConfig:
    mass: float = 4.56e-3  # kg
    length: float = 0.026  # m
    diameter: float = 0.015  # m


@dataclass
class StomachConfig:
    scale: float = 1.0
    center: tuple[float, float, float] = (0.0, 0.0, 0.0)
    wall_noise_amplitude: float = 0.0012  # full water line only, m


@dataclass
class FluidConfig:
    water_density: float = 1000.0  # kg/m^3
    drag_air: float = 0.02  # N*s/m
    drag_water: float = 0.2  # N*s/m
    drag_angular: float = 1e-5  # N*m*s
    gravity: float = 9.81  # m/s^2


@dataclass
class SimConfig:
    substep_dt: float = 0.01  # s, integrator step
    control_hz: float = 10.0  # action / record rate
    contact_friction: float = 0.4
    escape_tolerance: float = 1e-3  # m, fault if projection fails by more


@dataclass
class TaskConfig:
    time_budget_s: float = 60.0
    rotation_angle_deg: float = 90.0
    rotation_tol_deg: float = 10.0
    view_tol_deg: float = 15.0
    view_dwell_s: float = 1.0
    # capsule long-axis pitch setpoints per water line, degrees
    view_targets_one_third_deg: tuple[float, ...] = (25.0, 0.0, -25.0)
    view_targets_one_half_deg: tuple[float, ...] = (25.0, 0.0, -25.0)
    view_targets_full_deg: tuple[float, ...] = (25.0, 0.0, -25.0)
    navigation_water: str = "one_half"
    rotation_water: str = "one_half"


@dataclass
class ExpertConfig:
    noise_std: float = 0.12  # fraction of max command, per axis
    lateral_lead: float = 0.035  # m, magnet offset toward the next waypoint
    hover_gain: float = 12.0  # pull-ratio per m/s of vertical velocity error
    servo_gain: float = 1.5  # 1/s, proportional magnet pose tracking
    servo_gain_ang: float = 2.5  # 1/s
    yaw_rate_deg_s: float = 45.0
    settle_s: float = 1.0
    start_jitter: float = 0.002  # m, seeded capsule start randomization
    magnet_start_jitter: float = 0.03  # m, seeded lateral magnet start offset


@dataclass
class PolicyConfig:
    chunk_len: int = 16
    diffusion_steps: int = 100
    fast_sampler_steps: int = 5
    hidden: tuple[int, ...] = (256, 256)
    image_embed: int = 16  # per camera
    text_embed: int = 32
    proprio_embed: int = 32
    proprio_freqs: int = 16
    sigma_f: float = 1.0
    time_freqs: int = 8
    freq_embed_freqs: int = 4
    p_img: float = 0.1
    p_txt: float = 0.1
    p_proprio: float = 0.1
    feature_seed: int = 7
    patch: int = 8  # image featurizer patch size


@dataclass
class TrainingConfig:
    learning_rate: float = 1e-3
    batch_size: int = 64
    steps: int = 4000
    pretrain_steps: int = 4000
    seed: int = 0
    log_every: int = 100


@dataclass
class EvalConfig:
    replan_every: int = 8  # ticks, = chunk_len / 2
    magnet_start_jitter: float = 0.01  # m, trial diversity at eval time
    trials_navigation: int = 5
    trials_rotation: int = 10
    trials_view: int = 5
    trials_view_rotation: int = 5


@dataclass
class CameraConfig:
    width: int = 64
    height: int = 64
    fov_deg: float = 90.0
    max_depth: float = 0.12
    march_steps: int = 28


@dataclass
class TeleopConfig:
    port: int = 8765
    time_scale: float = 1.0  # >1 speeds the wall-clock loop (tests only)
    frame_size: int = 64


@dataclass
class Config:
    magnetics: MagneticsConfig = field(default_factory=MagneticsConfig)
    arm: ArmConfig = field(default_factory=ArmConfig)
    workspace: WorkspaceConfig = field(default_factory=WorkspaceConfig)
    capsule: CapsuleConfig = field(default_factory=CapsuleConfig)
    stomach: StomachConfig = field(default_factory=StomachConfig)
    fluid: FluidConfig = field(default_factory=FluidConfig)
    sim: SimConfig = field(default_factory=SimConfig)
    tasks: TaskConfig = field(default_factory=TaskConfig)
    expert: ExpertConfig = field(default_factory=ExpertConfig)
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    evaluation: EvalConfig = field(default_factory=EvalConfig)
    camera: CameraConfig = field(default_factory=CameraConfig)
    teleop: TeleopConfig = field(default_factory=TeleopConfig)


def _encode_value(value) -> str:
    if isinstance(value, (tuple, list)):
        return " ".join(_encode_value(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _encode_dh(table: tuple[DHRow, ...]) -> str:
    rows = [f"{r.a!r} {r.alpha!r} {r.d!r} {r.theta_offset!r}" for r in table]
    return "\n" + "\n".join(rows)


def _decode_dh(text: str) -> tuple[DHRow, ...]:
    rows = []
    for line in text.strip().splitlines():
        a, alpha, d, off = (float(tok) for tok in line.split())
        rows.append(DHRow(a, alpha, d, off))
    if len(rows) != 7:
        raise ValueError(f"D-H table needs 7 rows, got {len(rows)}")
    return tuple(rows)


def _decode_value(text: str, template):
    if isinstance(template, bool):
        return text.strip().lower() in ("1", "true", "yes", "on")
    if isinstance(template, int):
        return int(text)
    if isinstance(template, float):
        return float(text)
    if isinstance(template, str):
        return text.strip()
    if isinstance(template, tuple):
        inner = template[0] if template else 0.0
        return tuple(_decode_value(tok, inner) for tok in text.split())
    raise TypeError(f"cannot decode config value of type {type(template)}")


def save_config(cfg: Config, path: str) -> None:
    parser = configparser.ConfigParser()
    for section_field in dataclasses.fields(cfg):
        section = getattr(cfg, section_field.name)
        parser[section_field.name] = {}
        for f in dataclasses.fields(section):
            value = getattr(section, f.name)
            if f.name == "dh_table":
                parser[section_field.name][f.name] = _encode_dh(value)
            else:
                parser[section_field.name][f.name] = _encode_value(value)
    with open(path, "w") as fh:
        parser.write(fh)


def load_config(path: str | None = None) -> Config:
    """Defaults, overridden by an INI file given explicitly or via $CAPSIM_CONFIG."""
    cfg = Config()
    if path is None:
        path = os.environ.get(CONFIG_ENV_VAR)
    if path is None:
        return cfg
    parser = configparser.ConfigParser()
    with open(path) as fh:
        parser.read_file(fh)
    for section_name in parser.sections():
        if not hasattr(cfg, section_name):
            raise ValueError(f"unknown config section [{section_name}]")
        section = getattr(cfg, section_name)
        names = {f.name: f for f in dataclasses.fields(section)}
        for key, text in parser[section_name].items():
            if key not in names:
                raise ValueError(f"unknown config key {section_name}.{key}")
            if key == "dh_table":
                setattr(section, key, _decode_dh(text))
            else:
                setattr(section, key, _decode_value(text, getattr(section, key)))
    return cfg


def config_hash(cfg: Config) -> str:
    """Stable 8-hex digest of the full configuration."""
    buf = io.StringIO()
    for section_field in sorted(dataclasses.fields(cfg), key=lambda f: f.name):
        section = getattr(cfg, section_field.name)
        for f in sorted(dataclasses.fields(section), key=lambda f: f.name):
            value = getattr(section, f.name)
            if f.name == "dh_table":
                text = _encode_dh(value)
            else:
                text = _encode_value(value)
            buf.write(f"{section_field.name}.{f.name}={text}\n")
    return hashlib.sha256(buf.getvalue().encode()).hexdigest()[:8]
