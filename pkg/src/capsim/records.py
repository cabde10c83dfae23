"""Demonstration storage: one JSONL file per demo plus a frames blob.

Line 1 is a header (task, instruction, seed, initial state snapshot), then
one record line per 10 Hz control tick, then a final outcome line. Camera
frames go to a sidecar binary blob: a little-endian header of width, height
and frame count (three uint32) followed by row-major float32 frames, in
append order; records reference frames by index. JSON float round-trips are
exact for float64, so numeric fields survive storage bit-for-bit.

Failed demonstrations are stored and flagged, never deleted.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from .cameras import CameraFrame
from .conditioning import encode_instruction, normalized_proprio
from .config import Config
from .geometry import Pose
from .simulate import CapsuleBody, GastroEnv, SimState
from .stomach import StomachModel
from .tasks import TaskOutcome, TaskSpec, check_task

FORMAT_VERSION = 1


class DemoFormatError(ValueError):
    pass


@dataclass
class TrajectoryRecord:
    timestamp: float
    joints: np.ndarray
    magnet_pose: Pose
    capsule_pose: Pose
    action: np.ndarray
    frame_indices: tuple[int, int]
    water: str
    ik_residual: float = 0.0

    def __post_init__(self):
        self.joints = np.asarray(self.joints, dtype=float).reshape(7)
        self.action = np.asarray(self.action, dtype=float).reshape(7)

    def to_json(self) -> dict:
        return {
            "type": "record",
            "t": self.timestamp,
            "joints": self.joints.tolist(),
            "magnet_pose": self.magnet_pose.as_vector().tolist(),
            "capsule_pose": self.capsule_pose.as_vector().tolist(),
            "action": self.action.tolist(),
            "frames": list(self.frame_indices),
            "water": self.water,
            "ik_residual": self.ik_residual,
        }

    @staticmethod
    def from_json(d: dict) -> "TrajectoryRecord":
        return TrajectoryRecord(
            timestamp=d["t"],
            joints=np.array(d["joints"]),
            magnet_pose=Pose.from_vector(np.array(d["magnet_pose"])),
            capsule_pose=Pose.from_vector(np.array(d["capsule_pose"])),
            action=np.array(d["action"]),
            frame_indices=(d["frames"][0], d["frames"][1]),
            water=d["water"],
            ik_residual=d.get("ik_residual", 0.0),
        )


@dataclass
class Demonstration:
    task_id: str
    water: str
    instruction: str
    seed: int
    records: list[TrajectoryRecord]
    outcome: TaskOutcome
    frames: np.ndarray  # (n_frames, h, w) float32
    initial: dict
    control_hz: float = 10.0
    path: Path | None = None

    def instruction_tokens(self, seed: int) -> np.ndarray:
        return encode_instruction(self.instruction, seed)

    def frame_pair(self, record_idx: int) -> tuple[CameraFrame, CameraFrame]:
        i0, i1 = self.records[record_idx].frame_indices
        h, w = self.frames.shape[1:]
        return (
            CameraFrame(width=w, height=h, intensity=self.frames[i0]),
            CameraFrame(width=w, height=h, intensity=self.frames[i1]),
        )


class DemoWriter:
    """Streams records to <stem>.jsonl and frames to <stem>.frames."""

    def __init__(
        self,
        stem: str | Path,
        task: TaskSpec,
        instruction: str,
        seed: int,
        initial: dict,
        control_hz: float,
        frame_shape: tuple[int, int],
    ):
        self.stem = Path(stem)
        self.jsonl_path = self.stem.with_suffix(".jsonl")
        self.frames_path = self.stem.with_suffix(".frames")
        self.stem.parent.mkdir(parents=True, exist_ok=True)
        self._jsonl = open(self.jsonl_path, "w")
        self._frames = open(self.frames_path, "wb")
        self._frame_shape = frame_shape
        self._frame_count = 0
        self._last_t: float | None = None
        self._frames.write(struct.pack("<III", frame_shape[1], frame_shape[0], 0))
        header = {
            "type": "header",
            "version": FORMAT_VERSION,
            "task": task.task_id,
            "water": task.water,
            "instruction": instruction,
            "seed": seed,
            "control_hz": control_hz,
            "initial": initial,
            "frame_file": self.frames_path.name,
        }
        self._jsonl.write(json.dumps(header) + "\n")

    def append(self, record: TrajectoryRecord) -> None:
        if self._last_t is not None and record.timestamp <= self._last_t:
            raise DemoFormatError(
                f"timestamp regression: {record.timestamp} after {self._last_t}"
            )
        self._last_t = record.timestamp
        self._jsonl.write(json.dumps(record.to_json()) + "\n")

    def append_frames(self, frames: tuple[CameraFrame, CameraFrame]) -> tuple[int, int]:
        idx = []
        for f in frames:
            if f.intensity.shape != self._frame_shape:
                raise DemoFormatError("frame shape does not match the blob header")
            self._frames.write(f.intensity.astype("<f4").tobytes())
            idx.append(self._frame_count)
            self._frame_count += 1
        return idx[0], idx[1]

    def finalize(self, outcome: TaskOutcome) -> Path:
        out = dict(outcome.to_dict())
        out["type"] = "outcome"
        self._jsonl.write(json.dumps(out) + "\n")
        self._jsonl.close()
        self._frames.seek(8)
        self._frames.write(struct.pack("<I", self._frame_count))
        self._frames.close()
        return self.jsonl_path

    def discard(self) -> None:
        self._jsonl.close()
        self._frames.close()
        self.jsonl_path.unlink(missing_ok=True)
        self.frames_path.unlink(missing_ok=True)


def record_demo(
    rollout,
    stem: str | Path,
    task: TaskSpec,
    instruction: str,
    seed: int,
    initial: dict,
    control_hz: float,
    frame_shape: tuple[int, int],
) -> Demonstration:
    """Consume a tick iterator, write the demo, return the loaded result.

    Every tick must carry rendered frames. An empty rollout raises and emits
    no file; the final outcome is recomputed by the caller's checker via the
    last tick's engine state (passed in the ticks).
    """
    writer: DemoWriter | None = None
    outcome: TaskOutcome | None = None
    try:
        for tick, tick_outcome in rollout:
            if writer is None:
                writer = DemoWriter(
                    stem, task, instruction, seed, initial, control_hz, frame_shape
                )
            if tick.frames is None:
                raise DemoFormatError("record_demo needs rendered frames on every tick")
            fidx = writer.append_frames(tick.frames)
            writer.append(
                TrajectoryRecord(
                    timestamp=tick.state.time,
                    joints=tick.joints,
                    magnet_pose=tick.magnet_pose,
                    capsule_pose=tick.state.capsule.pose,
                    action=tick.action,
                    frame_indices=fidx,
                    water=task.water,
                    ik_residual=tick.ik_residual,
                )
            )
            outcome = tick_outcome
    except Exception:
        if writer is not None:
            writer.discard()
        raise
    if writer is None or outcome is None:
        raise ValueError("empty rollout: nothing to record")
    writer.finalize(outcome)
    return load_demonstration(stem)


def load_demonstration(stem: str | Path) -> Demonstration:
    stem = Path(stem)
    jsonl_path = stem if stem.suffix == ".jsonl" else stem.with_suffix(".jsonl")
    header = None
    records: list[TrajectoryRecord] = []
    outcome = None
    with open(jsonl_path) as fh:
        for line in fh:
            d = json.loads(line)
            if d["type"] == "header":
                header = d
            elif d["type"] == "record":
                records.append(TrajectoryRecord.from_json(d))
            elif d["type"] == "outcome":
                outcome = TaskOutcome.from_dict(d)
            else:
                raise DemoFormatError(f"unknown line type {d['type']!r}")
    if header is None or outcome is None:
        raise DemoFormatError(f"{jsonl_path} is missing its header or outcome line")
    frames = _load_frames(jsonl_path.parent / header["frame_file"])
    return Demonstration(
        task_id=header["task"],
        water=header["water"],
        instruction=header["instruction"],
        seed=header["seed"],
        records=records,
        outcome=outcome,
        frames=frames,
        initial=header["initial"],
        control_hz=header["control_hz"],
        path=jsonl_path,
    )


def _load_frames(path: Path) -> np.ndarray:
    with open(path, "rb") as fh:
        width, height, count = struct.unpack("<III", fh.read(12))
        data = np.frombuffer(fh.read(4 * width * height * count), dtype="<f4")
    return data.reshape(count, height, width).astype(np.float32)


def validate_demonstration(demo: Demonstration, env: GastroEnv, task: TaskSpec) -> None:
    """Schema, timestamp monotonicity/spacing, and outcome recomputation."""
    if not demo.records:
        raise DemoFormatError("demonstration has no records")
    dt = 1.0 / demo.control_hz
    prev = None
    for r in demo.records:
        if prev is not None:
            gap = r.timestamp - prev
            if gap <= 0:
                raise DemoFormatError("timestamps must be strictly increasing")
            if abs(gap - dt) > 1e-3:
                raise DemoFormatError(f"record spacing {gap:.6f}s is off the 10 Hz grid")
        prev = r.timestamp
    recomputed = check_task(states_from_records(demo, env), task, env.model)
    if recomputed.to_dict() != demo.outcome.to_dict():
        raise DemoFormatError("stored outcome does not match recomputation")


def states_from_records(demo: Demonstration, env: GastroEnv):
    """Minimal SimState sequence for checker recomputation."""
    from .magnetics import Dipole

    water = env.model.water_line(demo.water)
    init = demo.initial
    cap0 = CapsuleBody(pose=Pose.from_vector(np.array(init["capsule_pose"])))
    yield SimState(
        time=float(init.get("time", 0.0)),
        capsule=cap0,
        magnet=Dipole(np.zeros(3), np.array(init["magnet_pose"][:3])),
        water=water,
        rng_seed=int(init["rng_seed"]),
    )
    for r in demo.records:
        cap = CapsuleBody(pose=r.capsule_pose)
        yield SimState(
            time=r.timestamp,
            capsule=cap,
            magnet=Dipole(np.zeros(3), r.magnet_pose.position),
            water=water,
            rng_seed=int(init["rng_seed"]),
        )


@lru_cache(maxsize=4)
def _stomach_bounds(scale: float, center: tuple[float, float, float]):
    return StomachModel.default(scale=scale, center=np.array(center)).bounds()


def demo_observation_parts(demo: Demonstration, t: int, cfg: Config):
    """(frames, normalized proprio, control frequency) for record t."""
    r = demo.records[t]
    frames = demo.frame_pair(t)
    bounds = _stomach_bounds(cfg.stomach.scale, tuple(cfg.stomach.center))
    proprio = normalized_proprio(r.joints, r.magnet_pose, r.capsule_pose, cfg, bounds)
    return frames, proprio, demo.control_hz
