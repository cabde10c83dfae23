"""Task definitions and success checkers for the four task families.

Families: navigation (ordered landmark visits), rotation (90 degrees out,
back into place, 90 degrees the other way), view_adjustment (hold commanded
long-axis pitches at a water line), and view_rotation (conjunction of the
last two). Checkers are incremental so the teleop service can stream
sub-task progress; check_task folds a checker over a recorded history.

Sign convention: clockwise means negative yaw viewed from +z. The rotation
checker accepts the mirrored direction order, since only the excursion
profile (out / back / opposite) is observable in a yaw trace.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .config import Config
from .geometry import pitch_of_axis, unwrap_angle, yaw_of_axis
from .simulate import SimState
from .stomach import LANDMARK_ORDER, StomachModel

TASK_FAMILIES = ("navigation", "rotation", "view_adjustment", "view_rotation")

# interior start points: navigation releases in the esophagus, the rotation
# and view families start settled in the gastric body
BODY_START_POSITION = np.array([-0.008, 0.0, -0.018])


class UnknownTaskError(ValueError):
    pass


@dataclass(frozen=True)
class TaskSpec:
    task_id: str
    water: str
    time_budget_s: float = 60.0
    landmarks: tuple[str, ...] = LANDMARK_ORDER
    rotation_angle_deg: float = 90.0
    rotation_tol_deg: float = 10.0
    view_targets_deg: tuple[float, ...] = ()
    view_tol_deg: float = 15.0
    view_dwell_s: float = 1.0
    start_in_body: bool = False

    @property
    def name(self) -> str:
        return f"{self.task_id}[{self.water}]"


@dataclass
class TaskOutcome:
    task_id: str
    subtasks: list[tuple[str, bool]]
    success: bool

    def to_dict(self) -> dict:
        return {
            "task": self.task_id,
            "subtasks": [[name, bool(ok)] for name, ok in self.subtasks],
            "success": bool(self.success),
        }

    @staticmethod
    def from_dict(d: dict) -> "TaskOutcome":
        return TaskOutcome(
            task_id=d["task"],
            subtasks=[(name, bool(ok)) for name, ok in d["subtasks"]],
            success=bool(d["success"]),
        )


def make_task(task_id: str, cfg: Config, water: str | None = None) -> TaskSpec:
    t = cfg.tasks
    if task_id == "navigation":
        return TaskSpec(
            task_id=task_id,
            water=water or t.navigation_water,
            time_budget_s=t.time_budget_s,
            rotation_tol_deg=t.rotation_tol_deg,
        )
    if task_id == "rotation":
        return TaskSpec(
            task_id=task_id,
            water=water or t.rotation_water,
            time_budget_s=t.time_budget_s,
            rotation_angle_deg=t.rotation_angle_deg,
            rotation_tol_deg=t.rotation_tol_deg,
            start_in_body=True,
        )
    if task_id in ("view_adjustment", "view_rotation"):
        w = water or "one_half"
        targets = {
            "one_third": t.view_targets_one_third_deg,
            "one_half": t.view_targets_one_half_deg,
            "full": t.view_targets_full_deg,
        }[w]
        return TaskSpec(
            task_id=task_id,
            water=w,
            time_budget_s=t.time_budget_s,
            rotation_angle_deg=t.rotation_angle_deg,
            rotation_tol_deg=t.rotation_tol_deg,
            view_targets_deg=targets,
            view_tol_deg=t.view_tol_deg,
            view_dwell_s=t.view_dwell_s,
            start_in_body=True,
        )
    raise UnknownTaskError(f"unknown task id {task_id!r}")


class _NavigationTrack:
    def __init__(self, task: TaskSpec, model: StomachModel):
        self.regions = [model.landmark(name) for name in task.landmarks]
        self.reached = [False] * len(self.regions)
        self.next_idx = 0

    def update(self, state: SimState) -> None:
        if self.next_idx >= len(self.regions):
            return
        if self.regions[self.next_idx].contains(state.capsule.pose.position):
            self.reached[self.next_idx] = True
            self.next_idx += 1

    def subtasks(self) -> list[tuple[str, bool]]:
        return [
            (f"navigate_to_{r.name}", ok) for r, ok in zip(self.regions, self.reached)
        ]


class _RotationTrack:
    """Three-phase yaw profile: +/-90 out, back near zero, 90 opposite.

    Yaw is the capsule long-axis azimuth, unwrapped relative to the first
    sample. Near-vertical axes (|pitch| > 70 deg) have no meaningful yaw, so
    the tracker holds its last value through such transients.
    """

    _PITCH_GATE = np.deg2rad(70.0)

    def __init__(self, task: TaskSpec):
        self.angle = np.deg2rad(task.rotation_angle_deg)
        self.tol = np.deg2rad(task.rotation_tol_deg)
        self.start_yaw: float | None = None
        self.rel_yaw = 0.0
        self._last = 0.0
        self.direction = 0  # -1 clockwise first, +1 counterclockwise first
        self.phase = 0  # 0: out, 1: back, 2: opposite

    def update(self, state: SimState) -> None:
        axis = state.capsule.axis
        gated = abs(pitch_of_axis(axis)) > self._PITCH_GATE
        yaw = self._last if gated else yaw_of_axis(axis, fallback=self._last)
        if self.start_yaw is None:
            self.start_yaw = yaw
            self._last = yaw
            return
        self._last = yaw
        self.rel_yaw = unwrap_angle(self.rel_yaw, yaw - self.start_yaw)
        if self.phase == 0:
            for sign in (-1.0, 1.0):
                if abs(self.rel_yaw - sign * self.angle) <= self.tol:
                    self.direction = int(sign)
                    self.phase = 1
                    break
        elif self.phase == 1:
            if abs(self.rel_yaw) <= self.tol:
                self.phase = 2
        elif self.phase == 2:
            if abs(self.rel_yaw + self.direction * self.angle) <= self.tol:
                self.phase = 3

    def subtasks(self) -> list[tuple[str, bool]]:
        return [
            ("rotate_90_out", self.phase >= 1),
            ("back_into_place", self.phase >= 2),
            ("rotate_90_opposite", self.phase >= 3),
        ]


class _ViewTrack:
    """Hold each commanded pitch within tolerance for the dwell time, in order."""

    def __init__(self, task: TaskSpec):
        self.targets = [np.deg2rad(v) for v in task.view_targets_deg]
        self.tol = np.deg2rad(task.view_tol_deg)
        self.dwell = task.view_dwell_s
        self.held = [False] * len(self.targets)
        self.next_idx = 0
        self._enter_time: float | None = None

    def update(self, state: SimState) -> None:
        if self.next_idx >= len(self.targets):
            return
        pitch = pitch_of_axis(state.capsule.axis)
        if abs(pitch - self.targets[self.next_idx]) <= self.tol:
            if self._enter_time is None:
                self._enter_time = state.time
            if state.time - self._enter_time >= self.dwell:
                self.held[self.next_idx] = True
                self.next_idx += 1
                self._enter_time = None
        else:
            self._enter_time = None

    def subtasks(self) -> list[tuple[str, bool]]:
        return [(f"hold_view_{i + 1}", ok) for i, ok in enumerate(self.held)]


class TaskChecker:
    """Feed SimStates in order; read the outcome at any point."""

    def __init__(self, task: TaskSpec, model: StomachModel):
        if task.task_id not in TASK_FAMILIES:
            raise UnknownTaskError(f"unknown task id {task.task_id!r}")
        self.task = task
        self._tracks = []
        if task.task_id == "navigation":
            self._tracks.append(_NavigationTrack(task, model))
        if task.task_id in ("rotation", "view_rotation"):
            self._tracks.append(_RotationTrack(task))
        if task.task_id in ("view_adjustment", "view_rotation"):
            self._tracks.append(_ViewTrack(task))
        self._start_time: float | None = None

    def update(self, state: SimState) -> None:
        if self._start_time is None:
            self._start_time = state.time
        if state.time - self._start_time > self.task.time_budget_s:
            return  # beyond the budget: progress freezes
        for track in self._tracks:
            track.update(state)

    def outcome(self) -> TaskOutcome:
        subtasks: list[tuple[str, bool]] = []
        for track in self._tracks:
            subtasks.extend(track.subtasks())
        success = bool(subtasks) and all(ok for _, ok in subtasks)
        return TaskOutcome(task_id=self.task.task_id, subtasks=subtasks, success=success)


def check_task(history, task: TaskSpec, model: StomachModel) -> TaskOutcome:
    """Evaluate a completed state history against a task."""
    checker = TaskChecker(task, model)
    n = 0
    for state in history:
        checker.update(state)
        n += 1
    if n == 0:
        raise ValueError("cannot check an empty state history")
    return checker.outcome()
