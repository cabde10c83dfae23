"""Closed-loop policy evaluation and the ablation table.

Evaluation runs the 10 Hz loop with receding-horizon chunk execution:
render and encode an observation, sample a chunk, execute half of it, then
re-plan. Success comes from the task checker; reports carry raw per-sub-task
counts next to rates because percentage-only tables hide their denominators.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import Config, config_hash
from .rollout import RolloutEngine
from .simulate import GastroEnv
from .tasks import TaskOutcome, TaskSpec, make_task

ABLATION_MODES = ("ours", "regress", "scratch", "pretrained_only")


@dataclass
class EvalReport:
    task_id: str
    water: str
    trials: int
    seeds: list[int]
    success_count: int
    subtask_counts: dict[str, int]
    config_digest: str
    outcomes: list[TaskOutcome] = field(default_factory=list)

    @property
    def success_rate(self) -> float:
        return self.success_count / self.trials if self.trials else 0.0

    def validate(self) -> None:
        if not 0 <= self.success_count <= self.trials:
            raise ValueError("success count exceeds trials")
        recount = sum(1 for o in self.outcomes if o.success)
        if self.outcomes and recount != self.success_count:
            raise ValueError("stored outcomes disagree with the success count")

    def rows(self) -> list[list]:
        """CSV rows: one per sub-task plus the total, counts and rates."""
        out = []
        for name, count in self.subtask_counts.items():
            out.append([self.task_id, self.water, name, count, self.trials, count / self.trials])
        out.append(
            [self.task_id, self.water, "total", self.success_count, self.trials, self.success_rate]
        )
        return out


class ChunkPolicyRunner:
    """Receding-horizon execution of a chunk policy inside a rollout."""

    def __init__(self, policy, instruction: str, replan_every: int, sampler: str, seed: int):
        self.policy = policy
        self.instruction = instruction
        self.replan_every = replan_every
        self.sampler = sampler
        self.rng = np.random.default_rng(seed)
        self._chunk = None
        self._cursor = 0

    def action(self, engine: RolloutEngine) -> np.ndarray:
        if self._chunk is None or self._cursor >= self.replan_every:
            obs = engine.observation(self.instruction)
            self._chunk = self.policy.sample_chunk(obs, self.rng, sampler=self.sampler)
            self._cursor = 0
        act = self._chunk.action(self._cursor)
        self._cursor += 1
        return act


def run_policy_rollout(
    env: GastroEnv,
    task: TaskSpec,
    policy,
    seed: int,
    instruction: str,
    sampler: str = "fast_deterministic",
) -> TaskOutcome:
    cfg = env.config
    engine = RolloutEngine(
        env, task, seed=seed, magnet_jitter=cfg.evaluation.magnet_start_jitter
    )
    runner = ChunkPolicyRunner(policy, instruction, cfg.evaluation.replan_every, sampler, seed)
    max_ticks = int(task.time_budget_s * cfg.sim.control_hz)
    for _ in range(max_ticks):
        engine.tick(runner.action(engine))
        if engine.succeeded:
            break
    return engine.outcome()


def run_eval(
    env: GastroEnv,
    task: TaskSpec,
    policy,
    trials: int,
    seeds: list[int] | None = None,
    instruction: str | None = None,
    sampler: str = "fast_deterministic",
) -> EvalReport:
    """Success rate over seeded trials; deterministic per (policy, seed)."""
    from .instructions import template_for_task

    cfg = env.config
    if seeds is None:
        seeds = list(range(trials))
    if len(seeds) != trials:
        raise ValueError("seed list length must equal the trial count")
    if instruction is None:
        instruction = template_for_task(task.task_id, task.water).canonical
    outcomes = []
    subtask_counts: dict[str, int] = {}
    wins = 0
    for seed in seeds:
        outcome = run_policy_rollout(env, task, policy, seed, instruction, sampler)
        outcomes.append(outcome)
        wins += outcome.success
        for name, ok in outcome.subtasks:
            subtask_counts[name] = subtask_counts.get(name, 0) + int(ok)
    report = EvalReport(
        task_id=task.task_id,
        water=task.water,
        trials=trials,
        seeds=list(seeds),
        success_count=wins,
        subtask_counts=subtask_counts,
        config_digest=config_hash(cfg),
        outcomes=outcomes,
    )
    report.validate()
    return report


def default_trials(cfg: Config, task_id: str) -> int:
    return {
        "navigation": cfg.evaluation.trials_navigation,
        "rotation": cfg.evaluation.trials_rotation,
        "view_adjustment": cfg.evaluation.trials_view,
        "view_rotation": cfg.evaluation.trials_view_rotation,
    }[task_id]


def run_ablation(
    env: GastroEnv,
    tasks: list[TaskSpec],
    checkpoints: dict[str, object],
    trials: int | None = None,
) -> dict[str, dict[str, EvalReport]]:
    """Evaluate mode -> task -> report for the four policy variants.

    checkpoints maps mode name (ours / regress / scratch / pretrained_only)
    to a loaded policy. Missing modes raise: training them is the CLI's job.
    """
    for mode in checkpoints:
        if mode not in ABLATION_MODES:
            raise ValueError(f"unknown ablation mode {mode!r}")
    table: dict[str, dict[str, EvalReport]] = {}
    for mode, policy in checkpoints.items():
        table[mode] = {}
        for task in tasks:
            n = trials if trials is not None else default_trials(env.config, task.task_id)
            table[mode][task.name] = run_eval(env, task, policy, trials=n)
    return table


def write_report_csv(reports: list[EvalReport], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["task", "water", "subtask", "successes", "trials", "rate"])
        for report in reports:
            for row in report.rows():
                writer.writerow(row)


def write_ablation_csv(table: dict[str, dict[str, EvalReport]], path: str | Path) -> None:
    """Mode rows x task columns of total success rates."""
    tasks = sorted({t for by_task in table.values() for t in by_task})
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["mode"] + tasks)
        for mode in ABLATION_MODES:
            if mode not in table:
                continue
            row = [mode]
            for t in tasks:
                rep = table[mode].get(t)
                row.append(f"{rep.success_rate:.3f}" if rep else "")
            writer.writerow(row)
