"""Dataset manifests: which demo files belong to which split.

The default fine-tune recipe mirrors the reference data mix: 12 navigation,
20 rotation, 10 view demos per water line, and 5 view+rotation demos per
water line (77 in all).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

MANIFEST_VERSION = 1

FINETUNE_RECIPE: tuple[tuple[str, str | None, int], ...] = (
    ("navigation", None, 12),
    ("rotation", None, 20),
    ("view_adjustment", "one_third", 10),
    ("view_adjustment", "one_half", 10),
    ("view_adjustment", "full", 10),
    ("view_rotation", "one_third", 5),
    ("view_rotation", "one_half", 5),
    ("view_rotation", "full", 5),
)


@dataclass
class ManifestEntry:
    path: str
    task_id: str
    water: str
    seed: int
    success: bool


@dataclass
class Manifest:
    split: str  # pretrain | finetune | eval
    entries: list[ManifestEntry]

    def counts(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for e in self.entries:
            key = f"{e.task_id}[{e.water}]"
            out[key] = out.get(key, 0) + 1
        return out

    def total(self) -> int:
        return len(self.entries)

    def to_dict(self) -> dict:
        return {
            "version": MANIFEST_VERSION,
            "split": self.split,
            "entries": [vars(e) for e in self.entries],
            "counts": self.counts(),
            "total": self.total(),
        }


def build_manifest(demo_paths, split: str, out_path: str | Path | None = None) -> Manifest:
    """List demo files with their task metadata; every file must exist."""
    from .records import load_demonstration

    if split not in ("pretrain", "finetune", "eval"):
        raise ValueError(f"unknown split {split!r}")
    paths = [Path(p) for p in demo_paths]
    if not paths:
        raise ValueError("cannot build a manifest from an empty demo set")
    entries = []
    for p in paths:
        if not p.exists():
            raise FileNotFoundError(f"demo file missing: {p}")
        demo = load_demonstration(p)
        entries.append(
            ManifestEntry(
                path=str(p),
                task_id=demo.task_id,
                water=demo.water,
                seed=demo.seed,
                success=demo.outcome.success,
            )
        )
    manifest = Manifest(split=split, entries=entries)
    if out_path is not None:
        save_manifest(manifest, out_path)
    return manifest


def save_manifest(manifest: Manifest, path: str | Path) -> None:
    with open(path, "w") as fh:
        json.dump(manifest.to_dict(), fh, indent=1)


def load_manifest(path: str | Path) -> Manifest:
    with open(path) as fh:
        d = json.load(fh)
    if d["version"] != MANIFEST_VERSION:
        raise ValueError(f"unsupported manifest version {d['version']}")
    entries = [ManifestEntry(**e) for e in d["entries"]]
    return Manifest(split=d["split"], entries=entries)


def load_manifest_demos(manifest: Manifest, successful_only: bool = True):
    """Load every demo a manifest lists (flagged failures excluded by default)."""
    from .records import load_demonstration

    demos = []
    for e in manifest.entries:
        if successful_only and not e.success:
            continue
        demos.append(load_demonstration(e.path))
    return demos
