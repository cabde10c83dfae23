"""Instruction templates and deterministic paraphrase augmentation.

Each task family has a template of skill verb + object noun + scene +
modality adverbial with paraphrase slot lists. Expansions keep the skill
and object lemmas verbatim (only the surrounding phrasing varies), so a
hashed bag-of-tokens text encoder still sees the task-defining words.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

WATER_PHRASES = {
    "one_third": "one third",
    "one_half": "one half",
    "full": "full",
}


@dataclass(frozen=True)
class InstructionTemplate:
    skill: str  # verb lemma, always present in outputs
    obj: str  # object noun, always present in outputs
    scene: str  # environment phrase
    modality: str  # adverbial describing how the skill is performed
    canonical: str
    prefixes: tuple[str, ...] = ("", "please ", "now ", "carefully ", "slowly ")
    scene_variants: tuple[str, ...] = ()
    tail_variants: tuple[str, ...] = ()

    def expansions(self) -> list[str]:
        """Canonical string first, then every paraphrase combination."""
        scenes = (self.scene,) + self.scene_variants
        tails = ("",) + self.tail_variants
        out = [self.canonical]
        seen = {self.canonical}
        for prefix, scene, tail in itertools.product(self.prefixes, scenes, tails):
            body = self.modality.format(skill=self.skill, obj=self.obj, scene=scene)
            text = f"{prefix}{body}{tail}"
            if text not in seen:
                seen.add(text)
                out.append(text)
        return out


def template_for_task(task_id: str, water: str = "one_half") -> InstructionTemplate:
    w = WATER_PHRASES.get(water, water)
    if task_id == "navigation":
        return InstructionTemplate(
            skill="navigate",
            obj="stomach",
            scene="through the stomach",
            modality="{skill} the capsule {scene}",
            canonical="navigate the capsule through the stomach",
            scene_variants=(
                "through the stomach model",
                "through the whole stomach",
                "through the stomach from the esophagus to the antrum",
            ),
            tail_variants=(
                " to the gastric antrum",
                " visiting every landmark",
                " along the planned route",
            ),
        )
    if task_id == "rotation":
        return InstructionTemplate(
            skill="rotate",
            obj="capsule",
            scene="in the stomach",
            modality="{skill} the {obj} 90 degrees clockwise then counterclockwise {scene}",
            canonical="rotate the capsule 90 degrees clockwise then counterclockwise",
            scene_variants=("in place", "inside the stomach", "where it is"),
            tail_variants=(" and return to the start", " coming back into place"),
        )
    if task_id == "view_adjustment":
        return InstructionTemplate(
            skill="adjust",
            obj="view",
            scene=f"at the {w} water line",
            modality="{skill} the camera {obj} {scene}",
            canonical=f"adjust the camera view at the {w} water line",
            scene_variants=(
                f"with the {w} water line",
                f"while the water line is {w}",
            ),
            tail_variants=(" through each target", " step by step"),
        )
    if task_id == "view_rotation":
        return InstructionTemplate(
            skill="adjust",
            obj="view",
            scene=f"at the {w} water line",
            modality="{skill} the camera {obj} and rotate 90 degrees each way {scene}",
            canonical=(
                f"adjust the camera view and rotate 90 degrees each way at the {w} water line"
            ),
            scene_variants=(f"with the {w} water line",),
            tail_variants=(" then return to the start",),
        )
    raise ValueError(f"no instruction template for task {task_id!r}")


def augment_instructions(template: InstructionTemplate, n: int, seed: int) -> list[str]:
    """n distinct paraphrases; index 0 is always the canonical instruction."""
    if n < 1:
        raise ValueError("need at least one instruction")
    pool = template.expansions()
    if n > len(pool):
        raise ValueError(
            f"template only expands to {len(pool)} distinct strings, {n} requested"
        )
    rng = np.random.default_rng(seed)
    rest = pool[1:]
    order = rng.permutation(len(rest))
    picked = [pool[0]] + [rest[i] for i in order[: n - 1]]
    for text in picked:
        assert template.skill in text and template.obj in text
    return picked
