"""Observation type and the multimodal conditioning stack.

Each modality is mapped into a fixed-width embedding slice:

  images   -> per-frame 8x8 patch means through a fixed seeded random
              projection (both cameras concatenated)
  text     -> signed hashed bag-of-tokens, L2-normalized
  proprio  -> Fourier feature map into a small trainable MLP

During training each modality is independently zero-masked with its
configured probability so the policy cannot lean on a single input.
Only the proprio MLP carries gradients; the image/text featurizers are
frozen functions of the feature seed.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .cameras import CameraFrame
from .config import Config, PolicyConfig
from .geometry import Pose
from .nn import FourierFeatureMap, Mlp


def tokenize(text: str) -> list[str]:
    out = []
    word = []
    for ch in text.lower():
        if ch.isalnum():
            word.append(ch)
        elif word:
            out.append("".join(word))
            word = []
    if word:
        out.append("".join(word))
    return out


def token_id(token: str, seed: int) -> int:
    """Stable 32-bit token id from a keyed blake2s digest."""
    h = hashlib.blake2s(token.encode(), key=str(seed).encode()[:32], digest_size=4)
    return int.from_bytes(h.digest(), "little")


def encode_instruction(text: str, seed: int) -> np.ndarray:
    return np.array([token_id(t, seed) for t in tokenize(text)], dtype=np.int64)


@dataclass
class Observation:
    """Policy input at one control tick."""

    frames: tuple[CameraFrame, CameraFrame]  # (capsule_cam, exterior_cam)
    proprio: np.ndarray  # 21 = 7 joints + magnet pose 7 + capsule pose 7, in [-1, 1]
    control_frequency: float  # Hz
    instruction: np.ndarray  # token id sequence

    def __post_init__(self):
        self.proprio = np.asarray(self.proprio, dtype=float).reshape(21)
        if self.control_frequency <= 0:
            raise ValueError("control frequency must be positive")
        self.instruction = np.asarray(self.instruction, dtype=np.int64)


PROPRIO_DIM = 21


def normalized_proprio(
    joints: np.ndarray,
    magnet_pose: Pose,
    capsule_pose: Pose,
    cfg: Config,
    stomach_bounds: tuple[np.ndarray, np.ndarray],
) -> np.ndarray:
    """Map joints and poses into [-1, 1] using static configured ranges."""
    limits = np.asarray(cfg.arm.joint_limits)
    j = np.clip(np.asarray(joints, dtype=float) / limits, -1.0, 1.0)
    ws_lo = np.asarray(cfg.workspace.minimum)
    ws_hi = np.asarray(cfg.workspace.maximum)
    m_pos = np.clip(2.0 * (magnet_pose.position - ws_lo) / (ws_hi - ws_lo) - 1.0, -1.0, 1.0)
    st_lo, st_hi = stomach_bounds
    c_pos = np.clip(2.0 * (capsule_pose.position - st_lo) / (st_hi - st_lo) - 1.0, -1.0, 1.0)
    return np.concatenate(
        [j, m_pos, magnet_pose.orientation, c_pos, capsule_pose.orientation]
    )


def _patch_means(frame: CameraFrame, patch: int) -> np.ndarray:
    img = frame.intensity.astype(float)
    h, w = img.shape
    ph, pw = h // patch, w // patch
    return img[: ph * patch, : pw * patch].reshape(ph, patch, pw, patch).mean(axis=(1, 3)).reshape(-1)


@dataclass
class ConditioningStack:
    """Featurizers plus per-modality mask probabilities."""

    image_projection: np.ndarray  # (image_embed, patches) fixed
    text_dim: int
    text_seed: int
    proprio_map: FourierFeatureMap
    proprio_mlp: Mlp
    patch: int
    p_img: float = 0.1
    p_txt: float = 0.1
    p_proprio: float = 0.1

    @staticmethod
    def create(policy: PolicyConfig) -> "ConditioningStack":
        rng = np.random.default_rng(policy.feature_seed)
        patches = policy.patch * policy.patch
        proj = rng.normal(0.0, 1.0 / np.sqrt(patches), size=(policy.image_embed, patches))
        fmap = FourierFeatureMap.create(PROPRIO_DIM, policy.proprio_freqs, policy.sigma_f, rng)
        mlp = Mlp.create([fmap.out_dim, 64, policy.proprio_embed], rng)
        return ConditioningStack(
            image_projection=proj,
            text_dim=policy.text_embed,
            text_seed=policy.feature_seed,
            proprio_map=fmap,
            proprio_mlp=mlp,
            patch=policy.patch,
            p_img=policy.p_img,
            p_txt=policy.p_txt,
            p_proprio=policy.p_proprio,
        )

    # -- frozen featurizers --------------------------------------------------

    def image_features(self, frames: tuple[CameraFrame, CameraFrame]) -> np.ndarray:
        feats = [self.image_projection @ _patch_means(f, self.patch) for f in frames]
        return np.concatenate(feats)

    def text_features(self, instruction_tokens: np.ndarray) -> np.ndarray:
        emb = np.zeros(self.text_dim)
        for tid in np.asarray(instruction_tokens, dtype=np.int64):
            idx = int(tid) % self.text_dim
            sign = 1.0 if (int(tid) >> 8) % 2 == 0 else -1.0
            emb[idx] += sign
        norm = np.linalg.norm(emb)
        return emb / norm if norm > 0 else emb

    def proprio_fourier(self, proprio: np.ndarray) -> np.ndarray:
        return self.proprio_map.encode(proprio)

    # -- embedding layout ------------------------------------------------------

    @property
    def image_dim(self) -> int:
        return 2 * self.image_projection.shape[0]

    @property
    def proprio_dim(self) -> int:
        return self.proprio_mlp.out_dim

    @property
    def out_dim(self) -> int:
        return self.image_dim + self.text_dim + self.proprio_dim

    def slices(self) -> dict[str, slice]:
        i = self.image_dim
        t = i + self.text_dim
        return {
            "image": slice(0, i),
            "text": slice(i, t),
            "proprio": slice(t, t + self.proprio_dim),
        }

    def assemble(
        self,
        img_feat: np.ndarray,
        txt_feat: np.ndarray,
        proprio_fourier: np.ndarray,
        mode: str = "eval",
        rng: np.random.Generator | None = None,
        keep: np.ndarray | None = None,
    ) -> tuple[np.ndarray, np.ndarray]:
        """Run the trainable proprio branch and concatenate all modalities.

        Accepts single vectors or batched (B, d) arrays; returns the embedding
        and the per-modality keep mask (image, text, proprio) used, needed to
        route gradients back through the proprio MLP. An explicit keep mask
        overrides sampling (used by deterministic gradient checks).
        """
        batched = img_feat.ndim == 2
        prop_emb = self.proprio_mlp.forward(proprio_fourier)
        parts = [img_feat, txt_feat, prop_emb]
        if keep is not None:
            keep = np.asarray(keep, dtype=float)
        elif mode == "train":
            if rng is None:
                raise ValueError("train-mode encoding needs an rng for masking")
            n = img_feat.shape[0] if batched else 1
            keep = (
                rng.random((n, 3)) >= np.array([self.p_img, self.p_txt, self.p_proprio])
            ).astype(float)
            if not batched:
                keep = keep[0]
        elif mode == "eval":
            keep = np.ones((img_feat.shape[0], 3) if batched else 3)
        else:
            raise ValueError(f"unknown encoding mode {mode!r}")
        if batched:
            parts = [p * keep[:, i : i + 1] for i, p in enumerate(parts)]
        else:
            parts = [p * keep[i] for i, p in enumerate(parts)]
        return np.concatenate(parts, axis=-1), keep

    def encode(
        self, obs: Observation, mode: str = "eval", rng: np.random.Generator | None = None
    ) -> np.ndarray:
        """Featurize one observation into the conditioning embedding."""
        emb, _ = self.assemble(
            self.image_features(obs.frames),
            self.text_features(obs.instruction),
            self.proprio_fourier(obs.proprio),
            mode=mode,
            rng=rng,
        )
        return emb

    # -- persistence -----------------------------------------------------------

    def state_dict(self) -> dict:
        return {
            "proprio_mlp": self.proprio_mlp.to_bytes().hex(),
        }

    def load_state(self, d: dict) -> None:
        self.proprio_mlp = Mlp.from_bytes(bytes.fromhex(d["proprio_mlp"]))


def encode_observation(
    stack: ConditioningStack,
    obs: Observation,
    mode: str = "eval",
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    return stack.encode(obs, mode=mode, rng=rng)
