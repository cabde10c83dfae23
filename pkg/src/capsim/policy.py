"""Diffusion policy over action chunks, plus the direct-regression baseline.

The denoiser is an MLP over [conditioning embedding | flattened noisy chunk
| diffusion-step features | control-frequency features] predicting the clean
chunk (x0-prediction, exactly how the posterior update is parameterized).
Sampling offers the full ancestral chain, its zero-noise mean variant, and a
second-order clean-sample multistep solver over a small step sub-grid for
fast inference. The regression baseline shares the encoder stack and MLP
budget but maps the embedding straight to a chunk.
"""

from __future__ import annotations

import csv
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .actions import ACTION_DIM, ActionChunk, ActionNormalizer, action_bounds, clamp_action_array
from .conditioning import ConditioningStack, Observation
from .config import Config, PolicyConfig
from .nn import FourierFeatureMap, Mlp, OptimizerState, TrainingFault, optimizer_step
from .schedule import NoiseSchedule, build_schedule, forward_noise, posterior_step

CHECKPOINT_MAGIC = b"CPK1"
CHECKPOINT_VERSION = 1
CF_SCALE = 20.0  # Hz reference for control-frequency features


class SamplingFault(RuntimeError):
    pass


def _feature_maps(policy: PolicyConfig) -> tuple[FourierFeatureMap, FourierFeatureMap]:
    rng = np.random.default_rng(policy.feature_seed + 1)
    time_map = FourierFeatureMap.create(1, policy.time_freqs, 1.0, rng)
    cf_map = FourierFeatureMap.create(1, policy.freq_embed_freqs, 1.0, rng)
    return time_map, cf_map


@dataclass
class PolicyHead:
    """Shared pieces: conditioning stack, normalizer, bounds, config."""

    stack: ConditioningStack
    normalizer: ActionNormalizer
    bounds: np.ndarray
    policy_cfg: PolicyConfig

    @property
    def chunk_dim(self) -> int:
        return self.policy_cfg.chunk_len * ACTION_DIM

    def trainable_params(self, net: Mlp) -> list[np.ndarray]:
        return net.parameters() + self.stack.proprio_mlp.parameters()

    def finalize_chunk(self, flat_norm: np.ndarray) -> ActionChunk:
        arr = self.normalizer.denormalize(
            flat_norm.reshape(self.policy_cfg.chunk_len, ACTION_DIM)
        )
        return ActionChunk(clamp_action_array(arr, self.bounds))


class DiffusionPolicy:
    def __init__(
        self,
        head: PolicyHead,
        net: Mlp,
        sched: NoiseSchedule,
        time_map: FourierFeatureMap,
        cf_map: FourierFeatureMap,
    ):
        self.head = head
        self.net = net
        self.sched = sched
        self.time_map = time_map
        self.cf_map = cf_map

    kind = "diffusion"

    @staticmethod
    def create(cfg: Config, normalizer: ActionNormalizer, seed: int) -> "DiffusionPolicy":
        p = cfg.policy
        stack = ConditioningStack.create(p)
        time_map, cf_map = _feature_maps(p)
        head = PolicyHead(stack, normalizer, action_bounds(cfg.workspace), p)
        in_dim = stack.out_dim + head.chunk_dim + time_map.out_dim + cf_map.out_dim
        net = Mlp.create([in_dim] + list(p.hidden) + [head.chunk_dim], np.random.default_rng(seed))
        return DiffusionPolicy(head, net, build_schedule(p.diffusion_steps), time_map, cf_map)

    # -- forward -------------------------------------------------------------

    def _net_input(self, emb: np.ndarray, noisy: np.ndarray, k, cf) -> np.ndarray:
        batched = noisy.ndim == 2
        k_arr = np.asarray(k, dtype=float).reshape(-1, 1) / self.sched.steps
        cf_arr = np.asarray(cf, dtype=float).reshape(-1, 1) / CF_SCALE
        tfeat = self.time_map.encode(k_arr)
        cfeat = self.cf_map.encode(cf_arr)
        if not batched:
            tfeat, cfeat = tfeat[0], cfeat[0]
        return np.concatenate([emb, noisy, tfeat, cfeat], axis=-1)

    def predict_clean(self, emb: np.ndarray, noisy: np.ndarray, k, cf) -> np.ndarray:
        """Denoiser output: estimate of the clean normalized chunk."""
        return self.net.forward(self._net_input(emb, noisy, k, cf))

    # -- sampling --------------------------------------------------------------

    def sample_chunk(
        self,
        obs: Observation,
        rng: np.random.Generator,
        sampler: str = "fast_deterministic",
    ) -> ActionChunk:
        emb = self.head.stack.encode(obs, mode="eval")
        cf = obs.control_frequency

        def predict(x, k):
            return self.predict_clean(emb, x, k, cf)

        if sampler == "ancestral":
            flat = ancestral_sample(predict, self.sched, self.head.chunk_dim, rng)
        elif sampler == "ancestral_mean":
            flat = ancestral_sample(predict, self.sched, self.head.chunk_dim, rng, mean_only=True)
        elif sampler == "fast_deterministic":
            flat = fast_sample(
                predict,
                self.sched,
                self.head.chunk_dim,
                rng,
                n_steps=self.head.policy_cfg.fast_sampler_steps,
            )
        else:
            raise ValueError(f"unknown sampler {sampler!r}")
        return self.head.finalize_chunk(flat)

    def save(self, path: str | Path) -> None:
        _save_checkpoint(path, self.kind, self.head, {"net": self.net}, self.sched)

    @property
    def chunk_len(self) -> int:
        return self.head.policy_cfg.chunk_len


class RegressionPolicy:
    """Deterministic (l, o) -> chunk mapping with the same encoder stack."""

    def __init__(self, head: PolicyHead, net: Mlp, cf_map: FourierFeatureMap):
        self.head = head
        self.net = net
        self.cf_map = cf_map

    kind = "regression"

    @staticmethod
    def create(cfg: Config, normalizer: ActionNormalizer, seed: int) -> "RegressionPolicy":
        p = cfg.policy
        stack = ConditioningStack.create(p)
        _, cf_map = _feature_maps(p)
        head = PolicyHead(stack, normalizer, action_bounds(cfg.workspace), p)
        in_dim = stack.out_dim + cf_map.out_dim
        net = Mlp.create([in_dim] + list(p.hidden) + [head.chunk_dim], np.random.default_rng(seed))
        return RegressionPolicy(head, net, cf_map)

    def _net_input(self, emb: np.ndarray, cf) -> np.ndarray:
        batched = emb.ndim == 2
        cf_arr = np.asarray(cf, dtype=float).reshape(-1, 1) / CF_SCALE
        cfeat = self.cf_map.encode(cf_arr)
        if not batched:
            cfeat = cfeat[0]
        return np.concatenate([emb, cfeat], axis=-1)

    def predict(self, emb: np.ndarray, cf) -> np.ndarray:
        return self.net.forward(self._net_input(emb, cf))

    def sample_chunk(
        self, obs: Observation, rng: np.random.Generator, sampler: str = "regression"
    ) -> ActionChunk:
        emb = self.head.stack.encode(obs, mode="eval")
        return self.head.finalize_chunk(self.predict(emb, obs.control_frequency))

    def save(self, path: str | Path) -> None:
        _save_checkpoint(path, self.kind, self.head, {"net": self.net}, None)

    @property
    def chunk_len(self) -> int:
        return self.head.policy_cfg.chunk_len


# -- samplers ------------------------------------------------------------------


def ancestral_sample(
    predict_fn,
    sched: NoiseSchedule,
    dim: int,
    rng: np.random.Generator,
    mean_only: bool = False,
) -> np.ndarray:
    """Full reverse chain a_K ~ N(0, I) down to a_0.

    mean_only drops the sigma_k z term (the posterior-mean chain), used as
    the deterministic reference the fast solver is checked against.
    """
    x = rng.standard_normal(dim)
    for k in range(sched.steps, 0, -1):
        a0 = predict_fn(x, k)
        z = None if (mean_only or k == 1) else rng.standard_normal(dim)
        x = posterior_step(sched, k, a0, x, z)
        if not np.all(np.isfinite(x)):
            raise SamplingFault(f"non-finite sample at step {k}")
    return x


def _lam(sched: NoiseSchedule, k: int) -> float:
    abar = sched.alpha_bar[k]
    return 0.5 * float(np.log(abar / (1.0 - abar)))


def fast_sample(
    predict_fn,
    sched: NoiseSchedule,
    dim: int,
    rng: np.random.Generator,
    n_steps: int = 5,
) -> np.ndarray:
    """Second-order clean-sample-prediction multistep solver.

    Runs over a descending sub-grid of schedule steps (n_steps denoiser
    evaluations). Transitions use the exponential-integrator update in
    log-SNR time with a two-point multistep correction; the final step
    returns the last clean estimate (the exact zero-noise limit).
    """
    if n_steps < 2:
        raise ValueError("fast sampler needs at least 2 steps")
    grid = np.unique(np.linspace(sched.steps, 1, n_steps).round().astype(int))[::-1]
    x = rng.standard_normal(dim)
    prev_x0 = None
    prev_h = None
    for i, k in enumerate(grid):
        x0 = predict_fn(x, int(k))
        if not np.all(np.isfinite(x0)):
            raise SamplingFault(f"non-finite denoiser output at step {k}")
        if i == len(grid) - 1:
            x = x0
            break
        t = int(grid[i + 1])
        h = _lam(sched, t) - _lam(sched, int(k))
        if prev_x0 is None:
            d = x0
        else:
            r = prev_h / h
            d = (1.0 + 1.0 / (2.0 * r)) * x0 - (1.0 / (2.0 * r)) * prev_x0
        alpha_t = np.sqrt(sched.alpha_bar[t])
        sigma_t = np.sqrt(1.0 - sched.alpha_bar[t])
        sigma_s = np.sqrt(1.0 - sched.alpha_bar[int(k)])
        x = (sigma_t / sigma_s) * x - alpha_t * np.expm1(-h) * d
        prev_x0, prev_h = x0, h
    return x


# -- losses ----------------------------------------------------------------------


def denoising_loss_terms(
    policy: DiffusionPolicy,
    img_f: np.ndarray,
    txt_f: np.ndarray,
    prop_f: np.ndarray,
    cf: np.ndarray,
    chunks_norm: np.ndarray,
    ks: np.ndarray,
    eps: np.ndarray,
    keep: np.ndarray,
) -> tuple[float, list[np.ndarray]]:
    """Deterministic denoising MSE and gradients for fixed draws.

    All arguments are batched (leading axis B). Gradients cover the denoiser
    net then the proprio MLP, in trainable_params order.
    """
    head = policy.head
    sched = policy.sched
    emb, keep = head.stack.assemble(img_f, txt_f, prop_f, keep=keep)
    abar = sched.alpha_bar[ks][:, None]
    noisy = np.sqrt(abar) * chunks_norm + np.sqrt(1.0 - abar) * eps
    pred = policy.predict_clean(emb, noisy, ks, cf)
    err = pred - chunks_norm
    loss = float(np.mean(err * err))
    upstream = (2.0 / err.size) * err
    net_grads, input_grad = policy.net.backward(upstream)
    slices = head.stack.slices()
    emb_grad = input_grad[:, : head.stack.out_dim]
    prop_grad_out = emb_grad[:, slices["proprio"]] * keep[:, 2:3]
    prop_grads, _ = head.stack.proprio_mlp.backward(prop_grad_out)
    if not np.isfinite(loss):
        raise TrainingFault("non-finite denoising loss")
    return loss, net_grads + prop_grads


def denoising_loss(
    policy: DiffusionPolicy,
    obs: Observation,
    chunk: ActionChunk,
    rng: np.random.Generator,
) -> tuple[float, list[np.ndarray]]:
    """One-sample training objective: draws k, noise, and modality masks."""
    head = policy.head
    stack = head.stack
    img = stack.image_features(obs.frames)[None, :]
    txt = stack.text_features(obs.instruction)[None, :]
    prop = stack.proprio_fourier(obs.proprio)[None, :]
    chunk_norm = head.normalizer.normalize(chunk.array).reshape(1, -1)
    k = np.array([rng.integers(1, policy.sched.steps + 1)])
    eps = rng.standard_normal((1, head.chunk_dim))
    keep = (
        rng.random((1, 3)) >= np.array([stack.p_img, stack.p_txt, stack.p_proprio])
    ).astype(float)
    return denoising_loss_terms(
        policy, img, txt, prop, np.array([obs.control_frequency]), chunk_norm, k, eps, keep
    )


def regression_loss_terms(
    policy: RegressionPolicy,
    img_f: np.ndarray,
    txt_f: np.ndarray,
    prop_f: np.ndarray,
    cf: np.ndarray,
    chunks_norm: np.ndarray,
    keep: np.ndarray,
) -> tuple[float, list[np.ndarray]]:
    head = policy.head
    emb, keep = head.stack.assemble(img_f, txt_f, prop_f, keep=keep)
    pred = policy.predict(emb, cf)
    err = pred - chunks_norm
    loss = float(np.mean(err * err))
    upstream = (2.0 / err.size) * err
    net_grads, input_grad = policy.net.backward(upstream)
    emb_grad = input_grad[:, : head.stack.out_dim]
    prop_grad_out = emb_grad[:, head.stack.slices()["proprio"]] * keep[:, 2:3]
    prop_grads, _ = head.stack.proprio_mlp.backward(prop_grad_out)
    if not np.isfinite(loss):
        raise TrainingFault("non-finite regression loss")
    return loss, net_grads + prop_grads


# -- training ------------------------------------------------------------------


@dataclass
class PreparedDataset:
    """Pre-featurized training tuples (frozen featurizers run once)."""

    img_f: np.ndarray
    txt_f: np.ndarray
    prop_f: np.ndarray
    cf: np.ndarray
    chunks_norm: np.ndarray

    def __len__(self) -> int:
        return self.img_f.shape[0]


def prepare_dataset(demos, stack: ConditioningStack, cfg: Config, normalizer: ActionNormalizer):
    """Featurize every (observation, chunk) pair of a demo list."""
    from .records import demo_observation_parts  # local import avoids a cycle

    chunk_len = cfg.policy.chunk_len
    img_rows, txt_rows, prop_rows, cf_rows, chunk_rows = [], [], [], [], []
    for demo in demos:
        actions = np.stack([r.action for r in demo.records])
        n = len(demo.records)
        txt = stack.text_features(demo.instruction_tokens(stack.text_seed))
        for t in range(n):
            frames, proprio, cf = demo_observation_parts(demo, t, cfg)
            img_rows.append(stack.image_features(frames))
            txt_rows.append(txt)
            prop_rows.append(stack.proprio_fourier(proprio))
            cf_rows.append(cf)
            idx = np.minimum(np.arange(t, t + chunk_len), n - 1)
            chunk_rows.append(normalizer.normalize(actions[idx]).reshape(-1))
    if not img_rows:
        raise ValueError("dataset is empty")
    return PreparedDataset(
        img_f=np.stack(img_rows),
        txt_f=np.stack(txt_rows),
        prop_f=np.stack(prop_rows),
        cf=np.array(cf_rows),
        chunks_norm=np.stack(chunk_rows),
    )


def fit_normalizer(demos, cfg: Config) -> ActionNormalizer:
    actions = np.concatenate([np.stack([r.action for r in d.records]) for d in demos])
    return ActionNormalizer.fit(actions, action_bounds(cfg.workspace))


def _run_training(policy, data: PreparedDataset, cfg: Config, steps: int, seed: int, kind: str):
    rng = np.random.default_rng(seed)
    params = policy.head.trainable_params(policy.net)
    opt = OptimizerState.for_params(params, learning_rate=cfg.training.learning_rate)
    stack = policy.head.stack
    n = len(data)
    batch = min(cfg.training.batch_size, n)
    curve = []
    probs = np.array([stack.p_img, stack.p_txt, stack.p_proprio])
    for step in range(steps):
        # step-decayed learning rate sharpens the late fit
        opt.learning_rate = cfg.training.learning_rate * (0.2 if step >= 0.7 * steps else 1.0)
        idx = rng.integers(0, n, size=batch)
        keep = (rng.random((batch, 3)) >= probs).astype(float)
        if kind == "diffusion":
            ks = rng.integers(1, policy.sched.steps + 1, size=batch)
            eps = rng.standard_normal((batch, policy.head.chunk_dim))
            loss, grads = denoising_loss_terms(
                policy,
                data.img_f[idx],
                data.txt_f[idx],
                data.prop_f[idx],
                data.cf[idx],
                data.chunks_norm[idx],
                ks,
                eps,
                keep,
            )
        else:
            loss, grads = regression_loss_terms(
                policy,
                data.img_f[idx],
                data.txt_f[idx],
                data.prop_f[idx],
                data.cf[idx],
                data.chunks_norm[idx],
                keep,
            )
        optimizer_step(opt, params, grads)
        for p in params:
            if not np.all(np.isfinite(p)):
                raise TrainingFault(f"non-finite parameter after step {step}")
        curve.append((step, loss))
    return curve


def train_policy(
    demos,
    cfg: Config,
    kind: str = "diffusion",
    seed: int | None = None,
    steps: int | None = None,
    pretrain_demos=None,
    out_dir: str | Path | None = None,
):
    """Train a policy on demonstrations; optional broad-corpus pretraining.

    Returns (policy, loss_curve). With out_dir set, writes checkpoint.cpk
    and metrics.csv (step, loss) there.
    """
    if not demos:
        raise ValueError("cannot train on an empty demo list")
    seed = cfg.training.seed if seed is None else seed
    steps = cfg.training.steps if steps is None else steps
    normalizer = fit_normalizer(demos if pretrain_demos is None else demos + pretrain_demos, cfg)
    if kind == "diffusion":
        policy = DiffusionPolicy.create(cfg, normalizer, seed)
    elif kind == "regression":
        policy = RegressionPolicy.create(cfg, normalizer, seed)
    else:
        raise ValueError(f"unknown policy kind {kind!r}")
    curve = []
    if pretrain_demos:
        pre = prepare_dataset(pretrain_demos, policy.head.stack, cfg, normalizer)
        curve += _run_training(policy, pre, cfg, cfg.training.pretrain_steps, seed, kind)
    data = prepare_dataset(demos, policy.head.stack, cfg, normalizer)
    curve += _run_training(policy, data, cfg, steps, seed + 1, kind)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        policy.save(out / "checkpoint.cpk")
        with open(out / "metrics.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["step", "loss"])
            for step, loss in curve:
                writer.writerow([step, f"{loss:.8f}"])
    return policy, curve


def regression_baseline(demos, cfg: Config, **kw):
    """Same encoder stack and MLP budget, direct MSE regression (no diffusion)."""
    return train_policy(demos, cfg, kind="regression", **kw)


# -- checkpoint io ----------------------------------------------------------------


def _save_checkpoint(path, kind, head: PolicyHead, nets: dict[str, Mlp], sched):
    policy_cfg = head.policy_cfg
    header = {
        "kind": kind,
        "policy": {
            "chunk_len": policy_cfg.chunk_len,
            "diffusion_steps": policy_cfg.diffusion_steps,
            "fast_sampler_steps": policy_cfg.fast_sampler_steps,
            "hidden": list(policy_cfg.hidden),
            "image_embed": policy_cfg.image_embed,
            "text_embed": policy_cfg.text_embed,
            "proprio_embed": policy_cfg.proprio_embed,
            "proprio_freqs": policy_cfg.proprio_freqs,
            "sigma_f": policy_cfg.sigma_f,
            "time_freqs": policy_cfg.time_freqs,
            "freq_embed_freqs": policy_cfg.freq_embed_freqs,
            "p_img": policy_cfg.p_img,
            "p_txt": policy_cfg.p_txt,
            "p_proprio": policy_cfg.p_proprio,
            "feature_seed": policy_cfg.feature_seed,
            "patch": policy_cfg.patch,
        },
        "normalizer": head.normalizer.to_dict(),
        "bounds": head.bounds.tolist(),
        "schedule": {"kind": "cosine", "steps": sched.steps} if sched is not None else None,
    }
    blobs = {name: net.to_bytes() for name, net in nets.items()}
    blobs["proprio_mlp"] = head.stack.proprio_mlp.to_bytes()
    header_bytes = json.dumps(header).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(header_bytes)))
        fh.write(header_bytes)
        fh.write(struct.pack("<I", len(blobs)))
        for name, blob in sorted(blobs.items()):
            nb = name.encode()
            fh.write(struct.pack("<I", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<Q", len(blob)))
            fh.write(blob)


def load_policy(path: str | Path):
    """Load a diffusion or regression policy checkpoint."""
    with open(path, "rb") as fh:
        if fh.read(4) != CHECKPOINT_MAGIC:
            raise ValueError(f"{path} is not a policy checkpoint (bad magic)")
        version, hlen = struct.unpack("<II", fh.read(8))
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        header = json.loads(fh.read(hlen).decode())
        (n_blobs,) = struct.unpack("<I", fh.read(4))
        blobs = {}
        for _ in range(n_blobs):
            (nlen,) = struct.unpack("<I", fh.read(4))
            name = fh.read(nlen).decode()
            (blen,) = struct.unpack("<Q", fh.read(8))
            blobs[name] = fh.read(blen)
    p = PolicyConfig(**{**header["policy"], "hidden": tuple(header["policy"]["hidden"])})
    stack = ConditioningStack.create(p)
    stack.proprio_mlp = Mlp.from_bytes(blobs["proprio_mlp"])
    normalizer = ActionNormalizer.from_dict(header["normalizer"])
    head = PolicyHead(stack, normalizer, np.array(header["bounds"]), p)
    net = Mlp.from_bytes(blobs["net"])
    time_map, cf_map = _feature_maps(p)
    if header["kind"] == "diffusion":
        sched = build_schedule(header["schedule"]["steps"], header["schedule"]["kind"])
        return DiffusionPolicy(head, net, sched, time_map, cf_map)
    if header["kind"] == "regression":
        return RegressionPolicy(head, net, cf_map)
    raise ValueError(f"unknown checkpoint kind {header['kind']!r}")
