"""Minimal neural numeric core: Fourier feature maps, MLPs with exact
reverse-mode gradients, and an adaptive-moment optimizer.

The denoiser is a fixed feed-forward topology, so instead of a general
autodiff graph each Mlp caches its own forward activations and replays them
in backward(). Hidden layers use exact (erf-based) GELU; the output layer is
linear. All math is float64 numpy.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field

import numpy as np
from scipy.special import erf

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)

MLP_MAGIC = b"MLPB"
MLP_VERSION = 1


class TrainingFault(RuntimeError):
    """Raised when gradients or parameters stop being finite."""


def gelu(x: np.ndarray) -> np.ndarray:
    return x * 0.5 * (1.0 + erf(x * _INV_SQRT2))


def gelu_grad(x: np.ndarray) -> np.ndarray:
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    pdf = _INV_SQRT2PI * np.exp(-0.5 * x * x)
    return cdf + x * pdf


@dataclass
class FourierFeatureMap:
    """Fixed random-frequency sine/cosine input map.

    The frequency matrix is drawn once at construction (seeded Gaussian with
    scale sigma_f) and never trained. Output dimension is 2 * n_freq.
    """

    frequencies: np.ndarray  # (n_freq, in_dim)

    def __post_init__(self):
        self.frequencies = np.asarray(self.frequencies, dtype=float)
        if self.frequencies.ndim != 2:
            raise ValueError("frequency matrix must be 2-D (n_freq, in_dim)")

    @staticmethod
    def create(in_dim: int, n_freq: int, sigma_f: float, rng: np.random.Generator) -> "FourierFeatureMap":
        return FourierFeatureMap(rng.normal(0.0, sigma_f, size=(n_freq, in_dim)))

    @property
    def in_dim(self) -> int:
        return self.frequencies.shape[1]

    @property
    def out_dim(self) -> int:
        return 2 * self.frequencies.shape[0]

    def encode(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.in_dim:
            raise ValueError(f"expected input dim {self.in_dim}, got {x.shape[-1]}")
        phase = 2.0 * np.pi * (x @ self.frequencies.T)
        return np.concatenate([np.sin(phase), np.cos(phase)], axis=-1)


def fourier_encode(fmap: FourierFeatureMap, x: np.ndarray) -> np.ndarray:
    return fmap.encode(x)


class Mlp:
    """Feed-forward net, GELU hidden activations, linear output.

    Parameters live in `weights` (out x in) and `biases` (out) per layer.
    forward() accepts a single vector or a (batch, dim) array.
    """

    def __init__(self, weights: list[np.ndarray], biases: list[np.ndarray]):
        if len(weights) != len(biases):
            raise ValueError("weights/biases length mismatch")
        for w, b in zip(weights, biases):
            if w.shape[0] != b.shape[0]:
                raise ValueError("bias dim does not match weight rows")
        for w_prev, w_next in zip(weights[:-1], weights[1:]):
            if w_next.shape[1] != w_prev.shape[0]:
                raise ValueError("inconsistent layer widths")
        self.weights = [np.asarray(w, dtype=float) for w in weights]
        self.biases = [np.asarray(b, dtype=float) for b in biases]
        self._cache: list[np.ndarray] | None = None

    @staticmethod
    def create(widths: list[int], rng: np.random.Generator) -> "Mlp":
        """Seeded Gaussian init, std 1/sqrt(fan_in), zero biases."""
        weights, biases = [], []
        for fan_in, fan_out in zip(widths[:-1], widths[1:]):
            weights.append(rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=(fan_out, fan_in)))
            biases.append(np.zeros(fan_out))
        return Mlp(weights, biases)

    @property
    def widths(self) -> list[int]:
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[0]

    def parameters(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Evaluate the net; caches pre-activations for a later backward()."""
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.in_dim:
            raise ValueError(f"expected input dim {self.in_dim}, got {x.shape[-1]}")
        cache = [x]
        h = x
        n = len(self.weights)
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ w.T + b
            cache.append(z)
            h = gelu(z) if i < n - 1 else z
        self._cache = cache
        return h

    def backward(self, upstream: np.ndarray) -> tuple[list[np.ndarray], np.ndarray]:
        """Reverse-mode gradients of sum(output * upstream) w.r.t. parameters.

        Must follow a forward() on the matching input. Returns gradients in
        parameters() order plus the gradient w.r.t. the input. Batched inputs
        sum parameter gradients over the batch.
        """
        if self._cache is None:
            raise RuntimeError("backward() requires a preceding forward()")
        cache = self._cache
        upstream = np.asarray(upstream, dtype=float)
        grads_w = [np.empty(0)] * len(self.weights)
        grads_b = [np.empty(0)] * len(self.weights)
        delta = upstream
        n = len(self.weights)
        for i in range(n - 1, -1, -1):
            z = cache[i + 1]
            if i < n - 1:
                delta = delta * gelu_grad(z)
            # layer input: raw x for the first layer, activated z otherwise
            h_in = cache[0] if i == 0 else gelu(cache[i])
            if delta.ndim == 1:
                grads_w[i] = np.outer(delta, h_in)
                grads_b[i] = delta.copy()
            else:
                grads_w[i] = delta.T @ h_in
                grads_b[i] = delta.sum(axis=0)
            delta = delta @ self.weights[i]
        grads = []
        for gw, gb in zip(grads_w, grads_b):
            grads.append(gw)
            grads.append(gb)
        return grads, delta

    def to_bytes(self) -> bytes:
        """Versioned binary blob: magic, widths, little-endian float64 data."""
        buf = io.BytesIO()
        widths = self.widths
        buf.write(MLP_MAGIC)
        buf.write(struct.pack("<II", MLP_VERSION, len(widths)))
        buf.write(struct.pack(f"<{len(widths)}I", *widths))
        for w, b in zip(self.weights, self.biases):
            buf.write(w.astype("<f8").tobytes())
            buf.write(b.astype("<f8").tobytes())
        return buf.getvalue()

    @staticmethod
    def from_bytes(data: bytes) -> "Mlp":
        buf = io.BytesIO(data)
        if buf.read(4) != MLP_MAGIC:
            raise ValueError("not an Mlp blob (bad magic)")
        version, n_widths = struct.unpack("<II", buf.read(8))
        if version != MLP_VERSION:
            raise ValueError(f"unsupported Mlp blob version {version}")
        widths = struct.unpack(f"<{n_widths}I", buf.read(4 * n_widths))
        weights, biases = [], []
        for fan_in, fan_out in zip(widths[:-1], widths[1:]):
            w = np.frombuffer(buf.read(8 * fan_in * fan_out), dtype="<f8").reshape(fan_out, fan_in)
            b = np.frombuffer(buf.read(8 * fan_out), dtype="<f8")
            weights.append(w.astype(float))
            biases.append(b.astype(float))
        return Mlp(weights, biases)


@dataclass
class OptimizerState:
    """Adaptive-moment (Adam) state for a flat list of parameter arrays.

    Update per step t with gradient g:
        m <- b1 m + (1-b1) g          v <- b2 v + (1-b2) g^2
        p <- p - lr * (m / (1-b1^t)) / (sqrt(v / (1-b2^t)) + eps)
    """

    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    @staticmethod
    def for_params(params: list[np.ndarray], learning_rate: float = 1e-3, **kw) -> "OptimizerState":
        return OptimizerState(
            learning_rate=learning_rate,
            m=[np.zeros_like(p) for p in params],
            v=[np.zeros_like(p) for p in params],
            **kw,
        )


def optimizer_step(
    opt: OptimizerState, params: list[np.ndarray], grads: list[np.ndarray]
) -> list[np.ndarray]:
    """Apply one in-place adaptive-moment update; returns the params list."""
    if len(params) != len(opt.m) or len(params) != len(grads):
        raise ValueError("parameter/gradient/state length mismatch")
    for p, g in zip(params, grads):
        if p.shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {p.shape}")
        if not np.all(np.isfinite(g)):
            raise TrainingFault("non-finite gradient encountered")
    opt.step_count += 1
    t = opt.step_count
    bc1 = 1.0 - opt.beta1**t
    bc2 = 1.0 - opt.beta2**t
    for p, g, m, v in zip(params, grads, opt.m, opt.v):
        m *= opt.beta1
        m += (1.0 - opt.beta1) * g
        v *= opt.beta2
        v += (1.0 - opt.beta2) * g * g
        p -= opt.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + opt.eps)
    return params
