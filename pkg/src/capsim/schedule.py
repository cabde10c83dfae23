"""Discrete-time noise schedule, forward noising, and the posterior update.

Indexing convention: arrays are length K+1 with slot 0 reserved so that
alpha_bar[0] == 1 and step k in 1..K addresses alpha[k], beta[k], sigma[k].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class NoiseSchedule:
    alpha: np.ndarray  # (K+1,), alpha[0] unused (set to 1)
    beta: np.ndarray  # beta[k] = 1 - alpha[k]
    alpha_bar: np.ndarray  # running product, alpha_bar[0] = 1
    sigma: np.ndarray  # posterior std, sigma[1] = 0

    @property
    def steps(self) -> int:
        return len(self.alpha) - 1

    def check_step(self, k: int) -> None:
        if not 1 <= k <= self.steps:
            raise ValueError(f"diffusion step {k} outside 1..{self.steps}")


def build_schedule(K: int, kind: str = "cosine") -> NoiseSchedule:
    """Construct a K-step schedule; only the cosine recipe is supported.

    alpha_bar(k) = f(k)/f(0) with f(k) = cos^2(((k/K + s)/(1+s)) * pi/2),
    s = 0.008. Per-step betas are clipped to 0.999 before alpha_bar is
    re-accumulated so the telescoping identities hold exactly.
    """
    if K < 1:
        raise ValueError(f"schedule needs at least one step, got K={K}")
    if kind != "cosine":
        raise ValueError(f"unknown schedule kind: {kind!r}")
    s = 0.008
    k = np.arange(K + 1, dtype=float)
    f = np.cos(((k / K + s) / (1.0 + s)) * (np.pi / 2.0)) ** 2
    raw_bar = f / f[0]
    beta = np.zeros(K + 1)
    beta[1:] = np.clip(1.0 - raw_bar[1:] / raw_bar[:-1], 0.0, 0.999)
    alpha = 1.0 - beta
    alpha[0] = 1.0
    alpha_bar = np.cumprod(alpha)
    sigma = np.zeros(K + 1)
    # posterior std: sqrt(beta_k * (1 - abar_{k-1}) / (1 - abar_k)); zero at k=1
    for i in range(1, K + 1):
        denom = 1.0 - alpha_bar[i]
        sigma[i] = np.sqrt(beta[i] * (1.0 - alpha_bar[i - 1]) / denom) if denom > 0 else 0.0
    return NoiseSchedule(alpha=alpha, beta=beta, alpha_bar=alpha_bar, sigma=sigma)


def forward_noise(chunk: np.ndarray, k: int, eps: np.ndarray, sched: NoiseSchedule) -> np.ndarray:
    """Noisy sample at step k: sqrt(abar_k) * a + sqrt(1 - abar_k) * eps."""
    sched.check_step(k)
    chunk = np.asarray(chunk, dtype=float)
    eps = np.asarray(eps, dtype=float)
    if eps.shape != chunk.shape:
        raise ValueError(f"noise shape {eps.shape} does not match chunk {chunk.shape}")
    abar = sched.alpha_bar[k]
    return np.sqrt(abar) * chunk + np.sqrt(1.0 - abar) * eps


def posterior_step(
    sched: NoiseSchedule, k: int, a_hat0: np.ndarray, a_k: np.ndarray, z: np.ndarray | None
) -> np.ndarray:
    """One reverse-process update from step k to k-1.

    a_{k-1} = sqrt(abar_{k-1}) beta_k / (1 - abar_k) * a_hat0
            + sqrt(alpha_k) (1 - abar_{k-1}) / (1 - abar_k) * a_k
            + sigma_k * z

    z is forced to zero at k = 1, where the output reduces to a_hat0 exactly.
    """
    sched.check_step(k)
    a_hat0 = np.asarray(a_hat0, dtype=float)
    a_k = np.asarray(a_k, dtype=float)
    if k == 1:
        # abar_0 = 1 makes the a_k coefficient vanish and the a_hat0
        # coefficient beta_1 / (1 - abar_1) = 1; return the exact reduction
        return a_hat0.copy()
    abar_k = sched.alpha_bar[k]
    abar_prev = sched.alpha_bar[k - 1]
    denom = 1.0 - abar_k
    coef0 = np.sqrt(abar_prev) * sched.beta[k] / denom
    coefk = np.sqrt(sched.alpha[k]) * (1.0 - abar_prev) / denom
    out = coef0 * a_hat0 + coefk * a_k
    if z is not None:
        out = out + sched.sigma[k] * np.asarray(z, dtype=float)
    return out
