"""Cosine noise schedule and deterministic reverse updates.

Convention: integer time t runs from 0 (clean) to T (pure noise).  The
signal coefficient gamma(t) multiplies the clean latent, so the forward
corruption is

    z_t = sqrt(gamma(t)) * z_0 + sqrt(1 - gamma(t)) * eps,   eps ~ N(0, I)

with gamma(0) = 1, gamma(T) = 0 and gamma monotonically non-increasing.
The table is precomputed in double precision; t is always integral.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch


def _cosine_table(T: int, s_c: float) -> torch.Tensor:
    t = torch.arange(T + 1, dtype=torch.float64)
    f = torch.cos(((t / T + s_c) / (1.0 + s_c)) * math.pi / 2.0) ** 2
    table = f / f[0]
    # cos(pi/2) is ~6e-17 in floats; pin the endpoints exactly
    table[0] = 1.0
    table[-1] = 0.0
    return table.clamp_(0.0, 1.0)


class NoiseSchedule:
    """Squared-cosine signal-retention schedule over {0..T}."""

    def __init__(self, T: int = 1000, s_c: float = 0.008):
        if T < 1:
            raise ValueError(f"T must be >= 1, got {T}")
        if s_c < 0:
            raise ValueError(f"s_c must be >= 0, got {s_c}")
        self.T = int(T)
        self.s_c = float(s_c)
        self.table = _cosine_table(self.T, self.s_c)

    def gamma(self, t: int) -> float:
        if not 0 <= t <= self.T:
            raise ValueError(f"time {t} outside [0, {self.T}]")
        return float(self.table[int(t)])

    def forward_noise(self, z0: torch.Tensor, t: int, eps: torch.Tensor) -> torch.Tensor:
        """Corrupt a clean latent to time t with the given noise field."""
        if eps.shape != z0.shape:
            raise ValueError(f"noise shape {tuple(eps.shape)} != latent shape {tuple(z0.shape)}")
        g = self.gamma(t)
        return math.sqrt(g) * z0 + math.sqrt(1.0 - g) * eps

    def ddim_step(self, z_t: torch.Tensor, z0_hat: torch.Tensor, t: int, t_next: int) -> torch.Tensor:
        """Deterministic (eta=0) reverse transition t -> t_next.

        Extracts the implied noise eps_hat from (z_t, z0_hat) and re-noises
        the predicted clean latent to t_next.
        """
        if z0_hat.shape != z_t.shape:
            raise ValueError(f"z0_hat shape {tuple(z0_hat.shape)} != z_t shape {tuple(z_t.shape)}")
        if t <= 0:
            raise ValueError(f"cannot step from t={t}; the reverse transition needs t > 0")
        if not t_next < t:
            raise ValueError(f"t_next={t_next} must be < t={t}")
        if not (torch.isfinite(z_t).all() and torch.isfinite(z0_hat).all()):
            raise ValueError("non-finite values in ddim_step inputs")
        g_t = self.gamma(t)
        g_next = self.gamma(t_next)
        eps_hat = (z_t - math.sqrt(g_t) * z0_hat) / math.sqrt(1.0 - g_t)
        return math.sqrt(g_next) * z0_hat + math.sqrt(1.0 - g_next) * eps_hat


@dataclass(frozen=True)
class TimeGrid:
    """Strictly decreasing evaluation times from T down to 0.

    t_diff shifts the re-noising target below the next evaluation time:
    after denoising at times[i], the state moves to
    max(times[i+1] - t_diff, 0) while the next evaluation still claims
    times[i+1].
    """

    times: tuple[int, ...]
    t_diff: int = 1

    def __post_init__(self):
        if len(self.times) < 2:
            raise ValueError("a time grid needs at least two times")
        if self.times[-1] != 0:
            raise ValueError(f"grid must end at 0, got {self.times[-1]}")
        if any(nxt >= prev for prev, nxt in zip(self.times[:-1], self.times[1:])):
            raise ValueError(f"grid times must be strictly decreasing, got {self.times}")
        if self.t_diff < 0:
            raise ValueError(f"t_diff must be >= 0, got {self.t_diff}")

    @property
    def num_steps(self) -> int:
        return len(self.times) - 1

    def transitions(self):
        """Yield (t_eval, t_next, t_target) triples for the sampler."""
        for t, t_next in zip(self.times[:-1], self.times[1:]):
            yield t, t_next, max(t_next - self.t_diff, 0)


def make_time_grid(T: int, S: int, t_diff: int = 1) -> TimeGrid:
    """Evenly spaced grid of S+1 times from T to 0 (rounded, deduplicated)."""
    if not 1 <= S <= T:
        raise ValueError(f"need 1 <= S <= T, got S={S}, T={T}")
    raw = [round(T - i * T / S) for i in range(S + 1)]
    times = sorted(set(raw), reverse=True)
    return TimeGrid(times=tuple(times), t_diff=t_diff)
