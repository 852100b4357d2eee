"""Square-root noise schedule and the bucket-staged forward process.

The schedule defines cumulative retention ``alpha_bar[t] = clamp(1 -
sqrt(t/T + s), eps, 1)`` with per-step ``beta[t] = 1 - alpha_bar[t] /
alpha_bar[t-1]``, so products of (1 - beta) telescope exactly to retention
ratios. Each token starts receiving Gaussian noise at its bucket's
activation step and keeps diffusing afterwards, which drives every token
to near-isotropic noise by the terminal step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch

from .corpus import TokenSequence
from .importance import BucketAssignment


@dataclass(frozen=True)
class NoiseSchedule:
    """Retention curve alpha_bar (length T+1) and derived betas.

    beta[0] is unused padding so that beta[t] is the noise of step t-1 -> t.
    """

    T: int
    s: float
    eps: float
    alpha_bar: np.ndarray
    beta: np.ndarray

    def retention(self, t: int, activation: int) -> float:
        """Fraction of clean signal surviving at step t for a token that
        activated after step `activation` (1.0 while still inactive)."""
        if t <= activation:
            return 1.0
        return float(self.alpha_bar[t] / self.alpha_bar[activation])


def make_schedule(T: int, s: float = 1e-4, eps: float = 1e-5) -> NoiseSchedule:
    """Build the square-root schedule; raises if it would produce invalid betas."""
    if T < 1:
        raise ValueError("T must be >= 1")
    if not 0.0 < s < 1.0:
        raise ValueError("s must lie in (0, 1)")
    if not 0.0 < eps < 1.0 - math.sqrt(s):
        raise ValueError("eps must lie in (0, 1 - sqrt(s))")
    steps = np.arange(T + 1, dtype=np.float64)
    alpha_bar = np.clip(1.0 - np.sqrt(steps / T + s), eps, 1.0)
    beta = np.zeros(T + 1, dtype=np.float64)
    beta[1:] = 1.0 - alpha_bar[1:] / alpha_bar[:-1]
    if np.any(beta[1:] <= 0.0) or np.any(beta[1:] >= 1.0):
        raise ValueError(
            "degenerate schedule: some beta outside (0, 1); decrease s or eps"
        )
    return NoiseSchedule(T=T, s=s, eps=eps, alpha_bar=alpha_bar, beta=beta)


def t_start(bucket: int, T: int, m: int) -> int:
    """First diffusion step at which bucket `bucket` receives noise."""
    return (bucket - 1) * T // m + 1


@dataclass(frozen=True)
class MaskState:
    """Per-token activation steps.

    ``activation[i]`` is the last step at which token i is still clean;
    noising starts at activation[i] + 1. In windowed mode a token stops
    receiving fresh noise after ``deactivation[i]`` (the default, None,
    keeps noising cumulative through step T).
    """

    activation: tuple[int, ...]
    T: int
    deactivation: tuple[int, ...] | None = None

    def __len__(self) -> int:
        return len(self.activation)

    @classmethod
    def from_buckets(
        cls, assignment: BucketAssignment, T: int, windowed: bool = False
    ) -> "MaskState":
        m = assignment.m
        activation = tuple(t_start(b, T, m) - 1 for b in assignment.buckets)
        deactivation = None
        if windowed:
            deactivation = tuple(
                t_start(b + 1, T, m) - 1 if b < m else T for b in assignment.buckets
            )
        return cls(activation=activation, T=T, deactivation=deactivation)

    def noised_end(self, i: int) -> int:
        return self.T if self.deactivation is None else self.deactivation[i]

    def masked_positions(self, t: int) -> list[int]:
        """Positions whose corruption has begun by step t."""
        return [i for i, a in enumerate(self.activation) if a < t]


def masked_sentence(
    d: TokenSequence, t: int, mask_state: MaskState, mask_id: int
) -> TokenSequence:
    """Discrete view of the corruption at step t: activated tokens -> MASK."""
    if not 0 <= t <= mask_state.T:
        raise ValueError(f"step {t} outside [0, {mask_state.T}]")
    ids = list(d.ids)
    for i in mask_state.masked_positions(t):
        ids[i] = mask_id
    return TokenSequence(ids=tuple(ids), source=d.source)


def forward_step(
    x_t: torch.Tensor,
    t: int,
    mask_state: MaskState,
    schedule: NoiseSchedule,
    generator: torch.Generator | None = None,
) -> torch.Tensor:
    """One forward noising step x_t -> x_{t+1}.

    Active tokens (activation <= t, and still inside their window) get
    sqrt(1-beta)*x + sqrt(beta)*z; the rest pass through unchanged. Noise is
    drawn for the full (l, h) block so seeded runs are reproducible
    independent of which rows are active.
    """
    if not 0 <= t < schedule.T:
        raise ValueError(f"step {t} outside [0, {schedule.T})")
    beta = float(schedule.beta[t + 1])
    noise = torch.randn(x_t.shape, generator=generator, dtype=x_t.dtype)
    active = torch.tensor(
        [a <= t < mask_state.noised_end(i) for i, a in enumerate(mask_state.activation)]
    )
    noised = math.sqrt(1.0 - beta) * x_t + math.sqrt(beta) * noise
    return torch.where(active.unsqueeze(-1), noised, x_t)


def q_sample(
    x_0: torch.Tensor,
    t: int,
    mask_state: MaskState,
    schedule: NoiseSchedule,
    generator: torch.Generator | None = None,
) -> torch.Tensor:
    """Sample x_t directly from x_0 using the telescoped retention.

    Token i keeps retention r = alpha_bar[clip(t, a_i, end_i)] /
    alpha_bar[a_i]; inactive tokens come back exactly clean (r = 1).
    """
    if not 0 <= t <= schedule.T:
        raise ValueError(f"step {t} outside [0, {schedule.T}]")
    length = x_0.shape[0]
    retention = torch.empty(length, dtype=x_0.dtype)
    for i, a in enumerate(mask_state.activation):
        eff = min(max(t, a), mask_state.noised_end(i))
        retention[i] = schedule.alpha_bar[eff] / schedule.alpha_bar[a]
    noise = torch.randn(x_0.shape, generator=generator, dtype=x_0.dtype)
    r = retention.unsqueeze(-1)
    return torch.sqrt(r) * x_0 + torch.sqrt(1.0 - r) * noise


def q_sample_batch(
    x_0: torch.Tensor,
    t: torch.Tensor,
    activation: torch.Tensor,
    schedule: NoiseSchedule,
    generator: torch.Generator | None = None,
    deactivation: torch.Tensor | None = None,
) -> torch.Tensor:
    """Vectorized q_sample for a padded batch.

    x_0 is (B, L, h), t is (B,), activation is (B, L). Padding rows should
    carry activation = T so they are never noised.
    """
    alpha_bar = torch.as_tensor(schedule.alpha_bar, dtype=x_0.dtype)
    if deactivation is None:
        deactivation = torch.full_like(activation, schedule.T)
    eff = torch.maximum(t.view(-1, 1).expand_as(activation), activation)
    eff = torch.minimum(eff, deactivation)
    retention = alpha_bar[eff] / alpha_bar[activation]
    noise = torch.randn(x_0.shape, generator=generator, dtype=x_0.dtype)
    r = retention.unsqueeze(-1)
    return torch.sqrt(r) * x_0 + torch.sqrt(1.0 - r) * noise
