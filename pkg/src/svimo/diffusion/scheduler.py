"""DDPM noise schedule, forward diffusion and ancestral posterior sampling.

Tables are float64 and 0-indexed (``t in [0, T-1]``). Sampling walks ``T-1 .. 1``;
the step at ``t=1`` maps to clean data with ``alpha_bar_prev := 1``. Posterior
coefficients use the effective ``alpha = alpha_bar_t / alpha_bar_prev`` so the same
code serves the full schedule and strided sub-schedules.
"""

import math
from dataclasses import dataclass
from typing import List, Literal, Union

import numpy as np
import torch

from svimo.errors import ShapeMismatchError

TimeIndex = Union[int, torch.Tensor]


@dataclass(frozen=True)
class NoiseSchedule:
    betas: torch.Tensor
    alphas: torch.Tensor
    alpha_bars: torch.Tensor

    @property
    def T(self) -> int:
        return int(self.betas.shape[0])


@dataclass(frozen=True)
class SubSchedule:
    parent: NoiseSchedule
    step_indices: torch.Tensor

    @property
    def alpha_bars(self) -> torch.Tensor:
        return self.parent.alpha_bars[self.step_indices]

    @property
    def T(self) -> int:
        return self.parent.T


@dataclass(frozen=True)
class Transition:
    """One reverse step: the state at index ``t`` moves to ``alpha_bar_prev``."""

    t: int
    alpha_bar: float
    alpha_bar_prev: float


def _cosine_betas(T: int, beta_min: float, beta_max: float, s: float = 0.008) -> np.ndarray:
    """Cosine-derived betas clipped to ``[beta_min, beta_max]``."""
    steps = np.arange(T + 1, dtype=np.float64) / T
    f = np.cos((steps + s) / (1 + s) * math.pi / 2) ** 2
    betas = np.clip(1.0 - f[1:] / f[:-1], beta_min, beta_max)
    return np.maximum.accumulate(betas)


def build_schedule(
    T: int,
    beta_start: float = 1e-4,
    beta_end: float = 2e-2,
    kind: Literal["linear", "cosine"] = "linear",
) -> NoiseSchedule:
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ValueError(
            f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}"
        )
    if kind == "linear":
        betas = np.linspace(beta_start, beta_end, T, dtype=np.float64)
    elif kind == "cosine":
        betas = _cosine_betas(T, beta_start, beta_end)
    else:
        raise ValueError(f"Unknown schedule kind: {kind}")

    betas_t = torch.from_numpy(betas)
    alphas = 1.0 - betas_t
    return NoiseSchedule(betas=betas_t, alphas=alphas, alpha_bars=torch.cumprod(alphas, 0))


def _broadcast(coef: torch.Tensor, like: torch.Tensor) -> torch.Tensor:
    coef = coef.to(dtype=like.dtype, device=like.device)
    return coef.reshape(coef.shape + (1,) * (like.dim() - coef.dim()))


def forward_diffuse(
    z0: torch.Tensor, t: TimeIndex, eps: torch.Tensor, sched: NoiseSchedule
) -> torch.Tensor:
    """``sqrt(ab_t) * z0 + sqrt(1 - ab_t) * eps``; ``t`` is an int or a per-batch index tensor."""
    if z0.shape != eps.shape:
        raise ShapeMismatchError(f"z0 {tuple(z0.shape)} vs eps {tuple(eps.shape)}")
    t_idx = torch.as_tensor(t, dtype=torch.long)
    if bool((t_idx < 0).any()) or bool((t_idx >= sched.T).any()):
        raise ValueError(f"t out of range [0, {sched.T - 1}]")
    ab = sched.alpha_bars[t_idx]
    return _broadcast(ab.sqrt(), z0) * z0 + _broadcast((1.0 - ab).sqrt(), z0) * eps


def posterior_coefficients(alpha_bar: float, alpha_bar_prev: float):
    """(coef_zt, coef_x0, variance) of q(z_{t-1} | z_t, z_0)."""
    alpha = alpha_bar / alpha_bar_prev
    denom = 1.0 - alpha_bar
    coef_zt = math.sqrt(alpha) * (1.0 - alpha_bar_prev) / denom
    coef_x0 = math.sqrt(alpha_bar_prev) * (1.0 - alpha) / denom
    variance = (1.0 - alpha_bar_prev) * (1.0 - alpha) / denom
    return coef_zt, coef_x0, variance


def posterior_step(
    z_t: torch.Tensor,
    zhat0: torch.Tensor,
    alpha_bar: float,
    alpha_bar_prev: float,
    noise: torch.Tensor,
) -> torch.Tensor:
    if z_t.shape != zhat0.shape:
        raise ShapeMismatchError(f"z_t {tuple(z_t.shape)} vs zhat0 {tuple(zhat0.shape)}")
    coef_zt, coef_x0, variance = posterior_coefficients(alpha_bar, alpha_bar_prev)
    if variance == 0.0:
        # terminal step: alpha_bar_prev == 1
        return coef_zt * z_t + coef_x0 * zhat0
    return coef_zt * z_t + coef_x0 * zhat0 + math.sqrt(variance) * noise


def _neighbours(t: int, sched: Union[NoiseSchedule, SubSchedule]) -> Transition:
    if isinstance(sched, SubSchedule):
        idx = sched.step_indices.tolist()
        if t not in idx:
            raise ValueError(f"t={t} is not a step of this sub-schedule")
        k = idx.index(t)
        ab = sched.parent.alpha_bars
        if len(idx) == 1:
            return Transition(t, float(ab[t]), 1.0)
        if k == 0:
            raise ValueError("the first sub-schedule index has no reverse step")
        prev = float(ab[idx[k - 1]]) if k > 1 else 1.0
        return Transition(t, float(ab[t]), prev)
    if t < 1 or t >= sched.T:
        raise ValueError(f"posterior_sample needs t in [1, {sched.T - 1}], got {t}")
    prev = float(sched.alpha_bars[t - 1]) if t > 1 else 1.0
    return Transition(t, float(sched.alpha_bars[t]), prev)


def posterior_variance(t: int, sched: Union[NoiseSchedule, SubSchedule]) -> float:
    tr = _neighbours(t, sched)
    return posterior_coefficients(tr.alpha_bar, tr.alpha_bar_prev)[2]


def posterior_sample(
    z_t: torch.Tensor,
    zhat0: torch.Tensor,
    t: int,
    sched: Union[NoiseSchedule, SubSchedule],
    noise: torch.Tensor,
) -> torch.Tensor:
    tr = _neighbours(int(t), sched)
    return posterior_step(z_t, zhat0, tr.alpha_bar, tr.alpha_bar_prev, noise)


def subsample_schedule(sched: NoiseSchedule, steps: int) -> SubSchedule:
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")
    if steps > sched.T:
        raise ValueError(f"steps={steps} exceeds T={sched.T}")
    if steps == 1:
        indices = np.array([sched.T - 1])
    else:
        indices = np.floor(np.linspace(0, sched.T - 1, steps) + 0.5).astype(np.int64)
    return SubSchedule(parent=sched, step_indices=torch.from_numpy(indices))


def transitions(sched: Union[NoiseSchedule, SubSchedule]) -> List[Transition]:
    """Reverse-time steps in visiting order (noisiest first)."""
    if isinstance(sched, SubSchedule):
        idx = sched.step_indices.tolist()
        if len(idx) == 1:
            return [_neighbours(idx[0], sched)]
        return [_neighbours(idx[k], sched) for k in range(len(idx) - 1, 0, -1)]
    return [_neighbours(t, sched) for t in range(sched.T - 1, 0, -1)]


def sample_timesteps(batch: int, sched: NoiseSchedule, generator: torch.Generator) -> torch.Tensor:
    """Training timesteps ~ U{1..T-1} (the states the sampler visits)."""
    low = 1 if sched.T > 1 else 0
    return torch.randint(low, sched.T, (batch,), generator=generator)
