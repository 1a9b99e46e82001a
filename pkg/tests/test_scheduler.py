"""Unit tests for svimo.diffusion.scheduler.

Marker: @pytest.mark.unit

Run:
    uv run pytest tests/test_scheduler.py -v -m unit
"""

import math

import numpy as np
import pytest
import torch

from svimo.diffusion.scheduler import (
    SubSchedule,
    build_schedule,
    forward_diffuse,
    posterior_coefficients,
    posterior_sample,
    posterior_variance,
    sample_timesteps,
    subsample_schedule,
    transitions,
)
from svimo.errors import ShapeMismatchError

# ---------------------------------------------------------------------------
# Schedule tables
# ---------------------------------------------------------------------------


@pytest.mark.unit
def test_linear_schedule_tables():
    sched = build_schedule(1000)
    assert sched.T == 1000
    assert sched.betas.dtype == torch.float64
    assert sched.betas[0].item() == pytest.approx(1e-4)
    assert sched.betas[-1].item() == pytest.approx(2e-2)
    assert torch.allclose(sched.alpha_bars, torch.cumprod(1.0 - sched.betas, 0))
    assert bool((sched.alpha_bars[1:] < sched.alpha_bars[:-1]).all())


@pytest.mark.unit
def test_cosine_schedule_is_monotone_and_bounded():
    sched = build_schedule(100, kind="cosine")
    assert bool((sched.betas > 0).all())
    assert bool((sched.betas <= 2e-2).all())
    assert bool((sched.alpha_bars[1:] <= sched.alpha_bars[:-1]).all())


@pytest.mark.unit
def test_cosine_schedule_honours_beta_start():
    default = build_schedule(100, kind="cosine")
    floored = build_schedule(100, beta_start=5e-3, beta_end=2e-2, kind="cosine")
    assert default.betas.min().item() >= 1e-4
    assert floored.betas.min().item() == pytest.approx(5e-3)
    assert floored.betas.max().item() == pytest.approx(2e-2)
    assert not torch.equal(default.betas, floored.betas)


@pytest.mark.unit
@pytest.mark.parametrize(
    "args", [(0,), (10, 0.0, 0.01), (10, 0.02, 0.01), (10, 1e-4, 1.0)], ids=["T0", "zero", "order", "one"]
)
def test_invalid_schedules_rejected(args):
    with pytest.raises(ValueError):
        build_schedule(*args)


# ---------------------------------------------------------------------------
# Forward diffusion
# ---------------------------------------------------------------------------


@pytest.mark.unit
def test_forward_diffuse_matches_closed_form_per_sample():
    sched = build_schedule(50)
    z0 = torch.randn(3, 4, 2, dtype=torch.float64)
    eps = torch.randn(3, 4, 2, dtype=torch.float64)
    t = torch.tensor([1, 25, 49])
    out = forward_diffuse(z0, t, eps, sched)
    for b in range(3):
        ab = sched.alpha_bars[t[b]]
        expected = ab.sqrt() * z0[b] + (1 - ab).sqrt() * eps[b]
        assert torch.allclose(out[b], expected)


@pytest.mark.unit
@pytest.mark.parametrize("t", [1, 500, 999])
def test_forward_diffuse_monte_carlo_moments(t):
    sched = build_schedule(1000)
    n = 10_000
    gen = torch.Generator().manual_seed(t)
    z0 = torch.full((n,), 0.7, dtype=torch.float64)
    eps = torch.randn(n, generator=gen, dtype=torch.float64)
    z_t = forward_diffuse(z0, t, eps, sched)
    ab = float(sched.alpha_bars[t])
    mean_expected = math.sqrt(ab) * 0.7
    var_expected = 1 - ab
    se_mean = math.sqrt(var_expected / n)
    se_var = var_expected * math.sqrt(2.0 / (n - 1))
    assert abs(float(z_t.mean()) - mean_expected) < 3 * se_mean
    assert abs(float(z_t.var()) - var_expected) < 3 * se_var


@pytest.mark.unit
def test_forward_diffuse_errors():
    sched = build_schedule(10)
    with pytest.raises(ShapeMismatchError):
        forward_diffuse(torch.zeros(2, 3), 1, torch.zeros(2, 4), sched)
    with pytest.raises(ValueError):
        forward_diffuse(torch.zeros(2), 10, torch.zeros(2), sched)


# ---------------------------------------------------------------------------
# Posterior
# ---------------------------------------------------------------------------


@pytest.mark.unit
def test_posterior_at_t1_is_deterministic_and_returns_prediction():
    sched = build_schedule(100)
    z_t = torch.randn(5, dtype=torch.float64)
    zhat0 = torch.randn(5, dtype=torch.float64)
    a = posterior_sample(z_t, zhat0, 1, sched, torch.randn(5, dtype=torch.float64))
    b = posterior_sample(z_t, zhat0, 1, sched, torch.randn(5, dtype=torch.float64))
    assert torch.equal(a, b)
    assert torch.allclose(a, zhat0, atol=1e-12)
    assert posterior_variance(1, sched) == 0.0


@pytest.mark.unit
def test_posterior_coefficients_match_ddpm_form():
    sched = build_schedule(100)
    t = 40
    ab, ab_prev = float(sched.alpha_bars[t]), float(sched.alpha_bars[t - 1])
    beta = float(sched.betas[t])
    coef_zt, coef_x0, var = posterior_coefficients(ab, ab_prev)
    assert coef_x0 == pytest.approx(math.sqrt(ab_prev) * beta / (1 - ab), rel=1e-9)
    assert coef_zt == pytest.approx(math.sqrt(1 - beta) * (1 - ab_prev) / (1 - ab), rel=1e-9)
    assert var == pytest.approx(beta * (1 - ab_prev) / (1 - ab), rel=1e-9)


@pytest.mark.unit
@pytest.mark.parametrize("steps", [None, 7, 1])
def test_noiseless_chain_recovers_clean_sample(steps):
    sched = build_schedule(100)
    walk = sched if steps is None else subsample_schedule(sched, steps)
    z0 = torch.randn(6, dtype=torch.float64)
    z = torch.randn(6, dtype=torch.float64)
    for tr in transitions(walk):
        z = posterior_sample(z, z0, tr.t, walk, torch.zeros(6, dtype=torch.float64))
    assert torch.allclose(z, z0, atol=1e-6)


@pytest.mark.unit
def test_posterior_rejects_t_outside_range():
    sched = build_schedule(10)
    with pytest.raises(ValueError):
        posterior_sample(torch.zeros(1), torch.zeros(1), 0, sched, torch.zeros(1))
    with pytest.raises(ShapeMismatchError):
        posterior_sample(torch.zeros(2), torch.zeros(3), 5, sched, torch.zeros(2))


# ---------------------------------------------------------------------------
# Sub-schedules and timestep sampling
# ---------------------------------------------------------------------------


@pytest.mark.unit
def test_subsample_indices_and_transitions():
    sched = build_schedule(1000)
    sub = subsample_schedule(sched, 5)
    assert isinstance(sub, SubSchedule)
    assert sub.step_indices.tolist() == [0, 250, 500, 749, 999]
    trs = transitions(sub)
    assert [tr.t for tr in trs] == [999, 749, 500, 250]
    assert trs[0].alpha_bar_prev == pytest.approx(float(sched.alpha_bars[749]))
    assert trs[-1].alpha_bar_prev == 1.0


@pytest.mark.unit
def test_single_step_subschedule_is_one_jump_to_clean():
    sched = build_schedule(100)
    trs = transitions(subsample_schedule(sched, 1))
    assert len(trs) == 1
    assert trs[0].t == 99
    assert trs[0].alpha_bar_prev == 1.0


@pytest.mark.unit
def test_full_schedule_visits_every_step_once():
    sched = build_schedule(20)
    assert [tr.t for tr in transitions(sched)] == list(range(19, 0, -1))


@pytest.mark.unit
def test_subsample_rejects_bad_step_counts():
    sched = build_schedule(10)
    with pytest.raises(ValueError):
        subsample_schedule(sched, 0)
    with pytest.raises(ValueError):
        subsample_schedule(sched, 11)


@pytest.mark.unit
def test_sample_timesteps_range_and_determinism():
    sched = build_schedule(30)
    a = sample_timesteps(500, sched, torch.Generator().manual_seed(1))
    b = sample_timesteps(500, sched, torch.Generator().manual_seed(1))
    assert torch.equal(a, b)
    assert int(a.min()) >= 1 and int(a.max()) <= 29
    assert len(np.unique(a.numpy())) > 20
