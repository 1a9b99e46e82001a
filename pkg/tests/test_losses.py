"""Unit tests for svimo.models.losses against brute-force oracles and finite differences.

Marker: @pytest.mark.unit

Run:
    uv run pytest tests/test_losses.py -v -m unit
"""

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from svimo.errors import ShapeMismatchError
from svimo.models.losses import chamfer, hand_loss, object_loss, split_parts, svimo_loss, vid_loss

from oracles import chamfer_bruteforce, hand_loss_bruteforce, object_loss_bruteforce

coords = st.floats(-5, 5, allow_nan=False, allow_infinity=False)


def _cloud(n):
    return arrays(np.float64, (n, 3), elements=coords)


# ---------------------------------------------------------------------------
# Chamfer
# ---------------------------------------------------------------------------


@pytest.mark.unit
def test_chamfer_worked_examples():
    a = torch.tensor([[0.0, 0.0, 0.0]], dtype=torch.float64)
    b = torch.tensor([[1.0, 0.0, 0.0]], dtype=torch.float64)
    assert chamfer(a, b).item() == pytest.approx(1.0)
    two = torch.tensor([[0.0, 0.0, 0.0], [2.0, 0.0, 0.0]], dtype=torch.float64)
    # a -> two: 0; two -> a: (0 + 4) / 2
    assert chamfer(a, two).item() == pytest.approx(0.5 * (0.0 + 2.0))
    assert chamfer(two, two).item() == 0.0


@pytest.mark.unit
def test_chamfer_matches_bruteforce_on_random_clouds():
    rng = np.random.default_rng(0)
    for p, q in [(1, 1), (3, 5), (8, 2)]:
        a, b = rng.normal(size=(p, 3)), rng.normal(size=(q, 3))
        got = chamfer(torch.from_numpy(a), torch.from_numpy(b)).item()
        assert got == pytest.approx(chamfer_bruteforce(a, b), rel=1e-12)


@pytest.mark.unit
def test_chamfer_is_batched_over_leading_dims():
    a = torch.randn(2, 3, 4, 3, dtype=torch.float64)
    b = torch.randn(2, 3, 5, 3, dtype=torch.float64)
    out = chamfer(a, b)
    assert out.shape == (2, 3)
    assert out[1, 2].item() == pytest.approx(chamfer(a[1, 2], b[1, 2]).item())


@pytest.mark.unit
def test_chamfer_of_empty_cloud_raises():
    with pytest.raises(ValueError):
        chamfer(torch.zeros(0, 3), torch.zeros(2, 3))


@pytest.mark.unit
@settings(max_examples=40, deadline=None)
@given(a=_cloud(4), b=_cloud(3), shift=arrays(np.float64, (3,), elements=coords))
def test_chamfer_symmetric_and_translation_invariant(a, b, shift):
    ta, tb = torch.from_numpy(a), torch.from_numpy(b)
    ab, ba = chamfer(ta, tb).item(), chamfer(tb, ta).item()
    assert ab == pytest.approx(ba, rel=1e-9, abs=1e-9)
    moved = chamfer(ta + torch.from_numpy(shift), tb + torch.from_numpy(shift)).item()
    assert moved == pytest.approx(ab, rel=1e-6, abs=1e-6)
    assert ab >= 0.0


# ---------------------------------------------------------------------------
# Hand / object / latent losses
# ---------------------------------------------------------------------------


@pytest.mark.unit
@pytest.mark.parametrize("frames", [1, 2, 3, 6])
def test_hand_loss_matches_bruteforce(frames):
    rng = np.random.default_rng(frames)
    h, hhat = rng.normal(size=(frames, 4, 3)), rng.normal(size=(frames, 4, 3))
    got = hand_loss(torch.from_numpy(h), torch.from_numpy(hhat)).item()
    assert got == pytest.approx(hand_loss_bruteforce(h, hhat), rel=1e-12)


@pytest.mark.unit
def test_hand_loss_constant_offset_has_no_temporal_terms():
    h = torch.randn(5, 4, 3, dtype=torch.float64)
    assert hand_loss(h, h + 0.5).item() == pytest.approx(0.25)


@pytest.mark.unit
def test_object_loss_matches_bruteforce():
    rng = np.random.default_rng(3)
    o, ohat = rng.normal(size=(4, 6, 3)), rng.normal(size=(4, 6, 3))
    got = object_loss(torch.from_numpy(o), torch.from_numpy(ohat)).item()
    assert got == pytest.approx(object_loss_bruteforce(o, ohat), rel=1e-12)


@pytest.mark.unit
def test_object_loss_needs_even_point_count_and_same_shape():
    with pytest.raises(ShapeMismatchError):
        split_parts(torch.zeros(2, 5, 3))
    with pytest.raises(ShapeMismatchError):
        object_loss(torch.zeros(2, 4, 3), torch.zeros(2, 6, 3))


@pytest.mark.unit
def test_svimo_loss_and_vid_loss():
    z = torch.zeros(2, 3)
    assert svimo_loss(z + 1, z, z, z).item() == pytest.approx(1.0)
    h = torch.randn(3, 4, 3)
    o = torch.randn(3, 4, 3)
    assert vid_loss(h, h, o, o).item() == pytest.approx(0.0, abs=1e-7)
    with pytest.raises(ShapeMismatchError):
        svimo_loss(z, z, z, torch.zeros(3, 3))


# ---------------------------------------------------------------------------
# Gradients vs. central finite differences
# ---------------------------------------------------------------------------


def _finite_difference_check(fn, x: torch.Tensor, eps: float = 1e-6, rtol: float = 1e-4):
    x = x.clone().requires_grad_(True)
    fn(x).backward()
    analytic = x.grad.detach().clone()
    numeric = torch.zeros_like(x)
    flat, num_flat = x.detach().view(-1), numeric.view(-1)
    for i in range(flat.numel()):
        orig = flat[i].item()
        flat[i] = orig + eps
        up = fn(x.detach()).item()
        flat[i] = orig - eps
        down = fn(x.detach()).item()
        flat[i] = orig
        num_flat[i] = (up - down) / (2 * eps)
    assert torch.allclose(analytic, numeric, rtol=rtol, atol=1e-7)


@pytest.mark.unit
def test_loss_gradients_match_finite_differences():
    gen = torch.Generator().manual_seed(5)

    def rand(*shape):
        return torch.randn(shape, generator=gen, dtype=torch.float64)

    z0_V, z0_M, zhat_M = rand(2, 3), rand(2, 3), rand(2, 3)
    _finite_difference_check(lambda x: svimo_loss(x, zhat_M, z0_V, z0_M), rand(2, 3))

    h = rand(4, 2, 3)
    _finite_difference_check(lambda x: hand_loss(h, x), rand(4, 2, 3))

    # well-separated points keep the nearest-neighbour assignment stable under eps
    target = torch.tensor([[0.0, 0.0, 0.0], [3.0, 0.0, 0.0], [0.0, 3.0, 0.0]], dtype=torch.float64)
    pred = target + 0.3 * rand(3, 3)
    _finite_difference_check(lambda x: chamfer(target, x), pred)

    o = torch.stack([target.repeat(2, 1) + 0.1 * k for k in range(3)])  # [3, 6, 3]
    ohat = o + 0.2 * rand(3, 6, 3)
    _finite_difference_check(lambda x: object_loss(o, x), ohat)
