"""Unit tests for svimo.models.vid (interaction diffusion head).

Marker: @pytest.mark.unit

Run:
    uv run pytest tests/test_vid.py -v -m unit
"""

import pytest
import torch

from svimo.errors import ShapeMismatchError
from svimo.models.codec import latent_grid
from svimo.models.vid import VID


def _inputs(cfg, batch=2):
    s, d = cfg.shapes, cfg.data
    grid = latent_grid(s) + (cfg.latent_channels,)
    return (
        torch.randn(batch, s.N, d.J, 3),
        torch.randn(batch, s.N, d.K, 3),
        torch.randn((batch,) + grid),
        torch.randn((batch,) + grid),
        torch.tensor([1, cfg.schedule.T - 1][:batch]),
    )


@pytest.mark.unit
def test_vid_output_shapes(cfg):
    vid = VID(cfg)
    h, o, z_V, z_M, t = _inputs(cfg)
    hhat, ohat = vid(h, o, z_V, z_M, t)
    assert hhat.shape == h.shape
    assert ohat.shape == o.shape
    assert bool(torch.isfinite(hhat).all()) and bool(torch.isfinite(ohat).all())


@pytest.mark.unit
def test_vid_accepts_scalar_timestep(cfg):
    vid = VID(cfg)
    h, o, z_V, z_M, _ = _inputs(cfg)
    hhat, _ = vid(h, o, z_V, z_M, torch.tensor(5))
    assert hhat.shape == h.shape


@pytest.mark.unit
def test_vid_prediction_depends_on_visual_latents(cfg):
    vid = VID(cfg)
    h, o, z_V, z_M, t = _inputs(cfg)
    with torch.no_grad():
        a, _ = vid(h, o, z_V, z_M, t)
        b, _ = vid(h, o, z_V + 1.0, z_M, t)
        c, _ = vid(h, o, z_V, z_M + 1.0, t)
    assert not torch.allclose(a, b)
    assert not torch.allclose(a, c)


@pytest.mark.unit
def test_vid_gradients_reach_latents(cfg):
    vid = VID(cfg)
    h, o, z_V, z_M, t = _inputs(cfg)
    z_V.requires_grad_(True)
    z_M.requires_grad_(True)
    hhat, ohat = vid(h, o, z_V, z_M, t)
    (hhat.square().mean() + ohat.square().mean()).backward()
    assert z_V.grad.abs().sum().item() > 0
    assert z_M.grad.abs().sum().item() > 0


@pytest.mark.unit
def test_vid_input_validation(cfg):
    vid = VID(cfg)
    h, o, z_V, z_M, t = _inputs(cfg)
    with pytest.raises(ShapeMismatchError):
        vid(h[:, :, :-1], o, z_V, z_M, t)
    with pytest.raises(ShapeMismatchError):
        vid(h, o[:, :-1], z_V, z_M, t)
    with pytest.raises(ShapeMismatchError):
        vid(h, o, z_V[..., :-1], z_M, t)
    with pytest.raises(ValueError):
        vid(h, o, z_V, z_M, torch.tensor([0, cfg.schedule.T]))
