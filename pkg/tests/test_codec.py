"""Unit tests for svimo.models.codec (pseudo-VAE, learned codec, token accounting).

Marker: @pytest.mark.unit

Run:
    uv run pytest tests/test_codec.py -v -m unit
"""

import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from svimo.config.settings import ShapeConfig
from svimo.errors import ConvergenceError, ShapeMismatchError
from svimo.models.codec import (
    ConvVideoAutoencoder,
    PseudoVAE,
    build_codec,
    encode_reference,
    fit_learned_codec,
    latent_grid,
    noise_reference_image,
    token_budget,
)

from conftest import tiny_config

DESK = ShapeConfig()
FULL_SCALE = ShapeConfig(N=49, H=416, W=624, rh=8, rw=8, rn=4, patch=2, L_text=226)

# ---------------------------------------------------------------------------
# Token accounting
# ---------------------------------------------------------------------------


@pytest.mark.unit
def test_full_scale_token_budget_is_exact():
    budget = token_budget(FULL_SCALE)
    assert latent_grid(FULL_SCALE) == (13, 52, 78)
    assert budget.video == budget.motion == 13182
    assert budget.text == 226
    assert budget.total == 26590


@pytest.mark.unit
def test_desk_token_budget():
    budget = token_budget(DESK)
    assert latent_grid(DESK) == (5, 8, 12)
    assert budget.video == 5 * 4 * 6
    assert budget.total == 12 + 2 * 120


@pytest.mark.unit
@settings(max_examples=30, deadline=None)
@given(extra_groups=st.integers(0, 6), text=st.integers(0, 300))
def test_token_budget_grows_with_frames_and_text(extra_groups, text):
    small = ShapeConfig(N=1 + 2 * extra_groups, H=32, W=48, rn=2, L_text=text)
    bigger = ShapeConfig(N=1 + 2 * (extra_groups + 1), H=32, W=48, rn=2, L_text=text + 1)
    assert token_budget(bigger).total > token_budget(small).total


# ---------------------------------------------------------------------------
# Pseudo-VAE
# ---------------------------------------------------------------------------


@pytest.mark.unit
def test_pseudo_vae_round_trip_is_bit_exact():
    codec = PseudoVAE(DESK)
    gen = torch.Generator().manual_seed(0)
    videos = torch.rand((8, DESK.N, DESK.H, DESK.W, 3), generator=gen)
    lat = codec.encode(videos)
    assert lat.shape == (8, 5, 8, 12, DESK.lossless_channels)
    assert torch.equal(codec.decode(lat), videos)


@pytest.mark.unit
def test_pseudo_vae_accepts_unbatched_video():
    codec = PseudoVAE(DESK)
    video = torch.rand(DESK.N, DESK.H, DESK.W, 3)
    lat = codec.encode(video)
    assert lat.shape == (5, 8, 12, DESK.lossless_channels)
    assert torch.equal(codec.decode(lat), video)


@pytest.mark.unit
def test_first_latent_slot_depends_only_on_frame_zero():
    codec = PseudoVAE(DESK)
    a = torch.rand(DESK.N, DESK.H, DESK.W, 3)
    b = a.clone()
    b[1:] = torch.rand(DESK.N - 1, DESK.H, DESK.W, 3)
    assert torch.equal(codec.encode(a)[0], codec.encode(b)[0])
    assert not torch.equal(codec.encode(a)[1], codec.encode(b)[1])


@pytest.mark.unit
def test_pseudo_vae_shape_errors():
    codec = PseudoVAE(DESK)
    with pytest.raises(ShapeMismatchError):
        codec.encode(torch.zeros(DESK.N, DESK.H + 1, DESK.W, 3))
    with pytest.raises(ShapeMismatchError):
        codec.decode(torch.zeros(5, 8, 12, 7))


@pytest.mark.unit
def test_decode_clamps_to_unit_range_on_request():
    codec = PseudoVAE(DESK)
    lat = codec.encode(torch.rand(DESK.N, DESK.H, DESK.W, 3)) * 3 - 1
    assert float(codec.decode(lat).min()) >= 0.0
    assert float(codec.decode(lat).max()) <= 1.0
    assert float(codec.decode(lat, clamp=False).max()) > 1.0


# ---------------------------------------------------------------------------
# Reference image
# ---------------------------------------------------------------------------


@pytest.mark.unit
def test_encode_reference_equals_first_slot_of_clip():
    codec = PseudoVAE(DESK)
    video = torch.rand(2, DESK.N, DESK.H, DESK.W, 3)
    ref = encode_reference(codec, video[:, 0], DESK)
    assert ref.shape == (2, 1, 8, 12, DESK.lossless_channels)
    assert torch.equal(ref[:, 0], codec.encode(video)[:, 0])


@pytest.mark.unit
def test_noise_reference_image():
    image = torch.rand(4, 4, 3)
    assert noise_reference_image(image, 0.0) is image
    noisy = noise_reference_image(image, 0.1, torch.Generator().manual_seed(0))
    again = noise_reference_image(image, 0.1, torch.Generator().manual_seed(0))
    assert torch.equal(noisy, again)
    assert not torch.equal(noisy, image)


# ---------------------------------------------------------------------------
# Learned codec
# ---------------------------------------------------------------------------


@pytest.mark.unit
def test_build_codec_follows_config():
    assert isinstance(build_codec(tiny_config()), PseudoVAE)
    learned = build_codec(tiny_config(codec={"kind": "learned"}, shapes={"d_latent": 6}))
    assert isinstance(learned, ConvVideoAutoencoder)
    assert learned.channels == 6


@pytest.mark.unit
def test_learned_codec_keeps_latent_grid():
    cfg = tiny_config(codec={"kind": "learned"}, shapes={"d_latent": 6})
    codec = build_codec(cfg)
    s = cfg.shapes
    lat = codec.encode(torch.rand(2, s.N, s.H, s.W, 3))
    assert lat.shape == (2,) + latent_grid(s) + (6,)
    assert codec.decode(lat).shape == (2, s.N, s.H, s.W, 3)


@pytest.mark.unit
def test_fit_learned_codec_raises_when_target_missed():
    cfg = tiny_config(codec={"kind": "learned"}, shapes={"d_latent": 6})
    codec = build_codec(cfg)
    s = cfg.shapes
    videos = [torch.rand(s.N, s.H, s.W, 3) for _ in range(2)]
    with pytest.raises(ConvergenceError):
        fit_learned_codec(codec, videos, steps=1, target_mse=1e-12)
    mse = fit_learned_codec(codec, videos, steps=2, target_mse=None)
    assert mse >= 0.0
