"""Video <-> latent codecs and token accounting.

Videos are ``[B, N, H, W, 3]`` in [0, 1]; latents are channels-last
``[B, (N-1)/rn + 1, H/rh, W/rw, C]``. Unbatched inputs are accepted and
returned unbatched. Frame 0 stands alone in its temporal group; the rest of
the group is zero padding.
"""

import logging
from dataclasses import dataclass
from typing import Optional, Protocol, Sequence

import torch
import torch.nn as nn
import torch.nn.functional as F
from einops import rearrange
from tqdm import tqdm

from svimo.config.settings import RunConfig, ShapeConfig
from svimo.errors import ConvergenceError, ShapeMismatchError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TokenBudget:
    text: int
    video: int
    motion: int

    @property
    def total(self) -> int:
        return self.text + self.video + self.motion


def token_budget(cfg: ShapeConfig) -> TokenBudget:
    """Tokens entering the DiT stack; at full scale: 226 + 13182 * 2 = 26590."""
    per_stream = (
        cfg.latent_frames * (cfg.H // (cfg.rh * cfg.patch)) * (cfg.W // (cfg.rw * cfg.patch))
    )
    return TokenBudget(text=cfg.L_text, video=per_stream, motion=per_stream)


def latent_grid(cfg: ShapeConfig) -> tuple:
    h, w = cfg.latent_hw
    return cfg.latent_frames, h, w


def _batched(x: torch.Tensor, rank: int):
    if x.dim() == rank - 1:
        return x.unsqueeze(0), True
    if x.dim() != rank:
        raise ShapeMismatchError(f"expected rank {rank - 1} or {rank}, got shape {tuple(x.shape)}")
    return x, False


def check_video(video: torch.Tensor, cfg: ShapeConfig) -> None:
    if tuple(video.shape[-4:]) != (cfg.N, cfg.H, cfg.W, 3):
        raise ShapeMismatchError(
            f"video {tuple(video.shape)} does not match [N={cfg.N}, H={cfg.H}, W={cfg.W}, 3]"
        )


class LatentCodec(Protocol):
    channels: int

    def encode(self, video: torch.Tensor) -> torch.Tensor: ...

    def decode(self, lat: torch.Tensor, clamp: bool = True) -> torch.Tensor: ...


def _pad_first_frame(video: torch.Tensor, rn: int) -> torch.Tensor:
    # [B, N, H, W, 3] -> [B, N + rn - 1, H, W, 3]
    pad = video.new_zeros((video.shape[0], rn - 1) + tuple(video.shape[2:]))
    return torch.cat([video[:, :1], pad, video[:, 1:]], dim=1)


def _unpad_first_frame(frames: torch.Tensor, rn: int) -> torch.Tensor:
    return torch.cat([frames[:, :1], frames[:, rn:]], dim=1)


class PseudoVAE:
    """Lossless space-to-depth / time-to-depth rearrangement (``C = rn * rh * rw * 3``)."""

    def __init__(self, cfg: ShapeConfig):
        self.cfg = cfg
        self.channels = cfg.lossless_channels

    def encode(self, video: torch.Tensor) -> torch.Tensor:
        video, squeeze = _batched(video, 5)
        check_video(video, self.cfg)
        c = self.cfg
        lat = rearrange(
            _pad_first_frame(video, c.rn),
            "b (t rt) (h rh) (w rw) c -> b t h w (rt rh rw c)",
            rt=c.rn,
            rh=c.rh,
            rw=c.rw,
        )
        return lat[0] if squeeze else lat

    def decode(self, lat: torch.Tensor, clamp: bool = True) -> torch.Tensor:
        lat, squeeze = _batched(lat, 5)
        c = self.cfg
        expected = latent_grid(c) + (self.channels,)
        if tuple(lat.shape[1:]) != expected:
            raise ShapeMismatchError(f"latent {tuple(lat.shape)} does not match {expected}")
        frames = rearrange(
            lat, "b t h w (rt rh rw c) -> b (t rt) (h rh) (w rw) c", rt=c.rn, rh=c.rh, rw=c.rw
        )
        video = _unpad_first_frame(frames, c.rn)
        if clamp:
            video = video.clamp(0.0, 1.0)
        return video[0] if squeeze else video


class ConvVideoAutoencoder(nn.Module):
    """Tiny learned Conv3d autoencoder with the same latent grid as ``PseudoVAE``."""

    def __init__(self, cfg: ShapeConfig, channels: int = 16, hidden: int = 32):
        super().__init__()
        self.cfg = cfg
        self.channels = channels
        stride = (cfg.rn, cfg.rh, cfg.rw)
        self.encoder = nn.Sequential(
            nn.Conv3d(3, hidden, kernel_size=3, padding=1),
            nn.SiLU(),
            nn.Conv3d(hidden, hidden, kernel_size=stride, stride=stride),
            nn.SiLU(),
            nn.Conv3d(hidden, channels, kernel_size=1),
        )
        self.decoder = nn.Sequential(
            nn.Conv3d(channels, hidden, kernel_size=1),
            nn.SiLU(),
            nn.ConvTranspose3d(hidden, hidden, kernel_size=stride, stride=stride),
            nn.SiLU(),
            nn.Conv3d(hidden, 3, kernel_size=3, padding=1),
        )

    def encode(self, video: torch.Tensor) -> torch.Tensor:
        video, squeeze = _batched(video, 5)
        check_video(video, self.cfg)
        x = rearrange(_pad_first_frame(video, self.cfg.rn), "b n h w c -> b c n h w")
        lat = rearrange(self.encoder(x), "b c t h w -> b t h w c")
        return lat[0] if squeeze else lat

    def decode(self, lat: torch.Tensor, clamp: bool = True) -> torch.Tensor:
        lat, squeeze = _batched(lat, 5)
        x = self.decoder(rearrange(lat, "b t h w c -> b c t h w"))
        video = _unpad_first_frame(rearrange(x, "b c n h w -> b n h w c"), self.cfg.rn)
        if clamp:
            video = video.clamp(0.0, 1.0)
        return video[0] if squeeze else video


def build_codec(cfg: RunConfig) -> LatentCodec:
    if cfg.codec.kind == "lossless":
        return PseudoVAE(cfg.shapes)
    return ConvVideoAutoencoder(
        cfg.shapes, channels=cfg.latent_channels, hidden=cfg.codec.learned_hidden
    )


def fit_learned_codec(
    codec: ConvVideoAutoencoder,
    videos: Sequence[torch.Tensor],
    steps: int = 2000,
    lr: float = 1e-3,
    target_mse: Optional[float] = 1e-3,
    seed: int = 0,
) -> float:
    """Train the learned codec on reconstruction MSE; returns the final full-set MSE."""
    data = torch.stack([torch.as_tensor(v, dtype=torch.float32) for v in videos])
    opt = torch.optim.Adam(codec.parameters(), lr=lr)
    gen = torch.Generator().manual_seed(seed)
    batch = min(4, data.shape[0])
    codec.train()
    for _ in tqdm(range(steps), desc="codec", leave=False):
        idx = torch.randperm(data.shape[0], generator=gen)[:batch]
        recon = codec.decode(codec.encode(data[idx]), clamp=False)
        loss = F.mse_loss(recon, data[idx])
        opt.zero_grad()
        loss.backward()
        opt.step()
    codec.eval()
    with torch.no_grad():
        mse = float(F.mse_loss(codec.decode(codec.encode(data)), data))
    logger.info(f"Learned codec reconstruction MSE: {mse:.2e}")
    if target_mse is not None and mse >= target_mse:
        raise ConvergenceError(f"codec MSE {mse:.2e} did not reach {target_mse:.0e}")
    return mse


def noise_reference_image(
    image: torch.Tensor, sigma: float, generator: Optional[torch.Generator] = None
) -> torch.Tensor:
    """Additive Gaussian noise on the reference frame (training-time robustness)."""
    if sigma == 0:
        return image
    noise = torch.randn(image.shape, generator=generator, dtype=image.dtype)
    return image + sigma * noise.to(image.device)


def encode_reference(codec: LatentCodec, image: torch.Tensor, cfg: ShapeConfig) -> torch.Tensor:
    """Encode a single image ``[B, H, W, 3]`` into a one-slot latent ``[B, 1, h, w, C]``.

    The image is placed as frame 0 of an otherwise black clip; only the first
    temporal slot is kept.
    """
    image, squeeze = _batched(image, 4)
    clip = image.new_zeros((image.shape[0], cfg.N, cfg.H, cfg.W, 3))
    clip[:, 0] = image
    lat = codec.encode(clip)[:, :1]
    return lat[0] if squeeze else lat


def codec_device(codec: LatentCodec) -> torch.device:
    if isinstance(codec, nn.Module):
        return next(codec.parameters()).device
    return torch.device("cpu")
