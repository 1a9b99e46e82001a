"""Vision-aware interaction diffusion head (VID).

Denoises explicit hand joints and object point clouds, conditioned on the
video and motion latent streams. Latents pass through two separate Conv3d
pyramids (full resolution and 2x spatially downsampled); per-scale features
are concatenated across streams and projected into one cross-attention memory.
The trunk works on three tokens per frame (hands, tool, target) and predicts
the clean sample.
"""

from typing import List, Tuple

import torch
import torch.nn as nn
from einops import rearrange

from svimo.config.settings import RunConfig
from svimo.errors import ShapeMismatchError
from svimo.models.attention import FeedForward, MultiHeadAttention
from svimo.models.backbone import TimestepEmbedder, modulate
from svimo.models.codec import latent_grid

N_SCALES = 2


class _ConvPyramid(nn.Module):
    def __init__(self, in_channels: int, channels: int):
        super().__init__()
        self.stem = nn.Sequential(nn.Conv3d(in_channels, channels, 3, padding=1), nn.SiLU())
        self.down = nn.Sequential(
            nn.Conv3d(channels, channels, 3, stride=(1, 2, 2), padding=1), nn.SiLU()
        )

    def forward(self, z: torch.Tensor) -> List[torch.Tensor]:
        x = self.stem(rearrange(z, "b t h w c -> b c t h w"))
        return [x, self.down(x)]


class DualStreamEncoder(nn.Module):
    """Separate spatiotemporal encoders for ``z_V`` / ``z_M``; fused multi-scale memory."""

    def __init__(self, in_channels: int, conv_channels: int, d: int, latent_frames: int):
        super().__init__()
        self.video = _ConvPyramid(in_channels, conv_channels)
        self.motion = _ConvPyramid(in_channels, conv_channels)
        self.fuse = nn.Linear(2 * conv_channels, d)
        self.scale_embed = nn.Parameter(torch.randn(N_SCALES, d) * 0.02)
        self.frame_embed = nn.Parameter(torch.randn(latent_frames, d) * 0.02)

    def forward(self, z_V: torch.Tensor, z_M: torch.Tensor) -> torch.Tensor:
        memory = []
        for scale, (fv, fm) in enumerate(zip(self.video(z_V), self.motion(z_M))):
            fused = self.fuse(rearrange(torch.cat([fv, fm], dim=1), "b c t h w -> b t h w c"))
            fused = fused + self.scale_embed[scale] + self.frame_embed[:, None, None]
            memory.append(rearrange(fused, "b t h w d -> b (t h w) d"))
        return torch.cat(memory, dim=1)


class VIDBlock(nn.Module):
    """Self-attention, cross-attention to visual memory, feedforward; time FiLM on each norm."""

    def __init__(self, d: int, heads: int, ff_mult: int = 4, eps: float = 1e-6):
        super().__init__()
        self.norms = nn.ModuleList(nn.LayerNorm(d, elementwise_affine=False, eps=eps) for _ in range(3))
        self.self_attn = MultiHeadAttention(d, heads)
        self.cross_attn = MultiHeadAttention(d, heads)
        self.ff = FeedForward(d, ff_mult)
        self.modulation = nn.Linear(d, 6 * d)
        nn.init.zeros_(self.modulation.weight)
        nn.init.zeros_(self.modulation.bias)

    def forward(self, x: torch.Tensor, memory: torch.Tensor, e_t: torch.Tensor) -> torch.Tensor:
        film = self.modulation(nn.functional.silu(e_t)).unsqueeze(1).chunk(6, dim=-1)
        (s1, b1), (s2, b2), (s3, b3) = zip(film[0::2], film[1::2])
        x = x + self.self_attn(modulate(self.norms[0](x), b1, s1))[0]
        x = x + self.cross_attn(modulate(self.norms[1](x), b2, s2), context=memory)[0]
        return x + self.ff(modulate(self.norms[2](x), b3, s3))


class VID(nn.Module):
    """x0-predictor ``M_phi(h_t, o_t | z_V, z_M, t)``."""

    def __init__(self, cfg: RunConfig):
        super().__init__()
        s, m, data = cfg.shapes, cfg.model, cfg.data
        self.N, self.J, self.K = s.N, data.J, data.K
        self.T = cfg.schedule.T
        self.grid = latent_grid(s)
        self.channels = cfg.latent_channels
        d = m.vid_d
        half = self.K // 2

        self.time_embed = TimestepEmbedder(d)
        self.encoder = DualStreamEncoder(self.channels, m.vid_conv_channels, d, self.grid[0])
        self.hand_in = nn.Linear(self.J * 3, d)
        self.tool_in = nn.Linear(half * 3, d)
        self.target_in = nn.Linear(half * 3, d)
        self.frame_embed = nn.Parameter(torch.randn(self.N, d) * 0.02)
        self.type_embed = nn.Parameter(torch.randn(3, d) * 0.02)
        self.blocks = nn.ModuleList(
            VIDBlock(d, m.vid_heads, m.ff_mult, m.norm_eps) for _ in range(m.vid_blocks)
        )
        self.norm_out = nn.LayerNorm(d, eps=m.norm_eps)
        self.hand_out = nn.Linear(d, self.J * 3)
        self.tool_out = nn.Linear(d, half * 3)
        self.target_out = nn.Linear(d, half * 3)

    def _check_inputs(self, h_t, o_t, z_V, z_M, t) -> None:
        if tuple(h_t.shape[1:]) != (self.N, self.J, 3):
            raise ShapeMismatchError(f"h_t {tuple(h_t.shape)} does not match [B, {self.N}, {self.J}, 3]")
        if tuple(o_t.shape[1:]) != (self.N, self.K, 3):
            raise ShapeMismatchError(f"o_t {tuple(o_t.shape)} does not match [B, {self.N}, {self.K}, 3]")
        expected = tuple(self.grid) + (self.channels,)
        for name, z in (("z_V", z_V), ("z_M", z_M)):
            if tuple(z.shape[1:]) != expected:
                raise ShapeMismatchError(f"{name} {tuple(z.shape)} does not match [B, {expected}]")
        if bool((t < 0).any()) or bool((t >= self.T).any()):
            raise ValueError(f"t out of range [0, {self.T - 1}]")

    def forward(
        self,
        h_t: torch.Tensor,
        o_t: torch.Tensor,
        z_V: torch.Tensor,
        z_M: torch.Tensor,
        t: torch.Tensor,
    ) -> Tuple[torch.Tensor, torch.Tensor]:
        t = torch.as_tensor(t, dtype=torch.long, device=h_t.device).reshape(-1).expand(h_t.shape[0])
        self._check_inputs(h_t, o_t, z_V, z_M, t)
        half = self.K // 2
        e_t = self.time_embed(t)
        memory = self.encoder(z_V, z_M)

        tokens = torch.stack(
            [
                self.hand_in(rearrange(h_t, "b n j c -> b n (j c)")),
                self.tool_in(rearrange(o_t[:, :, :half], "b n k c -> b n (k c)")),
                self.target_in(rearrange(o_t[:, :, half:], "b n k c -> b n (k c)")),
            ],
            dim=2,
        )  # [B, N, 3, d]
        tokens = tokens + self.frame_embed[:, None] + self.type_embed + e_t[:, None, None]
        x = rearrange(tokens, "b n k d -> b (n k) d")
        for block in self.blocks:
            x = block(x, memory, e_t)

        x = rearrange(self.norm_out(x), "b (n k) d -> b n k d", k=3)
        hhat = rearrange(self.hand_out(x[:, :, 0]), "b n (j c) -> b n j c", c=3)
        tool = rearrange(self.tool_out(x[:, :, 1]), "b n (k c) -> b n k c", c=3)
        target = rearrange(self.target_out(x[:, :, 2]), "b n (k c) -> b n k c", c=3)
        return hhat, torch.cat([tool, target], dim=2)
