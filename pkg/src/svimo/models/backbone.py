"""SViMo denoiser: tri-modal DiT over text, video-latent and motion-latent tokens.

Each block modulates text / video / motion tokens with their own
(scale, shift, gate) triples derived from the timestep embedding, runs one
attention over the concatenated sequence, splits back, and gates the residual;
then the same for the feedforward path. Gates start at zero so every block is
the identity at initialization.
"""

import math
from dataclasses import dataclass, replace
from typing import Optional, Tuple

import torch
import torch.nn as nn
from einops import rearrange

from svimo.config.settings import RunConfig
from svimo.errors import ShapeMismatchError
from svimo.models.attention import FeedForward, MultiHeadAttention
from svimo.models.codec import latent_grid

MODALITIES = ("text", "video", "motion")


def sinusoidal_embedding(t: torch.Tensor, dim: int, max_period: float = 10000.0) -> torch.Tensor:
    """Interleaved ``[sin(w0 t), cos(w0 t), sin(w1 t), ...]``; ``t`` is ``[B]``."""
    half = (dim + 1) // 2
    freqs = torch.exp(-math.log(max_period) * torch.arange(half, dtype=torch.float64) / half)
    args = t.to(torch.float64)[:, None] * freqs[None]
    emb = torch.stack([torch.sin(args), torch.cos(args)], dim=-1).flatten(1)[:, :dim]
    return emb.to(torch.get_default_dtype())


def modulate(x: torch.Tensor, shift: torch.Tensor, scale: torch.Tensor) -> torch.Tensor:
    return x * (1 + scale) + shift


class TimestepEmbedder(nn.Module):
    """Sinusoidal encoding followed by a two-layer map."""

    def __init__(self, d_time: int):
        super().__init__()
        self.d_time = d_time
        self.mlp = nn.Sequential(
            nn.Linear(d_time, d_time),
            nn.SiLU(),
            nn.Linear(d_time, d_time),
        )

    def forward(self, t: torch.Tensor) -> torch.Tensor:
        freq = sinusoidal_embedding(t, self.d_time).to(self.mlp[0].weight)
        return self.mlp(freq)


class TextEmbedder(nn.Module):
    """Word-id lookup plus learned per-position embedding."""

    def __init__(self, vocab_size: int, L_text: int, d_model: int):
        super().__init__()
        self.table = nn.Embedding(vocab_size, d_model)
        self.pos = nn.Parameter(torch.randn(L_text, d_model) * 0.02)

    def forward(self, ids: torch.Tensor) -> torch.Tensor:
        if ids.shape[-1] != self.pos.shape[0]:
            raise ShapeMismatchError(f"text ids length {ids.shape[-1]} != L_text {self.pos.shape[0]}")
        return self.table(ids) + self.pos


class LatentPatchEmbed(nn.Module):
    """Stride-``patch`` 2D convolution per temporal slot + factorized (t, h, w) positions."""

    def __init__(self, in_channels: int, d_model: int, patch: int, grid: Tuple[int, int, int]):
        super().__init__()
        t, h, w = grid
        self.patch = patch
        self.conv = nn.Conv2d(in_channels, d_model, kernel_size=patch, stride=patch)
        self.pos_t = nn.Parameter(torch.randn(t, d_model) * 0.02)
        self.pos_h = nn.Parameter(torch.randn(h // patch, d_model) * 0.02)
        self.pos_w = nn.Parameter(torch.randn(w // patch, d_model) * 0.02)

    def positions(self) -> torch.Tensor:
        pos = self.pos_t[:, None, None] + self.pos_h[None, :, None] + self.pos_w[None, None, :]
        return rearrange(pos, "t h w d -> (t h w) d")

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b = x.shape[0]
        y = self.conv(rearrange(x, "b t h w c -> (b t) c h w"))
        y = rearrange(y, "(b t) d h w -> b (t h w) d", b=b)
        return y + self.positions()


def unpatchify(tokens: torch.Tensor, grid: Tuple[int, int, int], patch: int) -> torch.Tensor:
    t, h, w = grid
    return rearrange(
        tokens,
        "b (t hp wp) (p1 p2 c) -> b t (hp p1) (wp p2) c",
        t=t,
        hp=h // patch,
        wp=w // patch,
        p1=patch,
        p2=patch,
    )


@dataclass(frozen=True)
class TokenSequence:
    features: torch.Tensor  # [B, S, d]
    lengths: Tuple[int, int, int]  # text, video, motion

    @property
    def spans(self) -> Tuple[range, range, range]:
        lt, lv, lm = self.lengths
        return range(0, lt), range(lt, lt + lv), range(lt + lv, lt + lv + lm)

    def part(self, modality: str) -> torch.Tensor:
        span = self.spans[MODALITIES.index(modality)]
        return self.features[:, span.start : span.stop]

    @classmethod
    def join(cls, text: torch.Tensor, video: torch.Tensor, motion: torch.Tensor) -> "TokenSequence":
        return cls(
            features=torch.cat([text, video, motion], dim=1),
            lengths=(text.shape[1], video.shape[1], motion.shape[1]),
        )


class TriModalModulation(nn.Module):
    """``e_t`` -> (scale, shift, gate) for 3 modalities x 2 sub-layers, zero-initialized."""

    def __init__(self, d_time: int, d_model: int):
        super().__init__()
        self.d_model = d_model
        self.linear = nn.Linear(d_time, 3 * 2 * 3 * d_model)
        nn.init.zeros_(self.linear.weight)
        nn.init.zeros_(self.linear.bias)

    def forward(self, e_t: torch.Tensor) -> torch.Tensor:
        out = self.linear(nn.functional.silu(e_t))
        # [B, modality, sublayer, (scale, shift, gate), d]
        return out.view(e_t.shape[0], 3, 2, 3, self.d_model)


def modality_local_mask(lengths: Tuple[int, int, int], device=None) -> torch.Tensor:
    ids = torch.repeat_interleave(torch.arange(3, device=device), torch.tensor(lengths, device=device))
    return ids[:, None] == ids[None, :]


class DiTBlock(nn.Module):
    def __init__(self, d_model: int, heads: int, d_time: int, ff_mult: int = 4, eps: float = 1e-6):
        super().__init__()
        self.norm1 = nn.LayerNorm(d_model, elementwise_affine=False, eps=eps)
        self.attn = MultiHeadAttention(d_model, heads)
        self.norm2 = nn.LayerNorm(d_model, elementwise_affine=False, eps=eps)
        self.ff = FeedForward(d_model, ff_mult)
        self.modulation = TriModalModulation(d_time, d_model)

    @staticmethod
    def _per_token(params: torch.Tensor, lengths: Tuple[int, int, int]) -> torch.Tensor:
        # [B, 3, d] -> [B, S, d]
        counts = torch.tensor(lengths, device=params.device)
        return torch.repeat_interleave(params, counts, dim=1)

    def forward(
        self,
        seq: TokenSequence,
        e_t: torch.Tensor,
        mask: Optional[torch.Tensor] = None,
        return_weights: bool = False,
    ):
        mod = self.modulation(e_t)
        lengths = seq.lengths
        scale1, shift1, gate1 = (self._per_token(mod[:, :, 0, k], lengths) for k in range(3))
        scale2, shift2, gate2 = (self._per_token(mod[:, :, 1, k], lengths) for k in range(3))

        x = seq.features
        attn_out, weights = self.attn(
            modulate(self.norm1(x), shift1, scale1), mask=mask, return_weights=return_weights
        )
        x = x + gate1 * attn_out
        x = x + gate2 * self.ff(modulate(self.norm2(x), shift2, scale2))
        out = replace(seq, features=x)
        return (out, weights) if return_weights else out


class FinalLayer(nn.Module):
    """Adaptive layer-norm then one linear map per token to ``patch*patch*C`` values."""

    def __init__(self, d_model: int, d_time: int, out_dim: int, eps: float = 1e-6):
        super().__init__()
        self.norm = nn.LayerNorm(d_model, elementwise_affine=False, eps=eps)
        self.modulation = nn.Linear(d_time, 2 * d_model)
        nn.init.zeros_(self.modulation.weight)
        nn.init.zeros_(self.modulation.bias)
        self.linear = nn.Linear(d_model, out_dim)

    def forward(self, x: torch.Tensor, e_t: torch.Tensor) -> torch.Tensor:
        shift, scale = self.modulation(nn.functional.silu(e_t)).unsqueeze(1).chunk(2, dim=-1)
        return self.linear(modulate(self.norm(x), shift, scale))


class SViMo(nn.Module):
    """Joint video/motion x0-predictor ``G_theta``."""

    def __init__(self, cfg: RunConfig, vocab_size: int):
        super().__init__()
        s, m = cfg.shapes, cfg.model
        self.grid = latent_grid(s)
        self.patch = s.patch
        self.channels = cfg.latent_channels
        self.attention = m.attention
        d = s.d_model
        self.time_embed = TimestepEmbedder(m.d_time)
        self.text_embed = TextEmbedder(vocab_size, s.L_text, d)
        self.video_embed = LatentPatchEmbed(2 * self.channels, d, s.patch, self.grid)
        self.motion_embed = LatentPatchEmbed(2 * self.channels, d, s.patch, self.grid)
        self.blocks = nn.ModuleList(
            DiTBlock(d, m.heads, m.d_time, m.ff_mult, m.norm_eps) for _ in range(m.n_blocks)
        )
        out_dim = s.patch * s.patch * self.channels
        self.video_head = FinalLayer(d, m.d_time, out_dim, m.norm_eps)
        self.motion_head = FinalLayer(d, m.d_time, out_dim, m.norm_eps)

    def _check_latent(self, name: str, z: torch.Tensor, slots: Optional[int] = None) -> None:
        t, h, w = self.grid
        expected = (slots or t, h, w, self.channels)
        if tuple(z.shape[1:]) != expected:
            raise ShapeMismatchError(f"{name} {tuple(z.shape)} does not match [B, {expected}]")

    def embed_time(self, t: torch.Tensor) -> torch.Tensor:
        return self.time_embed(t)

    def embed_text(self, text_ids: torch.Tensor) -> torch.Tensor:
        return self.text_embed(text_ids)

    def embed_video(self, z_t_V: torch.Tensor, z_I: torch.Tensor) -> torch.Tensor:
        self._check_latent("z_t_V", z_t_V)
        self._check_latent("z_I", z_I, slots=1)
        z_I = z_I.expand(-1, z_t_V.shape[1], -1, -1, -1)
        return self.video_embed(torch.cat([z_t_V, z_I], dim=-1))

    def embed_motion(self, z_t_M: torch.Tensor, guidance: torch.Tensor) -> torch.Tensor:
        self._check_latent("z_t_M", z_t_M)
        self._check_latent("guidance", guidance)
        return self.motion_embed(torch.cat([z_t_M, guidance], dim=-1))

    def embed(self, z_t_V, z_t_M, guidance, text_ids, z_I) -> TokenSequence:
        return TokenSequence.join(
            self.embed_text(text_ids),
            self.embed_video(z_t_V, z_I),
            self.embed_motion(z_t_M, guidance),
        )

    def run_blocks(self, seq: TokenSequence, e_t: torch.Tensor) -> TokenSequence:
        mask = None
        if self.attention == "modality_local":
            mask = modality_local_mask(seq.lengths, seq.features.device)
        for block in self.blocks:
            seq = block(seq, e_t, mask=mask)
        return seq

    def project_out(self, seq: TokenSequence, e_t: torch.Tensor):
        zhat_V = unpatchify(self.video_head(seq.part("video"), e_t), self.grid, self.patch)
        zhat_M = unpatchify(self.motion_head(seq.part("motion"), e_t), self.grid, self.patch)
        return zhat_V, zhat_M

    def forward(self, z_t_V, z_t_M, guidance, text_ids, z_I, t):
        """``(zhat0_V, zhat0_M) = G(z_t_V (+) z_I, z_t_M (+) guidance, P, t)``."""
        e_t = self.embed_time(t)
        seq = self.embed(z_t_V, z_t_M, guidance, text_ids, z_I)
        return self.project_out(self.run_blocks(seq, e_t), e_t)
