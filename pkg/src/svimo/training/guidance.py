"""Interaction guidance: explicit 3D motion -> rendered motion video -> motion latent."""

import numpy as np
import torch

from svimo.config.settings import RunConfig
from svimo.models.codec import LatentCodec
from svimo.projection import CameraModel, default_camera, render_motion_video


def scene_camera(cfg: RunConfig) -> CameraModel:
    return default_camera((cfg.data.bounds_lo, cfg.data.bounds_hi), cfg.shapes.H, cfg.shapes.W)


def render_batch(hands: torch.Tensor, objects: torch.Tensor, camera: CameraModel, H: int, W: int) -> torch.Tensor:
    """``[B, N, J, 3], [B, N, K, 3]`` -> rendered motion videos ``[B, N, H, W, 3]`` (float32)."""
    h = hands.detach().cpu().double().numpy()
    o = objects.detach().cpu().double().numpy()
    videos = np.stack([render_motion_video(h[b], o[b], camera, H, W) for b in range(h.shape[0])])
    return torch.from_numpy(videos).to(hands.device)


@torch.no_grad()
def encode_motion(
    codec: LatentCodec, hands: torch.Tensor, objects: torch.Tensor, camera: CameraModel, cfg: RunConfig
) -> torch.Tensor:
    return codec.encode(render_batch(hands, objects, camera, cfg.shapes.H, cfg.shapes.W))
