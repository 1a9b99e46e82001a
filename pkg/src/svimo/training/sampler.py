"""Joint ancestral sampling of video latent, motion latent and explicit 3D motion.

Per reverse step: VID on the current noisy state -> render/encode guidance ->
SViMo predicts clean latents -> VID on the predicted latents gives clean
hands/objects -> one posterior step per stream with a shared variance and
independent noise.
"""

import logging
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np
import torch

from svimo.config.settings import RunConfig
from svimo.diffusion.scheduler import NoiseSchedule, SubSchedule, posterior_step, transitions
from svimo.models.backbone import SViMo
from svimo.models.codec import LatentCodec, encode_reference, latent_grid
from svimo.models.vid import VID
from svimo.training.guidance import encode_motion, scene_camera
from svimo.training.trace import StepTrace, record

logger = logging.getLogger(__name__)


@dataclass
class GenerationResult:
    video: np.ndarray  # [N, H, W, 3] float32
    hands: np.ndarray  # [N, J, 3]
    objects: np.ndarray  # [N, K, 3]
    z0_V: torch.Tensor
    z0_M: torch.Tensor
    motion_video: np.ndarray  # decoded motion latent


@torch.no_grad()
def generate(
    model: SViMo,
    vid: VID,
    codec: LatentCodec,
    image: Union[np.ndarray, torch.Tensor],
    text_ids: torch.Tensor,
    sched: Union[NoiseSchedule, SubSchedule],
    cfg: RunConfig,
    generator: torch.Generator,
    use_guidance: bool = True,
    trace: Optional[StepTrace] = None,
) -> GenerationResult:
    model.eval()
    vid.eval()
    device = next(model.parameters()).device
    s, d = cfg.shapes, cfg.data
    camera = scene_camera(cfg)

    def noise(shape) -> torch.Tensor:
        return torch.randn(shape, generator=generator).to(device)

    lat_shape = (1,) + tuple(latent_grid(s)) + (cfg.latent_channels,)
    z_V, z_M = noise(lat_shape), noise(lat_shape)
    h, o = noise((1, s.N, d.J, 3)), noise((1, s.N, d.K, 3))

    image = torch.as_tensor(image, dtype=torch.float32).to(device)
    z_I = encode_reference(codec, image.unsqueeze(0), s)
    text = text_ids.to(device).unsqueeze(0)

    for tr in transitions(sched):
        t = torch.full((1,), tr.t, dtype=torch.long, device=device)
        h_guide, o_guide = vid(h, o, z_V, z_M, t)
        if use_guidance:
            guidance = encode_motion(codec, h_guide, o_guide, camera, cfg)
        else:
            guidance = torch.zeros_like(z_M)
        zhat_V, zhat_M = model(z_V, z_M, guidance, text, z_I, t)
        hhat, ohat = vid(h, o, zhat_V, zhat_M, t)
        record(trace, "reverse_step", z_V=zhat_V, z_M=zhat_M, h=hhat, o=ohat)

        z_V = posterior_step(z_V, zhat_V, tr.alpha_bar, tr.alpha_bar_prev, noise(z_V.shape))
        z_M = posterior_step(z_M, zhat_M, tr.alpha_bar, tr.alpha_bar_prev, noise(z_M.shape))
        h = posterior_step(h, hhat, tr.alpha_bar, tr.alpha_bar_prev, noise(h.shape))
        o = posterior_step(o, ohat, tr.alpha_bar, tr.alpha_bar_prev, noise(o.shape))

    video = codec.decode(z_V)[0]
    motion_video = codec.decode(z_M)[0]
    logger.info(f"Generated clip over {len(transitions(sched))} reverse steps")
    return GenerationResult(
        video=video.cpu().numpy().astype(np.float32),
        hands=h[0].cpu().double().numpy(),
        objects=o[0].cpu().double().numpy(),
        z0_V=z_V[0].cpu(),
        z0_M=z_M[0].cpu(),
        motion_video=motion_video.cpu().numpy().astype(np.float32),
    )
