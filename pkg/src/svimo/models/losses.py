"""Training objectives for the denoiser (latent MSE) and the interaction head (hand/object)."""

import torch
import torch.nn.functional as F

from svimo.errors import ShapeMismatchError

HAND_VELOCITY_WEIGHT = 0.2
HAND_ACCELERATION_WEIGHT = 0.05
OBJECT_TEMPORAL_WEIGHT = 0.1


def _same_shape(name: str, a: torch.Tensor, b: torch.Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeMismatchError(f"{name}: {tuple(a.shape)} vs {tuple(b.shape)}")


def svimo_loss(
    zhat0_V: torch.Tensor, zhat0_M: torch.Tensor, z0_V: torch.Tensor, z0_M: torch.Tensor
) -> torch.Tensor:
    _same_shape("video latent", zhat0_V, z0_V)
    _same_shape("motion latent", zhat0_M, z0_M)
    return F.mse_loss(zhat0_V, z0_V) + F.mse_loss(zhat0_M, z0_M)


def pairwise_sq_dist(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """``[..., P, 3] x [..., Q, 3] -> [..., P, Q]`` from explicit differences (smooth at 0)."""
    diff = a.unsqueeze(-2) - b.unsqueeze(-3)
    return (diff * diff).sum(-1)


def chamfer(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Halved symmetric mean of nearest-neighbour squared distances.

    Leading dimensions are batch dimensions: ``[..., P, 3]`` and ``[..., Q, 3]``
    give one value per leading index.
    """
    if a.shape[-2] == 0 or b.shape[-2] == 0:
        raise ValueError("chamfer distance of an empty point set is undefined")
    d = pairwise_sq_dist(a, b)
    return 0.5 * (d.min(dim=-1).values.mean(-1) + d.min(dim=-2).values.mean(-1))


def hand_loss(h: torch.Tensor, hhat: torch.Tensor) -> torch.Tensor:
    """Position MSE plus weighted velocity / acceleration MSE over frames (dim -3).

    Sequences shorter than 3 frames drop the acceleration term, shorter than 2
    the velocity term.
    """
    _same_shape("hands", h, hhat)
    loss = F.mse_loss(hhat, h)
    n = h.shape[-3]
    if n >= 2:
        dh, dhat = torch.diff(h, dim=-3), torch.diff(hhat, dim=-3)
        loss = loss + HAND_VELOCITY_WEIGHT * F.mse_loss(dhat, dh)
        if n >= 3:
            loss = loss + HAND_ACCELERATION_WEIGHT * F.mse_loss(
                torch.diff(dhat, dim=-3), torch.diff(dh, dim=-3)
            )
    return loss


def split_parts(o: torch.Tensor):
    """``[..., K, 3]`` -> (tool, target), the first and second halves of the points."""
    k = o.shape[-2]
    if k % 2:
        raise ShapeMismatchError(f"object cloud needs an even point count, got K={k}")
    return o[..., : k // 2, :], o[..., k // 2 :, :]


def _part_loss(part: torch.Tensor, part_hat: torch.Tensor) -> torch.Tensor:
    # part: [..., N, P, 3]
    loss = chamfer(part, part_hat).mean()
    if part.shape[-3] >= 2:
        motion = chamfer(part[..., 1:, :, :], part[..., :-1, :, :])
        motion_hat = chamfer(part_hat[..., 1:, :, :], part_hat[..., :-1, :, :])
        loss = loss + OBJECT_TEMPORAL_WEIGHT * (motion - motion_hat).abs().mean()
    return loss


def object_loss(o: torch.Tensor, ohat: torch.Tensor) -> torch.Tensor:
    """Mean over (tool, target) of per-frame Chamfer + 0.1 x frame-to-frame Chamfer change."""
    _same_shape("objects", o, ohat)
    tool, target = split_parts(o)
    tool_hat, target_hat = split_parts(ohat)
    return 0.5 * (_part_loss(tool, tool_hat) + _part_loss(target, target_hat))


def vid_loss(
    h: torch.Tensor, hhat: torch.Tensor, o: torch.Tensor, ohat: torch.Tensor
) -> torch.Tensor:
    return hand_loss(h, hhat) + object_loss(o, ohat)
