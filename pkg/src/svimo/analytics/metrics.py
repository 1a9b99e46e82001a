"""Video quality and motion accuracy metrics.

Videos are ``[N, H, W, 3]`` float arrays in [0, 1]; hands ``[N, J, 3]``,
objects ``[N, K, 3]``.
"""

import logging
import math
from typing import Optional, Sequence, Tuple

import numpy as np
import torch

from svimo.analytics.features import FeatureExtractor, HandcraftedExtractor, cosine, grayscale
from svimo.errors import ShapeMismatchError
from svimo.models.losses import chamfer, split_parts

logger = logging.getLogger(__name__)

BLOCK = 4
SEARCH_RADIUS = 3
TOP_FRACTION = 0.05


# --------------------------------------------------------------------------
# Consistency
# --------------------------------------------------------------------------


def _consistency(features: Sequence[np.ndarray]) -> float:
    n = len(features)
    if n < 2:
        raise ValueError(f"consistency needs at least 2 frames, got {n}")
    first = features[0]
    terms = [
        0.5 * (cosine(first, features[t]) + cosine(features[t - 1], features[t])) for t in range(1, n)
    ]
    return float(np.mean(terms))


def empty_mask_frames(masks: np.ndarray) -> list:
    return [i for i, m in enumerate(masks) if not np.any(m)]


def subject_consistency(
    video: np.ndarray, masks: np.ndarray, fx: Optional[FeatureExtractor] = None
) -> float:
    """Mean over t >= 2 of the average cosine of d_t with d_1 and with d_{t-1} (foreground)."""
    fx = fx or HandcraftedExtractor()
    if len(masks) != len(video):
        raise ShapeMismatchError(f"{len(masks)} masks for {len(video)} frames")
    return _consistency([fx(frame, mask) for frame, mask in zip(video, masks)])


def background_consistency(
    video: np.ndarray, masks: np.ndarray, fx: Optional[FeatureExtractor] = None
) -> float:
    """Same formula on background-masked features."""
    fx = fx or HandcraftedExtractor()
    if len(masks) != len(video):
        raise ShapeMismatchError(f"{len(masks)} masks for {len(video)} frames")
    return _consistency([fx(frame, ~np.asarray(mask, dtype=bool)) for frame, mask in zip(video, masks)])


# --------------------------------------------------------------------------
# Temporal smoothness
# --------------------------------------------------------------------------


def temporal_smoothness(video: np.ndarray) -> float:
    """Drop every other frame (0-based even indices), rebuild it from its neighbours, score the MAE.

    Only removed frames with two neighbours are scored, so frame 0 is skipped.
    An odd trailing frame is ignored.
    """
    v = np.asarray(video, dtype=np.float64) * 255.0
    n = v.shape[0]
    if n < 4:
        raise ValueError(f"temporal smoothness needs at least 4 frames, got {n}")
    if n % 2:
        logger.warning(f"Odd frame count {n}: dropping the trailing frame for temporal smoothness")
        v = v[:-1]
        n -= 1
    scores = []
    for i in range(2, n - 1, 2):
        rebuilt = 0.5 * (v[i - 1] + v[i + 1])
        mae = np.abs(v[i] - rebuilt).mean()
        scores.append((255.0 - mae) / 255.0)
    return float(np.mean(scores))


# --------------------------------------------------------------------------
# Dynamic degree
# --------------------------------------------------------------------------


def _displacements(radius: int):
    d = [(dy, dx) for dy in range(-radius, radius + 1) for dx in range(-radius, radius + 1)]
    return sorted(d, key=lambda p: (p[0] ** 2 + p[1] ** 2, p[0], p[1]))


def block_matching_flow(
    prev: np.ndarray, nxt: np.ndarray, block: int = BLOCK, radius: int = SEARCH_RADIUS
) -> np.ndarray:
    """Per-block displacement ``[Hb, Wb, 2]`` (dy, dx) of ``prev``'s blocks inside ``nxt``.

    Frames are mean-subtracted grayscale; SAD matching; candidate blocks
    leaving the frame are never chosen; ties go to the shortest displacement.
    """
    a = grayscale(prev) * 255.0
    b = grayscale(nxt) * 255.0
    a -= a.mean()
    b -= b.mean()
    H, W = a.shape
    hb, wb = H // block, W // block
    if hb == 0 or wb == 0:
        return np.zeros((hb, wb, 2), dtype=np.int64)
    a = a[: hb * block, : wb * block]
    padded = np.pad(b, radius, mode="constant", constant_values=np.nan)

    displacements = _displacements(radius)
    costs = np.empty((len(displacements), hb, wb))
    for k, (dy, dx) in enumerate(displacements):
        shifted = padded[radius + dy : radius + dy + hb * block, radius + dx : radius + dx + wb * block]
        sad = np.abs(a - shifted).reshape(hb, block, wb, block).sum(axis=(1, 3))
        costs[k] = np.where(np.isnan(sad), np.inf, sad)
    best = np.argmin(costs, axis=0)
    return np.asarray(displacements, dtype=np.int64)[best]


def flow_score(video: np.ndarray, block: int = BLOCK, radius: int = SEARCH_RADIUS) -> float:
    """Mean of the top 5% per-pixel flow magnitudes across all consecutive frame pairs."""
    if len(video) < 2:
        raise ValueError(f"dynamic degree needs at least 2 frames, got {len(video)}")
    magnitudes = []
    for prev, nxt in zip(video[:-1], video[1:]):
        flow = block_matching_flow(prev, nxt, block, radius)
        mag = np.hypot(flow[..., 0], flow[..., 1]).astype(np.float64)
        magnitudes.append(np.repeat(mag.ravel(), block * block))
    values = np.concatenate(magnitudes)
    if values.size == 0:
        return 0.0
    k = max(1, math.ceil(TOP_FRACTION * values.size))
    return float(np.sort(values)[-k:].mean())


def is_dynamic(video: np.ndarray, tau_op: float) -> bool:
    return flow_score(video) > tau_op


def dynamic_degree(videos: Sequence[np.ndarray], tau_op: float) -> float:
    """Fraction of videos whose flow score exceeds ``tau_op``."""
    if len(videos) == 0:
        raise ValueError("dynamic degree of an empty video set")
    return float(np.mean([is_dynamic(v, tau_op) for v in videos]))


def overall(subj: float, bkg: float, tsmoo: float, dyn: float) -> float:
    return subj * bkg * tsmoo * dyn


# --------------------------------------------------------------------------
# Motion metrics
# --------------------------------------------------------------------------


def mpjpe(h: np.ndarray, hhat: np.ndarray) -> float:
    h, hhat = np.asarray(h, dtype=np.float64), np.asarray(hhat, dtype=np.float64)
    if h.shape != hhat.shape:
        raise ShapeMismatchError(f"mpjpe: {h.shape} vs {hhat.shape}")
    return float(np.linalg.norm(h - hhat, axis=-1).mean())


def motion_smoothness(hhat: np.ndarray) -> float:
    """Mean norm of the second temporal difference (lower is smoother)."""
    hhat = np.asarray(hhat, dtype=np.float64)
    if hhat.shape[0] < 3:
        raise ValueError(f"motion smoothness needs at least 3 frames, got {hhat.shape[0]}")
    return float(np.linalg.norm(np.diff(hhat, n=2, axis=0), axis=-1).mean())


def object_chamfer(o: np.ndarray, ohat: np.ndarray) -> float:
    """Per-frame Chamfer averaged over frames and over the (tool, target) parts."""
    o_t = torch.as_tensor(np.asarray(o, dtype=np.float64))
    ohat_t = torch.as_tensor(np.asarray(ohat, dtype=np.float64))
    if o_t.shape != ohat_t.shape:
        raise ShapeMismatchError(f"chamfer: {tuple(o_t.shape)} vs {tuple(ohat_t.shape)}")
    parts = zip(split_parts(o_t), split_parts(ohat_t))
    return float(np.mean([float(chamfer(a, b).mean()) for a, b in parts]))


def foreground_masks(video: np.ndarray, threshold: float = 0.1) -> Tuple[np.ndarray, np.ndarray]:
    """Masks for videos without generator masks: max channel distance to the median colour.

    Returns (masks ``[N, H, W]``, background colour ``[3]``).
    """
    v = np.asarray(video, dtype=np.float64)
    background = np.median(v.reshape(-1, 3), axis=0)
    return np.abs(v - background).max(axis=-1) > threshold, background
