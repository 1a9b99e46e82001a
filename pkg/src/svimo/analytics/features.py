"""Deterministic handcrafted frame features for subject/background consistency.

A feature is the masked, adaptively pooled 8x8 grayscale image followed by
an 8-bin gradient-orientation histogram, unit-normalized.
"""

from typing import Optional, Protocol

import numpy as np

LUMA = np.array([0.299, 0.587, 0.114])


class FeatureExtractor(Protocol):
    def __call__(self, frame: np.ndarray, mask: Optional[np.ndarray] = None) -> np.ndarray: ...


def grayscale(frame: np.ndarray) -> np.ndarray:
    return np.asarray(frame, dtype=np.float64) @ LUMA


class HandcraftedExtractor:
    def __init__(self, grid: int = 8, bins: int = 8):
        self.grid = grid
        self.bins = bins

    @property
    def dim(self) -> int:
        return self.grid * self.grid + self.bins

    def __call__(self, frame: np.ndarray, mask: Optional[np.ndarray] = None) -> np.ndarray:
        gray = grayscale(frame)
        if mask is None or not np.any(mask):
            # empty mask -> whole frame
            weights = np.ones_like(gray)
        else:
            weights = np.asarray(mask, dtype=np.float64)

        pooled = np.zeros((self.grid, self.grid))
        rows = np.array_split(np.arange(gray.shape[0]), self.grid)
        cols = np.array_split(np.arange(gray.shape[1]), self.grid)
        for i, r in enumerate(rows):
            for j, c in enumerate(cols):
                w = weights[np.ix_(r, c)]
                total = w.sum()
                if total > 0:
                    pooled[i, j] = (gray[np.ix_(r, c)] * w).sum() / total

        gy, gx = np.gradient(gray) if min(gray.shape) > 1 else (np.zeros_like(gray),) * 2
        magnitude = np.hypot(gx, gy) * weights
        angle = np.mod(np.arctan2(gy, gx), 2 * np.pi)
        bin_idx = np.minimum((angle / (2 * np.pi / self.bins)).astype(int), self.bins - 1)
        hist = np.bincount(bin_idx.ravel(), weights=magnitude.ravel(), minlength=self.bins)

        vec = np.concatenate([pooled.ravel(), hist])
        norm = np.linalg.norm(vec)
        return vec / norm if norm > 0 else vec


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity; two zero vectors count as identical, zero vs non-zero as orthogonal."""
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 and nb == 0:
        return 1.0
    if na == 0 or nb == 0:
        return 0.0
    return float(np.dot(a, b) / (na * nb))
