"""Orthographic projection of 3D hands/objects into the rendered motion video.

Rendering style: dark background, object points as single pixels (tool and
target colours), hand joints as filled disks joined by bone segments (left
and right hand colours). Primitives are painted farthest first.
"""

import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from svimo.data.kinematics import bimanual_skeleton
from svimo.errors import CameraError, ShapeMismatchError

logger = logging.getLogger(__name__)

MIN_EXTENT = 1e-3
FILL_FRACTION = 0.8

PALETTE_U8: Dict[str, Tuple[int, int, int]] = {
    "background": (16, 16, 24),
    "tool": (235, 160, 40),
    "target": (60, 170, 235),
    "left_hand": (225, 60, 95),
    "right_hand": (95, 225, 110),
}


def palette_rgb(name: str) -> np.ndarray:
    return np.divide(np.array(PALETTE_U8[name], dtype=np.uint8), 255, dtype=np.float32)


@dataclass(frozen=True)
class CameraModel:
    scale: float
    center: Tuple[float, float]
    rotation: Tuple[Tuple[float, float, float], ...] = ((1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (0.0, 0.0, 1.0))
    kind: str = "orthographic"

    def __post_init__(self):
        if self.kind != "orthographic":
            raise CameraError(f"unsupported camera kind: {self.kind}")
        if not np.isfinite(self.scale) or self.scale <= 0:
            raise CameraError(f"camera scale must be > 0, got {self.scale}")
        R = np.asarray(self.rotation, dtype=np.float64)
        if R.shape != (3, 3) or not np.allclose(R @ R.T, np.eye(3), rtol=0, atol=1e-9):
            raise CameraError("camera rotation must be a 3x3 orthonormal matrix")

    @property
    def R(self) -> np.ndarray:
        return np.asarray(self.rotation, dtype=np.float64)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "scale": float(self.scale),
            "center": [float(c) for c in self.center],
            "rotation": [[float(x) for x in row] for row in self.rotation],
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "CameraModel":
        return cls(
            scale=float(raw["scale"]),
            center=tuple(raw["center"]),
            rotation=tuple(tuple(row) for row in raw["rotation"]),
            kind=raw.get("kind", "orthographic"),
        )


def project_points(points: np.ndarray, cam: CameraModel) -> np.ndarray:
    """``[..., 3] -> [..., 3]`` of (u, v, depth)."""
    q = np.asarray(points, dtype=np.float64) @ cam.R.T
    u0, v0 = cam.center
    return np.stack([u0 + cam.scale * q[..., 0], v0 + cam.scale * q[..., 1], q[..., 2]], axis=-1)


def project_point(p: Sequence[float], cam: CameraModel) -> Tuple[float, float, float]:
    u, v, depth = project_points(np.asarray(p, dtype=np.float64), cam)
    return float(u), float(v), float(depth)


def to_pixel(u: float, v: float) -> Tuple[int, int]:
    """(row, col) of the pixel containing (u, v)."""
    return int(np.floor(v + 0.5)), int(np.floor(u + 0.5))


def default_camera(
    bounds: Tuple[Sequence[float], Sequence[float]],
    H: int,
    W: int,
    rotation: Optional[np.ndarray] = None,
) -> CameraModel:
    """Camera that maps the box centre to the canvas centre, the rotated box inside 80% of the canvas."""
    lo, hi = (np.asarray(b, dtype=np.float64) for b in bounds)
    if np.any(hi < lo):
        raise CameraError(f"empty bounds: lo={lo.tolist()} hi={hi.tolist()}")
    R = np.eye(3) if rotation is None else np.asarray(rotation, dtype=np.float64)
    corners = np.array([[x, y, z] for x in (lo[0], hi[0]) for y in (lo[1], hi[1]) for z in (lo[2], hi[2])])
    rotated = corners @ R.T
    extent = np.maximum(rotated.max(axis=0) - rotated.min(axis=0), MIN_EXTENT)
    scale = FILL_FRACTION * min(W / extent[0], H / extent[1])
    centre = 0.5 * (rotated.max(axis=0) + rotated.min(axis=0))
    u0 = (W - 1) / 2 - scale * centre[0]
    v0 = (H - 1) / 2 - scale * centre[1]
    return CameraModel(
        scale=float(scale), center=(float(u0), float(v0)), rotation=tuple(map(tuple, R.tolist()))
    )


def draw_dot(canvas: np.ndarray, row: int, col: int, color: np.ndarray) -> None:
    if 0 <= row < canvas.shape[0] and 0 <= col < canvas.shape[1]:
        canvas[row, col] = color


def draw_disk(canvas: np.ndarray, row: int, col: int, radius: float, color: np.ndarray) -> None:
    H, W = canvas.shape[:2]
    r = int(np.ceil(radius))
    r0, r1 = max(row - r, 0), min(row + r + 1, H)
    c0, c1 = max(col - r, 0), min(col + r + 1, W)
    if r0 >= r1 or c0 >= c1:
        return
    rr, cc = np.mgrid[r0:r1, c0:c1]
    inside = (rr - row) ** 2 + (cc - col) ** 2 <= radius * radius
    canvas[r0:r1, c0:c1][inside] = color


def draw_segment(
    canvas: np.ndarray, start: Tuple[int, int], end: Tuple[int, int], color: np.ndarray
) -> None:
    (ra, ca), (rb, cb) = start, end
    steps = max(abs(rb - ra), abs(cb - ca))
    for k in range(steps + 1):
        frac = k / steps if steps else 0.0
        draw_dot(
            canvas,
            int(np.floor(ra + frac * (rb - ra) + 0.5)),
            int(np.floor(ca + frac * (cb - ca) + 0.5)),
            color,
        )


def joint_radius(H: int) -> int:
    return max(1, H // 64)


def _frame_primitives(
    h_uvd: np.ndarray, o_uvd: np.ndarray, bones: List[Tuple[int, int]]
) -> List[tuple]:
    # (depth, kind, payload, colour name)
    J, K = h_uvd.shape[0], o_uvd.shape[0]
    prims = []
    for k in range(K):
        part = "tool" if k < K // 2 else "target"
        prims.append((o_uvd[k, 2], "dot", (o_uvd[k, :2],), part))
    for a, b in bones:
        hand = "left_hand" if a < J // 2 else "right_hand"
        depth = 0.5 * (h_uvd[a, 2] + h_uvd[b, 2])
        prims.append((depth, "segment", (h_uvd[a, :2], h_uvd[b, :2]), hand))
    for j in range(J):
        hand = "left_hand" if j < J // 2 else "right_hand"
        prims.append((h_uvd[j, 2], "disk", (h_uvd[j, :2],), hand))
    return prims


def render_motion_video(
    h: np.ndarray,
    o: np.ndarray,
    cam: CameraModel,
    H: int,
    W: int,
    skeleton: Optional[List[Tuple[int, int]]] = None,
) -> np.ndarray:
    """Rasterize ``h [N, J, 3]`` and ``o [N, K, 3]`` into ``[N, H, W, 3]`` float32 in [0, 1]."""
    h = np.asarray(h, dtype=np.float64)
    o = np.asarray(o, dtype=np.float64)
    if h.ndim != 3 or o.ndim != 3 or h.shape[-1] != 3 or o.shape[-1] != 3:
        raise ShapeMismatchError(f"expected [N, J, 3] and [N, K, 3], got {h.shape} and {o.shape}")
    if h.shape[0] != o.shape[0]:
        raise ShapeMismatchError(f"frame counts differ: {h.shape[0]} vs {o.shape[0]}")
    if H < 1 or W < 1:
        raise CameraError(f"degenerate canvas {H}x{W}")
    N, J = h.shape[:2]
    bones = bimanual_skeleton(J) if skeleton is None else skeleton
    radius = joint_radius(H)
    colors = {name: palette_rgb(name) for name in PALETTE_U8}

    h_uvd, o_uvd = project_points(h, cam), project_points(o, cam)
    video = np.empty((N, H, W, 3), dtype=np.float32)
    video[:] = colors["background"]
    for n in range(N):
        prims = _frame_primitives(h_uvd[n], o_uvd[n], bones)
        order = np.argsort(-np.array([p[0] for p in prims]), kind="stable") if prims else []
        canvas = video[n]
        for i in order:
            _, kind, payload, name = prims[i]
            pixels = [to_pixel(*uv) for uv in payload]
            if kind == "dot":
                draw_dot(canvas, *pixels[0], colors[name])
            elif kind == "disk":
                draw_disk(canvas, *pixels[0], radius, colors[name])
            else:
                draw_segment(canvas, pixels[0], pixels[1], colors[name])
    return video
