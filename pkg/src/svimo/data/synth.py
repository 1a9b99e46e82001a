"""Procedural hand-object interaction clips.

One hand (the acting hand) reaches for a tool, grasps it at ``grasp_frame``
and performs the action on the target; the other hand idles. After the grasp
the tool is welded to the acting hand: both follow the same rigid pose.
The target is static or moved rigidly by the tool (push, lift, rotate).

The RGB video is drawn in a shaded "appearance" style that is deliberately
different from the rendered motion video of ``svimo.projection``, but uses
the same camera so the two stay pixel-aligned.
"""

import logging
from typing import Callable, Dict, List, Tuple

import numpy as np

from svimo.config.settings import RunConfig
from svimo.data.kinematics import bimanual_skeleton, hand_joint_positions, rotation_y, rotation_z
from svimo.data.schemas import SampleMeta, SampleRecord
from svimo.data.vocab import HANDS, TARGETS, TOOLS, make_prompt
from svimo.projection import default_camera, draw_disk, project_points, to_pixel

logger = logging.getLogger(__name__)

PRIMITIVES = ("box", "cylinder", "sphere")
HAND_SIZE = 0.25
APPROACH_FRACTION = 0.4

SKIN_U8 = (224, 172, 120)
TOOL_U8 = (176, 178, 190)
TARGET_U8 = (150, 96, 58)
TABLE_U8 = (205, 195, 172)


# --------------------------------------------------------------------------
# Geometry helpers
# --------------------------------------------------------------------------


def ease(u: float) -> float:
    """Smoothstep on [0, 1]."""
    u = float(np.clip(u, 0.0, 1.0))
    return u * u * (3.0 - 2.0 * u)


def catmull_rom(points: np.ndarray, samples: np.ndarray) -> np.ndarray:
    """Uniform Catmull-Rom spline through ``points [P, 3]`` evaluated at ``samples`` in [0, 1]."""
    points = np.asarray(points, dtype=np.float64)
    padded = np.concatenate([points[:1], points, points[-1:]], axis=0)
    segments = len(points) - 1
    out = np.empty((len(samples), points.shape[1]))
    for i, s in enumerate(np.clip(samples, 0.0, 1.0)):
        k = min(int(s * segments), segments - 1)
        u = s * segments - k
        p0, p1, p2, p3 = padded[k : k + 4]
        out[i] = 0.5 * (
            2 * p1
            + (-p0 + p2) * u
            + (2 * p0 - 5 * p1 + 4 * p2 - p3) * u**2
            + (-p0 + 3 * p1 - 3 * p2 + p3) * u**3
        )
    return out


def sample_primitive(shape: str, n: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` points on the surface of a unit primitive centred at the origin."""
    if shape == "sphere":
        v = rng.normal(size=(n, 3))
        return v / np.linalg.norm(v, axis=1, keepdims=True).clip(1e-12)
    if shape == "box":
        pts = rng.uniform(-1.0, 1.0, size=(n, 3))
        axis = rng.integers(0, 3, size=n)
        pts[np.arange(n), axis] = rng.choice([-1.0, 1.0], size=n)
        return pts
    if shape == "cylinder":
        # axis along x
        theta = rng.uniform(0.0, 2 * np.pi, size=n)
        x = rng.uniform(-1.0, 1.0, size=n)
        radius = np.ones(n)
        caps = rng.uniform(size=n) < 0.3
        x[caps] = rng.choice([-1.0, 1.0], size=int(caps.sum()))
        radius[caps] = np.sqrt(rng.uniform(size=int(caps.sum())))
        return np.stack([x, radius * np.cos(theta), radius * np.sin(theta)], axis=1)
    raise ValueError(f"unknown primitive: {shape}")


# --------------------------------------------------------------------------
# Action scripts: phase u in [0, 1] -> tool pose and target motion
# --------------------------------------------------------------------------

ToolPose = Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]  # centre, R_tool, target offset, R_target
ActionScript = Callable[[float], ToolPose]


def _action_script(
    action: str, side: float, tool_rest: np.ndarray, target_centre: np.ndarray, target_radius: float
) -> ActionScript:
    eye = np.eye(3)
    zero = np.zeros(3)
    cT, rT = target_centre, target_radius
    if action == "stir":
        contact = cT + np.array([0.12, -(rT + 0.05), 0.0])
    elif action == "brush":
        contact = cT + np.array([0.0, -(rT + 0.04), 0.0])
    else:
        contact = cT + np.array([side * (rT + 0.05), 0.0, 0.0])

    def act(u: float) -> ToolPose:
        if action == "stir":
            a = 2 * np.pi * u
            return cT + np.array([0.12 * np.cos(a), -(rT + 0.05), 0.12 * np.sin(a)]), eye, zero, eye
        if action == "push":
            shift = np.array([-side * 0.3 * ease(u), 0.0, 0.0])
            return contact + shift, eye, shift, eye
        if action == "lift":
            rise = np.array([0.0, -0.35 * ease(u), 0.0])
            return contact + rise, eye, rise, eye
        if action == "rotate":
            R = rotation_y(0.5 * np.pi * ease(u))
            return cT + R @ (contact - cT), R, zero, R
        if action == "brush":
            a = 4 * np.pi * u
            return contact + np.array([0.15 * np.sin(a), 0.0, 0.0]), rotation_z(0.2 * np.sin(a)), zero, eye
        raise ValueError(f"unknown action: {action}")

    def script(phase: float) -> ToolPose:
        if phase < APPROACH_FRACTION:
            w = ease(phase / APPROACH_FRACTION)
            return (1 - w) * tool_rest + w * contact, eye, zero, eye
        return act((phase - APPROACH_FRACTION) / (1 - APPROACH_FRACTION))

    return script


# --------------------------------------------------------------------------
# Appearance rendering
# --------------------------------------------------------------------------


def _rgb(u8) -> np.ndarray:
    return np.array(u8, dtype=np.float64) / 255.0


def table_texture(H: int, W: int, rng: np.random.Generator) -> np.ndarray:
    """Static wood-grain background ``[H, W, 3]``."""
    yy, xx = np.mgrid[0:H, 0:W].astype(np.float64)
    freq = rng.uniform(2.0, 4.0)
    phase = rng.uniform(0.0, 2 * np.pi)
    grain = np.sin(2 * np.pi * freq * yy / H + 0.6 * np.sin(2 * np.pi * xx / W + phase))
    return _rgb(TABLE_U8)[None, None] * (0.9 + 0.07 * grain)[..., None]


def _shade(depth: float) -> float:
    return float(np.clip(0.8 - 0.3 * depth, 0.4, 1.0))


def render_appearance_video(
    hands: np.ndarray,
    objects: np.ndarray,
    camera,
    H: int,
    W: int,
    background: np.ndarray,
) -> Tuple[np.ndarray, np.ndarray]:
    """Shaded filled-shape rendering; returns (video float32 ``[N,H,W,3]``, masks bool ``[N,H,W]``)."""
    N, J = hands.shape[:2]
    K = objects.shape[1]
    bones = bimanual_skeleton(J)
    r_obj = max(1, H // 24)
    r_hand = max(1, H // 32)
    h_uvd, o_uvd = project_points(hands, camera), project_points(objects, camera)
    frames = np.empty((N, H, W, 3), dtype=np.float64)
    masks = np.zeros((N, H, W), dtype=bool)
    for n in range(N):
        canvas, mask = background.copy(), masks[n]
        prims: List[Tuple[float, Tuple[int, int], int, np.ndarray]] = []
        for k in range(K):
            base = TOOL_U8 if k < K // 2 else TARGET_U8
            depth = o_uvd[n, k, 2]
            prims.append((depth, to_pixel(*o_uvd[n, k, :2]), r_obj, _rgb(base) * _shade(depth)))
        for a, b in bones:
            for w in np.linspace(0.0, 1.0, 5):
                uvd = (1 - w) * h_uvd[n, a] + w * h_uvd[n, b]
                prims.append((uvd[2], to_pixel(*uvd[:2]), r_hand, _rgb(SKIN_U8) * _shade(uvd[2])))
        for j in range(J):
            depth = h_uvd[n, j, 2]
            prims.append((depth, to_pixel(*h_uvd[n, j, :2]), r_hand, _rgb(SKIN_U8) * _shade(depth)))
        for i in np.argsort(-np.array([p[0] for p in prims]), kind="stable") if prims else []:
            _, (row, col), radius, color = prims[i]
            draw_disk(canvas, row, col, radius, color)
            draw_disk(mask, row, col, radius, True)
        frames[n] = canvas
    u8 = np.clip(np.round(frames * 255.0), 0, 255).astype(np.uint8)
    return np.divide(u8, 255, dtype=np.float32), masks


# --------------------------------------------------------------------------
# Sample generation
# --------------------------------------------------------------------------


def sample_seeds(base_seed: int, count: int) -> List[int]:
    return [int(s) for s in np.random.SeedSequence(base_seed).generate_state(count)]


def grasp_frame(N: int) -> int:
    if N == 1:
        return 0
    return min(max(1, N // 3), N - 1)


def _wrist_path(start: np.ndarray, end: np.ndarray, frames: int) -> np.ndarray:
    mid = 0.5 * (start + end) + np.array([0.0, -0.15, 0.05])
    samples = np.linspace(0.0, 1.0, frames) if frames > 1 else np.zeros(1)
    return catmull_rom(np.stack([start, mid, end]), samples)


def generate_sample(seed: int, cfg: RunConfig, sample_id: str = "") -> SampleRecord:
    s, d = cfg.shapes, cfg.data
    N, H, W, J, K = s.N, s.H, s.W, d.J, d.K
    rng = np.random.default_rng(seed)

    hand = HANDS[rng.integers(len(HANDS))]
    tool = TOOLS[rng.integers(len(TOOLS))]
    target = TARGETS[rng.integers(len(TARGETS))]
    action = d.actions[rng.integers(len(d.actions))]
    tool_shape = PRIMITIVES[rng.integers(len(PRIMITIVES))]
    target_shape = PRIMITIVES[rng.integers(len(PRIMITIVES))]
    side = -1.0 if hand == "left" else 1.0

    target_centre = np.array(
        [rng.uniform(-0.25, 0.25), rng.uniform(0.15, 0.35), rng.uniform(-0.1, 0.1)]
    )
    target_radius = rng.uniform(0.2, 0.3)
    tool_rest = np.array([side * rng.uniform(0.6, 0.8), rng.uniform(0.2, 0.4), rng.uniform(-0.1, 0.1)])
    tool_local = sample_primitive(tool_shape, K // 2, rng) * np.array([0.2, 0.04, 0.04])
    target_local = sample_primitive(target_shape, K - K // 2, rng) * (
        target_radius * np.array([1.0, 0.6, 1.0])
    )
    acting_start = np.array([side * 1.05, -0.35 + rng.uniform(-0.1, 0.1), 0.2])
    idle_start = np.array([-side * 1.05, -0.35 + rng.uniform(-0.1, 0.1), 0.2])
    idle_keys = idle_start + rng.uniform(-0.05, 0.05, size=(4, 3))
    background = table_texture(H, W, rng)

    g = grasp_frame(N)
    grip = np.array([side * 0.28, -0.05, 0.0])
    acting_base = rotation_z(0.0 if side < 0 else np.pi)
    idle_base = rotation_z(np.pi if side < 0 else 0.0)
    script = _action_script(action, side, tool_rest, target_centre, target_radius)
    reach = _wrist_path(acting_start, tool_rest + grip, g + 1)
    idle_path = catmull_rom(idle_keys, np.linspace(0.0, 1.0, N) if N > 1 else np.zeros(1))

    n_hand = J // 2
    hands = np.zeros((N, J, 3))
    objects = np.zeros((N, K, 3))
    for n in range(N):
        if n < g:
            centre, R_tool, offset, R_target = tool_rest, np.eye(3), np.zeros(3), np.eye(3)
            wrist, R_hand = reach[n], acting_base
            curl = 0.1 + 0.7 * ease(n / max(g, 1))
        else:
            phase = (n - g) / (N - 1 - g) if N - 1 > g else 0.0
            centre, R_tool, offset, R_target = script(phase)
            wrist, R_hand = centre + R_tool @ grip, R_tool @ acting_base
            curl = 0.8
        acting = hand_joint_positions(wrist, R_hand, curl, n_hand, HAND_SIZE)
        idle = hand_joint_positions(idle_path[n], idle_base, 0.2, n_hand, HAND_SIZE)
        hands[n] = np.concatenate([acting, idle] if hand == "left" else [idle, acting])
        objects[n, : K // 2] = centre + tool_local @ R_tool.T
        objects[n, K // 2 :] = target_centre + offset + target_local @ R_target.T

    camera = default_camera((d.bounds_lo, d.bounds_hi), H, W)
    video, masks = render_appearance_video(hands, objects, camera, H, W, background)
    prompt = make_prompt(hand, tool, action, target)
    meta = SampleMeta(
        sample_id=sample_id or f"seed{seed}",
        seed=int(seed),
        prompt=prompt,
        hand=hand,
        tool=tool,
        target=target,
        action=action,
        tool_shape=tool_shape,
        target_shape=target_shape,
        grasp_frame=g,
        fps=d.fps,
        camera=camera.to_dict(),
    )
    logger.debug(f"Generated sample {meta.sample_id}: {prompt}")
    return SampleRecord(
        image=video[0].copy(),
        prompt=prompt,
        video=video,
        hands=hands,
        objects=objects,
        masks=masks,
        meta=meta,
    )


def generate_samples(cfg: RunConfig) -> List[SampleRecord]:
    seeds = sample_seeds(cfg.seed, cfg.data.num_samples)
    return [generate_sample(seed, cfg, sample_id=f"{i:05d}") for i, seed in enumerate(seeds)]


def motion_sidecar(cfg: RunConfig) -> Dict:
    K = cfg.data.K
    return {
        "J": cfg.data.J,
        "K": K,
        "units": "scene units (m)",
        "fps": cfg.data.fps,
        "tool": [0, K // 2],
        "target": [K // 2, K],
    }
