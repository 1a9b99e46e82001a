"""Hand kinematic chains shared by the generator, the renderer and the dataset manifest.

A hand with ``n`` joints has the wrist at index 0; the remaining ``n - 1``
joints are split into up to five finger chains in order, each chain hanging
off the wrist. Two-hand arrays put the left hand first.
"""

from typing import List, Tuple

import numpy as np

MAX_FINGERS = 5
FINGER_SPREAD = np.deg2rad(70.0)


def finger_chains(joints_per_hand: int) -> List[List[int]]:
    rest = joints_per_hand - 1
    if rest <= 0:
        return []
    fingers = min(MAX_FINGERS, rest)
    sizes = [rest // fingers + (1 if f < rest % fingers else 0) for f in range(fingers)]
    chains, start = [], 1
    for size in sizes:
        chains.append(list(range(start, start + size)))
        start += size
    return chains


def hand_skeleton(joints_per_hand: int) -> List[Tuple[int, int]]:
    """(parent, child) bones of one hand."""
    bones = []
    for chain in finger_chains(joints_per_hand):
        parent = 0
        for joint in chain:
            bones.append((parent, joint))
            parent = joint
    return bones


def bimanual_skeleton(J: int) -> List[Tuple[int, int]]:
    n = J // 2
    one = hand_skeleton(n)
    return one + [(a + n, b + n) for a, b in one]


def rotation_z(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def rotation_y(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def hand_joint_positions(
    wrist: np.ndarray,
    rotation: np.ndarray,
    curl: float,
    joints_per_hand: int,
    size: float = 0.3,
) -> np.ndarray:
    """Joint positions ``[n, 3]`` of one hand.

    Fingers fan out around the local +x axis; ``curl`` in [0, 1] bends every
    segment of a finger downward (toward local -z), 0 being an open hand.
    """
    joints = np.zeros((joints_per_hand, 3))
    chains = finger_chains(joints_per_hand)
    if not chains:
        joints[:] = wrist
        return joints
    longest = max(len(c) for c in chains)
    segment = size / (longest + 1)
    palm = 0.5 * size
    for f, chain in enumerate(chains):
        angle = 0.0 if len(chains) == 1 else FINGER_SPREAD * (f / (len(chains) - 1) - 0.5)
        heading = rotation_z(angle)
        point = heading @ np.array([palm, 0.0, 0.0])
        bend = 0.0
        for k, joint in enumerate(chain):
            if k > 0:
                bend += 0.6 * curl
                point = point + heading @ rotation_y(bend) @ np.array([segment, 0.0, 0.0])
            joints[joint] = point
    return wrist + joints @ rotation.T
