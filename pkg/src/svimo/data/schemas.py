"""Data contracts for synthetic hand-object interaction samples."""

from dataclasses import dataclass
from typing import Dict, Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from svimo.projection import CameraModel

Primitive = Literal["box", "cylinder", "sphere"]


class SampleMeta(BaseModel):
    """Everything about a sample that is not an array."""

    model_config = ConfigDict(extra="forbid")

    sample_id: str
    seed: int
    prompt: str
    hand: Literal["left", "right"]
    tool: str
    target: str
    action: str
    tool_shape: Primitive
    target_shape: Primitive
    grasp_frame: int = Field(..., ge=0, description="First frame the tool is welded to the hand")
    fps: float = Field(..., gt=0)
    camera: Dict = Field(..., description="CameraModel.to_dict()")


@dataclass
class SampleRecord:
    image: np.ndarray  # [H, W, 3] float32, equals video[0]
    prompt: str
    video: np.ndarray  # [N, H, W, 3] float32
    hands: np.ndarray  # [N, J, 3] float64
    objects: np.ndarray  # [N, K, 3] float64, tool half then target half
    masks: np.ndarray  # [N, H, W] bool foreground
    meta: SampleMeta

    @property
    def camera(self) -> CameraModel:
        return CameraModel.from_dict(self.meta.camera)

    @property
    def sample_id(self) -> str:
        return self.meta.sample_id

    def equals(self, other: "SampleRecord") -> bool:
        """Exact equality of every array and of the metadata."""
        arrays = ("image", "video", "hands", "objects", "masks")
        return (
            self.prompt == other.prompt
            and self.meta == other.meta
            and all(
                getattr(self, a).dtype == getattr(other, a).dtype
                and np.array_equal(getattr(self, a), getattr(other, a))
                for a in arrays
            )
        )
