"""Ordered record of the sub-operations of one training or sampling step."""

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import torch


@dataclass(frozen=True)
class TraceEvent:
    name: str
    shapes: Dict[str, Tuple[int, ...]]


@dataclass
class StepTrace:
    events: List[TraceEvent] = field(default_factory=list)

    def record(self, name: str, **tensors: torch.Tensor) -> None:
        self.events.append(TraceEvent(name, {k: tuple(v.shape) for k, v in tensors.items()}))

    @property
    def names(self) -> List[str]:
        return [e.name for e in self.events]


def record(trace: Optional[StepTrace], name: str, **tensors: torch.Tensor) -> None:
    if trace is not None:
        trace.record(name, **tensors)
