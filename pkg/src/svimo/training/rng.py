"""Named, independently seeded random streams.

Every stochastic draw in training and sampling goes through one of these, so a
single stream can be replayed without disturbing the others.
"""

import hashlib
from typing import Dict, Iterable, Optional

import torch

STREAMS = ("data", "diffusion_t", "diffusion_noise", "image_noise", "sampling_noise")


def derive_seed(base_seed: int, name: str) -> int:
    digest = hashlib.sha256(f"svimo:{base_seed}:{name}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") & (2**63 - 1)


class RngStreams:
    def __init__(self, seed: int, names: Iterable[str] = STREAMS):
        self.seed = int(seed)
        self.names = tuple(names)
        self._generators: Dict[str, torch.Generator] = {}
        self.reset()

    def reset(self, name: Optional[str] = None) -> None:
        """Re-seed one stream (or all) to its initial state."""
        for n in self.names if name is None else (name,):
            self._generators[n] = torch.Generator().manual_seed(derive_seed(self.seed, n))

    def __getitem__(self, name: str) -> torch.Generator:
        if name not in self._generators:
            raise KeyError(f"unknown RNG stream {name!r}; known: {self.names}")
        return self._generators[name]

    def randn(self, name: str, shape, device=None, dtype=torch.float32) -> torch.Tensor:
        """Standard normal draw on CPU (device-independent), then moved."""
        return torch.randn(tuple(shape), generator=self[name], dtype=dtype).to(device)

    def get_state(self) -> Dict[str, torch.Tensor]:
        return {n: g.get_state() for n, g in self._generators.items()}

    def set_state(self, states: Dict[str, torch.Tensor]) -> None:
        missing = set(self.names) - set(states)
        if missing:
            raise KeyError(f"missing RNG stream states: {sorted(missing)}")
        for n in self.names:
            self._generators[n].set_state(states[n].to(torch.uint8))
