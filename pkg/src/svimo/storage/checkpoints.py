"""Checkpoint directories: JSON manifest + one ``.svt`` file per tensor.

::

    ckpt/manifest.json
    ckpt/tensors/module/<module>/<param>.svt
    ckpt/tensors/optim/<optimizer>/<param index>/<key>.svt
    ckpt/tensors/rng/<stream>.svt

The manifest stores the architecture hash, step counters, non-tensor
optimizer / lr-scheduler state and the sha256 of every tensor file.
"""

import hashlib
import json
import logging
from pathlib import Path
from typing import Any, Dict, Mapping, Optional

import torch

from svimo.config.settings import RunConfig
from svimo.errors import ArchitectureMismatchError, IntegrityError, MissingArtifactError
from svimo.storage.tensor_io import atomic_write_bytes, decode_tensor, encode_tensor

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
MANIFEST = "manifest.json"


def architecture_config(cfg: RunConfig, vocab_size: int) -> Dict[str, Any]:
    """Config fields that change parameter shapes or meaning."""
    return {
        "shapes": cfg.shapes.model_dump(mode="json"),
        "model": cfg.model.model_dump(mode="json"),
        "codec": {"kind": cfg.codec.kind, "hidden": cfg.codec.learned_hidden},
        "latent_channels": cfg.latent_channels,
        "J": cfg.data.J,
        "K": cfg.data.K,
        "T": cfg.schedule.T,
        "vocab_size": vocab_size,
    }


def architecture_hash(cfg: RunConfig, vocab_size: int) -> str:
    canonical = json.dumps(architecture_config(cfg, vocab_size), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def _diff_fields(saved: Dict, current: Dict, prefix: str = "") -> list:
    out = []
    for key in sorted(set(saved) | set(current)):
        a, b = saved.get(key), current.get(key)
        if isinstance(a, dict) and isinstance(b, dict):
            out += _diff_fields(a, b, f"{prefix}{key}.")
        elif a != b:
            out.append(f"{prefix}{key}: checkpoint={a!r} config={b!r}")
    return out


class _TensorWriter:
    def __init__(self, root: Path):
        self.root = root
        self.hashes: Dict[str, str] = {}

    def put(self, rel: str, tensor: torch.Tensor) -> None:
        data = encode_tensor(tensor)
        atomic_write_bytes(self.root / rel, data)
        self.hashes[rel] = hashlib.sha256(data).hexdigest()


def _split_optimizer_state(opt: torch.optim.Optimizer, name: str, writer: _TensorWriter) -> Dict:
    sd = opt.state_dict()
    scalars: Dict[str, Dict[str, Any]] = {}
    for pid, state in sd["state"].items():
        for key, value in state.items():
            if isinstance(value, torch.Tensor):
                writer.put(f"tensors/optim/{name}/{pid}/{key}.svt", value)
            else:
                scalars.setdefault(str(pid), {})[key] = value
    tensor_keys = {
        str(pid): sorted(k for k, v in state.items() if isinstance(v, torch.Tensor))
        for pid, state in sd["state"].items()
    }
    return {"param_groups": sd["param_groups"], "tensor_keys": tensor_keys, "scalars": scalars}


def save_checkpoint(
    path: Path,
    cfg: RunConfig,
    vocab_size: int,
    modules: Mapping[str, torch.nn.Module],
    optimizers: Optional[Mapping[str, torch.optim.Optimizer]] = None,
    schedulers: Optional[Mapping[str, Any]] = None,
    rng_state: Optional[Mapping[str, torch.Tensor]] = None,
    counters: Optional[Mapping[str, int]] = None,
) -> Path:
    path = Path(path)
    writer = _TensorWriter(path)
    module_keys = {}
    for name, module in modules.items():
        sd = module.state_dict()
        module_keys[name] = list(sd.keys())
        for key, tensor in sd.items():
            writer.put(f"tensors/module/{name}/{key}.svt", tensor)
    optim_meta = {n: _split_optimizer_state(o, n, writer) for n, o in (optimizers or {}).items()}
    for stream, state in (rng_state or {}).items():
        writer.put(f"tensors/rng/{stream}.svt", state)

    manifest = {
        "format_version": FORMAT_VERSION,
        "arch_hash": architecture_hash(cfg, vocab_size),
        "architecture": architecture_config(cfg, vocab_size),
        "config": cfg.model_dump(mode="json"),
        "counters": dict(counters or {}),
        "modules": module_keys,
        "optimizers": optim_meta,
        "schedulers": {n: s.state_dict() for n, s in (schedulers or {}).items()},
        "rng_streams": sorted((rng_state or {}).keys()),
        "tensors": dict(sorted(writer.hashes.items())),
    }
    atomic_write_bytes(
        path / MANIFEST, (json.dumps(manifest, indent=2, sort_keys=True) + "\n").encode("utf-8")
    )
    logger.info(f"Saved checkpoint to {path} ({len(writer.hashes)} tensors)")
    return path


def read_checkpoint_manifest(path: Path) -> Dict:
    manifest_path = Path(path) / MANIFEST
    if not manifest_path.exists():
        raise MissingArtifactError(f"Checkpoint not found: {manifest_path}")
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise IntegrityError(f"{manifest_path}: unreadable manifest ({e})") from e
    if manifest.get("format_version") != FORMAT_VERSION:
        raise IntegrityError(f"{manifest_path}: unsupported format_version")
    return manifest


def _load_tensor(root: Path, rel: str, manifest: Dict) -> torch.Tensor:
    file = root / rel
    if rel not in manifest["tensors"]:
        raise IntegrityError(f"{file}: not listed in checkpoint manifest")
    if not file.exists():
        raise IntegrityError(f"{file}: missing (truncated checkpoint?)")
    data = file.read_bytes()
    if hashlib.sha256(data).hexdigest() != manifest["tensors"][rel]:
        raise IntegrityError(f"{file}: content hash does not match manifest")
    return torch.from_numpy(decode_tensor(data, name=str(file)))


def load_checkpoint(
    path: Path,
    cfg: RunConfig,
    vocab_size: int,
    modules: Mapping[str, torch.nn.Module],
    optimizers: Optional[Mapping[str, torch.optim.Optimizer]] = None,
    schedulers: Optional[Mapping[str, Any]] = None,
) -> Dict[str, Any]:
    """Restore state in place. Returns ``{"counters": ..., "rng_state": ...}``."""
    path = Path(path)
    manifest = read_checkpoint_manifest(path)
    expected = architecture_hash(cfg, vocab_size)
    if manifest["arch_hash"] != expected:
        diff = _diff_fields(manifest["architecture"], architecture_config(cfg, vocab_size))
        raise ArchitectureMismatchError(
            f"Checkpoint {path} was built for a different architecture: " + "; ".join(diff)
        )

    for name, module in modules.items():
        if name not in manifest["modules"]:
            raise MissingArtifactError(f"Checkpoint {path} has no weights for '{name}'")
        sd = {
            key: _load_tensor(path, f"tensors/module/{name}/{key}.svt", manifest)
            for key in manifest["modules"][name]
        }
        module.load_state_dict(sd, strict=True)

    for name, opt in (optimizers or {}).items():
        meta = manifest["optimizers"].get(name)
        if meta is None:
            raise MissingArtifactError(f"Checkpoint {path} has no optimizer state '{name}'")
        state = {}
        for pid, keys in meta["tensor_keys"].items():
            entry = {k: _load_tensor(path, f"tensors/optim/{name}/{pid}/{k}.svt", manifest) for k in keys}
            entry.update(meta["scalars"].get(pid, {}))
            state[int(pid)] = entry
        opt.load_state_dict({"state": state, "param_groups": meta["param_groups"]})

    for name, sched in (schedulers or {}).items():
        sched.load_state_dict(manifest["schedulers"][name])

    rng_state = {
        s: _load_tensor(path, f"tensors/rng/{s}.svt", manifest) for s in manifest["rng_streams"]
    }
    logger.info(f"Loaded checkpoint {path} (counters={manifest['counters']})")
    return {"counters": manifest["counters"], "rng_state": rng_state, "config": manifest["config"]}
