"""Generated clips on disk, one directory per generation.

Layout::

    root/index.json
    root/<id>/frames/00000.png ...
    root/<id>/motion_video/00000.png ...      decoded motion latent
    root/<id>/rendered_motion/00000.png ...   predicted 3D motion, re-rendered
    root/<id>/motion/{hands.svt, objects.svt}
    root/<id>/latents/{z0_V.svt, z0_M.svt}
    root/<id>/meta.json
"""

import hashlib
import json
import logging
import os
import shutil
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from svimo.data.dataset import decode_png, encode_png, json_bytes
from svimo.errors import IntegrityError, MissingArtifactError
from svimo.storage.tensor_io import atomic_write_bytes, decode_tensor, encode_tensor

logger = logging.getLogger(__name__)

INDEX = "index.json"


class GenerationMeta(BaseModel):
    model_config = ConfigDict(extra="forbid")

    sample_id: str
    source_id: str = Field(..., description="Dataset sample whose image and prompt were used")
    prompt: str
    seed: int
    steps: int = Field(..., ge=1)
    use_guidance: bool
    checkpoint: Optional[str] = None
    files: Dict[str, str] = Field(default_factory=dict, description="sha256 per file")


@dataclass
class GenerationRecord:
    video: np.ndarray  # [N, H, W, 3] float32
    motion_video: np.ndarray  # [N, H, W, 3] float32
    hands: np.ndarray  # [N, J, 3]
    objects: np.ndarray  # [N, K, 3]
    z0_V: np.ndarray
    z0_M: np.ndarray
    meta: GenerationMeta
    rendered_motion: Optional[np.ndarray] = None  # [N, H, W, 3] float32

    @property
    def sample_id(self) -> str:
        return self.meta.sample_id


def _files(record: GenerationRecord) -> Dict[str, bytes]:
    files = {f"frames/{i:05d}.png": encode_png(f) for i, f in enumerate(record.video)}
    files.update({f"motion_video/{i:05d}.png": encode_png(f) for i, f in enumerate(record.motion_video)})
    if record.rendered_motion is not None:
        files.update({f"rendered_motion/{i:05d}.png": encode_png(f) for i, f in enumerate(record.rendered_motion)})
    files["motion/hands.svt"] = encode_tensor(np.asarray(record.hands, dtype=np.float64))
    files["motion/objects.svt"] = encode_tensor(np.asarray(record.objects, dtype=np.float64))
    files["latents/z0_V.svt"] = encode_tensor(np.asarray(record.z0_V, dtype=np.float32))
    files["latents/z0_M.svt"] = encode_tensor(np.asarray(record.z0_M, dtype=np.float32))
    return files


def write_generation(root: Path, record: GenerationRecord) -> GenerationMeta:
    """Stage, hash and rename one generation into place, then refresh the index."""
    root = Path(root)
    staging = root / f".{record.sample_id}.tmp"
    final = root / record.sample_id
    if staging.exists():
        shutil.rmtree(staging)
    hashes = {}
    for rel, data in _files(record).items():
        path = staging / rel
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(data)
        hashes[rel] = hashlib.sha256(data).hexdigest()
    meta = record.meta.model_copy(update={"files": dict(sorted(hashes.items()))})
    (staging / "meta.json").write_bytes(json_bytes(meta.model_dump(mode="json")))
    if final.exists():
        shutil.rmtree(final)
    os.replace(staging, final)

    ids = sorted(p.name for p in root.iterdir() if p.is_dir() and not p.name.startswith("."))
    atomic_write_bytes(root / INDEX, json_bytes({"ids": ids}))
    logger.info(f"Wrote generation {record.sample_id} (source {meta.source_id}) to {final}")
    return meta


def read_generation(root: Path, sample_id: str) -> GenerationRecord:
    gen_dir = Path(root) / sample_id
    meta_path = gen_dir / "meta.json"
    if not meta_path.exists():
        raise MissingArtifactError(f"Generation metadata not found: {meta_path}")
    meta = GenerationMeta.model_validate_json(meta_path.read_bytes())
    blobs = {}
    for rel, expected in meta.files.items():
        path = gen_dir / rel
        if not path.exists():
            raise MissingArtifactError(f"Missing generation file: {path}")
        data = path.read_bytes()
        if hashlib.sha256(data).hexdigest() != expected:
            raise IntegrityError(f"Hash mismatch for {path}")
        blobs[rel] = data

    def frames(prefix: str) -> np.ndarray:
        return np.stack([decode_png(blobs[rel]) for rel in sorted(blobs) if rel.startswith(prefix)])

    def tensor(rel: str) -> np.ndarray:
        return decode_tensor(blobs[rel], name=f"{sample_id}/{rel}")

    return GenerationRecord(
        video=frames("frames/"),
        motion_video=frames("motion_video/"),
        hands=tensor("motion/hands.svt"),
        objects=tensor("motion/objects.svt"),
        z0_V=tensor("latents/z0_V.svt"),
        z0_M=tensor("latents/z0_M.svt"),
        meta=meta,
        rendered_motion=frames("rendered_motion/") if any(r.startswith("rendered_motion/") for r in blobs) else None,
    )


def read_generations(root: Path, ids: Optional[Sequence[str]] = None) -> List[GenerationRecord]:
    root = Path(root)
    index = root / INDEX
    if ids is None:
        if not index.exists():
            raise MissingArtifactError(f"Generation index not found: {index}")
        ids = json.loads(index.read_text(encoding="utf-8"))["ids"]
    return [read_generation(root, sid) for sid in ids]
