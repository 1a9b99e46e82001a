"""On-disk dataset: manifest + one directory per sample.

Layout::

    root/manifest.json
    root/<id>/frames/00000.png ...
    root/<id>/image.png
    root/<id>/masks.svt
    root/<id>/motion/{hands.svt, objects.svt, motion.json}
    root/<id>/meta.json

Each sample directory is staged under a temporary name and renamed into
place; the manifest (sha256 of every sample file) is written last.
"""

import hashlib
import io
import json
import logging
import os
import shutil
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Sequence, Tuple

import matplotlib.image as mpimg
import numpy as np

from svimo.config.settings import RunConfig
from svimo.data.kinematics import bimanual_skeleton
from svimo.data.schemas import SampleMeta, SampleRecord
from svimo.data.synth import motion_sidecar
from svimo.data.vocab import PromptVocab
from svimo.errors import IntegrityError, MissingArtifactError
from svimo.projection import PALETTE_U8
from svimo.storage.tensor_io import atomic_write_bytes, decode_tensor, encode_tensor

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
MANIFEST = "manifest.json"


def json_bytes(payload) -> bytes:
    return (json.dumps(payload, indent=2, sort_keys=True) + "\n").encode("utf-8")


def encode_png(frame: np.ndarray) -> bytes:
    """float [H, W, 3] in [0, 1] (or uint8) -> PNG bytes."""
    if frame.dtype != np.uint8:
        frame = np.clip(np.round(np.asarray(frame, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)
    buf = io.BytesIO()
    mpimg.imsave(buf, frame, format="png")
    return buf.getvalue()


def decode_png(blob: bytes) -> np.ndarray:
    return np.ascontiguousarray(mpimg.imread(io.BytesIO(blob), format="png")[..., :3], dtype=np.float32)


def make_splits(ids: Sequence[str], ratio: float, seed: int) -> Tuple[List[str], List[str]]:
    """Deterministic shuffled split; ``round(ratio * n)`` train ids, at least one of each when n >= 2."""
    if not ids:
        raise ValueError("cannot split an empty id list")
    if not 0 < ratio < 1:
        raise ValueError(f"split ratio must be in (0, 1), got {ratio}")
    n = len(ids)
    order = np.random.default_rng(seed).permutation(n)
    n_train = int(np.floor(ratio * n + 0.5))
    n_train = min(max(n_train, 1), max(n - 1, 1))
    train = sorted(ids[i] for i in order[:n_train])
    test = sorted(ids[i] for i in order[n_train:])
    return train, test


def _sample_files(record: SampleRecord, sidecar: Dict) -> Dict[str, bytes]:
    files = {f"frames/{i:05d}.png": encode_png(frame) for i, frame in enumerate(record.video)}
    files["image.png"] = encode_png(record.image)
    files["masks.svt"] = encode_tensor(record.masks)
    files["motion/hands.svt"] = encode_tensor(record.hands)
    files["motion/objects.svt"] = encode_tensor(record.objects)
    files["motion/motion.json"] = json_bytes(sidecar)
    files["meta.json"] = json_bytes(record.meta.model_dump(mode="json"))
    return files


def write_sample(root: Path, record: SampleRecord, sidecar: Dict) -> Dict[str, str]:
    """Atomically write one sample directory; returns ``{relative path: sha256}``."""
    final = root / record.sample_id
    staging = root / f".{record.sample_id}.tmp"
    if staging.exists():
        shutil.rmtree(staging)
    hashes = {}
    for rel, data in _sample_files(record, sidecar).items():
        path = staging / rel
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(data)
        hashes[rel] = hashlib.sha256(data).hexdigest()
    if final.exists():
        shutil.rmtree(final)
    os.replace(staging, final)
    return dict(sorted(hashes.items()))


def write_dataset(records: Sequence[SampleRecord], root: Path, cfg: RunConfig) -> Dict:
    """Persist ``records`` and return the manifest."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    ids = [r.sample_id for r in records]
    if len(set(ids)) != len(ids):
        raise ValueError("sample ids must be unique")
    train, test = make_splits(ids, cfg.data.split_ratio, cfg.seed)
    sidecar = motion_sidecar(cfg)
    files = {r.sample_id: write_sample(root, r, sidecar) for r in records}
    s = cfg.shapes
    manifest = {
        "format_version": FORMAT_VERSION,
        "ids": ids,
        "splits": {"train": train, "test": test},
        "vocab": list(PromptVocab.build().words),
        "palette": {k: list(v) for k, v in PALETTE_U8.items()},
        "skeleton": [list(b) for b in bimanual_skeleton(cfg.data.J)],
        "shapes": {"N": s.N, "H": s.H, "W": s.W, "J": cfg.data.J, "K": cfg.data.K, "fps": cfg.data.fps},
        "files": files,
    }
    atomic_write_bytes(root / MANIFEST, json_bytes(manifest))
    logger.info(f"Wrote {len(ids)} samples to {root} ({len(train)} train / {len(test)} test)")
    return manifest


@dataclass
class Dataset:
    root: Path
    manifest: Dict
    records: List[SampleRecord]

    @property
    def vocab(self) -> PromptVocab:
        return PromptVocab(self.manifest["vocab"])

    def split(self, name: str) -> List[SampleRecord]:
        wanted = set(self.manifest["splits"][name])
        return [r for r in self.records if r.sample_id in wanted]

    def by_id(self, sample_id: str) -> SampleRecord:
        for r in self.records:
            if r.sample_id == sample_id:
                return r
        raise KeyError(sample_id)


def read_manifest(root: Path) -> Dict:
    path = Path(root) / MANIFEST
    if not path.exists():
        raise MissingArtifactError(f"Dataset manifest not found: {path}")
    manifest = json.loads(path.read_text(encoding="utf-8"))
    if manifest.get("format_version") != FORMAT_VERSION:
        raise IntegrityError(f"{path}: unsupported format_version {manifest.get('format_version')!r}")
    return manifest


def manifest_sha256(root: Path) -> str:
    return hashlib.sha256((Path(root) / MANIFEST).read_bytes()).hexdigest()


def _read_verified(sample_dir: Path, rel: str, expected: str) -> bytes:
    path = sample_dir / rel
    if not path.exists():
        raise MissingArtifactError(f"Missing dataset file: {path}")
    data = path.read_bytes()
    if hashlib.sha256(data).hexdigest() != expected:
        raise IntegrityError(f"Hash mismatch for {path}: content does not match manifest")
    return data


def read_sample(root: Path, sample_id: str, hashes: Dict[str, str]) -> SampleRecord:
    sample_dir = Path(root) / sample_id
    blobs = {rel: _read_verified(sample_dir, rel, h) for rel, h in hashes.items()}
    frame_names = sorted(rel for rel in blobs if rel.startswith("frames/"))
    meta = SampleMeta.model_validate_json(blobs["meta.json"])
    return SampleRecord(
        image=decode_png(blobs["image.png"]),
        prompt=meta.prompt,
        video=np.stack([decode_png(blobs[rel]) for rel in frame_names]),
        hands=decode_tensor(blobs["motion/hands.svt"], name=f"{sample_id}/motion/hands.svt"),
        objects=decode_tensor(blobs["motion/objects.svt"], name=f"{sample_id}/motion/objects.svt"),
        masks=decode_tensor(blobs["masks.svt"], name=f"{sample_id}/masks.svt"),
        meta=meta,
    )


def read_dataset(root: Path) -> Dataset:
    root = Path(root)
    manifest = read_manifest(root)
    records = [read_sample(root, sid, manifest["files"][sid]) for sid in manifest["ids"]]
    logger.info(f"Loaded {len(records)} samples from {root}")
    return Dataset(root=root, manifest=manifest, records=records)
