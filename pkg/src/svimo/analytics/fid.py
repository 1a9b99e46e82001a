"""Motion FID: Frechet distance between Gaussian fits of motion-autoencoder features."""

import json
import logging
from pathlib import Path
from typing import Sequence, Tuple

import numpy as np
import torch
from torch import nn
from tqdm import tqdm

from svimo.config.settings import MetricsConfig
from svimo.errors import ConvergenceError, IntegrityError, ShapeMismatchError
from svimo.storage.tensor_io import atomic_write_bytes, load_tensor, save_tensor

logger = logging.getLogger(__name__)

SINGULAR_EIGENVALUE = 1e-12
REGULARIZATION = 1e-6
MIN_STD = 1e-2


# --------------------------------------------------------------------------
# Frechet distance
# --------------------------------------------------------------------------


def _sqrtm_psd(mat: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(mat)
    return (vecs * np.sqrt(np.clip(vals, 0.0, None))) @ vecs.T


def frechet_distance(real: np.ndarray, gen: np.ndarray) -> Tuple[float, bool]:
    """Frechet distance between two feature sets ``[n, d]``.

    Returns (distance, regularized). When either covariance has a minimum
    eigenvalue <= 1e-12, 1e-6 * I is added to both.
    """
    real = np.atleast_2d(np.asarray(real, dtype=np.float64))
    gen = np.atleast_2d(np.asarray(gen, dtype=np.float64))
    if real.shape[0] < 2 or gen.shape[0] < 2:
        raise ValueError("FID needs at least 2 samples per set")
    if real.shape[1] != gen.shape[1]:
        raise ShapeMismatchError(f"feature dims differ: {real.shape[1]} vs {gen.shape[1]}")

    mu_r, mu_g = real.mean(axis=0), gen.mean(axis=0)
    cov_r = np.atleast_2d(np.cov(real, rowvar=False))
    cov_g = np.atleast_2d(np.cov(gen, rowvar=False))

    regularized = min(np.linalg.eigvalsh(cov_r).min(), np.linalg.eigvalsh(cov_g).min()) <= SINGULAR_EIGENVALUE
    if regularized:
        logger.warning("Singular covariance in FID; adding 1e-6 * I")
        eye = np.eye(cov_r.shape[0])
        cov_r = cov_r + REGULARIZATION * eye
        cov_g = cov_g + REGULARIZATION * eye

    sqrt_r = _sqrtm_psd(cov_r)
    inner = sqrt_r @ cov_g @ sqrt_r
    inner = 0.5 * (inner + inner.T)
    tr_covmean = np.sqrt(np.clip(np.linalg.eigvalsh(inner), 0.0, None)).sum()

    diff = mu_r - mu_g
    value = float(diff @ diff + np.trace(cov_r) + np.trace(cov_g) - 2.0 * tr_covmean)
    return max(value, 0.0), bool(regularized)


# --------------------------------------------------------------------------
# Motion autoencoder
# --------------------------------------------------------------------------


def flatten_motion(hands: np.ndarray, objects: np.ndarray) -> np.ndarray:
    """``[B, N, J, 3], [B, N, K, 3]`` -> ``[B, N * (J + K) * 3]`` float32."""
    hands, objects = np.asarray(hands), np.asarray(objects)
    if hands.ndim == 3:
        hands, objects = hands[None], objects[None]
    if hands.shape[:2] != objects.shape[:2]:
        raise ShapeMismatchError(f"hands {hands.shape} vs objects {objects.shape}")
    b = hands.shape[0]
    return np.concatenate([hands.reshape(b, -1), objects.reshape(b, -1)], axis=1).astype(np.float32)


class _Residual(nn.Module):
    def __init__(self, dim: int):
        super().__init__()
        self.net = nn.Sequential(nn.LayerNorm(dim), nn.Linear(dim, dim), nn.SiLU(), nn.Linear(dim, dim))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return x + self.net(x)


class MotionAutoencoder(nn.Module):
    """Residual MLP encoder-decoder over flattened motion; the bottleneck is the FID feature."""

    def __init__(self, input_dim: int, hidden: int = 256, bottleneck: int = 64):
        super().__init__()
        self.input_dim, self.hidden, self.bottleneck = input_dim, hidden, bottleneck
        self.register_buffer("mean", torch.zeros(input_dim))
        self.register_buffer("std", torch.ones(input_dim))
        self.encoder = nn.Sequential(
            nn.Linear(input_dim, hidden), nn.SiLU(), _Residual(hidden), _Residual(hidden),
            nn.Linear(hidden, bottleneck),
        )
        self.decoder = nn.Sequential(
            nn.Linear(bottleneck, hidden), nn.SiLU(), _Residual(hidden), _Residual(hidden),
            nn.Linear(hidden, input_dim),
        )

    def encode(self, x: torch.Tensor) -> torch.Tensor:
        return self.encoder((x - self.mean) / self.std)

    def decode(self, z: torch.Tensor) -> torch.Tensor:
        return self.decoder(z) * self.std + self.mean

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.decode(self.encode(x))

    @torch.no_grad()
    def embed(self, hands: np.ndarray, objects: np.ndarray) -> np.ndarray:
        self.eval()
        x = torch.from_numpy(flatten_motion(hands, objects))
        if x.shape[1] != self.input_dim:
            raise ShapeMismatchError(f"motion has {x.shape[1]} values, autoencoder expects {self.input_dim}")
        return self.encode(x).double().numpy()


def train_motion_autoencoder(
    hands: Sequence[np.ndarray],
    objects: Sequence[np.ndarray],
    cfg: MetricsConfig,
    seed: int,
    show_progress: bool = False,
) -> MotionAutoencoder:
    """Full-batch Adam until reconstruction MSE (original units) < ``cfg.ae_target_mse``.

    Raises ConvergenceError when the step budget runs out first.
    """
    x = torch.from_numpy(np.concatenate([flatten_motion(h, o) for h, o in zip(hands, objects)]))
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        ae = MotionAutoencoder(x.shape[1], cfg.ae_hidden, cfg.ae_bottleneck)
    ae.mean.copy_(x.mean(dim=0))
    ae.std.copy_(x.std(dim=0, unbiased=False).clamp_min(MIN_STD))

    opt = torch.optim.Adam(ae.parameters(), lr=cfg.ae_lr)
    mse = float("inf")
    ae.train()
    for step in tqdm(range(cfg.ae_max_steps), desc="motion-ae", disable=not show_progress):
        opt.zero_grad()
        recon = ae(x)
        loss = (((recon - x) / ae.std) ** 2).mean()
        loss.backward()
        opt.step()
        if step % 50 == 0 or step == cfg.ae_max_steps - 1:
            with torch.no_grad():
                mse = float(((ae(x) - x) ** 2).mean())
            if mse < cfg.ae_target_mse:
                logger.info(f"Motion autoencoder converged at step {step} (mse={mse:.2e})")
                ae.eval()
                return ae
    raise ConvergenceError(
        f"Motion autoencoder reached mse={mse:.3e} after {cfg.ae_max_steps} steps "
        f"(target {cfg.ae_target_mse:.1e})"
    )


def motion_fid(
    autoencoder: MotionAutoencoder,
    real: Sequence[Tuple[np.ndarray, np.ndarray]],
    generated: Sequence[Tuple[np.ndarray, np.ndarray]],
) -> Tuple[float, bool]:
    real_f = np.concatenate([autoencoder.embed(h, o) for h, o in real])
    gen_f = np.concatenate([autoencoder.embed(h, o) for h, o in generated])
    return frechet_distance(real_f, gen_f)


def save_motion_autoencoder(path: Path, ae: MotionAutoencoder) -> None:
    path = Path(path)
    hashes = {key: save_tensor(path / f"{key}.svt", value) for key, value in ae.state_dict().items()}
    meta = {"input_dim": ae.input_dim, "hidden": ae.hidden, "bottleneck": ae.bottleneck, "tensors": hashes}
    atomic_write_bytes(path / "meta.json", json.dumps(meta, indent=2, sort_keys=True).encode("utf-8"))


def load_motion_autoencoder(path: Path) -> MotionAutoencoder:
    path = Path(path)
    meta = json.loads((path / "meta.json").read_text(encoding="utf-8"))
    ae = MotionAutoencoder(meta["input_dim"], meta["hidden"], meta["bottleneck"])
    state = {}
    for key in ae.state_dict():
        if key not in meta["tensors"]:
            raise IntegrityError(f"{path}: autoencoder tensor '{key}' missing from meta.json")
        state[key] = torch.from_numpy(load_tensor(path / f"{key}.svt"))
    ae.load_state_dict(state)
    ae.eval()
    return ae
