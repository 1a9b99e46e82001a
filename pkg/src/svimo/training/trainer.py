"""VID warm-up and closed-loop joint training of SViMo + VID.

Joint step order (one optimizer over both parameter sets):

    sample t -> diffuse (z_V, z_M, h, o) -> VID without gradients on the noisy
    state -> render + encode its prediction as interaction guidance -> SViMo
    forward -> VID with gradients on SViMo's predicted latents (gradient
    constraint) -> w1 * L_SViMo + w2 * L_VID -> optimizer step.

``feedback_mode`` switches the two feedback paths: ``guidance_only`` detaches
the second VID pass from SViMo, ``gradient_only`` replaces the guidance with
zeros, ``none`` does both.
"""

import logging
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn as nn
from tqdm import tqdm

from svimo.config.settings import RunConfig
from svimo.custom_logging import log_step
from svimo.data.schemas import SampleRecord
from svimo.data.vocab import PromptVocab
from svimo.diffusion.scheduler import build_schedule, forward_diffuse, sample_timesteps, subsample_schedule
from svimo.errors import NumericalError
from svimo.models.backbone import SViMo
from svimo.models.codec import (
    LatentCodec,
    build_codec,
    codec_device,
    encode_reference,
    noise_reference_image,
)
from svimo.models.losses import hand_loss, object_loss, svimo_loss
from svimo.models.vid import VID
from svimo.projection import render_motion_video
from svimo.storage.checkpoints import load_checkpoint, save_checkpoint
from svimo.storage.tensor_io import save_tensor
from svimo.training.guidance import render_batch, scene_camera
from svimo.training.rng import RngStreams
from svimo.training.sampler import GenerationResult, generate
from svimo.training.trace import StepTrace, record

logger = logging.getLogger(__name__)

JOINT_STEP_ORDER = (
    "sample_t",
    "diffuse",
    "vid_no_grad",
    "render_guidance",
    "encode_guidance",
    "svimo_forward",
    "vid_gradient_constraint",
    "loss",
    "optimizer_step",
)


# --------------------------------------------------------------------------
# Data preparation
# --------------------------------------------------------------------------


@dataclass
class PreparedSample:
    sample_id: str
    text_ids: torch.Tensor  # [L]
    image: torch.Tensor  # [H, W, 3]
    z0_V: torch.Tensor  # [t, h, w, C]
    z0_M: torch.Tensor
    hands: torch.Tensor  # [N, J, 3] float32
    objects: torch.Tensor  # [N, K, 3] float32


@dataclass
class Batch:
    sample_ids: List[str]
    text_ids: torch.Tensor
    image: torch.Tensor
    z0_V: torch.Tensor
    z0_M: torch.Tensor
    hands: torch.Tensor
    objects: torch.Tensor

    @classmethod
    def collate(cls, samples: Sequence[PreparedSample]) -> "Batch":
        return cls(
            sample_ids=[s.sample_id for s in samples],
            **{
                name: torch.stack([getattr(s, name) for s in samples])
                for name in ("text_ids", "image", "z0_V", "z0_M", "hands", "objects")
            },
        )

    def to(self, device) -> "Batch":
        return Batch(
            sample_ids=self.sample_ids,
            **{name: getattr(self, name).to(device) for name in self.tensor_names()},
        )

    @staticmethod
    def tensor_names() -> Tuple[str, ...]:
        return ("text_ids", "image", "z0_V", "z0_M", "hands", "objects")

    @property
    def size(self) -> int:
        return len(self.sample_ids)


@torch.no_grad()
def prepare_samples(
    records: Iterable[SampleRecord], codec: LatentCodec, vocab: PromptVocab, cfg: RunConfig
) -> List[PreparedSample]:
    """Encode each sample's video and rendered motion video once."""
    camera = scene_camera(cfg)
    device = codec_device(codec)
    prepared = []
    for r in records:
        video = torch.from_numpy(np.asarray(r.video, dtype=np.float32))
        motion_video = render_motion_video(r.hands, r.objects, camera, cfg.shapes.H, cfg.shapes.W)
        prepared.append(
            PreparedSample(
                sample_id=r.sample_id,
                text_ids=torch.tensor(vocab.encode(r.prompt, cfg.shapes.L_text), dtype=torch.long),
                image=torch.from_numpy(np.asarray(r.image, dtype=np.float32)),
                z0_V=codec.encode(video.to(device)).cpu(),
                z0_M=codec.encode(torch.from_numpy(motion_video).to(device)).cpu(),
                hands=torch.from_numpy(np.asarray(r.hands, dtype=np.float32)),
                objects=torch.from_numpy(np.asarray(r.objects, dtype=np.float32)),
            )
        )
    return prepared


# --------------------------------------------------------------------------
# Trainer
# --------------------------------------------------------------------------


@dataclass
class NoisyState:
    z_V: torch.Tensor
    z_M: torch.Tensor
    h: torch.Tensor
    o: torch.Tensor


@dataclass
class JointLosses:
    total: torch.Tensor
    svimo: torch.Tensor
    vid: torch.Tensor
    t: torch.Tensor
    guidance: torch.Tensor
    h_guide: torch.Tensor
    o_guide: torch.Tensor
    zhat0_V: torch.Tensor
    zhat0_M: torch.Tensor
    hhat0: torch.Tensor
    ohat0: torch.Tensor


def linear_warmup(steps: int):
    def factor(step: int) -> float:
        return 1.0 if steps <= 0 else min(1.0, (step + 1) / steps)

    return factor


def grad_norm(params: Iterable[nn.Parameter]) -> float:
    norms = [p.grad.detach().norm() for p in params if p.grad is not None]
    return float(torch.stack(norms).norm()) if norms else 0.0


class Trainer:
    """Owns the two networks, their optimizers and the RNG streams of one run."""

    def __init__(
        self,
        cfg: RunConfig,
        vocab: PromptVocab,
        codec: Optional[LatentCodec] = None,
        device: str = "cpu",
        run_dir: Optional[Path] = None,
    ):
        self.cfg = cfg
        self.vocab = vocab
        self.device = torch.device(device)
        self.run_dir = Path(run_dir) if run_dir is not None else None
        self.sched = build_schedule(
            cfg.schedule.T, cfg.schedule.beta_start, cfg.schedule.beta_end, cfg.schedule.kind
        )
        self.camera = scene_camera(cfg)
        self.codec = codec if codec is not None else build_codec(cfg)
        if isinstance(self.codec, nn.Module):
            self.codec.to(self.device).eval()

        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(cfg.train_seed)
            self.model = SViMo(cfg, len(vocab)).to(self.device)
            self.vid = VID(cfg).to(self.device)

        lr = cfg.train.learning_rate
        self.vid_optimizer = torch.optim.Adam(self.vid.parameters(), lr=lr)
        self.optimizer = torch.optim.Adam(
            list(self.model.parameters()) + list(self.vid.parameters()), lr=lr
        )
        self.lr_scheduler = torch.optim.lr_scheduler.LambdaLR(
            self.optimizer, linear_warmup(cfg.train.lr_warmup_steps)
        )
        self.rng = RngStreams(cfg.train_seed)
        self.warmup_step = 0
        self.step = 0

    # -- batches -----------------------------------------------------------

    def next_batch(self, prepared: Sequence[PreparedSample]) -> Batch:
        idx = torch.randint(len(prepared), (self.cfg.train.batch_size,), generator=self.rng["data"])
        return Batch.collate([prepared[i] for i in idx.tolist()]).to(self.device)

    def _sample_t(self, batch: Batch) -> torch.Tensor:
        return sample_timesteps(batch.size, self.sched, self.rng["diffusion_t"])

    def _diffuse(self, batch: Batch, t: torch.Tensor) -> NoisyState:
        def noised(x0: torch.Tensor) -> torch.Tensor:
            eps = self.rng.randn("diffusion_noise", x0.shape, device=x0.device, dtype=x0.dtype)
            return forward_diffuse(x0, t, eps, self.sched)

        return NoisyState(
            z_V=noised(batch.z0_V),
            z_M=noised(batch.z0_M),
            h=noised(batch.hands),
            o=noised(batch.objects),
        )

    def _reference_latent(self, batch: Batch) -> torch.Tensor:
        image = noise_reference_image(batch.image, self.cfg.codec.image_noise_sigma, self.rng["image_noise"])
        with torch.no_grad():
            return encode_reference(self.codec, image, self.cfg.shapes)

    # -- numerical guard ---------------------------------------------------

    def _check_finite(self, values: Dict[str, torch.Tensor], batch: Batch, phase: str, step: int) -> None:
        bad = [k for k, v in values.items() if not bool(torch.isfinite(v).all())]
        if not bad:
            return
        logger.error(
            f"Non-finite {bad} at {phase} step {step}",
            extra={"fields": {"phase": phase, "step": step, "samples": batch.sample_ids}},
        )
        if self.run_dir is not None:
            dump = self.run_dir / "nan_dump" / f"{phase}_{step:06d}"
            for name in Batch.tensor_names():
                save_tensor(dump / f"{name}.svt", getattr(batch, name))
            logger.error(f"Batch tensors written to {dump}")
        raise NumericalError(f"{phase} step {step}: non-finite {', '.join(bad)}")

    # -- VID warm-up -------------------------------------------------------

    def vid_warmup_step(self, batch: Batch) -> Dict[str, float]:
        started = time.perf_counter()
        self.vid.train()
        t = self._sample_t(batch)
        noisy = self._diffuse(batch, t)
        hhat, ohat = self.vid(noisy.h, noisy.o, noisy.z_V, noisy.z_M, t.to(self.device))
        l_hand = hand_loss(batch.hands, hhat)
        l_object = object_loss(batch.objects, ohat)
        loss = l_hand + l_object
        self._check_finite({"vid_loss": loss}, batch, "warmup", self.warmup_step + 1)

        self.vid_optimizer.zero_grad(set_to_none=True)
        loss.backward()
        norm = grad_norm(self.vid.parameters())
        self.vid_optimizer.step()
        self.warmup_step += 1

        metrics = {
            "vid_loss": float(loss),
            "hand_loss": float(l_hand),
            "object_loss": float(l_object),
            "grad_norm_vid": norm,
            "step_time": time.perf_counter() - started,
        }
        log_step("warmup", self.warmup_step, metrics)
        return metrics

    # -- joint training ----------------------------------------------------

    def compute_joint_losses(self, batch: Batch, trace: Optional[StepTrace] = None) -> JointLosses:
        train = self.cfg.train
        t = self._sample_t(batch)
        record(trace, "sample_t", t=t)
        noisy = self._diffuse(batch, t)
        record(trace, "diffuse", z_V=noisy.z_V, z_M=noisy.z_M, h=noisy.h, o=noisy.o)
        t_dev = t.to(self.device)

        with torch.no_grad():
            h_guide, o_guide = self.vid(noisy.h, noisy.o, noisy.z_V, noisy.z_M, t_dev)
        record(trace, "vid_no_grad", h=h_guide, o=o_guide)

        if train.uses_guidance:
            rendered = render_batch(h_guide, o_guide, self.camera, self.cfg.shapes.H, self.cfg.shapes.W)
            record(trace, "render_guidance", video=rendered)
            with torch.no_grad():
                guidance = self.codec.encode(rendered)
            record(trace, "encode_guidance", guidance=guidance)
        else:
            guidance = torch.zeros_like(noisy.z_M)
            record(trace, "zero_guidance", guidance=guidance)

        z_I = self._reference_latent(batch)
        zhat0_V, zhat0_M = self.model(noisy.z_V, noisy.z_M, guidance, batch.text_ids, z_I, t_dev)
        record(trace, "svimo_forward", zhat0_V=zhat0_V, zhat0_M=zhat0_M)

        vid_in_V, vid_in_M = zhat0_V, zhat0_M
        if not train.uses_gradient_constraint:
            vid_in_V, vid_in_M = zhat0_V.detach(), zhat0_M.detach()
        hhat0, ohat0 = self.vid(noisy.h, noisy.o, vid_in_V, vid_in_M, t_dev)
        record(trace, "vid_gradient_constraint", h=hhat0, o=ohat0)

        l_svimo = svimo_loss(zhat0_V, zhat0_M, batch.z0_V, batch.z0_M)
        l_vid = hand_loss(batch.hands, hhat0) + object_loss(batch.objects, ohat0)
        total = train.omega1 * l_svimo + train.omega2 * l_vid
        record(trace, "loss", total=total)
        return JointLosses(
            total=total,
            svimo=l_svimo,
            vid=l_vid,
            t=t,
            guidance=guidance,
            h_guide=h_guide,
            o_guide=o_guide,
            zhat0_V=zhat0_V,
            zhat0_M=zhat0_M,
            hhat0=hhat0,
            ohat0=ohat0,
        )

    def joint_train_step(self, batch: Batch, trace: Optional[StepTrace] = None) -> Dict[str, float]:
        started = time.perf_counter()
        self.model.train()
        self.vid.train()
        losses = self.compute_joint_losses(batch, trace)
        step = self.step + 1
        self._check_finite(
            {"loss_total": losses.total, "loss_svimo": losses.svimo, "loss_vid": losses.vid},
            batch,
            "joint",
            step,
        )

        self.optimizer.zero_grad(set_to_none=True)
        losses.total.backward()
        norm_theta = grad_norm(self.model.parameters())
        norm_phi = grad_norm(self.vid.parameters())
        lr = self.optimizer.param_groups[0]["lr"]
        self.optimizer.step()
        self.lr_scheduler.step()
        record(trace, "optimizer_step")
        self.step = step

        metrics = {
            "loss_total": float(losses.total),
            "loss_svimo": float(losses.svimo),
            "loss_vid": float(losses.vid),
            "grad_norm_svimo": norm_theta,
            "grad_norm_vid": norm_phi,
            "lr": lr,
            "step_time": time.perf_counter() - started,
        }
        log_step("joint", step, metrics)
        return metrics

    # -- loops -------------------------------------------------------------

    def run_warmup(self, prepared: Sequence[PreparedSample], steps: int) -> List[Dict[str, float]]:
        history = []
        for _ in tqdm(range(steps), desc="vid warm-up", leave=False):
            history.append(self.vid_warmup_step(self.next_batch(prepared)))
        return history

    def run_joint(
        self,
        prepared: Sequence[PreparedSample],
        steps: int,
        checkpoint_dir: Optional[Path] = None,
    ) -> List[Dict[str, float]]:
        history = []
        every = self.cfg.train.checkpoint_every
        for _ in tqdm(range(steps), desc="joint training", leave=False):
            history.append(self.joint_train_step(self.next_batch(prepared)))
            if checkpoint_dir is not None and self.step % every == 0:
                self.save(Path(checkpoint_dir) / f"step_{self.step:06d}")
        return history

    # -- generation ----------------------------------------------------------

    def generate(
        self,
        image: torch.Tensor,
        prompt: str,
        steps: Optional[int] = None,
        trace: Optional[StepTrace] = None,
    ) -> GenerationResult:
        steps = steps or self.cfg.schedule.inference_steps
        sched = self.sched if steps >= self.sched.T else subsample_schedule(self.sched, steps)
        text_ids = torch.tensor(self.vocab.encode(prompt, self.cfg.shapes.L_text), dtype=torch.long)
        return generate(
            self.model,
            self.vid,
            self.codec,
            image,
            text_ids,
            sched,
            self.cfg,
            generator=self.rng["sampling_noise"],
            use_guidance=self.cfg.train.uses_guidance,
            trace=trace,
        )

    # -- persistence -------------------------------------------------------

    def modules(self) -> Dict[str, nn.Module]:
        modules = {"svimo": self.model, "vid": self.vid}
        if isinstance(self.codec, nn.Module):
            modules["codec"] = self.codec
        return modules

    def save(self, path: Path) -> Path:
        return save_checkpoint(
            path,
            self.cfg,
            len(self.vocab),
            self.modules(),
            optimizers={"vid": self.vid_optimizer, "joint": self.optimizer},
            schedulers={"joint": self.lr_scheduler},
            rng_state=self.rng.get_state(),
            counters={"warmup_step": self.warmup_step, "step": self.step},
        )

    def load(self, path: Path, training_state: bool = True) -> None:
        """Restore weights; with ``training_state`` also optimizers, lr schedule, RNG and counters."""
        restored = load_checkpoint(
            path,
            self.cfg,
            len(self.vocab),
            self.modules(),
            optimizers={"vid": self.vid_optimizer, "joint": self.optimizer} if training_state else None,
            schedulers={"joint": self.lr_scheduler} if training_state else None,
        )
        if training_state:
            self.rng.set_state(restored["rng_state"])
            self.warmup_step = int(restored["counters"].get("warmup_step", 0))
            self.step = int(restored["counters"].get("step", 0))
