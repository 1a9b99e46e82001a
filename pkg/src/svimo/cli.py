"""Command-line entry point: ``svimo {datagen|warmup|train|sample|eval|token-budget}``.

Every command writes into its output directory:

    config.resolved.yaml   fully validated configuration
    run.json               command, seeds and sha256 of every input
    metrics.jsonl          structured log records (training / evaluation)
"""

import json
import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import click
import numpy as np
import torch

from svimo.analytics.fid import load_motion_autoencoder, save_motion_autoencoder, train_motion_autoencoder
from svimo.analytics.report import evaluate
from svimo.config.settings import EnvSettings, RunConfig, dump_config, load_config
from svimo.custom_logging import METRICS_LOGGER, attach_file, detach_files, setup_logging
from svimo.data.dataset import decode_png, json_bytes, manifest_sha256, read_dataset, write_dataset
from svimo.data.generated import GenerationMeta, GenerationRecord, read_generations, write_generation
from svimo.data.synth import generate_samples
from svimo.data.vocab import PromptVocab
from svimo.errors import ConfigError, MissingArtifactError, SvimoError
from svimo.models.codec import ConvVideoAutoencoder, fit_learned_codec, latent_grid, token_budget
from svimo.projection import render_motion_video
from svimo.storage.checkpoints import MANIFEST as CHECKPOINT_MANIFEST
from svimo.storage.tensor_io import atomic_write_bytes, file_sha256
from svimo.training.trainer import Trainer, prepare_samples

logger = logging.getLogger(__name__)


# --------------------------------------------------------------------------
# Run directory plumbing
# --------------------------------------------------------------------------


def _resolve(config: Optional[str], overrides: Sequence[str]) -> RunConfig:
    return load_config(Path(config) if config else None, overrides)


def _input_hashes(inputs: Dict[str, Optional[Path]]) -> Dict[str, str]:
    hashes = {}
    for name, path in inputs.items():
        if path is None:
            continue
        path = Path(path)
        if path.is_dir():
            for marker in ("manifest.json", "index.json"):
                if (path / marker).exists():
                    hashes[name] = file_sha256(path / marker)
                    break
        elif path.exists():
            hashes[name] = file_sha256(path)
    return hashes


def _start_run(command: str, cfg: RunConfig, out_dir: Path, inputs: Dict[str, Optional[Path]]) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    dump_config(cfg, out_dir / "config.resolved.yaml")
    run = {
        "command": command,
        "seed": cfg.seed,
        "train_seed": cfg.train_seed,
        "inputs": _input_hashes(inputs),
        "torch": torch.__version__,
    }
    atomic_write_bytes(out_dir / "run.json", json_bytes(run))
    metrics_logger = logging.getLogger(METRICS_LOGGER)
    detach_files(metrics_logger)
    attach_file(metrics_logger, out_dir / "metrics.jsonl")
    logger.info(f"{command}: run directory {out_dir}")
    return out_dir


def _device(name: Optional[str]) -> str:
    if name:
        return name
    return "cuda" if torch.cuda.is_available() else "cpu"


def _checkpoint_path(path: Path) -> Path:
    path = Path(path)
    if not (path / CHECKPOINT_MANIFEST).exists():
        raise MissingArtifactError(f"Checkpoint not found: {path}")
    return path


def _fit_codec_if_learned(trainer: Trainer, records) -> None:
    if not isinstance(trainer.codec, ConvVideoAutoencoder):
        return
    c = trainer.cfg.codec
    videos = [torch.from_numpy(np.asarray(r.video, dtype=np.float32)).to(trainer.device) for r in records]
    fit_learned_codec(trainer.codec, videos, c.learned_steps, target_mse=c.learned_target_mse, seed=trainer.cfg.seed)


# --------------------------------------------------------------------------
# Commands
# --------------------------------------------------------------------------

config_option = click.option("--config", "config", type=click.Path(dir_okay=False), default=None, help="YAML run config")
set_option = click.option("--set", "overrides", multiple=True, help="Override a field: key.path=value")
device_option = click.option("--device", default=None, help="torch device (default: cuda if available)")


@click.group()
@click.option("--log-level", default=None, help="Overrides SVIMO_LOG_LEVEL")
def cli(log_level: Optional[str]) -> None:
    """Synchronized video-motion diffusion at desk scale."""
    level = (log_level or EnvSettings().log_level).upper()
    setup_logging(getattr(logging, level, logging.INFO))


@cli.command()
@config_option
@set_option
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
def datagen(config, overrides, out_dir) -> None:
    """Generate and persist the synthetic dataset."""
    cfg = _resolve(config, overrides)
    out = _start_run("datagen", cfg, Path(out_dir), {"config": Path(config) if config else None})
    manifest = write_dataset(generate_samples(cfg), out, cfg)
    click.echo(
        f"samples={len(manifest['ids'])} train={len(manifest['splits']['train'])} "
        f"test={len(manifest['splits']['test'])} manifest_sha256={manifest_sha256(out)}"
    )


@cli.command()
@config_option
@set_option
@click.option("--data", "data_dir", required=True, type=click.Path(file_okay=False))
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@device_option
def warmup(config, overrides, data_dir, out_dir, device) -> None:
    """Train VID alone on noisy data (and fit the learned codec if configured)."""
    cfg = _resolve(config, overrides)
    out = _start_run("warmup", cfg, Path(out_dir), {"config": Path(config) if config else None, "data": Path(data_dir)})
    ds = read_dataset(Path(data_dir))
    train_records = ds.split("train")
    trainer = Trainer(cfg, ds.vocab, device=_device(device), run_dir=out)
    _fit_codec_if_learned(trainer, train_records)
    prepared = prepare_samples(train_records, trainer.codec, ds.vocab, cfg)
    history = trainer.run_warmup(prepared, cfg.train.warmup_steps)
    ckpt = trainer.save(out / "checkpoint")
    final = history[-1]["vid_loss"] if history else float("nan")
    click.echo(f"warmup_steps={trainer.warmup_step} final_vid_loss={final:.6f} checkpoint={ckpt}")


@cli.command()
@config_option
@set_option
@click.option("--data", "data_dir", required=True, type=click.Path(file_okay=False))
@click.option("--vid-ckpt", "vid_ckpt", default=None, type=click.Path(file_okay=False),
              help="Warm-up or joint checkpoint to continue from")
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@device_option
def train(config, overrides, data_dir, vid_ckpt, out_dir, device) -> None:
    """Closed-loop joint training of SViMo and VID up to ``train.total_steps``."""
    cfg = _resolve(config, overrides)
    inputs = {"config": Path(config) if config else None, "data": Path(data_dir)}
    if vid_ckpt:
        inputs["checkpoint"] = _checkpoint_path(Path(vid_ckpt)) / CHECKPOINT_MANIFEST
    out = _start_run("train", cfg, Path(out_dir), inputs)
    ds = read_dataset(Path(data_dir))
    trainer = Trainer(cfg, ds.vocab, device=_device(device), run_dir=out)
    if vid_ckpt:
        trainer.load(Path(vid_ckpt), training_state=True)
        logger.info(f"Continuing from {vid_ckpt} at warmup_step={trainer.warmup_step} step={trainer.step}")
    else:
        _fit_codec_if_learned(trainer, ds.split("train"))
    prepared = prepare_samples(ds.split("train"), trainer.codec, ds.vocab, cfg)
    remaining = max(cfg.train.total_steps - trainer.step, 0)
    history = trainer.run_joint(prepared, remaining, checkpoint_dir=out / "checkpoints")
    ckpt = trainer.save(out / "checkpoint")
    final = history[-1]["loss_total"] if history else float("nan")
    click.echo(f"steps={trainer.step} feedback_mode={cfg.train.feedback_mode} final_loss={final:.6f} checkpoint={ckpt}")


def _generation_jobs(data_dir, source_ids, image, prompt):
    """[(source_id, image, prompt)] plus the vocabulary to encode prompts with."""
    if image is not None:
        if not prompt:
            raise ConfigError("--image needs --prompt")
        frame = decode_png(Path(image).read_bytes())
        return [("external", frame, prompt)], PromptVocab.build()
    if data_dir is None:
        raise ConfigError("sample needs either --data or --image/--prompt")
    ds = read_dataset(Path(data_dir))
    records = [ds.by_id(sid) for sid in source_ids] if source_ids else ds.split("test")
    jobs = [(r.sample_id, r.image, prompt or r.prompt) for r in records]
    return jobs, ds.vocab


@cli.command()
@config_option
@set_option
@click.option("--ckpt", required=True, type=click.Path(file_okay=False))
@click.option("--data", "data_dir", default=None, type=click.Path(file_okay=False))
@click.option("--source-id", "source_ids", multiple=True, help="Dataset sample(s) to condition on")
@click.option("--image", default=None, type=click.Path(dir_okay=False), help="Reference PNG")
@click.option("--prompt", default=None)
@click.option("--steps", default=None, type=int, help="Reverse steps (default schedule.inference_steps)")
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@device_option
def sample(config, overrides, ckpt, data_dir, source_ids, image, prompt, steps, out_dir, device) -> None:
    """Generate video, 3D motion and the re-rendered motion video."""
    cfg = _resolve(config, overrides)
    ckpt_path = _checkpoint_path(Path(ckpt))
    inputs = {
        "config": Path(config) if config else None,
        "checkpoint": ckpt_path / CHECKPOINT_MANIFEST,
        "data": Path(data_dir) if data_dir else None,
        "image": Path(image) if image else None,
    }
    out = _start_run("sample", cfg, Path(out_dir), inputs)
    jobs, vocab = _generation_jobs(data_dir, source_ids, image, prompt)
    trainer = Trainer(cfg, vocab, device=_device(device), run_dir=out)
    trainer.load(ckpt_path, training_state=False)
    n_steps = steps or cfg.schedule.inference_steps

    written: List[str] = []
    for k, (source_id, frame, text) in enumerate(jobs):
        result = trainer.generate(torch.from_numpy(np.asarray(frame, dtype=np.float32)), text, steps=n_steps)
        record = GenerationRecord(
            video=result.video,
            motion_video=result.motion_video,
            hands=result.hands,
            objects=result.objects,
            z0_V=result.z0_V.numpy(),
            z0_M=result.z0_M.numpy(),
            meta=GenerationMeta(
                sample_id=f"gen_{k:05d}",
                source_id=source_id,
                prompt=text,
                seed=cfg.train_seed,
                steps=n_steps,
                use_guidance=cfg.train.uses_guidance,
                checkpoint=str(ckpt_path),
            ),
            rendered_motion=render_motion_video(
                result.hands, result.objects, trainer.camera, cfg.shapes.H, cfg.shapes.W
            ),
        )
        write_generation(out, record)
        written.append(record.sample_id)
    click.echo(f"generated={len(written)} steps={n_steps} out={out}")


@cli.command(name="eval")
@config_option
@set_option
@click.option("--real", "real_dir", required=True, type=click.Path(file_okay=False))
@click.option("--gen", "gen_dir", required=True, type=click.Path(file_okay=False))
@click.option("--ae-ckpt", "ae_ckpt", default=None, type=click.Path(file_okay=False),
              help="Motion autoencoder for FID (trained on --real when omitted)")
@click.option("--out", "out_path", required=True, type=click.Path(file_okay=False))
def eval_cmd(config, overrides, real_dir, gen_dir, ae_ckpt, out_path) -> None:
    """Compute the full metrics report."""
    cfg = _resolve(config, overrides)
    inputs = {"config": Path(config) if config else None, "real": Path(real_dir), "gen": Path(gen_dir)}
    out = _start_run("eval", cfg, Path(out_path), inputs)
    ds = read_dataset(Path(real_dir))
    generations = read_generations(Path(gen_dir))

    if ae_ckpt:
        ae = load_motion_autoencoder(Path(ae_ckpt))
    else:
        ae = train_motion_autoencoder(
            [r.hands for r in ds.records], [r.objects for r in ds.records], cfg.metrics, seed=cfg.seed
        )
        save_motion_autoencoder(out / "motion_ae", ae)

    report = evaluate(ds, generations, cfg.metrics, autoencoder=ae)
    atomic_write_bytes(out / "report.json", report.model_dump_json(indent=2).encode("utf-8"))
    report.table().to_csv(out / "per_sample.csv")
    logging.getLogger(METRICS_LOGGER).info(
        "eval", extra={"fields": json.loads(report.model_dump_json(exclude={"per_sample"}))}
    )
    click.echo(report.to_text())


@cli.command(name="token-budget")
@config_option
@set_option
def token_budget_cmd(config, overrides) -> None:
    """Print the token accounting of the DiT input sequence."""
    cfg = _resolve(config, overrides)
    s = cfg.shapes
    budget = token_budget(s)
    t, h, w = latent_grid(s)
    rows = [
        ("latent_grid", f"[{t}, {h}, {w}]"),
        ("patch", str(s.patch)),
        ("text", str(budget.text)),
        ("video", str(budget.video)),
        ("motion", str(budget.motion)),
        ("total", str(budget.total)),
    ]
    width = max(len(k) for k, _ in rows)
    for key, value in rows:
        click.echo(f"{key.ljust(width)}  {value}")


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Console-script entry; maps library errors to exit codes."""
    try:
        cli.main(args=list(argv) if argv is not None else None, standalone_mode=False)
    except SvimoError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return e.exit_code
    except click.exceptions.Exit as e:
        return e.exit_code
    except click.ClickException as e:
        e.show()
        return e.exit_code
    except click.exceptions.Abort:
        return 1
    except Exception:
        logger.exception("Unexpected failure")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
