"""Evaluate a set of generations against the dataset they were conditioned on."""

import logging
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, model_validator

from svimo.analytics.features import FeatureExtractor, HandcraftedExtractor
from svimo.analytics.fid import MotionAutoencoder, motion_fid
from svimo.analytics.metrics import (
    background_consistency,
    empty_mask_frames,
    flow_score,
    foreground_masks,
    motion_smoothness,
    mpjpe,
    object_chamfer,
    overall,
    subject_consistency,
    temporal_smoothness,
)
from svimo.config.settings import MetricsConfig
from svimo.data.dataset import Dataset
from svimo.data.generated import GenerationRecord

logger = logging.getLogger(__name__)

VIDEO_COLUMNS = ["subj", "bkg", "tsmoo", "dyn_score", "dynamic"]
MOTION_COLUMNS = ["mpjpe", "msmoo", "chamfer"]


class SampleMetrics(BaseModel):
    """Per-generation scores."""

    sample_id: str
    source_id: str
    subj: float
    bkg: float
    tsmoo: float
    dyn_score: float = Field(..., ge=0, description="Mean top-5% flow magnitude (pixels)")
    dynamic: bool
    mpjpe: float = Field(..., ge=0)
    msmoo: float = Field(..., ge=0)
    chamfer: float = Field(..., ge=0)


class MetricsReport(BaseModel):
    """Aggregated video and motion metrics; ``overall`` is the product of the four video scores."""

    model_config = ConfigDict(extra="forbid")

    subj: float = Field(..., ge=0, le=1)
    bkg: float = Field(..., ge=0, le=1)
    tsmoo: float = Field(..., ge=0, le=1)
    dyn: float = Field(..., ge=0, le=1)
    overall: float = Field(..., ge=0, le=1)
    mpjpe: float = Field(..., ge=0)
    msmoo: float = Field(..., ge=0)
    chamfer: float = Field(..., ge=0)
    fid: Optional[float] = Field(None, ge=0, description="None when either set has < 2 samples")
    flags: List[str] = Field(default_factory=list)
    per_sample: List[SampleMetrics] = Field(default_factory=list)

    @model_validator(mode="after")
    def _check_overall(self) -> "MetricsReport":
        expected = overall(self.subj, self.bkg, self.tsmoo, self.dyn)
        if abs(self.overall - expected) > 1e-9:
            raise ValueError(f"overall={self.overall} is not subj*bkg*tsmoo*dyn={expected}")
        return self

    def table(self) -> pd.DataFrame:
        return pd.DataFrame([s.model_dump() for s in self.per_sample]).set_index("sample_id")

    def summary(self) -> pd.Series:
        keys = ["subj", "bkg", "tsmoo", "dyn", "overall", "mpjpe", "msmoo", "chamfer", "fid"]
        return pd.Series({k: getattr(self, k) for k in keys})

    def to_text(self) -> str:
        lines = [self.summary().to_string()]
        if self.per_sample:
            lines += ["", self.table().to_string()]
        if self.flags:
            lines += ["", "flags: " + ", ".join(self.flags)]
        return "\n".join(lines)


def clamp_consistency(name: str, value: float, flags: List[str]) -> float:
    """Cosine means live in [-1, 1]; the report keeps them in [0, 1] and flags a negative mean."""
    if value < 0:
        flags.append(f"{name}_clamped_negative")
        logger.warning(f"Mean {name} consistency {value:.4f} is negative; clamped to 0")
    return float(min(max(value, 0.0), 1.0))


def score_generation(
    gen: GenerationRecord,
    hands_gt: np.ndarray,
    objects_gt: np.ndarray,
    cfg: MetricsConfig,
    fx: FeatureExtractor,
    flags: List[str],
) -> SampleMetrics:
    masks, _ = foreground_masks(gen.video, cfg.mask_threshold)
    empty = empty_mask_frames(masks)
    if empty:
        flags.append(f"{gen.sample_id}:empty_mask_frames={len(empty)}")
    if len(gen.video) % 2:
        flags.append(f"{gen.sample_id}:tsmoo_dropped_trailing_frame")
    dyn_score = flow_score(gen.video)
    return SampleMetrics(
        sample_id=gen.sample_id,
        source_id=gen.meta.source_id,
        subj=subject_consistency(gen.video, masks, fx),
        bkg=background_consistency(gen.video, masks, fx),
        tsmoo=temporal_smoothness(gen.video),
        dyn_score=dyn_score,
        dynamic=dyn_score > cfg.tau_op,
        mpjpe=mpjpe(hands_gt, gen.hands),
        msmoo=motion_smoothness(gen.hands),
        chamfer=object_chamfer(objects_gt, gen.objects),
    )


def evaluate(
    dataset: Dataset,
    generations: Sequence[GenerationRecord],
    cfg: MetricsConfig,
    autoencoder: Optional[MotionAutoencoder] = None,
    fx: Optional[FeatureExtractor] = None,
) -> MetricsReport:
    """Score every generation against its source sample and the real motion distribution."""
    if not generations:
        raise ValueError("no generations to evaluate")
    fx = fx or HandcraftedExtractor()
    flags: List[str] = []
    rows = []
    for gen in generations:
        src = dataset.by_id(gen.meta.source_id)
        rows.append(score_generation(gen, src.hands, src.objects, cfg, fx, flags))

    df = pd.DataFrame([r.model_dump() for r in rows])
    means: Dict[str, float] = df[["subj", "bkg", "tsmoo", *MOTION_COLUMNS]].mean().to_dict()
    dyn = float(df["dynamic"].mean())
    subj = clamp_consistency("subj", means["subj"], flags)
    bkg = clamp_consistency("bkg", means["bkg"], flags)

    fid = None
    real = [(r.hands, r.objects) for r in dataset.records]
    fake = [(g.hands, g.objects) for g in generations]
    if autoencoder is None:
        flags.append("fid_skipped:no_autoencoder")
    elif len(real) < 2 or len(fake) < 2:
        flags.append("fid_skipped:fewer_than_2_samples")
    else:
        fid, regularized = motion_fid(autoencoder, real, fake)
        if regularized:
            flags.append("fid_regularized")

    report = MetricsReport(
        subj=subj,
        bkg=bkg,
        tsmoo=means["tsmoo"],
        dyn=dyn,
        overall=overall(subj, bkg, means["tsmoo"], dyn),
        mpjpe=means["mpjpe"],
        msmoo=means["msmoo"],
        chamfer=means["chamfer"],
        fid=fid,
        flags=flags,
        per_sample=rows,
    )
    logger.info(f"Evaluated {len(rows)} generations: overall={report.overall:.4f} mpjpe={report.mpjpe:.4f}")
    return report
