"""Shared pytest configuration and tiny run configs."""

import pytest
import torch

from svimo.config.settings import EnvSettings, build_config
from svimo.data.vocab import PromptVocab

TINY = {
    "seed": 7,
    "shapes": {"N": 3, "H": 16, "W": 16, "rh": 4, "rw": 4, "rn": 2, "patch": 2, "L_text": 12, "d_model": 32},
    "schedule": {"T": 50, "inference_steps": 5},
    "model": {
        "n_blocks": 2,
        "heads": 2,
        "d_time": 32,
        "vid_d": 32,
        "vid_blocks": 1,
        "vid_heads": 2,
        "vid_conv_channels": 8,
    },
    "train": {"batch_size": 2, "learning_rate": 1e-3, "lr_warmup_steps": 0, "checkpoint_every": 1000},
    "data": {"num_samples": 4, "split_ratio": 0.5, "J": 4, "K": 4},
    "metrics": {"ae_hidden": 32, "ae_bottleneck": 8, "ae_max_steps": 50, "ae_target_mse": 1e3},
}


def pytest_addoption(parser):
    parser.addoption(
        "--run-slow",
        action="store_true",
        default=False,
        help="Run overfit and calibration tests (minutes on CPU)",
    )


def pytest_collection_modifyitems(config, items):
    """Skip marker-gated tests unless the matching flag is passed."""
    skip_slow = pytest.mark.skip(reason="needs --run-slow flag")
    for item in items:
        if "slow" in item.keywords and not config.getoption("--run-slow"):
            item.add_marker(skip_slow)


def tiny_config(**sections):
    """TINY merged with per-section overrides, e.g. ``tiny_config(train={"omega2": 0.0})``."""
    raw = {k: dict(v) if isinstance(v, dict) else v for k, v in TINY.items()}
    for key, value in sections.items():
        if isinstance(value, dict):
            raw.setdefault(key, {}).update(value)
        else:
            raw[key] = value
    return build_config(raw, env=EnvSettings(seed=None))


@pytest.fixture
def cfg():
    return tiny_config()


@pytest.fixture
def vocab():
    return PromptVocab.build()


@pytest.fixture(autouse=True)
def _deterministic_torch():
    torch.manual_seed(0)
    yield
