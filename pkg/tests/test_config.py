"""Unit tests for run configuration loading, overrides and validation.

Marker: @pytest.mark.unit

Run:
    uv run pytest tests/test_config.py -v -m unit
"""

from pathlib import Path

import pytest
import yaml

from svimo.config import RunConfig, load_config
from svimo.config.settings import EnvSettings, build_config, dump_config, parse_override
from svimo.errors import ConfigError

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


@pytest.mark.unit
def test_defaults_are_desk_scale():
    cfg = build_config(env=EnvSettings(seed=None))
    assert (cfg.shapes.N, cfg.shapes.H, cfg.shapes.W) == (9, 32, 48)
    assert cfg.codec.kind == "lossless"
    assert cfg.latent_channels == 2 * 4 * 4 * 3
    assert cfg.train_seed == cfg.seed


@pytest.mark.unit
@pytest.mark.parametrize("name", ["desk.yaml", "full.yaml"])
def test_shipped_configs_load(name):
    cfg = load_config(CONFIGS / name)
    assert isinstance(cfg, RunConfig)
    assert cfg.format_version == 1


@pytest.mark.unit
def test_full_scale_config_uses_learned_codec():
    cfg = load_config(CONFIGS / "full.yaml")
    assert cfg.codec.kind == "learned"
    assert cfg.latent_channels == 16
    assert cfg.shapes.latent_frames == 13


@pytest.mark.unit
def test_overrides_are_parsed_as_yaml():
    assert parse_override("train.total_steps=10") == ("train.total_steps", 10)
    assert parse_override("train.feedback_mode=none") == ("train.feedback_mode", "none")
    cfg = build_config({}, ["train.omega2=0.5", "seed=3"], env=EnvSettings(seed=None))
    assert cfg.train.omega2 == 0.5 and cfg.seed == 3
    with pytest.raises(ConfigError):
        parse_override("no_equals_sign")
    with pytest.raises(ConfigError):
        build_config({}, ["seed.deeper=1"], env=EnvSettings(seed=None))


@pytest.mark.unit
def test_environment_seed_wins(monkeypatch):
    monkeypatch.setenv("SVIMO_SEED", "11")
    assert build_config({"seed": 2}).seed == 11
    assert build_config({"seed": 2}, env=EnvSettings(seed=None)).seed == 2


@pytest.mark.unit
@pytest.mark.parametrize(
    "raw",
    [
        {"train": {"unknown_knob": 1}},
        {"shapes": {"H": 30}},
        {"shapes": {"N": 4}},
        {"shapes": {"d_latent": 7}},
        {"data": {"J": 5}},
        {"data": {"actions": ["juggle"]}},
        {"schedule": {"T": 10, "inference_steps": 20}},
        {"train": {"feedback_mode": "sometimes"}},
        {"model": {"heads": 3}},
    ],
)
def test_invalid_configs_raise_config_error(raw):
    with pytest.raises(ConfigError):
        build_config(raw, env=EnvSettings(seed=None))


@pytest.mark.unit
def test_config_file_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.yaml")
    unversioned = tmp_path / "unversioned.yaml"
    unversioned.write_text(yaml.safe_dump({"seed": 1}))
    with pytest.raises(ConfigError, match="format_version"):
        load_config(unversioned)
    listed = tmp_path / "list.yaml"
    listed.write_text("- 1\n- 2\n")
    with pytest.raises(ConfigError):
        load_config(listed)


@pytest.mark.unit
def test_dumped_config_reloads_identically(tmp_path, monkeypatch):
    monkeypatch.delenv("SVIMO_SEED", raising=False)
    cfg = build_config({"seed": 5, "train": {"feedback_mode": "guidance_only"}}, env=EnvSettings(seed=None))
    dump_config(cfg, tmp_path / "resolved.yaml")
    assert load_config(tmp_path / "resolved.yaml") == cfg
