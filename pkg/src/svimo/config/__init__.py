"""Configuration settings for runs."""

from .settings import RunConfig, ShapeConfig, load_config

__all__ = ["RunConfig", "ShapeConfig", "load_config"]
