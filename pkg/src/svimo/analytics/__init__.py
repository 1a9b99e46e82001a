"""Video quality, motion accuracy and motion FID metrics."""

from svimo.analytics.report import MetricsReport, evaluate

__all__ = ["MetricsReport", "evaluate"]
