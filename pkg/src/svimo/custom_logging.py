"""
Minimal JSON logging to standardize run logs.
One JSON object per line; structured fields ride along via ``extra={"fields": {...}}``.
"""

import json
import logging
from pathlib import Path
from typing import Any, Dict, Optional

METRICS_LOGGER = "svimo.metrics"


class _JsonFormatter(logging.Formatter):
    def format(self, record: logging.LogRecord) -> str:
        payload: Dict[str, Any] = {
            "level": record.levelname,
            "logger": record.name,
            "msg": record.getMessage(),
        }
        fields = getattr(record, "fields", None)
        if fields:
            payload.update(fields)
        if record.exc_info:
            payload["exc_info"] = self.formatException(record.exc_info)
        return json.dumps(payload, ensure_ascii=False, default=float)


def setup_logging(level: int = logging.INFO, log_file: Optional[Path] = None) -> None:
    root = logging.getLogger()
    root.setLevel(level)
    if not any(
        isinstance(h, logging.StreamHandler) and not isinstance(h, logging.FileHandler)
        for h in root.handlers
    ):
        handler = logging.StreamHandler()
        handler.setFormatter(_JsonFormatter())
        root.addHandler(handler)
    if log_file is not None:
        attach_file(root, log_file)


def attach_file(logger: logging.Logger, path: Path) -> logging.FileHandler:
    """Mirror ``logger`` into a JSONL file (idempotent per path)."""
    path = Path(path)
    for h in logger.handlers:
        if isinstance(h, logging.FileHandler) and Path(h.baseFilename) == path.resolve():
            return h
    path.parent.mkdir(parents=True, exist_ok=True)
    handler = logging.FileHandler(path, encoding="utf-8")
    handler.setFormatter(_JsonFormatter())
    logger.addHandler(handler)
    return handler


def detach_files(logger: logging.Logger) -> None:
    for h in [h for h in logger.handlers if isinstance(h, logging.FileHandler)]:
        logger.removeHandler(h)
        h.close()


def log_step(phase: str, step: int, values: Dict[str, Any]) -> None:
    """Emit one step-indexed metrics record."""
    logging.getLogger(METRICS_LOGGER).info(
        phase, extra={"fields": {"phase": phase, "step": step, **values}}
    )
