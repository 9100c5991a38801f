import logging
import os
import tempfile
from pathlib import Path
from typing import Union

import numpy as np
import yaml

logger = logging.getLogger(__name__)


def to_builtin(value):
    """Turn numpy scalars/arrays, enums and tuples into plain YAML-safe values."""
    if isinstance(value, dict):
        return {str(to_builtin(key)): to_builtin(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_builtin(item) for item in value]
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    if hasattr(value, "value") and isinstance(getattr(value, "value"), str):
        return value.value
    return value


def save_report(path: Union[str, Path], report: dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with tempfile.NamedTemporaryFile("w", dir=path.parent, delete=False, suffix=".tmp", encoding="utf-8") as file:
        yaml.safe_dump(to_builtin(report), file, default_flow_style=False, sort_keys=False, allow_unicode=True)
    os.replace(file.name, path)
    logger.info(f"Wrote report to {path}")
    return path


def load_report(path: Union[str, Path]) -> dict:
    with open(path, encoding="utf-8") as file:
        return yaml.safe_load(file)
