"""
Report Generator for didforge
Writes JSON, CSV and plain-text reports for estimation, decomposition, diagnostics and simulation runs.
"""

import json
import math
import platform
from datetime import datetime
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Optional

import numpy as np
import pandas as pd

from src.config_manager import ConfigManager
from src.logger import LoggerMixin

CSV_FLOAT_FORMAT = "%.12g"


def to_jsonable(value: Any) -> Any:
    """
    Plain JSON types for numpy scalars/arrays, enums, tuples-as-keys and frames.

    Non-finite floats become ``None``.
    """
    if isinstance(value, dict):
        return {_key(k): to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    if isinstance(value, pd.DataFrame):
        return to_jsonable(value.to_dict(orient="records"))
    if isinstance(value, np.ndarray):
        return to_jsonable(value.tolist())
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, (np.bool_, bool)):
        return bool(value)
    if isinstance(value, (np.integer, int)):
        return int(value)
    if isinstance(value, (np.floating, float)):
        value = float(value)
        return value if math.isfinite(value) else None
    if value is None or isinstance(value, str):
        return value
    if isinstance(value, Path):
        return str(value)
    return str(value)


def _key(key: Any) -> str:
    if isinstance(key, tuple):
        return ",".join(str(k) for k in key)
    return str(key)


def library_versions() -> Dict[str, str]:
    import loguru
    import scipy
    import statsmodels

    from src import __version__

    return {
        "didforge": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "pandas": pd.__version__,
        "scipy": scipy.__version__,
        "statsmodels": statsmodels.__version__,
        "loguru": loguru.__version__,
    }


class ReportGenerator(LoggerMixin):
    """
    Owns one output directory and writes report files into it.
    """

    def __init__(self, config: Optional[ConfigManager] = None, output_dir: Optional[str] = None):
        """
        Initializes the ReportGenerator.

        Args:
            config: ConfigManager; ``[PATHS] output_dir`` is used when ``output_dir`` is None.
            output_dir: Directory for report files, created if missing.
        """
        self.config = config
        if output_dir is None:
            output_dir = config.get("PATHS", "output_dir", fallback="./output") if config else "./output"
        self.output_dir = Path(output_dir)
        self.output_dir.mkdir(parents=True, exist_ok=True)
        self.logger.debug(f"ReportGenerator writing to {self.output_dir}")

    def path(self, name: str) -> Path:
        return self.output_dir / name

    def write_json(self, name: str, payload: Any) -> Path:
        """Sorted keys, two-space indent, trailing newline; NaN and inf are written as null."""
        target = self.path(name)
        with open(target, "w", encoding="utf-8") as handle:
            json.dump(to_jsonable(payload), handle, indent=2, sort_keys=True, allow_nan=False)
            handle.write("\n")
        self.logger.info(f"Wrote {target}")
        return target

    def write_csv(self, name: str, frame: pd.DataFrame) -> Path:
        target = self.path(name)
        frame.to_csv(target, index=False, float_format=CSV_FLOAT_FORMAT, lineterminator="\n")
        self.logger.info(f"Wrote {target} ({len(frame)} rows)")
        return target

    @staticmethod
    def render_table(frame: pd.DataFrame, title: Optional[str] = None, float_digits: int = 6) -> str:
        """Aligned plain-text table."""
        body = frame.to_string(index=False, float_format=lambda v: f"{v:.{float_digits}g}")
        if title:
            return f"{title}\n{'-' * len(title)}\n{body}\n"
        return body + "\n"

    def write_run_meta(self, command: str, options: Dict[str, Any], seed: Optional[int] = None,
                       stamp: bool = False) -> Path:
        """
        ``run_meta.json``: versions, seed, options and the effective configuration.

        The timestamp is only written when ``stamp`` is set, keeping repeated runs byte-identical.
        """
        meta: Dict[str, Any] = {
            "command": command,
            "options": options,
            "seed": seed,
            "versions": library_versions(),
            "config": self.config.as_dict() if self.config else {},
        }
        if stamp:
            meta["timestamp"] = datetime.now().isoformat(timespec="seconds")
        return self.write_json("run_meta.json", meta)

    def write_error(self, error: Dict[str, Any]) -> Path:
        return self.write_json("error.json", error)
