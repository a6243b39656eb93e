"""
File Processor for didforge
Reads long-format panel CSVs into PanelDataset objects and writes them back.
"""

import json
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np
import pandas as pd

from src.config_manager import ConfigManager
from src.exceptions import (
    DuplicateRow,
    MissingCell,
    NonConstantTimeInvariant,
    UnknownColumn,
)
from src.logger import LoggerMixin
from src.panel import ColumnMapping, PanelDataset


class PanelFileProcessor(LoggerMixin):
    """
    Converts between long-format panel files and PanelDataset.
    """

    def __init__(self, config: Optional[ConfigManager] = None):
        """
        Initializes the PanelFileProcessor.

        Args:
            config: ConfigManager for the tolerance and never-treated code settings.
                If None, built-in defaults are used.
        """
        self.config = config
        if config is not None:
            self.constant_tolerance = config.get_float("PANEL", "constant_tolerance", fallback=1e-9)
            codes = config.get_list("PANEL", "never_treated_codes", fallback=["0"])
        else:
            self.constant_tolerance = 1e-9
            codes = ["0"]
        self.never_treated_codes = [float(c) for c in codes]

    # --- schema ---

    def read_sidecar(self, path: str) -> ColumnMapping:
        """
        Reads a column-mapping sidecar JSON.

        The file may carry ``id_col``, ``time_col``, ``y_col``, ``g_col``,
        ``time_varying`` and ``time_invariant``.
        """
        with open(path, "r", encoding="utf-8") as handle:
            payload = json.load(handle)
        return ColumnMapping(
            id_col=payload.get("id_col", "id"),
            time_col=payload.get("time_col", "time"),
            y_col=payload.get("y_col", "y"),
            g_col=payload.get("g_col", "g"),
            x_cols=tuple(payload.get("time_varying", ())),
            z_cols=tuple(payload.get("time_invariant", ())),
        )

    def write_sidecar(self, schema: ColumnMapping, path: str) -> None:
        payload = {
            "id_col": schema.id_col,
            "time_col": schema.time_col,
            "y_col": schema.y_col,
            "g_col": schema.g_col,
            "time_varying": list(schema.x_cols),
            "time_invariant": list(schema.z_cols),
        }
        with open(path, "w", encoding="utf-8") as handle:
            json.dump(payload, handle, indent=2, sort_keys=True)
            handle.write("\n")

    # --- reading ---

    def load_csv(self, file_path: str, schema: Optional[ColumnMapping] = None) -> PanelDataset:
        """
        Loads a long-format CSV (one row per unit-period) into a PanelDataset.

        Args:
            file_path: Path to the CSV file.
            schema: Column mapping. If None, a sidecar ``<file>.json`` is used
                when present, else the default column names without covariates.

        Returns:
            Balanced PanelDataset with periods re-indexed to 1..T.
        """
        file_path = Path(file_path)
        if not file_path.exists():
            raise FileNotFoundError(f"File not found: {file_path}")

        if schema is None:
            sidecar = file_path.with_suffix(".json")
            schema = self.read_sidecar(str(sidecar)) if sidecar.exists() else ColumnMapping()

        self.logger.info(f"Loading panel from {file_path}")
        frame = pd.read_csv(file_path, encoding="utf-8")
        data = self.frame_to_panel(frame, schema)
        self.logger.info(
            f"Loaded panel: n={data.n_units} T={data.n_periods} k={data.k} l={data.l} "
            f"groups={data.groups}"
        )
        return data

    def frame_to_panel(self, frame: pd.DataFrame, schema: ColumnMapping) -> PanelDataset:
        """Builds a PanelDataset from a long-format DataFrame."""
        missing = [c for c in schema.required() if c not in frame.columns]
        if missing:
            raise UnknownColumn(f"columns not found: {missing}", missing=missing,
                                available=[str(c) for c in frame.columns])

        duplicated = frame.duplicated(subset=[schema.id_col, schema.time_col])
        if duplicated.any():
            rows = frame.loc[duplicated, [schema.id_col, schema.time_col]].head(20)
            raise DuplicateRow("duplicate (unit, period) rows", rows=rows.values.tolist())

        periods = np.sort(frame[schema.time_col].unique())
        units = pd.unique(frame[schema.id_col])
        full_index = pd.MultiIndex.from_product([units, periods], names=[schema.id_col, schema.time_col])
        indexed = frame.set_index([schema.id_col, schema.time_col]).reindex(full_index)

        value_cols = [schema.y_col, *schema.x_cols]
        absent = indexed[value_cols].isna().any(axis=1)
        if absent.any():
            cells = [list(map(_plain, c)) for c in indexed.index[absent][:20]]
            raise MissingCell(f"panel is unbalanced or has missing values ({int(absent.sum())} cells)",
                              cells=cells)

        n, T = len(units), len(periods)
        outcome = indexed[schema.y_col].to_numpy(dtype=float).reshape(n, T)
        if schema.x_cols:
            x_tv = indexed[list(schema.x_cols)].to_numpy(dtype=float).reshape(n, T, len(schema.x_cols))
        else:
            x_tv = np.zeros((n, T, 0))

        z_ti = np.column_stack([self._constant_within_unit(indexed, c, n, T) for c in schema.z_cols]) \
            if schema.z_cols else np.zeros((n, 0))
        group = self._group_index(indexed, schema.g_col, periods, n, T)

        return PanelDataset(
            outcome=outcome, x_tv=x_tv, z_ti=z_ti, group=group,
            unit_ids=tuple(_plain(u) for u in units),
            period_labels=tuple(_plain(p) for p in periods),
            x_names=tuple(schema.x_cols), z_names=tuple(schema.z_cols),
        )

    def _constant_within_unit(self, indexed: pd.DataFrame, column: str, n: int, T: int) -> np.ndarray:
        values = indexed[column].to_numpy(dtype=float).reshape(n, T)
        if np.isnan(values).any():
            raise MissingCell(f"time-invariant column {column!r} has missing values", column=column)
        first = values[:, :1]
        spread = np.abs(values - first).max(axis=1)
        bad = spread > self.constant_tolerance * np.maximum(1.0, np.abs(first[:, 0]))
        if bad.any():
            ids = [_plain(u) for u in indexed.index.get_level_values(0)[::T][bad][:20]]
            raise NonConstantTimeInvariant(f"column {column!r} varies within unit", column=column, units=ids)
        return first[:, 0]

    def _group_index(self, indexed: pd.DataFrame, column: str, periods: np.ndarray, n: int, T: int) -> np.ndarray:
        """Maps first-treatment labels to period indices; never-treated codes become T + 1."""
        raw = pd.to_numeric(indexed[column], errors="coerce").to_numpy(dtype=float).reshape(n, T)
        never = np.isnan(raw) | np.isinf(raw) | np.isin(raw, self.never_treated_codes)
        codes = np.where(never, np.inf, raw)
        if np.any(codes != codes[:, :1]):
            bad = np.where((codes != codes[:, :1]).any(axis=1))[0]
            ids = [_plain(u) for u in indexed.index.get_level_values(0)[::T][bad][:20]]
            raise NonConstantTimeInvariant(f"group column {column!r} varies within unit", column=column, units=ids)

        first = codes[:, 0]
        group = np.full(n, T + 1, dtype=int)
        finite = np.isfinite(first)
        # first observed period at or after the label
        group[finite] = np.searchsorted(periods.astype(float), first[finite], side="left") + 1
        beyond = finite & (group == T + 1)
        if beyond.any():
            self.logger.warning(f"{int(beyond.sum())} units first treated after the sample ends; coded never-treated")
        return group

    # --- writing ---

    def panel_to_frame(self, data: PanelDataset) -> pd.DataFrame:
        """Long-format DataFrame with original period labels; never-treated units carry g = 0."""
        n, T = data.n_units, data.n_periods
        labels = np.asarray(data.period_labels, dtype=object)
        g_labels = np.array([labels[g - 1] if g <= T else 0 for g in data.group], dtype=object)
        frame = pd.DataFrame({
            "id": np.repeat(np.asarray(data.unit_ids, dtype=object), T),
            "time": np.tile(labels, n),
            "y": data.outcome.reshape(-1),
            "g": np.repeat(g_labels, T),
        })
        for j, name in enumerate(data.x_names):
            frame[name] = data.x_tv[:, :, j].reshape(-1)
        for j, name in enumerate(data.z_names):
            frame[name] = np.repeat(data.z_ti[:, j], T)
        return frame

    def write_csv(self, data: PanelDataset, file_path: str, with_sidecar: bool = True) -> Path:
        """
        Writes a panel in the long CSV format accepted by load_csv.

        Args:
            data: The panel to export.
            file_path: Destination CSV path.
            with_sidecar: Also write ``<file>.json`` declaring the covariate roles.

        Returns:
            Path of the written CSV.
        """
        file_path = Path(file_path)
        file_path.parent.mkdir(parents=True, exist_ok=True)
        frame = self.panel_to_frame(data)
        frame.to_csv(file_path, index=False, float_format="%.17g", lineterminator="\n")
        if with_sidecar:
            schema = ColumnMapping(x_cols=data.x_names, z_cols=data.z_names)
            self.write_sidecar(schema, str(file_path.with_suffix(".json")))
        self.logger.info(f"Wrote panel ({data.n_units} x {data.n_periods}) to {file_path}")
        return file_path

    # --- file checks ---

    def get_file_info(self, file_path: str) -> Dict[str, Any]:
        """
        Gets information about a panel file.

        Args:
            file_path: Path to the file.

        Returns:
            Dictionary containing file information.
        """
        file_path = Path(file_path)
        if not file_path.exists():
            raise FileNotFoundError(f"File not found: {file_path}")
        stat = file_path.stat()
        return {
            "name": file_path.name,
            "extension": file_path.suffix.lower(),
            "size_bytes": stat.st_size,
            "size_mb": round(stat.st_size / (1024 * 1024), 2),
            "has_sidecar": file_path.with_suffix(".json").exists(),
        }

    def validate_file(self, file_path: str) -> Dict[str, Any]:
        """
        Cheap pre-flight check before loading.

        Returns:
            Dictionary with ``is_valid``, ``file_info``, ``errors`` and ``warnings``.
        """
        try:
            file_info = self.get_file_info(file_path)
        except Exception as e:
            return {"is_valid": False, "file_info": None, "errors": [str(e)], "warnings": []}

        result = {"is_valid": True, "file_info": file_info, "errors": [], "warnings": []}
        if file_info["extension"] != ".csv":
            result["is_valid"] = False
            result["errors"].append(f"Unsupported file format: {file_info['extension']}")
        if file_info["size_bytes"] == 0:
            result["is_valid"] = False
            result["errors"].append("File is empty")
        if file_info["size_mb"] > 500:
            result["warnings"].append(f"Large file size: {file_info['size_mb']} MB")
        return result


def _plain(value: Any) -> Any:
    """numpy scalar -> python scalar, for ids and labels."""
    return value.item() if hasattr(value, "item") else value


def load_csv(path: str, schema: Optional[ColumnMapping] = None,
             config: Optional[ConfigManager] = None) -> PanelDataset:
    """Loads a long-format panel CSV."""
    return PanelFileProcessor(config).load_csv(path, schema)


def parse_columns(value: Optional[str]) -> List[str]:
    """Comma-separated column list from a CLI flag."""
    if not value:
        return []
    return [c.strip() for c in value.split(",") if c.strip()]
