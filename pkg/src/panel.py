"""
Panel data model for didforge.

A ``PanelDataset`` is a balanced panel of outcomes, time-varying covariates,
time-invariant covariates and first-treatment periods.  Periods are indexed
1..T; units that are never treated carry the sentinel G = T + 1, so the
treatment indicator is always D_it = 1{t >= G_i}.
"""

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from src.exceptions import (
    AlreadyTreatedAtStart,
    EmptySubset,
    MissingCell,
    NotTwoPeriod,
    UnknownColumn,
)
from src.logger import log


def _frozen(array: np.ndarray, dtype=float) -> np.ndarray:
    out = np.array(array, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class ColumnMapping:
    """Which long-format columns hold what."""

    id_col: str = "id"
    time_col: str = "time"
    y_col: str = "y"
    g_col: str = "g"
    x_cols: Tuple[str, ...] = ()
    z_cols: Tuple[str, ...] = ()

    def required(self) -> List[str]:
        return [self.id_col, self.time_col, self.y_col, self.g_col, *self.x_cols, *self.z_cols]


@dataclass(frozen=True)
class PanelDataset:
    """Immutable balanced panel (units x periods)."""

    outcome: np.ndarray
    x_tv: np.ndarray
    z_ti: np.ndarray
    group: np.ndarray
    unit_ids: Tuple = ()
    period_labels: Tuple = ()
    x_names: Tuple[str, ...] = ()
    z_names: Tuple[str, ...] = ()

    def __post_init__(self):
        outcome = np.asarray(self.outcome, dtype=float)
        if outcome.ndim != 2:
            raise ValueError("outcome must be an n_units x n_periods matrix")
        n, T = outcome.shape
        x_tv = np.asarray(self.x_tv, dtype=float)
        if x_tv.size == 0:
            x_tv = np.zeros((n, T, 0))
        z_ti = np.asarray(self.z_ti, dtype=float)
        if z_ti.size == 0:
            z_ti = np.zeros((n, 0))
        if x_tv.ndim == 2:
            x_tv = x_tv[:, :, None]
        if x_tv.shape[:2] != (n, T):
            raise ValueError(f"x_tv shape {x_tv.shape} does not match outcome {outcome.shape}")
        if z_ti.ndim == 1:
            z_ti = z_ti[:, None]
        if z_ti.shape[0] != n:
            raise ValueError(f"z_ti has {z_ti.shape[0]} rows, expected {n}")
        group = np.asarray(self.group)
        if group.shape != (n,):
            raise ValueError(f"group has shape {group.shape}, expected ({n},)")
        if not np.all(np.isfinite(outcome)) or not np.all(np.isfinite(x_tv)) or not np.all(np.isfinite(z_ti)):
            bad = np.where(~np.isfinite(outcome).all(axis=1)
                           | ~np.isfinite(x_tv).all(axis=(1, 2))
                           | ~np.isfinite(z_ti).all(axis=1))[0]
            raise MissingCell("panel contains missing values", units=bad[:20].tolist())
        group = group.astype(int)
        if np.any(group <= 1):
            bad = np.where(group <= 1)[0]
            raise AlreadyTreatedAtStart(
                "units treated in the first period cannot be used", units=bad[:20].tolist()
            )
        if np.any(group > T + 1):
            raise ValueError(f"group codes must lie in 2..{T} or equal {T + 1} (never treated)")

        unit_ids = tuple(self.unit_ids) if len(self.unit_ids) else tuple(range(1, n + 1))
        period_labels = tuple(self.period_labels) if len(self.period_labels) else tuple(range(1, T + 1))
        x_names = tuple(self.x_names) if len(self.x_names) else tuple(f"x{j + 1}" for j in range(x_tv.shape[2]))
        z_names = tuple(self.z_names) if len(self.z_names) else tuple(f"z{j + 1}" for j in range(z_ti.shape[1]))
        if len(x_names) != x_tv.shape[2] or len(z_names) != z_ti.shape[1]:
            raise ValueError("covariate names do not match covariate dimensions")

        object.__setattr__(self, "outcome", _frozen(outcome))
        object.__setattr__(self, "x_tv", _frozen(x_tv))
        object.__setattr__(self, "z_ti", _frozen(z_ti))
        object.__setattr__(self, "group", _frozen(group, dtype=int))
        object.__setattr__(self, "unit_ids", unit_ids)
        object.__setattr__(self, "period_labels", period_labels)
        object.__setattr__(self, "x_names", x_names)
        object.__setattr__(self, "z_names", z_names)

    # --- shape ---

    @property
    def n_units(self) -> int:
        return self.outcome.shape[0]

    @property
    def n_periods(self) -> int:
        return self.outcome.shape[1]

    @property
    def k(self) -> int:
        return self.x_tv.shape[2]

    @property
    def l(self) -> int:
        return self.z_ti.shape[1]

    @property
    def never_value(self) -> int:
        return self.n_periods + 1

    # --- treatment structure ---

    @property
    def treatment(self) -> np.ndarray:
        """D_it = 1{t >= G_i}, as floats."""
        periods = np.arange(1, self.n_periods + 1)
        return (periods[None, :] >= self.group[:, None]).astype(float)

    @property
    def groups(self) -> List[int]:
        """Every group present, never-treated (T + 1) last."""
        return sorted(int(g) for g in np.unique(self.group))

    @property
    def treated_groups(self) -> List[int]:
        """Ever-treated cohorts present in the data."""
        return [g for g in self.groups if g <= self.n_periods]

    @property
    def has_never_treated(self) -> bool:
        return bool(np.any(self.group == self.never_value))

    def group_shares(self) -> Dict[int, float]:
        """p_g = P(G = g) over all groups, never-treated included."""
        return {g: float(np.mean(self.group == g)) for g in self.groups}

    def treated_shares(self) -> Dict[int, float]:
        """p-bar_g = P(G = g | G ever treated)."""
        ever = self.group <= self.n_periods
        n_ever = int(ever.sum())
        if n_ever == 0:
            return {}
        return {g: float(np.sum(self.group == g) / n_ever) for g in self.treated_groups}

    def untreated_share(self, t: int) -> float:
        """P(D_t = 0)."""
        return float(np.mean(self.group > t))

    def comparison_mask(self, t: int, comparison: str = "notyet") -> np.ndarray:
        """Units usable as comparisons in period t."""
        if comparison == "never":
            return self.group == self.never_value
        return self.group > t

    def cells(self) -> List[Tuple[int, int]]:
        """All post-treatment (g, t) cells."""
        return [(g, t) for g in self.treated_groups for t in range(g, self.n_periods + 1)]

    # --- derived panels ---

    def subset_units(self, mask: np.ndarray) -> "PanelDataset":
        mask = np.asarray(mask, dtype=bool)
        if not mask.any():
            raise EmptySubset("unit subset is empty")
        ids = tuple(np.asarray(self.unit_ids, dtype=object)[mask])
        return PanelDataset(
            outcome=self.outcome[mask], x_tv=self.x_tv[mask], z_ti=self.z_ti[mask],
            group=self.group[mask], unit_ids=ids, period_labels=self.period_labels,
            x_names=self.x_names, z_names=self.z_names,
        )

    def with_outcome(self, outcome: np.ndarray) -> "PanelDataset":
        return PanelDataset(
            outcome=outcome, x_tv=self.x_tv, z_ti=self.z_ti, group=self.group,
            unit_ids=self.unit_ids, period_labels=self.period_labels,
            x_names=self.x_names, z_names=self.z_names,
        )

    def x_column(self, name: str) -> np.ndarray:
        try:
            return self.x_tv[:, :, self.x_names.index(name)]
        except ValueError:
            raise UnknownColumn(f"unknown time-varying covariate {name!r}", available=list(self.x_names))


@dataclass(frozen=True)
class TwoPeriodView:
    """First-differenced view of a T = 2 panel with a single treated cohort."""

    dy: np.ndarray
    dx: np.ndarray
    x_pre: np.ndarray
    x_post: np.ndarray
    z: np.ndarray
    d: np.ndarray
    unit_ids: Tuple = ()
    x_names: Tuple[str, ...] = ()
    z_names: Tuple[str, ...] = ()

    @property
    def n(self) -> int:
        return self.dy.shape[0]

    @property
    def treated(self) -> np.ndarray:
        return self.d == 1.0

    @property
    def p(self) -> float:
        """Share treated."""
        return float(self.d.mean())


def two_period_view(data: PanelDataset) -> TwoPeriodView:
    """Build (dY, [1, dX], levels, D) from a two-period panel."""
    if data.n_periods != 2:
        raise NotTwoPeriod(f"two-period view needs T = 2, got T = {data.n_periods}", n_periods=data.n_periods)
    if any(g != 2 for g in data.treated_groups):
        raise NotTwoPeriod("two-period view needs a single treated cohort starting in period 2",
                           groups=data.treated_groups)
    dy = data.outcome[:, 1] - data.outcome[:, 0]
    x_pre = data.x_tv[:, 0, :]
    x_post = data.x_tv[:, 1, :]
    dx = np.column_stack([np.ones(data.n_units), x_post - x_pre])
    d = (data.group == 2).astype(float)
    return TwoPeriodView(
        dy=_frozen(dy), dx=_frozen(dx), x_pre=_frozen(x_pre), x_post=_frozen(x_post),
        z=_frozen(data.z_ti), d=_frozen(d), unit_ids=data.unit_ids,
        x_names=data.x_names, z_names=data.z_names,
    )


@dataclass(frozen=True)
class DemeanedVariable:
    """Double-demeaned values plus the means that were removed."""

    values: np.ndarray
    unit_means: np.ndarray
    period_means: np.ndarray
    grand_mean: np.ndarray


def demean_array(values: np.ndarray) -> DemeanedVariable:
    """v_it - mean_s v_is - mean_j v_jt + mean_js v_js along the (unit, period) axes."""
    values = np.asarray(values, dtype=float)
    unit_means = values.mean(axis=1, keepdims=True)
    period_means = values.mean(axis=0, keepdims=True)
    grand_mean = values.mean(axis=(0, 1), keepdims=True)
    dd = values - unit_means - period_means + grand_mean
    return DemeanedVariable(
        values=_frozen(dd),
        unit_means=_frozen(np.squeeze(unit_means, axis=1)),
        period_means=_frozen(np.squeeze(period_means, axis=0)),
        grand_mean=_frozen(np.squeeze(grand_mean, axis=(0, 1))),
    )


def double_demean(data: PanelDataset, variable: str) -> DemeanedVariable:
    """
    Double-demean one variable of the panel.

    Args:
        data: the panel.
        variable: ``"y"``, ``"d"``, ``"x"`` (all time-varying covariates) or ``"x:<name>"``.

    Returns:
        DemeanedVariable aligned with the panel's (unit, period) layout.
    """
    if variable == "y":
        return demean_array(data.outcome)
    if variable == "d":
        return demean_array(data.treatment)
    if variable == "x":
        return demean_array(data.x_tv)
    if variable.startswith("x:"):
        return demean_array(data.x_column(variable[2:]))
    raise UnknownColumn(f"cannot double-demean {variable!r}", allowed=["y", "d", "x", "x:<name>"])


@dataclass(frozen=True)
class DemeanedPanel:
    """Y-ddot, D-ddot and X-ddot for a panel."""

    y: DemeanedVariable
    d: DemeanedVariable
    x: DemeanedVariable

    @property
    def y_dd(self) -> np.ndarray:
        return self.y.values

    @property
    def d_dd(self) -> np.ndarray:
        return self.d.values

    @property
    def x_dd(self) -> np.ndarray:
        return self.x.values

    @classmethod
    def from_panel(cls, data: PanelDataset) -> "DemeanedPanel":
        return cls(y=double_demean(data, "y"), d=double_demean(data, "d"), x=double_demean(data, "x"))


def h_table(data: PanelDataset) -> Dict[int, np.ndarray]:
    """
    h(g, t) = 1{t >= g} - (T - g + 1)/T - E[D_t] + mean_s E[D_s] for every group present.

    Knowing a unit's group pins down its double-demeaned treatment path, so
    h(G_i, t) equals D-ddot_it.
    """
    T = data.n_periods
    periods = np.arange(1, T + 1)
    share_treated = data.treatment.mean(axis=0)
    offset = -share_treated + share_treated.mean()
    return {
        g: (periods >= g).astype(float) - (T - g + 1) / T + offset
        for g in data.groups
    }


def treatment_from_h(data: PanelDataset) -> np.ndarray:
    """D-ddot assembled from h(G_i, t)."""
    table = h_table(data)
    return np.vstack([table[int(g)] for g in data.group])


@dataclass
class ValidationReport:
    """Design checks; downstream operations raise on fatal conditions."""

    n_units: int
    n_periods: int
    group_sizes: Dict[int, int]
    min_group_size: int
    small_groups: List[int] = field(default_factory=list)
    missing_comparisons: List[Tuple[int, int]] = field(default_factory=list)
    has_never_treated: bool = False
    overlap: Dict[str, Dict[str, float]] = field(default_factory=dict)

    @property
    def flags(self) -> List[str]:
        out = [f"small group {g} ({self.group_sizes[g]} units < {self.min_group_size})" for g in self.small_groups]
        out += [f"no comparison units for ({g},{t})" for g, t in self.missing_comparisons]
        return out

    @property
    def ok(self) -> bool:
        return not self.flags

    def to_dict(self) -> Dict:
        return {
            "n_units": self.n_units,
            "n_periods": self.n_periods,
            "group_sizes": {str(g): n for g, n in self.group_sizes.items()},
            "min_group_size": self.min_group_size,
            "small_groups": self.small_groups,
            "missing_comparisons": [list(c) for c in self.missing_comparisons],
            "has_never_treated": self.has_never_treated,
            "overlap": self.overlap,
            "flags": self.flags,
        }


def validate(data: PanelDataset, min_group_size: int = 5, comparison: str = "notyet",
             gps_summaries: Optional[Dict[Tuple[int, int], Tuple[float, float]]] = None) -> ValidationReport:
    """
    Check group sizes, comparison availability and (optionally) propensity overlap.

    Args:
        data: the panel.
        min_group_size: groups smaller than this are flagged.
        comparison: ``"notyet"`` or ``"never"``.
        gps_summaries: optional {(g, t): (min_pscore, max_pscore)} from fitted propensity models.
    """
    sizes = {g: int(np.sum(data.group == g)) for g in data.groups}
    small = [g for g, n in sizes.items() if n < min_group_size]
    missing = [(g, t) for g, t in data.cells() if not data.comparison_mask(t, comparison).any()]
    overlap = {}
    for (g, t), (lo, hi) in sorted((gps_summaries or {}).items()):
        overlap[f"{g},{t}"] = {"min": float(lo), "max": float(hi)}

    report = ValidationReport(
        n_units=data.n_units, n_periods=data.n_periods, group_sizes=sizes,
        min_group_size=min_group_size, small_groups=small, missing_comparisons=missing,
        has_never_treated=data.has_never_treated, overlap=overlap,
    )
    for flag in report.flags:
        log.warning(f"validation: {flag}")
    return report


def subset_rows(n: int, subset: Optional[Sequence[bool]]) -> np.ndarray:
    """Normalise an optional row mask to a boolean vector."""
    if subset is None:
        return np.ones(n, dtype=bool)
    mask = np.asarray(subset, dtype=bool)
    if mask.shape != (n,):
        raise ValueError(f"row mask has shape {mask.shape}, expected ({n},)")
    return mask
