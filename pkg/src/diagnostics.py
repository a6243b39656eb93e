"""
Covariate balance under TWFE implicit weights, with a propensity-score benchmark.

Each table row applies a pair of weights to one covariate function and
compares the weighted treated mean with the weighted comparison mean.  Rows
are grouped in panels: ``change`` (X_t - X_base), ``post_level`` (X_t),
``pre_level`` (X_{g-1}), ``time_invariant`` (Z) and ``custom`` (user
transforms).  Only the change panel is balanced by construction, and only
where the regression itself includes it (two-period tables and the
multi-period overall table); the other panels are diagnostic.
"""

from dataclasses import dataclass, field
from itertools import combinations
from typing import Any, Callable, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from src.config_manager import ConfigManager
from src.exceptions import InvalidConfig, PropensityNearOne, UnknownFunction
from src.logger import LoggerMixin, log
from src.panel import PanelDataset, TwoPeriodView, two_period_view
from src.twfe import TwfeWeights

PANELS = ("change", "post_level", "pre_level", "time_invariant", "custom")
PROPENSITY_CEILING = 1.0 - 1e-6
OVERALL = "overall"

CovariateFunction = Callable[[Dict[str, np.ndarray]], np.ndarray]

_REGISTRY: Dict[str, CovariateFunction] = {}


def register_function(name: str, function: CovariateFunction) -> None:
    """
    Make ``function`` selectable by ``name`` in balance audits.

    The function receives the per-unit column dictionary of a table
    (``d_<x>``, ``<x>_post``, ``<x>_pre`` and the Z names) and returns one value per unit.
    """
    if ":" in name:
        raise InvalidConfig(f"function name {name!r} may not contain ':'")
    _REGISTRY[name] = function


def registered_functions() -> List[str]:
    return sorted(_REGISTRY)


@dataclass
class BalanceReport:
    """
    Balance tables, one row per (table, function).

    ``table`` is ``"overall"`` or ``"g,t"``; two-period reports have a single
    ``"2,2"`` table.
    """

    source: str
    rows: pd.DataFrame
    two_period: bool
    notes: Dict[str, str] = field(default_factory=dict)

    @property
    def tables(self) -> List[str]:
        return list(dict.fromkeys(self.rows["table"]))

    def table(self, name: str) -> pd.DataFrame:
        return self.rows[self.rows["table"] == name].reset_index(drop=True)

    def panel(self, panel: str, table: Optional[str] = None) -> pd.DataFrame:
        rows = self.rows[self.rows["panel"] == panel]
        if table is not None:
            rows = rows[rows["table"] == table]
        return rows.reset_index(drop=True)

    def max_abs_difference(self, panel: str, table: Optional[str] = None) -> float:
        rows = self.panel(panel, table)
        return float(rows["difference"].abs().max()) if len(rows) else 0.0

    def max_abs_std_difference(self, panel: str, table: Optional[str] = None) -> float:
        rows = self.panel(panel, table)
        return float(rows["std_difference"].abs().max()) if len(rows) else 0.0

    def to_frame(self) -> pd.DataFrame:
        return self.rows.copy()

    def to_dict(self) -> Dict[str, Any]:
        tables = {}
        for name in self.tables:
            rows = self.table(name)
            tables[name] = {
                panel: rows[rows["panel"] == panel].drop(columns=["table", "panel"]).to_dict(orient="records")
                for panel in PANELS if (rows["panel"] == panel).any()
            }
        return {"source": self.source, "two_period": self.two_period, "notes": self.notes, "tables": tables}


# --- covariate functions ---

def _unit_columns(x_post: np.ndarray, x_base: np.ndarray, x_pre: np.ndarray, z: np.ndarray,
                  x_names: Sequence[str], z_names: Sequence[str]) -> Dict[str, Tuple[str, np.ndarray]]:
    """name -> (panel, values) for the default function set."""
    out: Dict[str, Tuple[str, np.ndarray]] = {}
    for j, x in enumerate(x_names):
        out[f"d_{x}"] = ("change", x_post[:, j] - x_base[:, j])
    for j, x in enumerate(x_names):
        out[f"{x}_post"] = ("post_level", x_post[:, j])
    for j, x in enumerate(x_names):
        out[f"{x}_pre"] = ("pre_level", x_pre[:, j])
    for j, name in enumerate(z_names):
        out[name] = ("time_invariant", z[:, j])
    return out


def _default_names(x_names: Sequence[str], z_names: Sequence[str]) -> List[str]:
    return [*(f"d_{x}" for x in x_names), *(f"{x}_post" for x in x_names),
            *(f"{x}_pre" for x in x_names), *z_names]


def _cell_columns(data: PanelDataset, g: int, t: int, change_base: int) -> Dict[str, Tuple[str, np.ndarray]]:
    return _unit_columns(
        data.x_tv[:, t - 1, :], data.x_tv[:, change_base - 1, :], data.x_tv[:, g - 2, :],
        data.z_ti, data.x_names, data.z_names,
    )


def _view_columns(view: TwoPeriodView) -> Dict[str, Tuple[str, np.ndarray]]:
    return _unit_columns(view.x_post, view.x_pre, view.x_pre, view.z, view.x_names, view.z_names)


def expand_functions(base: Sequence[str], functions: Optional[Iterable[str]] = None,
                     include_squares: bool = False, include_interactions: bool = False) -> List[str]:
    """Extra selectors on top of the defaults: explicit ones, then squares, then pairwise interactions."""
    extra = [f for f in (functions or []) if f not in base]
    if include_squares:
        extra += [f"square:{c}" for c in base]
    if include_interactions:
        extra += [f"interact:{a}:{b}" for a, b in combinations(base, 2)]
    return list(dict.fromkeys(extra))


def evaluate_function(selector: str, columns: Mapping[str, np.ndarray]) -> np.ndarray:
    """Values of one function selector given the per-unit columns."""
    if selector in columns:
        return columns[selector]
    parts = selector.split(":")
    try:
        if parts[0] == "square" and len(parts) == 2:
            return columns[parts[1]] ** 2
        if parts[0] == "interact" and len(parts) == 3:
            return columns[parts[1]] * columns[parts[2]]
    except KeyError as e:
        raise UnknownFunction(f"unknown column {e.args[0]!r} in {selector!r}",
                              function=selector, available=sorted(columns))
    if selector in _REGISTRY:
        values = np.asarray(_REGISTRY[selector](dict(columns)), dtype=float)
        first = next(iter(columns.values()), None)
        if first is not None and values.shape != first.shape:
            raise UnknownFunction(f"function {selector!r} returned shape {values.shape}", function=selector)
        return values
    raise UnknownFunction(f"unknown covariate function {selector!r}", function=selector,
                          available=sorted(columns), registered=registered_functions())


def _functions_for(columns: Dict[str, Tuple[str, np.ndarray]], extra: Sequence[str]) -> List[Tuple[str, str, np.ndarray]]:
    plain = {name: values for name, (_, values) in columns.items()}
    out = [(name, panel, values) for name, (panel, values) in columns.items()]
    out += [(f, "custom", evaluate_function(f, plain)) for f in extra]
    return out


def _pooled_sd(values: np.ndarray) -> float:
    return float(np.std(values, ddof=1)) if values.size > 1 else 0.0


def _row(table: str, name: str, panel: str, treated: float, comparison: float, sd: float,
         exact: bool) -> Dict[str, Any]:
    difference = treated - comparison
    return {
        "table": table,
        "panel": panel,
        "function": name,
        "treated_mean": treated,
        "comparison_mean": comparison,
        "difference": difference,
        "std_difference": difference / sd if sd > 0 else 0.0,
        "exact": exact,
    }


def _cell_rows(table: str, functions: List[Tuple[str, str, np.ndarray]], w1: np.ndarray, treated: np.ndarray,
               w0: np.ndarray, comparison: np.ndarray, exact_change: bool) -> List[Dict[str, Any]]:
    pooled = treated | comparison
    rows = []
    for name, panel, values in functions:
        rows.append(_row(
            table, name, panel,
            float(np.mean(w1[treated] * values[treated])),
            float(np.mean(w0[comparison] * values[comparison])) if comparison.any() else 0.0,
            _pooled_sd(values[pooled]),
            exact_change and panel == "change",
        ))
    return rows


def _overall_rows(cell_rows: Dict[Tuple[int, int], List[Dict[str, Any]]], cell_weights: Dict[Tuple[int, int], float],
                  sds: Dict[str, float], remainder: Dict[str, float], exact_change: bool) -> List[Dict[str, Any]]:
    if not cell_rows:
        return []
    names = [(r["function"], r["panel"]) for r in next(iter(cell_rows.values()))]
    rows = []
    for j, (name, panel) in enumerate(names):
        treated = sum(cell_weights[c] * rows_[j]["treated_mean"] for c, rows_ in cell_rows.items())
        comparison = sum(cell_weights[c] * rows_[j]["comparison_mean"] for c, rows_ in cell_rows.items())
        comparison -= remainder.get(name, 0.0)
        rows.append(_row(OVERALL, name, panel, treated, comparison, sds[name],
                         exact_change and panel == "change"))
    return rows


def _notes(exact: str) -> Dict[str, str]:
    return {
        "change": exact,
        "post_level": "diagnostic",
        "pre_level": "diagnostic",
        "time_invariant": "diagnostic",
        "custom": "diagnostic",
    }


# --- TWFE implicit weights ---

def _require_implicit(weights: TwfeWeights) -> None:
    if not weights.variant.implicit:
        raise InvalidConfig("balance and reconstruction need implicit weights", variant=weights.variant.value)


def balance_audit(weights: TwfeWeights, data: Union[PanelDataset, TwoPeriodView],
                  functions: Optional[Iterable[str]] = None, include_squares: bool = False,
                  include_interactions: bool = False) -> BalanceReport:
    """
    Balance of covariate functions under the TWFE implicit weights.

    Two-period: E[w1 f | D = 1] against E[w0 f | D = 0].  Multi-period: one table
    per (g, t) with E[w1 f | G = g] against E[w0 f | D_t = 0], change measured from
    period 1 (the path the weights apply to), plus an overall table aggregated with
    p-bar_g / (T - g + 1) and the pre-adoption remainder.

    Args:
        weights: implicit TwfeWeights.
        data: the panel the weights came from.
        functions: extra selectors: column names, ``square:<col>``,
            ``interact:<a>:<b>`` or a registered function name.
    """
    _require_implicit(weights)
    if weights.two_period:
        view = data if isinstance(data, TwoPeriodView) else two_period_view(data)
        columns = _view_columns(view)
        extra = expand_functions(list(columns), functions, include_squares, include_interactions)
        treated = view.treated
        rows = _cell_rows("2,2", _functions_for(columns, extra), weights.treated, treated,
                          weights.comparison, ~treated, exact_change=True)
        report = BalanceReport("twfe_implicit", pd.DataFrame.from_records(rows), True,
                               _notes("exact by construction"))
        log.debug(f"balance audit: max |change difference| = {report.max_abs_difference('change'):.3g}")
        return report

    T = data.n_periods
    group = np.asarray(data.group)
    p_bar = data.treated_shares()
    cell_rows: Dict[Tuple[int, int], List[Dict[str, Any]]] = {}
    cell_weights: Dict[Tuple[int, int], float] = {}
    pooled_values: Dict[str, List[np.ndarray]] = {}
    extra = expand_functions(_default_names(data.x_names, data.z_names), functions,
                             include_squares, include_interactions)
    for g, t in weights.cells:
        columns = _cell_columns(data, g, t, change_base=1)
        treated = group == g
        comparison = group > t
        funcs = _functions_for(columns, extra)
        cell_rows[(g, t)] = _cell_rows(f"{g},{t}", funcs, weights.treated[:, t - 1], treated,
                                       weights.comparison_cells[(g, t)], comparison, exact_change=False)
        cell_weights[(g, t)] = p_bar[g] / (T - g + 1)
        for name, _, values in funcs:
            pooled_values.setdefault(name, []).append(values[treated | comparison])

    # pre-adoption periods carry only comparison paths of the change functions
    remainder = {}
    for j, x in enumerate(data.x_names):
        path = data.x_tv[:, :, j] - data.x_tv[:, :1, j]
        remainder[f"d_{x}"] = float(np.mean(np.sum(weights.remainder * path, axis=1)))
    sds = {name: _pooled_sd(np.concatenate(parts)) for name, parts in pooled_values.items()}

    records = _overall_rows(cell_rows, cell_weights, sds, remainder, exact_change=True)
    for rows in cell_rows.values():
        records.extend(rows)
    report = BalanceReport("twfe_implicit", pd.DataFrame.from_records(records), False,
                           _notes("exact in the overall table only"))
    log.debug(f"balance audit: {len(cell_rows)} cells, overall max |change difference| = "
              f"{report.max_abs_difference('change', OVERALL):.3g}")
    return report


def reconstruct_alpha(weights: TwfeWeights, data: Union[PanelDataset, TwoPeriodView]) -> float:
    """
    The weighted outcome contrast that the implicit weights say equals alpha.

    A mismatch with the fitted alpha means the weights were corrupted.
    """
    _require_implicit(weights)
    if weights.two_period:
        view = data if isinstance(data, TwoPeriodView) else two_period_view(data)
        treated = view.treated
        return float(np.mean(weights.treated[treated] * view.dy[treated])
                     - np.mean(weights.comparison[~treated] * view.dy[~treated]))

    T = data.n_periods
    group = np.asarray(data.group)
    p_bar = data.treated_shares()
    path = data.outcome - data.outcome[:, :1]
    total = 0.0
    for g, t in weights.cells:
        treated = group == g
        comparison = group > t
        contrast = np.mean(weights.treated[treated, t - 1] * path[treated, t - 1])
        if comparison.any():
            contrast -= np.mean(weights.comparison_cells[(g, t)][comparison] * path[comparison, t - 1])
        total += contrast * p_bar[g] / (T - g + 1)
    return float(total + np.mean(np.sum(weights.remainder * path, axis=1)))


# --- propensity-score benchmark ---

GpsInput = Union[Any, Mapping[Tuple[int, int], Any], Sequence[Any]]


def _gps_by_cell(gps_model: GpsInput) -> Dict[Tuple[int, int], Any]:
    if isinstance(gps_model, Mapping):
        return dict(gps_model)
    if isinstance(gps_model, (list, tuple)):
        return {(m.g, m.t): m for m in gps_model}
    return {(gps_model.g, gps_model.t): gps_model}


def balancing_weights(gps: Any, comparison: np.ndarray) -> np.ndarray:
    """
    Comparison weights p_g(X, Z) / P(D_t = 0 | X, Z), normalised to mean one.

    Within the cell subsample this is the fitted odds pi / (1 - pi).
    """
    ps = gps.probabilities[comparison]
    if ps.size and ps.max() > PROPENSITY_CEILING:
        raise PropensityNearOne(
            f"fitted propensity above {PROPENSITY_CEILING} for a comparison unit in ({gps.g},{gps.t})",
            g=gps.g, t=gps.t, max_probability=float(ps.max()),
        )
    odds = ps / (1.0 - ps)
    out = np.full(comparison.shape[0], np.nan)
    out[comparison] = odds / odds.mean()
    return out


def ipw_benchmark_balance(data: PanelDataset, gps_model: GpsInput, functions: Optional[Iterable[str]] = None,
                          include_squares: bool = False, include_interactions: bool = False) -> BalanceReport:
    """
    Balance under propensity-score weights, the benchmark for the implicit TWFE weights.

    Treated units get weight one; comparisons get ``balancing_weights``.  Per-cell
    change is measured from the cohort's base period g - 1.  With several cells
    an overall table aggregates them with p-bar_g / (T - g + 1), renormalised over
    the cells supplied.
    """
    fits = _gps_by_cell(gps_model)
    if not fits:
        raise InvalidConfig("no propensity fits supplied")
    T = data.n_periods
    group = np.asarray(data.group)
    p_bar = data.treated_shares()
    cell_rows: Dict[Tuple[int, int], List[Dict[str, Any]]] = {}
    cell_weights: Dict[Tuple[int, int], float] = {}
    pooled_values: Dict[str, List[np.ndarray]] = {}
    for (g, t), gps in sorted(fits.items()):
        treated = group == g
        comparison = gps.subset & ~treated
        w0 = balancing_weights(gps, comparison)
        columns = _cell_columns(data, g, t, change_base=g - 1)
        funcs = _functions_for(columns, expand_functions(list(columns), functions, include_squares,
                                                         include_interactions))
        cell_rows[(g, t)] = _cell_rows(f"{g},{t}", funcs, np.ones(data.n_units), treated, w0, comparison,
                                       exact_change=False)
        cell_weights[(g, t)] = p_bar[g] / (T - g + 1)
        for name, _, values in funcs:
            pooled_values.setdefault(name, []).append(values[treated | comparison])

    records: List[Dict[str, Any]] = []
    if len(cell_rows) > 1:
        total = sum(cell_weights.values())
        normalised = {c: w / total for c, w in cell_weights.items()}
        sds = {name: _pooled_sd(np.concatenate(parts)) for name, parts in pooled_values.items()}
        records = _overall_rows(cell_rows, normalised, sds, {}, exact_change=False)
    for rows in cell_rows.values():
        records.extend(rows)
    return BalanceReport("gps_benchmark", pd.DataFrame.from_records(records), T == 2,
                         _notes("diagnostic"))


class BalanceAuditor(LoggerMixin):
    """Balance audits with the function set taken from the [DIAGNOSTICS] settings."""

    def __init__(self, config: Optional[ConfigManager] = None, functions: Optional[Sequence[str]] = None):
        self.include_squares = config.get_boolean("DIAGNOSTICS", "include_squares", fallback=False) \
            if config else False
        self.include_interactions = config.get_boolean("DIAGNOSTICS", "include_interactions", fallback=False) \
            if config else False
        self.functions = list(functions or [])

    def audit(self, weights: TwfeWeights, data: PanelDataset) -> BalanceReport:
        report = balance_audit(weights, data, self.functions, self.include_squares, self.include_interactions)
        self.logger.info(f"Balance audit: {len(report.tables)} table(s), {len(report.rows)} rows")
        return report

    def benchmark(self, data: PanelDataset, gps_model: GpsInput) -> BalanceReport:
        report = ipw_benchmark_balance(data, gps_model, self.functions, self.include_squares,
                                       self.include_interactions)
        self.logger.info(f"Propensity benchmark balance: {len(report.tables)} table(s)")
        return report

    def self_check(self, weights: TwfeWeights, data: PanelDataset, tolerance: float = 1e-8) -> float:
        """Reconstructed alpha; logs an error if it strays from the fitted value."""
        value = reconstruct_alpha(weights, data)
        if abs(value - weights.alpha) > tolerance * max(1.0, abs(weights.alpha)):
            self.logger.error(f"implicit weights reconstruct {value:.12g}, fitted alpha is {weights.alpha:.12g}")
        return value
