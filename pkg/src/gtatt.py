"""
Group-time average treatment effects.

ATT(g, t) by regression adjustment (RA), inverse probability weighting (IPW)
and the doubly-robust (DR) combination, each on the subsample of cohort g plus
the comparison units for period t, and their aggregation to the overall ATT,
per-group averages and event-study effects.
"""

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import statsmodels.api as sm
from scipy import stats
from statsmodels.tools.sm_exceptions import (
    ConvergenceWarning,
    PerfectSeparationError,
    PerfectSeparationWarning,
)

from src.config_manager import ConfigManager
from src.exceptions import (
    EmptyComparison,
    InvalidConfig,
    MissingCell,
    NoComparison,
    NoEligibleGroup,
    OverlapViolation,
    PerfectSeparation,
    RankDeficient,
    RankDeficientOR,
)
from src.inference import build_influence
from src.linproj import RANK_TOLERANCE, ProjectionFit, check_rank, project
from src.logger import LoggerMixin, log
from src.panel import PanelDataset

TERMS = ("change", "level", "z")
SEPARATION_BOUND = 1e-10


class EstimationMethod(str, Enum):
    RA = "ra"
    IPW = "ipw"
    DR = "dr"


def base_index(g: int, base_period: str = "varying") -> int:
    """Base period for cohort g: g - 1 (varying) or 1 (universal)."""
    if base_period == "varying":
        return g - 1
    if base_period == "universal":
        return 1
    raise InvalidConfig(f"unknown base period {base_period!r}", allowed=["varying", "universal"])


def cell_design(data: PanelDataset, g: int, t: int, base_period: str = "varying",
                terms: Sequence[str] = TERMS) -> Tuple[np.ndarray, List[str]]:
    """
    Nuisance regressors for cell (g, t): intercept, X_t - X_b, X_b and Z, with b the base period.

    ``terms`` picks which blocks enter; dropping one deliberately misspecifies the model.
    """
    unknown = set(terms) - set(TERMS)
    if unknown:
        raise InvalidConfig(f"unknown covariate blocks {sorted(unknown)}", allowed=list(TERMS))
    b = base_index(g, base_period)
    columns = [np.ones(data.n_units)]
    names = ["intercept"]
    if "change" in terms:
        columns.extend((data.x_tv[:, t - 1, :] - data.x_tv[:, b - 1, :]).T)
        names.extend(f"d_{x}" for x in data.x_names)
    if "level" in terms:
        columns.extend(data.x_tv[:, b - 1, :].T)
        names.extend(f"{x}_base" for x in data.x_names)
    if "z" in terms:
        columns.extend(data.z_ti.T)
        names.extend(data.z_names)
    return np.column_stack(columns), names


@dataclass(frozen=True)
class GpsFit:
    """
    Generalized propensity score P(G = g | covariates, G = g or comparison at t).

    ``probabilities`` covers all n units (NaN outside ``subset``); ``score``,
    ``log_odds_gradient`` and ``cov_params`` are on the subsample rows and feed
    the influence-function correction.
    """

    g: int
    t: int
    coefficients: np.ndarray
    link: str
    probabilities: np.ndarray
    subset: np.ndarray
    converged: bool
    iterations: int
    score: np.ndarray = field(repr=False)
    log_odds_gradient: np.ndarray = field(repr=False)
    cov_params: np.ndarray = field(repr=False)
    names: Tuple[str, ...] = ()

    @property
    def fitted(self) -> np.ndarray:
        return self.probabilities[self.subset]

    @property
    def min_probability(self) -> float:
        return float(self.fitted.min())

    @property
    def max_probability(self) -> float:
        return float(self.fitted.max())


@dataclass(frozen=True)
class CellNuisance:
    """Everything the influence function of one cell needs."""

    subset: np.ndarray
    treated: np.ndarray
    change: np.ndarray
    or_design: Optional[np.ndarray] = None
    or_fit: Optional[ProjectionFit] = None
    gps: Optional[GpsFit] = None


@dataclass
class GroupTimeResult:
    """One ATT(g, t) estimate with its influence column and nuisance diagnostics."""

    g: int
    t: int
    estimate: float
    n_treated: int
    n_comparison: int
    method: EstimationMethod
    base_period: int
    comparison: str = "notyet"
    influence: Optional[np.ndarray] = field(default=None, repr=False)
    or_coefficients: Optional[np.ndarray] = None
    gps_coefficients: Optional[np.ndarray] = None
    gps_min: Optional[float] = None
    gps_max: Optional[float] = None
    gps_converged: Optional[bool] = None
    nuisance: Optional[CellNuisance] = field(default=None, repr=False)
    se: Optional[float] = None
    ci_lower: Optional[float] = None
    ci_upper: Optional[float] = None

    @property
    def label(self) -> str:
        return f"att_{self.g}_{self.t}"

    @property
    def event_time(self) -> int:
        return self.t - self.g

    def to_dict(self) -> Dict[str, Any]:
        out = {
            "g": self.g,
            "t": self.t,
            "e": self.event_time,
            "estimate": self.estimate,
            "se": self.se,
            "ci_lower": self.ci_lower,
            "ci_upper": self.ci_upper,
            "n_treated": self.n_treated,
            "n_comparison": self.n_comparison,
            "method": self.method.value,
            "base_period": self.base_period,
            "comparison": self.comparison,
        }
        if self.or_coefficients is not None:
            out["or_coefficients"] = self.or_coefficients.tolist()
        if self.gps_coefficients is not None:
            out["gps_coefficients"] = self.gps_coefficients.tolist()
            out["gps_min"] = self.gps_min
            out["gps_max"] = self.gps_max
            out["gps_converged"] = self.gps_converged
        return out


@dataclass
class AggregateResult:
    """An aggregate of group-time effects: overall, per-group or event-study."""

    kind: str
    estimate: float
    influence: np.ndarray = field(repr=False)
    weights: Dict[Tuple[int, int], float] = field(default_factory=dict)
    e: Optional[int] = None
    g: Optional[int] = None
    influence_fixed_shares: Optional[np.ndarray] = field(default=None, repr=False)
    se: Optional[float] = None
    ci_lower: Optional[float] = None
    ci_upper: Optional[float] = None

    @property
    def label(self) -> str:
        if self.kind == "event_study":
            return f"es_{self.e}"
        if self.kind == "group":
            return f"group_{self.g}"
        return "overall"

    def to_dict(self) -> Dict[str, Any]:
        return {
            "label": self.label,
            "kind": self.kind,
            "e": self.e,
            "g": self.g,
            "estimate": self.estimate,
            "se": self.se,
            "ci_lower": self.ci_lower,
            "ci_upper": self.ci_upper,
            "weights": [{"g": g, "t": t, "weight": w} for (g, t), w in sorted(self.weights.items())],
        }


# --- cell set-up ---

def _cell_masks(data: PanelDataset, g: int, t: int, comparison: str) -> Tuple[np.ndarray, np.ndarray]:
    if g not in data.treated_groups or not g <= t <= data.n_periods:
        raise InvalidConfig(f"({g},{t}) is not a post-treatment cell of this panel",
                            g=g, t=t, groups=data.treated_groups)
    if comparison not in ("notyet", "never"):
        raise InvalidConfig(f"unknown comparison group {comparison!r}", allowed=["notyet", "never"])
    treated = np.asarray(data.group) == g
    comp = data.comparison_mask(t, comparison)
    return treated, comp


def _change(data: PanelDataset, g: int, t: int, base_period: str) -> Tuple[np.ndarray, int]:
    b = base_index(g, base_period)
    return data.outcome[:, t - 1] - data.outcome[:, b - 1], b


def _outcome_regression(data: PanelDataset, g: int, t: int, change: np.ndarray, comp: np.ndarray,
                        base_period: str, terms: Sequence[str],
                        rank_tolerance: float) -> Tuple[np.ndarray, ProjectionFit]:
    design, names = cell_design(data, g, t, base_period, terms)
    fit = project(change, design, comp, rank_tolerance=rank_tolerance, names=names,
                  error_cls=RankDeficientOR)
    return design, fit


# --- estimators ---

def att_gt_ra(data: PanelDataset, g: int, t: int, comparison: str = "notyet",
              base_period: str = "varying", or_terms: Sequence[str] = TERMS,
              rank_tolerance: float = RANK_TOLERANCE) -> GroupTimeResult:
    """
    Regression-adjustment ATT(g, t).

    Regresses Y_t - Y_b on (1, X_t - X_b, X_b, Z) over the comparison units and
    averages the treated cohort's change minus its imputed untreated change.
    """
    treated, comp = _cell_masks(data, g, t, comparison)
    if not comp.any():
        raise EmptyComparison(f"no comparison units for ({g},{t})", g=g, t=t, comparison=comparison)
    change, b = _change(data, g, t, base_period)
    design, or_fit = _outcome_regression(data, g, t, change, comp, base_period, or_terms, rank_tolerance)
    estimate = float(np.mean(change[treated] - or_fit.fitted[treated]))

    result = GroupTimeResult(
        g=g, t=t, estimate=estimate, n_treated=int(treated.sum()), n_comparison=int(comp.sum()),
        method=EstimationMethod.RA, base_period=b, comparison=comparison,
        or_coefficients=or_fit.coefficients.copy(),
        nuisance=CellNuisance(subset=treated | comp, treated=treated, change=change,
                              or_design=design, or_fit=or_fit),
    )
    result.influence = build_influence(result, data)
    return result


def _log_odds_gradient(link: str, linear: np.ndarray, X: np.ndarray) -> np.ndarray:
    """d log(p / (1 - p)) / d phi per row."""
    if link == "logit":
        return X
    cdf = stats.norm.cdf(linear)
    scale = stats.norm.pdf(linear) / (cdf * (1.0 - cdf))
    return scale[:, None] * X


def fit_gps(data: PanelDataset, g: int, t: int, link: str = "logit", comparison: str = "notyet",
            base_period: str = "varying", terms: Sequence[str] = TERMS, max_iter: int = 100,
            tolerance: float = 1e-10, rank_tolerance: float = RANK_TOLERANCE) -> GpsFit:
    """
    Maximum-likelihood generalized propensity score for cell (g, t).

    Newton-Raphson through statsmodels; a non-converged Newton run is restarted
    with BFGS from its last iterate.  ``converged`` reports the final state.

    Args:
        data: the panel.
        g: cohort.
        t: period.
        link: ``logit`` or ``probit``.
    """
    if link not in ("logit", "probit"):
        raise InvalidConfig(f"unknown link {link!r}", allowed=["logit", "probit"])
    treated, comp = _cell_masks(data, g, t, comparison)
    if not comp.any() or not treated.any():
        raise NoComparison(f"propensity subsample for ({g},{t}) lacks one class", g=g, t=t,
                           n_treated=int(treated.sum()), n_comparison=int(comp.sum()))
    subset = treated | comp
    design, names = cell_design(data, g, t, base_period, terms)
    X = design[subset]
    y = treated[subset].astype(float)
    check_rank(X, rank_tolerance, names, RankDeficient)

    model = (sm.Logit if link == "logit" else sm.Probit)(y, X)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        try:
            res = model.fit(method="newton", maxiter=max_iter, tol=tolerance, disp=0)
            converged = bool(res.mle_retvals.get("converged", False))
            iterations = int(res.mle_retvals.get("iterations", max_iter))
            if not converged:
                res = model.fit(start_params=res.params, method="bfgs", maxiter=max_iter * 10,
                                gtol=tolerance, disp=0)
                converged = bool(res.mle_retvals.get("converged", False))
                iterations += int(res.mle_retvals.get("iterations", 0))
        except PerfectSeparationError as e:
            raise PerfectSeparation(f"perfect separation in propensity model for ({g},{t})",
                                    g=g, t=t) from e
        except np.linalg.LinAlgError as e:
            raise PerfectSeparation(f"singular propensity Hessian for ({g},{t})", g=g, t=t) from e

    separated = any(issubclass(w.category, PerfectSeparationWarning) for w in caught)
    params = np.asarray(res.params, dtype=float)
    linear = X @ params
    fitted = np.asarray(model.cdf(linear), dtype=float)
    if separated or not np.all(np.isfinite(params)) \
            or fitted.min() < SEPARATION_BOUND or fitted.max() > 1.0 - SEPARATION_BOUND:
        raise PerfectSeparation(
            f"propensity scores pinned at 0 or 1 for ({g},{t})", g=g, t=t,
            min_probability=float(fitted.min()), max_probability=float(fitted.max()),
        )
    if not converged or any(issubclass(w.category, ConvergenceWarning) for w in caught):
        log.warning(f"propensity fit for ({g},{t}) did not converge after {iterations} iterations")

    probabilities = np.full(data.n_units, np.nan)
    probabilities[subset] = fitted
    cov = np.asarray(res.cov_params(), dtype=float)
    log.debug(f"gps ({g},{t}): link={link} iterations={iterations} "
              f"range=[{fitted.min():.4g}, {fitted.max():.4g}]")
    return GpsFit(
        g=g, t=t, coefficients=params, link=link, probabilities=probabilities, subset=subset,
        converged=converged, iterations=iterations,
        score=np.asarray(model.score_obs(params), dtype=float),
        log_odds_gradient=_log_odds_gradient(link, linear, X),
        cov_params=cov, names=tuple(names),
    )


def _check_overlap(gps: GpsFit, comp: np.ndarray, trim_epsilon: float) -> None:
    ps = gps.probabilities[comp]
    if ps.size and ps.max() > 1.0 - trim_epsilon:
        raise OverlapViolation(
            f"propensity score above 1 - {trim_epsilon:g} for a comparison unit in ({gps.g},{gps.t})",
            g=gps.g, t=gps.t, max_probability=float(ps.max()), trim_epsilon=trim_epsilon,
        )


def _gps_for(data: PanelDataset, g: int, t: int, gps: Optional[GpsFit], **kwargs) -> GpsFit:
    if gps is not None:
        if (gps.g, gps.t) != (g, t) or gps.subset.shape[0] != data.n_units:
            raise InvalidConfig("propensity fit belongs to another cell or panel",
                                fit_cell=[gps.g, gps.t], cell=[g, t])
        return gps
    return fit_gps(data, g, t, **kwargs)


def att_gt_ipw(data: PanelDataset, g: int, t: int, gps: Optional[GpsFit] = None,
               comparison: str = "notyet", base_period: str = "varying", link: str = "logit",
               gps_terms: Sequence[str] = TERMS, trim_epsilon: float = 1e-4,
               max_iter: int = 100, tolerance: float = 1e-10) -> GroupTimeResult:
    """
    Hajek-normalised IPW ATT(g, t).

    Comparison units are weighted by the fitted odds p / (1 - p), rescaled to mean 1.
    """
    treated, comp = _cell_masks(data, g, t, comparison)
    gps = _gps_for(data, g, t, gps, link=link, comparison=comparison, base_period=base_period,
                   terms=gps_terms, max_iter=max_iter, tolerance=tolerance)
    _check_overlap(gps, comp, trim_epsilon)
    change, b = _change(data, g, t, base_period)
    odds = gps.probabilities[comp] / (1.0 - gps.probabilities[comp])
    estimate = float(np.mean(change[treated]) - np.sum(odds * change[comp]) / np.sum(odds))

    result = GroupTimeResult(
        g=g, t=t, estimate=estimate, n_treated=int(treated.sum()), n_comparison=int(comp.sum()),
        method=EstimationMethod.IPW, base_period=b, comparison=comparison,
        gps_coefficients=gps.coefficients.copy(), gps_min=gps.min_probability,
        gps_max=gps.max_probability, gps_converged=gps.converged,
        nuisance=CellNuisance(subset=gps.subset, treated=treated, change=change, gps=gps),
    )
    result.influence = build_influence(result, data)
    return result


def att_gt_dr(data: PanelDataset, g: int, t: int, gps: Optional[GpsFit] = None,
              comparison: str = "notyet", base_period: str = "varying", link: str = "logit",
              or_terms: Sequence[str] = TERMS, gps_terms: Sequence[str] = TERMS,
              trim_epsilon: float = 1e-4, max_iter: int = 100, tolerance: float = 1e-10,
              rank_tolerance: float = RANK_TOLERANCE) -> GroupTimeResult:
    """
    Doubly-robust ATT(g, t).

    Mean over the cohort of the change net of the outcome-regression prediction,
    minus the odds-weighted (Hajek) mean of the same quantity over comparisons.
    """
    treated, comp = _cell_masks(data, g, t, comparison)
    if not comp.any():
        raise EmptyComparison(f"no comparison units for ({g},{t})", g=g, t=t, comparison=comparison)
    gps = _gps_for(data, g, t, gps, link=link, comparison=comparison, base_period=base_period,
                   terms=gps_terms, max_iter=max_iter, tolerance=tolerance, rank_tolerance=rank_tolerance)
    _check_overlap(gps, comp, trim_epsilon)
    change, b = _change(data, g, t, base_period)
    design, or_fit = _outcome_regression(data, g, t, change, comp, base_period, or_terms, rank_tolerance)

    resid = change - or_fit.fitted
    odds = gps.probabilities[comp] / (1.0 - gps.probabilities[comp])
    estimate = float(np.mean(resid[treated]) - np.sum(odds * resid[comp]) / np.sum(odds))

    result = GroupTimeResult(
        g=g, t=t, estimate=estimate, n_treated=int(treated.sum()), n_comparison=int(comp.sum()),
        method=EstimationMethod.DR, base_period=b, comparison=comparison,
        or_coefficients=or_fit.coefficients.copy(),
        gps_coefficients=gps.coefficients.copy(), gps_min=gps.min_probability,
        gps_max=gps.max_probability, gps_converged=gps.converged,
        nuisance=CellNuisance(subset=treated | comp, treated=treated, change=change,
                              or_design=design, or_fit=or_fit, gps=gps),
    )
    result.influence = build_influence(result, data)
    return result


# --- aggregation ---

def _cell_lookup(results: Sequence[GroupTimeResult]) -> Dict[Tuple[int, int], GroupTimeResult]:
    return {(r.g, r.t): r for r in results}


def _require(lookup: Dict[Tuple[int, int], GroupTimeResult], g: int, t: int) -> GroupTimeResult:
    try:
        return lookup[(g, t)]
    except KeyError:
        raise MissingCell(f"no estimate for cell ({g},{t})", g=g, t=t)


def _share_influence(data: PanelDataset, groups: Sequence[int], shares: Dict[int, float]) -> Dict[int, np.ndarray]:
    """Influence of the estimated shares P(G = g | G in groups)."""
    group = np.asarray(data.group)
    member = np.isin(group, groups)
    base = member.mean()
    return {g: ((group == g).astype(float) - shares[g] * member) / base for g in groups}


def aggregate_group(results: Sequence[GroupTimeResult], data: PanelDataset, g: int) -> AggregateResult:
    """Average of ATT(g, t) over the cohort's post-treatment periods."""
    lookup = _cell_lookup(results)
    cells = [_require(lookup, g, t) for t in range(g, data.n_periods + 1)]
    w = 1.0 / len(cells)
    estimate = float(sum(w * r.estimate for r in cells))
    influence = w * np.sum([r.influence for r in cells], axis=0)
    return AggregateResult(
        kind="group", estimate=estimate, influence=influence, g=g,
        weights={(r.g, r.t): w for r in cells}, influence_fixed_shares=influence,
    )


def aggregate_overall(results: Sequence[GroupTimeResult], data: PanelDataset) -> AggregateResult:
    """
    Overall ATT: sum over cohorts of p-bar_g times the cohort's mean post-treatment ATT(g, t).

    The influence column adds the share-estimation term for p-bar_g.
    """
    groups = data.treated_groups
    shares = data.treated_shares()
    by_group = {g: aggregate_group(results, data, g) for g in groups}
    share_if = _share_influence(data, groups, shares)

    estimate = float(sum(shares[g] * by_group[g].estimate for g in groups))
    fixed = np.sum([shares[g] * by_group[g].influence for g in groups], axis=0)
    influence = fixed + np.sum([by_group[g].estimate * share_if[g] for g in groups], axis=0)
    weights = {
        cell: shares[g] * w for g in groups for cell, w in by_group[g].weights.items()
    }
    return AggregateResult(kind="overall", estimate=estimate, influence=influence, weights=weights,
                           influence_fixed_shares=fixed)


def aggregate_event_study(results: Sequence[GroupTimeResult], data: PanelDataset, e: int) -> AggregateResult:
    """
    Event-study effect at event time e: ATT(g, g + e) averaged over eligible cohorts,
    weighted by their shares among eligible ever-treated units.
    """
    T = data.n_periods
    eligible = [g for g in data.treated_groups if 2 <= g + e <= T and e >= 0]
    if not eligible:
        raise NoEligibleGroup(f"no cohort is observed {e} periods after adoption", e=e)
    lookup = _cell_lookup(results)
    cells = {g: _require(lookup, g, g + e) for g in eligible}

    group = np.asarray(data.group)
    counts = {g: float(np.sum(group == g)) for g in eligible}
    total = sum(counts.values())
    shares = {g: counts[g] / total for g in eligible}
    share_if = _share_influence(data, eligible, shares)

    estimate = float(sum(shares[g] * cells[g].estimate for g in eligible))
    fixed = np.sum([shares[g] * cells[g].influence for g in eligible], axis=0)
    influence = fixed + np.sum([cells[g].estimate * share_if[g] for g in eligible], axis=0)
    return AggregateResult(
        kind="event_study", estimate=estimate, influence=influence, e=e,
        weights={(g, g + e): shares[g] for g in eligible}, influence_fixed_shares=fixed,
    )


def event_times(data: PanelDataset) -> List[int]:
    """Event times with at least one eligible cohort."""
    if not data.treated_groups:
        return []
    return list(range(0, data.n_periods - min(data.treated_groups) + 1))


class GroupTimeEstimator(LoggerMixin):
    """
    Runs one estimator over every post-treatment (g, t) cell with configured options.
    """

    def __init__(self, config: Optional[ConfigManager] = None, **overrides: Any):
        """
        Args:
            config: ConfigManager supplying the [ESTIMATION] and [LINPROJ] settings.
            **overrides: method, comparison, base_period, link, trim_epsilon, max_iter,
                tolerance, rank_tolerance, threads, or_terms or gps_terms, taking precedence
                over config. The term lists pick the covariate blocks of each nuisance model.
        """
        settings = {
            "method": "dr", "comparison": "notyet", "base_period": "varying", "link": "logit",
            "trim_epsilon": 1e-4, "max_iter": 100, "tolerance": 1e-10,
            "rank_tolerance": RANK_TOLERANCE, "threads": 1, "or_terms": TERMS, "gps_terms": TERMS,
        }
        if config is not None:
            settings.update({
                "method": config.get("ESTIMATION", "method", fallback="dr"),
                "comparison": config.get("ESTIMATION", "comparison", fallback="notyet"),
                "base_period": config.get("ESTIMATION", "base_period", fallback="varying"),
                "link": config.get("ESTIMATION", "pscore_link", fallback="logit"),
                "trim_epsilon": config.get_float("ESTIMATION", "trim_epsilon", fallback=1e-4),
                "max_iter": config.get_int("ESTIMATION", "pscore_max_iter", fallback=100),
                "tolerance": config.get_float("ESTIMATION", "pscore_tolerance", fallback=1e-10),
                "rank_tolerance": config.get_float("LINPROJ", "rank_tolerance", fallback=RANK_TOLERANCE),
                "threads": config.threads(),
            })
        settings.update({k: v for k, v in overrides.items() if v is not None})
        try:
            self.method = EstimationMethod(settings["method"])
        except ValueError:
            raise InvalidConfig(f"unknown method {settings['method']!r}",
                                allowed=[m.value for m in EstimationMethod])
        self.comparison = settings["comparison"]
        self.base_period = settings["base_period"]
        self.link = settings["link"]
        self.trim_epsilon = float(settings["trim_epsilon"])
        self.max_iter = int(settings["max_iter"])
        self.tolerance = float(settings["tolerance"])
        self.rank_tolerance = float(settings["rank_tolerance"])
        self.threads = max(1, int(settings["threads"]))
        self.or_terms = tuple(settings["or_terms"])
        self.gps_terms = tuple(settings["gps_terms"])
        base_index(2, self.base_period)

    def options(self) -> Dict[str, Any]:
        return {
            "method": self.method.value, "comparison": self.comparison, "base_period": self.base_period,
            "link": self.link, "trim_epsilon": self.trim_epsilon,
        }

    def estimate_cell(self, data: PanelDataset, g: int, t: int) -> GroupTimeResult:
        common = {"comparison": self.comparison, "base_period": self.base_period}
        or_opts = {"or_terms": self.or_terms, "rank_tolerance": self.rank_tolerance}
        gps_opts = {"link": self.link, "trim_epsilon": self.trim_epsilon,
                    "max_iter": self.max_iter, "tolerance": self.tolerance, "gps_terms": self.gps_terms}
        if self.method is EstimationMethod.RA:
            result = att_gt_ra(data, g, t, **common, **or_opts)
        elif self.method is EstimationMethod.IPW:
            result = att_gt_ipw(data, g, t, **common, **gps_opts)
        else:
            result = att_gt_dr(data, g, t, **common, **or_opts, **gps_opts)
        self.logger.debug(f"ATT({g},{t}) = {result.estimate:.6g} "
                          f"[treated={result.n_treated} comparison={result.n_comparison}]")
        return result

    def estimate_all(self, data: PanelDataset) -> List[GroupTimeResult]:
        """Every post-treatment cell, ordered by (g, t) whatever the thread count."""
        cells = data.cells()
        self.logger.info(f"Estimating {len(cells)} group-time cells with {self.method.value} "
                         f"(comparison={self.comparison}, base={self.base_period}, threads={self.threads})")
        if self.threads == 1 or len(cells) < 2:
            return [self.estimate_cell(data, g, t) for g, t in cells]
        with ThreadPoolExecutor(max_workers=min(self.threads, len(cells))) as pool:
            return list(pool.map(lambda c: self.estimate_cell(data, *c), cells))

    def aggregate(self, results: Sequence[GroupTimeResult], data: PanelDataset) -> List[AggregateResult]:
        """Overall effect followed by the event-study effects for every available event time."""
        out = [aggregate_overall(results, data)]
        out.extend(aggregate_event_study(results, data, e) for e in event_times(data))
        return out

    @staticmethod
    def gps_summaries(results: Sequence[GroupTimeResult]) -> Dict[Tuple[int, int], Tuple[float, float]]:
        return {(r.g, r.t): (r.gps_min, r.gps_max) for r in results if r.gps_min is not None}


def results_frame(results: Sequence[GroupTimeResult]) -> pd.DataFrame:
    """One row per (g, t) cell without the coefficient vectors."""
    rows = []
    for r in results:
        row = r.to_dict()
        row.pop("or_coefficients", None)
        row.pop("gps_coefficients", None)
        rows.append(row)
    return pd.DataFrame.from_records(rows)
