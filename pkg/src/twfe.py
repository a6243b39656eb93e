"""
Two-way fixed-effects fits and their decompositions.

Two-period mode works on first differences (dY on D and [1, dX]); multi-period
mode runs the within regression of Y-ddot on D-ddot and X-ddot pooled over all
unit-periods.  Both keep the residualised treatment r = D - L(D | covariates),
from which every weight variant and decomposition below is built.
"""

from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np
import pandas as pd

from src.config_manager import ConfigManager
from src.exceptions import (
    InvalidConfig,
    NoResidualTreatmentVariation,
    NoVariationInD,
    NumericalError,
    RankDeficient,
)
from src.linproj import DEGENERATE_TOLERANCE, RANK_TOLERANCE, fwl_components, project
from src.logger import LoggerMixin, log
from src.panel import DemeanedPanel, PanelDataset, TwoPeriodView, two_period_view

NEAR_ZERO_BAND = 1e-6

PanelLike = Union[PanelDataset, TwoPeriodView]


class FitMode(str, Enum):
    TWO_PERIOD = "two_period"
    MULTI_PERIOD = "multi_period"


class WeightVariant(str, Enum):
    TWO_PERIOD_CONDITIONAL = "two_period_conditional_att"
    TWO_PERIOD_IMPLICIT = "two_period_implicit"
    MULTI_PERIOD_CONDITIONAL = "multi_period_conditional_att"
    MULTI_PERIOD_IMPLICIT = "multi_period_implicit"

    @property
    def implicit(self) -> bool:
        return self in (WeightVariant.TWO_PERIOD_IMPLICIT, WeightVariant.MULTI_PERIOD_IMPLICIT)


@dataclass(frozen=True)
class TwfeFit:
    """
    A fitted TWFE regression.

    ``projection`` is L(D | dX) per unit in two-period mode and X-ddot'Gamma per
    unit-period in multi-period mode; ``residual`` is the matching D - projection.
    """

    alpha: float
    beta: np.ndarray
    gamma: np.ndarray
    alpha_den: float
    mode: FitMode
    projection: np.ndarray
    residual: np.ndarray
    intercept: float = 0.0
    n_units: int = 0
    n_periods: int = 2

    def to_dict(self) -> Dict[str, Any]:
        return {
            "mode": self.mode.value,
            "alpha": self.alpha,
            "alpha_den": self.alpha_den,
            "beta": self.beta.tolist(),
            "gamma": self.gamma.tolist(),
            "intercept": self.intercept,
            "n_units": self.n_units,
            "n_periods": self.n_periods,
        }


def _as_view(data: PanelLike) -> TwoPeriodView:
    return data if isinstance(data, TwoPeriodView) else two_period_view(data)


def fit_two_period(view: PanelLike, rank_tolerance: float = RANK_TOLERANCE,
                   degenerate_tolerance: float = DEGENERATE_TOLERANCE) -> TwfeFit:
    """
    OLS of dY on (D, 1, dX).

    Args:
        view: two-period view (a T = 2 PanelDataset is converted).

    Returns:
        TwfeFit with alpha, the dX coefficients as beta and L(D | 1, dX) as gamma.
    """
    view = _as_view(view)
    d = view.d
    if d.min() == d.max():
        raise NoVariationInD("treatment does not vary across units", share_treated=float(d.mean()))

    names = ["intercept", *[f"d_{x}" for x in view.x_names]]
    try:
        fwl = fwl_components(d, view.dx, view.dy, rank_tolerance=rank_tolerance,
                             degenerate_tolerance=degenerate_tolerance,
                             error_cls=NoResidualTreatmentVariation)
    except RankDeficient as e:
        cols = e.context.get("columns", [])
        raise RankDeficient(e.message, columns=[names[j] if isinstance(j, int) else j for j in cols]) from e

    joint = project(view.dy, np.column_stack([d, view.dx]), rank_tolerance=rank_tolerance,
                    names=["d", *names])
    fit = TwfeFit(
        alpha=fwl.ratio,
        beta=joint.coefficients[2:].copy(),
        gamma=fwl.projection.coefficients.copy(),
        alpha_den=fwl.denominator,
        mode=FitMode.TWO_PERIOD,
        projection=fwl.projection.fitted.copy(),
        residual=fwl.residual.copy(),
        intercept=float(joint.coefficients[1]),
        n_units=view.n,
        n_periods=2,
    )
    log.info(f"two-period TWFE: alpha={fit.alpha:.6g} alpha_den={fit.alpha_den:.6g} n={view.n}")
    return fit


def fit_multi_period(data: PanelDataset, rank_tolerance: float = RANK_TOLERANCE,
                     degenerate_tolerance: float = DEGENERATE_TOLERANCE) -> TwfeFit:
    """
    Within regression of Y-ddot on D-ddot and X-ddot, pooled over (i, t).

    alpha = E[r * Y-ddot] / E[r^2] with r = D-ddot - X-ddot'Gamma.
    """
    if not data.treated_groups:
        raise NoVariationInD("no unit is ever treated")
    demeaned = DemeanedPanel.from_panel(data)
    n, T, k = data.n_units, data.n_periods, data.k
    y = demeaned.y_dd.reshape(-1)
    d = demeaned.d_dd.reshape(-1)
    x = demeaned.x_dd.reshape(n * T, k)

    fwl = fwl_components(d, x, y, rank_tolerance=rank_tolerance,
                         degenerate_tolerance=degenerate_tolerance,
                         error_cls=NoResidualTreatmentVariation)
    if k:
        joint = project(y, np.column_stack([d, x]), rank_tolerance=rank_tolerance,
                        names=["d", *data.x_names])
        beta = joint.coefficients[1:].copy()
    else:
        beta = np.zeros(0)

    fit = TwfeFit(
        alpha=fwl.ratio,
        beta=beta,
        gamma=fwl.projection.coefficients.copy(),
        alpha_den=fwl.denominator,
        mode=FitMode.MULTI_PERIOD,
        projection=fwl.projection.fitted.reshape(n, T).copy(),
        residual=fwl.residual.reshape(n, T).copy(),
        n_units=n,
        n_periods=T,
    )
    log.info(f"multi-period TWFE: alpha={fit.alpha:.6g} alpha_den={fit.alpha_den:.6g} n={n} T={T}")
    return fit


# --- weights ---

@dataclass(frozen=True)
class TwfeWeights:
    """
    Per-observation TWFE weights.

    Conditional-ATT variants fill ``weights``; implicit variants fill ``treated``
    plus ``comparison`` (two-period) or ``comparison_cells`` (multi-period, one
    vector per (g, t) cell over units with D_t = 0).  ``remainder`` carries the
    per unit-period factor for periods before the first adoption, where no
    (g, t) cell exists.
    """

    variant: WeightVariant
    alpha: float
    unit_ids: Tuple
    group: np.ndarray
    n_periods: int
    projection: np.ndarray
    weights: Optional[np.ndarray] = None
    treated: Optional[np.ndarray] = None
    comparison: Optional[np.ndarray] = None
    comparison_cells: Dict[Tuple[int, int], np.ndarray] = field(default_factory=dict)
    remainder: Optional[np.ndarray] = None
    near_zero_band: float = NEAR_ZERO_BAND

    @property
    def two_period(self) -> bool:
        return self.variant in (WeightVariant.TWO_PERIOD_CONDITIONAL, WeightVariant.TWO_PERIOD_IMPLICIT)

    @property
    def cells(self) -> List[Tuple[int, int]]:
        T = self.n_periods
        return [(g, t) for g in sorted(set(int(x) for x in self.group) - {T + 1}) for t in range(g, T + 1)]

    def _distribution(self, values: np.ndarray) -> Dict[str, float]:
        values = values[np.isfinite(values)]
        if values.size == 0:
            return {"count": 0}
        return {
            "count": int(values.size),
            "mean": float(values.mean()),
            "min": float(values.min()),
            "max": float(values.max()),
            "share_negative": float(np.mean(values < 0)),
            "share_near_zero": float(np.mean(np.abs(values) <= self.near_zero_band)),
        }

    def summary(self) -> Dict[str, Any]:
        out: Dict[str, Any] = {"variant": self.variant.value}
        if self.variant is WeightVariant.TWO_PERIOD_CONDITIONAL:
            out["treated"] = self._distribution(self.weights)
        elif self.variant is WeightVariant.TWO_PERIOD_IMPLICIT:
            out["treated"] = self._distribution(self.treated)
            out["comparison"] = self._distribution(self.comparison)
        elif self.variant is WeightVariant.MULTI_PERIOD_CONDITIONAL:
            T = self.n_periods
            periods = np.arange(1, T + 1)
            post = periods[None, :] >= self.group[:, None]
            by_cell = {}
            for g in sorted(set(int(x) for x in self.group)):
                members = self.group == g
                for t in range(1, T + 1):
                    by_cell[f"{g},{t}"] = float(self.weights[members, t - 1].mean())
            out["cell_means"] = by_cell
            # sums of E[w | G = g] over cells
            _, inverse, counts = np.unique(self.group, return_inverse=True, return_counts=True)
            size = counts[inverse].astype(float)
            out["post_sum"] = float(np.sum(np.where(post, self.weights, 0.0) / size[:, None]))
            out["pre_sum"] = float(np.sum(np.where(post, 0.0, self.weights) / size[:, None]))
            out["post"] = self._distribution(self.weights[post])
        else:
            out["treated"] = self._distribution(self.treated)
            out["comparison"] = {
                f"{g},{t}": self._distribution(w) for (g, t), w in sorted(self.comparison_cells.items())
            }
        return out

    def to_frame(self) -> pd.DataFrame:
        """Long table: unit, g, t, side, weight, projection."""
        ids = np.asarray(self.unit_ids, dtype=object)
        T = self.n_periods
        rows = []
        if self.two_period:
            treated = self.group == 2
            if self.variant is WeightVariant.TWO_PERIOD_CONDITIONAL:
                sides = [("treated", self.weights, treated)]
            else:
                sides = [("treated", self.treated, treated), ("comparison", self.comparison, ~treated)]
            for side, values, mask in sides:
                rows.append(pd.DataFrame({
                    "unit": ids[mask], "g": self.group[mask], "t": 2, "side": side,
                    "weight": values[mask], "projection": self.projection[mask],
                }))
        elif self.variant is WeightVariant.MULTI_PERIOD_CONDITIONAL:
            periods = np.arange(1, T + 1)
            rows.append(pd.DataFrame({
                "unit": np.repeat(ids, T),
                "g": np.repeat(self.group, T),
                "t": np.tile(periods, len(ids)),
                "side": np.where((periods[None, :] >= self.group[:, None]).reshape(-1), "post", "pre"),
                "weight": self.weights.reshape(-1),
                "projection": self.projection.reshape(-1),
            }))
        else:
            for g, t in self.cells:
                members = self.group == g
                rows.append(pd.DataFrame({
                    "unit": ids[members], "g": g, "t": t, "side": "treated",
                    "weight": self.treated[members, t - 1], "projection": self.projection[members, t - 1],
                }))
                w0 = self.comparison_cells[(g, t)]
                mask = np.isfinite(w0)
                rows.append(pd.DataFrame({
                    "unit": ids[mask], "g": g, "t": t, "side": "comparison",
                    "weight": w0[mask], "projection": self.projection[mask, t - 1],
                }))
        frame = pd.concat(rows, ignore_index=True) if rows else pd.DataFrame(
            columns=["unit", "g", "t", "side", "weight", "projection"])
        frame.insert(0, "variant", self.variant.value)
        return frame


def _view_group(view: TwoPeriodView) -> np.ndarray:
    return np.where(view.treated, 2, 3).astype(int)


def conditional_att_weights(fit: TwfeFit, data: PanelLike,
                            near_zero_band: float = NEAR_ZERO_BAND) -> TwfeWeights:
    """
    Weights on conditional ATTs.

    Two-period: w(dX_i) = (1 - L(D|dX_i)) / E[1 - L(D|dX) | D = 1] on treated units.
    Multi-period: w_it = r_it * p_{G_i} / (T * alpha_den) on every unit-period,
    which equals the (h(g,t) - X-ddot'Gamma) p_g normalisation over post cells.
    """
    if fit.mode is FitMode.TWO_PERIOD:
        view = _as_view(data)
        L = fit.projection
        treated = view.treated
        scale = float(np.mean(1.0 - L[treated]))
        weights = np.full(view.n, np.nan)
        weights[treated] = (1.0 - L[treated]) / scale
        return TwfeWeights(
            variant=WeightVariant.TWO_PERIOD_CONDITIONAL, alpha=fit.alpha, unit_ids=view.unit_ids,
            group=_view_group(view), n_periods=2, projection=L, weights=weights,
            near_zero_band=near_zero_band,
        )

    shares = data.group_shares()
    p_unit = np.array([shares[int(g)] for g in data.group])
    T = data.n_periods
    weights = fit.residual * p_unit[:, None] / (T * fit.alpha_den)
    return TwfeWeights(
        variant=WeightVariant.MULTI_PERIOD_CONDITIONAL, alpha=fit.alpha, unit_ids=data.unit_ids,
        group=np.asarray(data.group), n_periods=T, projection=fit.projection, weights=weights,
        near_zero_band=near_zero_band,
    )


def implicit_weights(fit: TwfeFit, data: PanelLike, near_zero_band: float = NEAR_ZERO_BAND) -> TwfeWeights:
    """
    Implicit regression weights: alpha as a treated-minus-comparison weighted contrast.

    Two-period: w1 = p (1 - L) / E[(D - L)^2] on treated, w0 = (1 - p) L / E[(D - L)^2]
    on untreated; alpha = E[w1 dY | D=1] - E[w0 dY | D=0].

    Multi-period, for cell (g, t) with t >= g and outcome Y_t - Y_1:
        w1 = r (T - g + 1) p_g / (p-bar_g T alpha_den)                        on G = g
        w0 = -r (T - g + 1) P(D_t=0) p_g / ((1 - P(D_t=0)) p-bar_g T alpha_den)  on D_t = 0
    and alpha = sum over cells of {E[w1 (Y_t-Y_1)|G=g] - E[w0 (Y_t-Y_1)|D_t=0]} p-bar_g/(T-g+1)
    plus the pre-adoption remainder.
    """
    if fit.mode is FitMode.TWO_PERIOD:
        view = _as_view(data)
        L = fit.projection
        p = view.p
        treated = view.treated
        w1 = np.full(view.n, np.nan)
        w0 = np.full(view.n, np.nan)
        w1[treated] = p * (1.0 - L[treated]) / fit.alpha_den
        w0[~treated] = (1.0 - p) * L[~treated] / fit.alpha_den
        return TwfeWeights(
            variant=WeightVariant.TWO_PERIOD_IMPLICIT, alpha=fit.alpha, unit_ids=view.unit_ids,
            group=_view_group(view), n_periods=2, projection=L, treated=w1, comparison=w0,
            near_zero_band=near_zero_band,
        )

    T = data.n_periods
    r = fit.residual
    scale = T * fit.alpha_den
    p = data.group_shares()
    p_bar = data.treated_shares()
    group = np.asarray(data.group)
    periods = np.arange(1, T + 1)

    treated = np.full(r.shape, np.nan)
    comparison_cells: Dict[Tuple[int, int], np.ndarray] = {}
    for g in data.treated_groups:
        members = group == g
        factor = (T - g + 1) * p[g] / (p_bar[g] * scale)
        for t in range(g, T + 1):
            treated[members, t - 1] = r[members, t - 1] * factor
            untreated = group > t
            p0 = float(untreated.mean())
            w0 = np.full(group.shape[0], np.nan)
            w0[untreated] = -r[untreated, t - 1] * factor * p0 / (1.0 - p0)
            comparison_cells[(g, t)] = w0

    g_min = min(data.treated_groups)
    remainder = np.zeros(r.shape)
    before = (periods >= 2) & (periods < g_min)
    remainder[:, before] = r[:, before] / scale
    return TwfeWeights(
        variant=WeightVariant.MULTI_PERIOD_IMPLICIT, alpha=fit.alpha, unit_ids=data.unit_ids,
        group=group, n_periods=T, projection=fit.projection, treated=treated,
        comparison_cells=comparison_cells, remainder=remainder, near_zero_band=near_zero_band,
    )


# --- decomposition ---

ReferenceSpec = Union[str, Tuple[np.ndarray, np.ndarray]]


def reference_constants(data: PanelDataset, reference: ReferenceSpec = "zero") -> Tuple[np.ndarray, np.ndarray]:
    """
    (theta_t, Lambda_0) for the multi-period path decomposition.

    ``"zero"`` gives zeros.  ``"never_treated"`` regresses Y_t - Y_{t-1} on period
    dummies and X_t - X_{t-1} among never-treated units (not-yet-treated if there
    are none) and cumulates the period coefficients.  A tuple is used as given.
    """
    T, k = data.n_periods, data.k
    if isinstance(reference, tuple):
        theta, lam = (np.asarray(v, dtype=float) for v in reference)
        if theta.shape != (T,) or lam.shape != (k,):
            raise InvalidConfig("reference constants have the wrong shape",
                                theta=list(theta.shape), lambda0=list(lam.shape), T=T, k=k)
        return theta, lam
    if reference == "zero":
        return np.zeros(T), np.zeros(k)
    if reference != "never_treated":
        raise InvalidConfig(f"unknown reference {reference!r}", allowed=["zero", "never_treated"])

    dy = np.diff(data.outcome, axis=1)
    dx = np.diff(data.x_tv, axis=1)
    if data.has_never_treated:
        use = np.repeat((data.group == data.never_value)[:, None], T - 1, axis=1)
    else:
        use = data.group[:, None] > np.arange(2, T + 1)[None, :]
    rows_i, rows_t = np.nonzero(use)
    present = sorted(set(rows_t.tolist()))
    dummies = np.zeros((rows_t.size, len(present)))
    for j, s in enumerate(present):
        dummies[rows_t == s, j] = 1.0
    design = np.column_stack([dummies, dx[rows_i, rows_t, :]])
    coef = project(dy[rows_i, rows_t], design, names=[f"period_{s + 2}" for s in present]
                   + [f"d_{x}" for x in data.x_names]).coefficients
    steps = np.zeros(T - 1)
    steps[present] = coef[:len(present)]
    theta = np.concatenate([[0.0], np.cumsum(steps)])
    return theta, coef[len(present):]


@dataclass
class DecompositionReport:
    """Weighted-term decomposition of a TWFE coefficient."""

    alpha: float
    mode: FitMode
    reconstruction: float
    terms: pd.DataFrame
    negative_census: Dict[str, Any]
    weight_reversal: Optional[Dict[str, Any]] = None
    components: Dict[str, float] = field(default_factory=dict)
    oracle: Optional[Dict[str, float]] = None
    reference: str = "zero"

    @property
    def discrepancy(self) -> float:
        return abs(self.reconstruction - self.alpha)

    def verify(self, tolerance: float = 1e-8) -> None:
        """Raise if the weighted terms fail to reproduce alpha."""
        if self.discrepancy > tolerance * max(1.0, abs(self.alpha)):
            raise NumericalError("decomposition does not reproduce alpha",
                                 alpha=self.alpha, reconstruction=self.reconstruction)

    def to_dict(self) -> Dict[str, Any]:
        out = {
            "alpha": self.alpha,
            "mode": self.mode.value,
            "reconstruction": self.reconstruction,
            "discrepancy": self.discrepancy,
            "negative_census": self.negative_census,
            "components": self.components,
            "reference": self.reference,
        }
        if self.weight_reversal is not None:
            out["weight_reversal"] = self.weight_reversal
        if self.oracle is not None:
            out["oracle"] = self.oracle
        if self.mode is FitMode.MULTI_PERIOD:
            out["cells"] = self.terms[self.terms["post"]].to_dict(orient="records")
        return out


def _oracle_values(oracle: Any) -> Optional[np.ndarray]:
    if oracle is None:
        return None
    values = getattr(oracle, "conditional_att", oracle)
    return None if values is None else np.asarray(values, dtype=float)


def _profile(mask: np.ndarray, columns: Dict[str, np.ndarray], base: np.ndarray) -> Dict[str, Dict[str, float]]:
    """Covariate means among negative-weight observations vs. all in the base set."""
    out = {}
    for name, values in columns.items():
        out[name] = {
            "negative_mean": float(values[mask].mean()) if mask.any() else float("nan"),
            "all_mean": float(values[base].mean()),
        }
    return out


def _census(weights: np.ndarray, base: np.ndarray, columns: Dict[str, np.ndarray], band: float) -> Dict[str, Any]:
    values = weights[base]
    negative = base & (weights < 0)
    return {
        "count": int(negative.sum()),
        "share_negative": float(np.mean(values < 0)) if values.size else 0.0,
        "share_near_zero": float(np.mean(np.abs(values) <= band)) if values.size else 0.0,
        "near_zero_band": band,
        "min_weight": float(values.min()) if values.size else float("nan"),
        "profile": _profile(negative, columns, base),
    }


def _decompose_two_period(fit: TwfeFit, view: TwoPeriodView, oracle: Any, band: float) -> DecompositionReport:
    treated = view.treated
    names = ["intercept", *[f"d_{x}" for x in view.x_names]]
    l1 = project(view.dy, view.dx, treated, names=names)
    l0 = project(view.dy, view.dx, ~treated, names=names)
    weights = conditional_att_weights(fit, view, band).weights
    contrast = l1.fitted - l0.fitted
    term = weights * contrast

    ids = np.asarray(view.unit_ids, dtype=object)
    L = fit.projection
    terms = pd.DataFrame({
        "unit": ids[treated],
        "projection": L[treated],
        "weight": weights[treated],
        "contrast": contrast[treated],
        "term": term[treated],
    })
    reconstruction = float(term[treated].mean())

    # w = (1 - L) / c, an affine map in L with slope -1/c
    c = float(np.mean(1.0 - L[treated]))
    order = np.argsort(-L[treated], kind="stable")
    ranking = terms.iloc[order][["unit", "projection", "weight"]]
    reversal = {
        "slope": -1.0 / c,
        "intercept": 1.0 / c,
        "ranking": ranking.to_dict(orient="records"),
    }

    columns = {f"d_{x}": view.dx[:, j + 1] for j, x in enumerate(view.x_names)}
    columns.update({f"{x}_pre": view.x_pre[:, j] for j, x in enumerate(view.x_names)})
    columns.update({f"{x}_post": view.x_post[:, j] for j, x in enumerate(view.x_names)})
    columns.update({z: view.z[:, j] for j, z in enumerate(view.z_names)})
    full = np.where(treated, weights, np.inf)
    census = _census(full, treated, columns, band)

    p = view.p
    components = {
        "weighted_treated_change": float(np.mean(weights[treated] * view.dy[treated])),
        "weighted_untreated_prediction": float(np.mean(weights[treated] * l0.fitted[treated])),
        "denominator": fit.alpha_den,
        "denominator_from_treated": float(np.mean(1.0 - L[treated]) * p),
        "share_treated": p,
    }

    report = DecompositionReport(
        alpha=fit.alpha, mode=fit.mode, reconstruction=reconstruction, terms=terms,
        negative_census=census, weight_reversal=reversal, components=components,
    )
    tau = _oracle_values(oracle)
    if tau is not None:
        tau = tau[:, -1] if tau.ndim == 2 else tau
        weighted_att = float(np.mean(weights[treated] * tau[treated]))
        report.oracle = {"weighted_att": weighted_att, "bias": fit.alpha - weighted_att}
    return report


def _decompose_multi_period(fit: TwfeFit, data: PanelDataset, oracle: Any, reference: ReferenceSpec,
                            band: float) -> DecompositionReport:
    T = data.n_periods
    n = data.n_units
    theta, lam = reference_constants(data, reference)
    group = np.asarray(data.group)
    base = group - 2
    rows = np.arange(n)

    y_base = data.outcome[rows, base]
    x_base = data.x_tv[rows, base, :]
    path = (data.outcome - y_base[:, None]) - (
        theta[None, :] - theta[base][:, None] + (data.x_tv - x_base[:, None, :]) @ lam
    )
    weights = conditional_att_weights(fit, data, band).weights
    product = weights * path

    # cell contribution is E[w * path | G = g]; the p_g factor sits inside w
    records = []
    periods = np.arange(1, T + 1)
    for g in data.groups:
        members = group == g
        for t in periods:
            records.append({
                "g": int(g),
                "t": int(t),
                "post": bool(t >= g),
                "n_units": int(members.sum()),
                "weight_mean": float(weights[members, t - 1].mean()),
                "path_mean": float(path[members, t - 1].mean()),
                "contribution": float(product[members, t - 1].mean()),
            })
    terms = pd.DataFrame.from_records(records)
    reconstruction = float(terms["contribution"].sum())

    post = periods[None, :] >= group[:, None]
    columns = {x: data.x_tv[:, :, j] for j, x in enumerate(data.x_names)}
    columns.update({z: np.repeat(data.z_ti[:, j:j + 1], T, axis=1) for j, z in enumerate(data.z_names)})
    census = _census(np.where(post, weights, np.inf), post, columns, band)
    cell_neg = terms[terms["post"] & (terms["weight_mean"] < 0)][["g", "t", "weight_mean"]]
    census["negative_cells"] = cell_neg.to_dict(orient="records")

    components = {
        "post_weight_sum": float(terms.loc[terms["post"], "weight_mean"].sum()),
        "pre_weight_sum": float(terms.loc[~terms["post"], "weight_mean"].sum()),
        "post_contribution": float(terms.loc[terms["post"], "contribution"].sum()),
        "pre_contribution": float(terms.loc[~terms["post"], "contribution"].sum()),
        "denominator": fit.alpha_den,
    }

    report = DecompositionReport(
        alpha=fit.alpha, mode=fit.mode, reconstruction=reconstruction, terms=terms,
        negative_census=census, components=components,
        reference=reference if isinstance(reference, str) else "explicit",
    )
    tau = _oracle_values(oracle)
    if tau is not None:
        _, inverse, counts = np.unique(group, return_inverse=True, return_counts=True)
        scaled = np.where(post, weights * np.nan_to_num(tau), 0.0) / counts[inverse][:, None]
        weighted_att = float(scaled.sum())
        report.oracle = {"weighted_att": weighted_att, "bias": fit.alpha - weighted_att}
    return report


def decompose(fit: TwfeFit, data: PanelLike, oracle: Any = None, reference: ReferenceSpec = "zero",
              near_zero_band: float = NEAR_ZERO_BAND) -> DecompositionReport:
    """
    Decompose alpha into weighted terms.

    Args:
        fit: a TwfeFit from either mode.
        data: the panel (or two-period view) the fit came from.
        oracle: optional object with a ``conditional_att`` (n x T) array, or the array
            itself, giving true conditional ATTs on treated unit-periods.
        reference: multi-period reference constants, see ``reference_constants``.

    Returns:
        DecompositionReport whose weighted terms reproduce alpha.
    """
    if fit.mode is FitMode.TWO_PERIOD:
        report = _decompose_two_period(fit, _as_view(data), oracle, near_zero_band)
    else:
        report = _decompose_multi_period(fit, data, oracle, reference, near_zero_band)
    log.debug(f"decomposition: alpha={report.alpha:.10g} reconstruction={report.reconstruction:.10g}")
    return report


class TwfeAnalyzer(LoggerMixin):
    """Picks the fit mode for a panel and runs weights and decompositions with configured tolerances."""

    def __init__(self, config: Optional[ConfigManager] = None):
        self.config = config
        get = (lambda s, k, f: config.get_float(s, k, fallback=f)) if config else (lambda s, k, f: f)
        self.rank_tolerance = get("LINPROJ", "rank_tolerance", RANK_TOLERANCE)
        self.degenerate_tolerance = get("LINPROJ", "degenerate_tolerance", DEGENERATE_TOLERANCE)
        self.near_zero_band = get("DIAGNOSTICS", "near_zero_band", NEAR_ZERO_BAND)

    @staticmethod
    def is_two_period(data: PanelDataset) -> bool:
        return data.n_periods == 2 and all(g == 2 for g in data.treated_groups)

    def fit(self, data: PanelDataset, mode: Optional[FitMode] = None) -> TwfeFit:
        if mode is None:
            mode = FitMode.TWO_PERIOD if self.is_two_period(data) else FitMode.MULTI_PERIOD
        self.logger.info(f"Fitting TWFE in {mode.value} mode")
        if mode is FitMode.TWO_PERIOD:
            return fit_two_period(two_period_view(data), self.rank_tolerance, self.degenerate_tolerance)
        return fit_multi_period(data, self.rank_tolerance, self.degenerate_tolerance)

    def weights(self, fit: TwfeFit, data: PanelDataset) -> Dict[str, TwfeWeights]:
        return {
            "conditional": conditional_att_weights(fit, data, self.near_zero_band),
            "implicit": implicit_weights(fit, data, self.near_zero_band),
        }

    def decompose(self, fit: TwfeFit, data: PanelDataset, oracle: Any = None,
                  reference: ReferenceSpec = "zero") -> DecompositionReport:
        report = decompose(fit, data, oracle=oracle, reference=reference, near_zero_band=self.near_zero_band)
        report.verify()
        census = report.negative_census
        self.logger.info(
            f"Decomposition reproduces alpha={report.alpha:.6g}; "
            f"negative weights: {census['count']} ({census['share_negative']:.3f})"
        )
        return report
