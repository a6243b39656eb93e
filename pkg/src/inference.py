"""
Influence functions and the multiplier bootstrap.

Cell-level influence functions are the AIPW-for-DID scores with correction
terms for the outcome-regression least-squares fit and the propensity-score
MLE.  Each cell is computed on its estimation subsample S (treated cohort plus
comparisons) and embedded into the full sample as (n / n_S) * psi_S on S and
0 elsewhere, so every column averages to zero over all n units.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
from scipy import stats

from src.exceptions import InvalidConfig, MissingNuisance, TooFewDraws
from src.logger import log

MIN_DRAWS = 200
IQR_SCALE = stats.norm.ppf(0.75) - stats.norm.ppf(0.25)


class Multiplier(str, Enum):
    RADEMACHER = "rademacher"
    MAMMEN = "mammen"


def _method(result: Any) -> str:
    return str(getattr(result.method, "value", result.method))


def _ols_linear_rep(comparison: np.ndarray, resid: np.ndarray, X: np.ndarray) -> np.ndarray:
    """Per-unit linear representation of the OLS coefficients fitted on the comparison rows."""
    weights = comparison.astype(float)
    gram = (weights[:, None] * X).T @ X / X.shape[0]
    score = (weights * resid)[:, None] * X
    return score @ np.linalg.inv(gram)


def _ra_influence(D: np.ndarray, change: np.ndarray, X: np.ndarray, fitted: np.ndarray) -> np.ndarray:
    resid = change - fitted
    eta_treat = np.mean(D * resid) / np.mean(D)
    lin_ols = _ols_linear_rep(1.0 - D, resid, X)
    M1 = np.mean(D[:, None] * X, axis=0)
    return (D * (resid - eta_treat) - lin_ols @ M1) / np.mean(D)


def _ipw_influence(D: np.ndarray, change: np.ndarray, gps: Any) -> np.ndarray:
    ps = gps.probabilities[gps.subset]
    w_cont = ps * (1.0 - D) / (1.0 - ps)
    eta_treat = np.mean(D * change) / np.mean(D)
    eta_cont = np.mean(w_cont * change) / np.mean(w_cont)

    lin_ps = gps.score @ (gps.cov_params * D.shape[0])
    inf_treat = D * (change - eta_treat) / np.mean(D)
    M2 = np.mean((w_cont * (change - eta_cont))[:, None] * gps.log_odds_gradient, axis=0)
    inf_cont = (w_cont * (change - eta_cont) + lin_ps @ M2) / np.mean(w_cont)
    return inf_treat - inf_cont


def _dr_influence(D: np.ndarray, change: np.ndarray, X: np.ndarray, fitted: np.ndarray, gps: Any) -> np.ndarray:
    ps = gps.probabilities[gps.subset]
    resid = change - fitted
    w_cont = ps * (1.0 - D) / (1.0 - ps)
    eta_treat = np.mean(D * resid) / np.mean(D)
    eta_cont = np.mean(w_cont * resid) / np.mean(w_cont)

    lin_ols = _ols_linear_rep(1.0 - D, resid, X)
    lin_ps = gps.score @ (gps.cov_params * D.shape[0])

    M1 = np.mean(D[:, None] * X, axis=0)
    inf_treat = (D * (resid - eta_treat) - lin_ols @ M1) / np.mean(D)

    M2 = np.mean((w_cont * (resid - eta_cont))[:, None] * gps.log_odds_gradient, axis=0)
    M3 = np.mean(w_cont[:, None] * X, axis=0)
    inf_cont = (w_cont * (resid - eta_cont) + lin_ps @ M2 - lin_ols @ M3) / np.mean(w_cont)
    return inf_treat - inf_cont


def build_influence(result: Any, data: Any = None) -> np.ndarray:
    """
    Influence column of a group-time estimate over all n units.

    Args:
        result: a GroupTimeResult carrying its ``nuisance`` fits.
        data: the panel, used only to check the unit count.

    Returns:
        Length-n vector with (1/n) * sum = 0.
    """
    nuisance = getattr(result, "nuisance", None)
    method = _method(result)
    if nuisance is None:
        raise MissingNuisance("result carries no nuisance fits", g=result.g, t=result.t)
    if method in ("ra", "dr") and nuisance.or_fit is None:
        raise MissingNuisance("outcome regression missing", g=result.g, t=result.t, method=method)
    if method in ("ipw", "dr") and nuisance.gps is None:
        raise MissingNuisance("propensity score fit missing", g=result.g, t=result.t, method=method)

    S = nuisance.subset
    n = S.shape[0]
    if data is not None and data.n_units != n:
        raise MissingNuisance("nuisance fits belong to a different panel", n_fit=n, n_data=data.n_units)
    n_s = int(S.sum())
    D = nuisance.treated[S].astype(float)
    change = nuisance.change[S]

    if method == "ra":
        psi = _ra_influence(D, change, nuisance.or_design[S], nuisance.or_fit.fitted[S])
    elif method == "ipw":
        psi = _ipw_influence(D, change, nuisance.gps)
    elif method == "dr":
        psi = _dr_influence(D, change, nuisance.or_design[S], nuisance.or_fit.fitted[S], nuisance.gps)
    else:
        raise InvalidConfig(f"unknown estimation method {method!r}", allowed=["ra", "ipw", "dr"])

    influence = np.zeros(n)
    influence[S] = psi * (n / n_s)
    return influence


@dataclass(frozen=True)
class InfluenceMatrix:
    """n_units x n_estimands influence contributions with aligned labels."""

    values: np.ndarray
    labels: List[str]
    estimates: np.ndarray

    @property
    def n_units(self) -> int:
        return self.values.shape[0]

    @classmethod
    def from_results(cls, results: Sequence[Any]) -> "InfluenceMatrix":
        """Stacks GroupTimeResult / AggregateResult influence columns in the given order."""
        if not results:
            raise InvalidConfig("no estimates to stack")
        values = np.column_stack([np.asarray(r.influence, dtype=float) for r in results])
        return cls(values=values, labels=[r.label for r in results],
                   estimates=np.array([r.estimate for r in results], dtype=float))

    def analytic_se(self) -> np.ndarray:
        """sqrt(mean(psi^2) / n) per column."""
        return np.sqrt(np.mean(self.values ** 2, axis=0) / self.n_units)


@dataclass
class BootstrapResult:
    """Bootstrap standard errors and pointwise confidence intervals."""

    labels: List[str]
    estimates: np.ndarray
    se: np.ndarray
    ci_lower: np.ndarray
    ci_upper: np.ndarray
    draws: int
    multiplier: str
    seed: int
    ci_level: float
    se_method: str = "std"
    ci_method: str = "normal"
    analytic_se: Optional[np.ndarray] = None
    replicates: Optional[np.ndarray] = field(default=None, repr=False)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "label": self.labels,
            "estimate": self.estimates,
            "se": self.se,
            "ci_lower": self.ci_lower,
            "ci_upper": self.ci_upper,
        })

    def by_label(self) -> Dict[str, Dict[str, float]]:
        return {
            label: {"se": float(s), "ci_lower": float(lo), "ci_upper": float(hi)}
            for label, s, lo, hi in zip(self.labels, self.se, self.ci_lower, self.ci_upper)
        }

    def meta(self) -> Dict[str, Any]:
        return {
            "draws": self.draws,
            "multiplier": self.multiplier,
            "seed": self.seed,
            "ci_level": self.ci_level,
            "se_method": self.se_method,
            "ci_method": self.ci_method,
        }


def draw_multipliers(rng: np.random.Generator, n: int, multiplier: Multiplier) -> np.ndarray:
    """Unit-level multipliers with mean 0 and variance 1."""
    if multiplier is Multiplier.RADEMACHER:
        return rng.integers(0, 2, size=n) * 2.0 - 1.0
    sqrt5 = np.sqrt(5.0)
    low, high = (1.0 - sqrt5) / 2.0, (1.0 + sqrt5) / 2.0
    p_low = (sqrt5 + 1.0) / (2.0 * sqrt5)
    return np.where(rng.random(n) < p_low, low, high)


def _replicates(values: np.ndarray, seeds: Sequence[np.random.SeedSequence], multiplier: Multiplier) -> np.ndarray:
    n = values.shape[0]
    out = np.empty((len(seeds), values.shape[1]))
    for b, seq in enumerate(seeds):
        v = draw_multipliers(np.random.default_rng(seq), n, multiplier)
        out[b] = v @ values / n
    return out


def multiplier_bootstrap(infl: InfluenceMatrix, B: int = 999, multiplier: str = "rademacher",
                         seed: int = 20240101, ci_level: float = 0.95, se_method: str = "std",
                         ci_method: str = "normal", threads: int = 1,
                         keep_replicates: bool = False) -> BootstrapResult:
    """
    Multiplier bootstrap over units.

    Replicate b draws its multipliers from the b-th child of SeedSequence(seed), so
    the result does not depend on how replicates are split across threads.

    Args:
        infl: influence matrix.
        B: number of bootstrap draws (at least 200).
        multiplier: ``rademacher`` or ``mammen``.
        seed: root seed.
        ci_level: pointwise confidence level.
        se_method: ``std`` (bootstrap standard deviation) or ``iqr`` (normalised IQR).
        ci_method: ``normal`` (estimate +/- z * se) or ``quantile`` (basic bootstrap interval).
        threads: worker threads.
    """
    if B < MIN_DRAWS:
        raise TooFewDraws(f"multiplier bootstrap needs at least {MIN_DRAWS} draws", draws=B)
    try:
        kind = Multiplier(multiplier)
    except ValueError:
        raise InvalidConfig(f"unknown multiplier {multiplier!r}", allowed=[m.value for m in Multiplier])
    if se_method not in ("std", "iqr") or ci_method not in ("normal", "quantile"):
        raise InvalidConfig("unknown bootstrap option", se_method=se_method, ci_method=ci_method)
    if not 0.0 < ci_level < 1.0:
        raise InvalidConfig("ci_level must lie in (0, 1)", ci_level=ci_level)

    children = np.random.SeedSequence(seed).spawn(B)
    threads = max(1, min(int(threads), B))
    chunks = [children[i::threads] for i in range(threads)]
    if threads == 1:
        draws = _replicates(infl.values, children, kind)
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda c: _replicates(infl.values, c, kind), chunks))
        draws = np.empty((B, infl.values.shape[1]))
        for i, part in enumerate(parts):
            draws[i::threads] = part

    if se_method == "std":
        se = draws.std(axis=0, ddof=1)
    else:
        q75, q25 = np.percentile(draws, [75, 25], axis=0)
        se = (q75 - q25) / IQR_SCALE
    zero = np.all(infl.values == 0.0, axis=0)
    se = np.where(zero, 0.0, se)

    a = 1.0 - ci_level
    est = infl.estimates
    if ci_method == "normal":
        z = stats.norm.ppf(1.0 - a / 2.0)
        lower, upper = est - z * se, est + z * se
    else:
        q_lo, q_hi = np.quantile(draws, [a / 2.0, 1.0 - a / 2.0], axis=0)
        lower = np.minimum(est - q_hi, est)
        upper = np.maximum(est - q_lo, est)

    log.info(f"multiplier bootstrap: B={B} multiplier={kind.value} estimands={len(infl.labels)} threads={threads}")
    return BootstrapResult(
        labels=list(infl.labels), estimates=est.copy(), se=se, ci_lower=lower, ci_upper=upper,
        draws=B, multiplier=kind.value, seed=int(seed), ci_level=ci_level,
        se_method=se_method, ci_method=ci_method, analytic_se=infl.analytic_se(),
        replicates=draws if keep_replicates else None,
    )
