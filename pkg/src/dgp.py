"""
Synthetic staggered-adoption panels with known treatment effects.

Untreated outcomes follow

    Y_it(0) = theta_t + Z_i'delta_t + X_it'beta_t + sum_{s<=t} dX_is'lambda_s
              + eta_i + amplitude * (t - 1) * q_i + v_it

with q_i the squared baseline level of the first covariate.  Cohorts are drawn
from a multinomial logit on (X_i1, Z_i, eta_i); time-varying covariates follow an
AR(1) whose innovation mean may depend on the cohort.  Treated outcomes add

    tau(g, t, X, Z) = tau_base + tau_group_slope (g - 2) + tau_event_slope (t - g)
                      + X_it'tau_x + Z_i'tau_z.

Each preset switches on exactly one way for the two-way fixed-effects
regression to be misleading while conditional parallel trends keeps holding.
"""

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
from scipy.special import softmax

from src.config_manager import ConfigManager
from src.exceptions import ConfigMismatch, InvalidConfig, OverlapConfigError, UnknownPreset
from src.logger import LoggerMixin, log
from src.panel import PanelDataset, validate

PRESETS = (
    "clean",
    "violate_A_timeinvariant",
    "violate_B_levels",
    "violate_C_nonlinear",
    "violate_E_timevarying_beta",
    "negative_weights",
    "weight_reversal",
    "heterogeneous_att",
)

ORACLE_DRAWS = 100_000
ORACLE_BATCHES = 20
OVERLAP_EPSILON = 1e-4


@dataclass
class DgpConfig:
    """
    Parameters of the synthetic panel.

    Per-category lists (``assign_*``, ``x_shift``) are aligned with
    ``categories``: the treated cohorts in order, then never-treated when
    ``never_treated`` is set.  Per-period lists have one entry (or row) per period.
    """

    n_units: int = 1000
    n_periods: int = 4
    k: int = 1
    l: int = 1
    cohorts: Optional[List[int]] = None
    never_treated: bool = True
    # group assignment
    assign_intercept: Optional[List[float]] = None
    assign_x: Optional[List[List[float]]] = None
    assign_z: Optional[List[List[float]]] = None
    assign_eta: Optional[List[float]] = None
    # untreated outcomes
    theta: Optional[List[float]] = None
    delta: Optional[List[List[float]]] = None
    beta: Optional[List[List[float]]] = None
    change_coefficients: Optional[List[List[float]]] = None
    eta_sd: float = 1.0
    noise_sd: float = 1.0
    heteroskedastic: bool = False
    nonlinear_amplitude: float = 0.0
    # covariate process
    x_init_mean: float = 0.0
    x_init_sd: float = 1.0
    x_drift: float = 0.0
    x_rho: float = 1.0
    x_sd: float = 1.0
    x_shift: Optional[List[float]] = None
    # treatment effects
    tau_base: float = 2.0
    tau_group_slope: float = 0.0
    tau_event_slope: float = 0.0
    tau_x: Optional[List[float]] = None
    tau_z: Optional[List[float]] = None
    seed: int = 0
    name: str = "custom"

    def __post_init__(self):
        T, k, l = self.n_periods, self.k, self.l
        if T < 2 or self.n_units < 2 or k < 0 or l < 0:
            raise InvalidConfig("need n_units >= 2, n_periods >= 2 and non-negative k, l",
                                n_units=self.n_units, n_periods=T, k=k, l=l)
        if self.cohorts is None:
            self.cohorts = list(range(2, T + 1))
        self.cohorts = sorted(int(g) for g in self.cohorts)
        if not self.cohorts or any(g < 2 or g > T for g in self.cohorts):
            raise InvalidConfig(f"cohorts must lie in 2..{T}", cohorts=self.cohorts)
        m = self.n_categories
        self.assign_intercept = _vector(self.assign_intercept, m, 0.0, "assign_intercept")
        self.assign_x = _matrix(self.assign_x, m, k, 0.0, "assign_x")
        self.assign_z = _matrix(self.assign_z, m, l, 0.0, "assign_z")
        self.assign_eta = _vector(self.assign_eta, m, 0.0, "assign_eta")
        self.x_shift = _vector(self.x_shift, m, 0.0, "x_shift")
        self.theta = _vector(self.theta, T, None, "theta") if self.theta is not None \
            else [0.5 * t for t in range(T)]
        self.delta = _matrix(self.delta, T, l, 1.0, "delta")
        self.beta = _matrix(self.beta, T, k, 1.0, "beta")
        self.change_coefficients = _matrix(self.change_coefficients, T, k, 0.0, "change_coefficients")
        self.tau_x = _vector(self.tau_x, k, 0.0, "tau_x")
        self.tau_z = _vector(self.tau_z, l, 0.0, "tau_z")

    @property
    def categories(self) -> List[int]:
        """Cohort codes in assignment order; never-treated is T + 1."""
        return list(self.cohorts) + ([self.n_periods + 1] if self.never_treated else [])

    @property
    def n_categories(self) -> int:
        return len(self.cohorts) + int(self.never_treated)

    @property
    def assignment_depends_on_covariates(self) -> bool:
        return bool(np.any(self.assign_x) or np.any(self.assign_z) or np.any(self.assign_eta))

    @property
    def effect_depends_on_covariates(self) -> bool:
        return bool(np.any(self.tau_x) or np.any(self.tau_z))

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, payload: Dict[str, Any]) -> "DgpConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(payload) - known)
        if unknown:
            raise InvalidConfig(f"unknown DGP settings {unknown}", unknown=unknown)
        return cls(**payload)

    def save(self, path: str) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as handle:
            json.dump(self.to_dict(), handle, indent=2, sort_keys=True)
            handle.write("\n")
        return path

    @classmethod
    def load(cls, path: str) -> "DgpConfig":
        with open(path, "r", encoding="utf-8") as handle:
            return cls.from_dict(json.load(handle))


def _vector(values: Optional[List[float]], size: int, default: Optional[float], name: str) -> List[float]:
    if values is None:
        return [float(default)] * size
    values = [float(v) for v in values]
    if len(values) != size:
        raise InvalidConfig(f"{name} needs {size} entries, got {len(values)}", setting=name)
    return values


def _matrix(values: Optional[List[List[float]]], rows: int, cols: int, default: float, name: str) -> List[List[float]]:
    if values is None:
        return [[float(default)] * cols for _ in range(rows)]
    out = np.asarray(values, dtype=float)
    if out.size == 0 and rows * cols == 0:
        return [[] for _ in range(rows)]
    if out.shape != (rows, cols):
        raise InvalidConfig(f"{name} needs shape ({rows}, {cols}), got {list(out.shape)}", setting=name)
    return out.tolist()


@dataclass
class DgpOracle:
    """
    True effects for a configuration.

    Population values are exact (``method == "analytic"``) or Monte Carlo with
    standard errors from independent batches.  ``sample_*`` values average tau
    over the realised treated units of the generated panel.
    """

    cells: Dict[Tuple[int, int], float]
    overall: float
    event_study: Dict[int, float]
    method: str
    draws: int = 0
    cell_se: Dict[Tuple[int, int], float] = field(default_factory=dict)
    overall_se: float = 0.0
    event_study_se: Dict[int, float] = field(default_factory=dict)
    group_probabilities: Dict[int, float] = field(default_factory=dict)
    sample_cells: Dict[Tuple[int, int], float] = field(default_factory=dict)
    sample_overall: Optional[float] = None
    sample_event_study: Dict[int, float] = field(default_factory=dict)
    conditional_att: Optional[np.ndarray] = field(default=None, repr=False)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "method": self.method,
            "draws": self.draws,
            "att_gt": [
                {
                    "g": g, "t": t, "e": t - g, "value": value,
                    "mc_se": self.cell_se.get((g, t), 0.0),
                    "sample": self.sample_cells.get((g, t)),
                }
                for (g, t), value in sorted(self.cells.items())
            ],
            "overall": {"value": self.overall, "mc_se": self.overall_se, "sample": self.sample_overall},
            "event_study": [
                {"e": e, "value": value, "mc_se": self.event_study_se.get(e, 0.0),
                 "sample": self.sample_event_study.get(e)}
                for e, value in sorted(self.event_study.items())
            ],
            "group_probabilities": {str(g): p for g, p in sorted(self.group_probabilities.items())},
        }


# --- drawing ---

@dataclass
class _Units:
    x1: np.ndarray
    z: np.ndarray
    eta: np.ndarray
    category: np.ndarray
    probabilities: np.ndarray


def _draw_units(config: DgpConfig, rng: np.random.Generator, n: int) -> _Units:
    """Baseline covariates, unobserved heterogeneity and cohort assignment."""
    x1 = config.x_init_mean + config.x_init_sd * rng.standard_normal((n, config.k))
    z = rng.standard_normal((n, config.l))
    eta = config.eta_sd * rng.standard_normal(n)
    logits = (np.asarray(config.assign_intercept)[None, :]
              + x1 @ np.asarray(config.assign_x).reshape(config.n_categories, config.k).T
              + z @ np.asarray(config.assign_z).reshape(config.n_categories, config.l).T
              + eta[:, None] * np.asarray(config.assign_eta)[None, :])
    probabilities = softmax(logits, axis=1)
    u = rng.random(n)
    category = (u[:, None] > np.cumsum(probabilities, axis=1)).sum(axis=1)
    category = np.minimum(category, config.n_categories - 1)
    return _Units(x1=x1, z=z, eta=eta, category=category, probabilities=probabilities)


def _check_overlap(config: DgpConfig, probabilities: np.ndarray, epsilon: float) -> None:
    lo, hi = float(probabilities.min()), float(probabilities.max())
    if lo < epsilon or hi > 1.0 - epsilon:
        raise OverlapConfigError(
            f"assignment probabilities leave ({epsilon:g}, {1 - epsilon:g})",
            min_probability=lo, max_probability=hi, preset=config.name,
        )


def _x_path(config: DgpConfig, units: _Units, rng: np.random.Generator) -> np.ndarray:
    n, T, k = units.x1.shape[0], config.n_periods, config.k
    x = np.empty((n, T, k))
    x[:, 0, :] = units.x1
    shift = np.asarray(config.x_shift)[units.category][:, None]
    for t in range(1, T):
        x[:, t, :] = config.x_drift + shift + config.x_rho * x[:, t - 1, :] + config.x_sd * rng.standard_normal((n, k))
    return x


def _effects(config: DgpConfig, group: np.ndarray, x: np.ndarray, z: np.ndarray) -> np.ndarray:
    """tau(G_i, t, X_it, Z_i) on treated unit-periods, NaN elsewhere."""
    T = config.n_periods
    periods = np.arange(1, T + 1)
    g = group[:, None].astype(float)
    tau = (config.tau_base + config.tau_group_slope * (g - 2.0) + config.tau_event_slope * (periods[None, :] - g)
           + x @ np.asarray(config.tau_x) + (z @ np.asarray(config.tau_z))[:, None])
    return np.where(periods[None, :] >= group[:, None], tau, np.nan)


def _untreated(config: DgpConfig, units: _Units, x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    n, T = x.shape[0], config.n_periods
    theta = np.asarray(config.theta)
    delta = np.asarray(config.delta).reshape(T, config.l)
    beta = np.asarray(config.beta).reshape(T, config.k)
    lam = np.asarray(config.change_coefficients).reshape(T, config.k)

    y0 = theta[None, :] + units.z @ delta.T + np.einsum("itk,tk->it", x, beta) + units.eta[:, None]
    dx = np.diff(x, axis=1)
    y0[:, 1:] += np.cumsum(np.einsum("itk,tk->it", dx, lam[1:]), axis=1)
    if config.nonlinear_amplitude:
        q = units.x1[:, 0] ** 2 if config.k else (units.z[:, 0] ** 2 if config.l else np.zeros(n))
        y0 += config.nonlinear_amplitude * np.arange(T)[None, :] * q[:, None]

    scale = np.full(n, config.noise_sd)
    if config.heteroskedastic:
        driver = units.z[:, 0] if config.l else (units.x1[:, 0] if config.k else np.zeros(n))
        scale = config.noise_sd * np.sqrt(0.5 + 0.5 * driver ** 2)
    return y0 + scale[:, None] * rng.standard_normal((n, T))


@dataclass
class _Draw:
    data: PanelDataset
    untreated: np.ndarray
    effects: np.ndarray
    probabilities: np.ndarray


def _simulate(config: DgpConfig, overlap_epsilon: float) -> _Draw:
    sample_seq, _ = np.random.SeedSequence(config.seed).spawn(2)
    rng = np.random.default_rng(sample_seq)
    units = _draw_units(config, rng, config.n_units)
    _check_overlap(config, units.probabilities, overlap_epsilon)
    group = np.asarray(config.categories)[units.category]
    x = _x_path(config, units, rng)
    y0 = _untreated(config, units, x, rng)
    tau = _effects(config, group, x, units.z)
    y = y0 + np.nan_to_num(tau)
    data = PanelDataset(
        outcome=y, x_tv=x, z_ti=units.z, group=group,
        x_names=tuple(f"x{j + 1}" for j in range(config.k)),
        z_names=tuple(f"z{j + 1}" for j in range(config.l)),
    )
    return _Draw(data=data, untreated=y0, effects=tau, probabilities=units.probabilities)


# --- oracle ---

def _aggregates(config: DgpConfig, cells: Dict[Tuple[int, int], float],
                probabilities: Dict[int, float]) -> Tuple[float, Dict[int, float]]:
    """Overall and event-study effects from cell effects and cohort probabilities."""
    T = config.n_periods
    cohorts = [g for g in config.cohorts if probabilities.get(g, 0.0) > 0]
    total = sum(probabilities[g] for g in cohorts)
    overall = sum(probabilities[g] / total * np.mean([cells[(g, t)] for t in range(g, T + 1)]) for g in cohorts)
    event_study = {}
    for e in range(0, T - min(config.cohorts) + 1):
        eligible = [g for g in cohorts if g + e <= T]
        if eligible:
            mass = sum(probabilities[g] for g in eligible)
            event_study[e] = float(sum(probabilities[g] / mass * cells[(g, g + e)] for g in eligible))
    return float(overall), event_study


def _analytic_cells(config: DgpConfig) -> Dict[Tuple[int, int], float]:
    """Cell effects when the cohort's covariate means are known in closed form."""
    T = config.n_periods
    shift = dict(zip(config.categories, config.x_shift))
    cells = {}
    for g in config.cohorts:
        # E[X_t | G = g] follows the AR(1) mean recursion
        mean_x = config.x_init_mean
        means = [mean_x]
        for _ in range(1, T):
            mean_x = config.x_drift + shift[g] + config.x_rho * mean_x
            means.append(mean_x)
        for t in range(g, T + 1):
            cells[(g, t)] = float(config.tau_base + config.tau_group_slope * (g - 2)
                                  + config.tau_event_slope * (t - g) + means[t - 1] * sum(config.tau_x))
    return cells


def _analytic_oracle(config: DgpConfig) -> DgpOracle:
    logits = np.asarray(config.assign_intercept)
    probs = dict(zip(config.categories, softmax(logits).tolist()))
    cells = _analytic_cells(config)
    overall, event_study = _aggregates(config, cells, probs)
    return DgpOracle(cells=cells, overall=overall, event_study=event_study, method="analytic",
                     group_probabilities=probs)


def _monte_carlo_oracle(config: DgpConfig, draws: int, batches: int, overlap_epsilon: float,
                        exact_cells: Optional[Dict[Tuple[int, int], float]] = None) -> DgpOracle:
    _, oracle_seq = np.random.SeedSequence(config.seed).spawn(2)
    per_batch = max(1, draws // batches)
    cell_values: Dict[Tuple[int, int], List[float]] = {}
    overall_values: List[float] = []
    es_values: Dict[int, List[float]] = {}
    prob_values: Dict[int, List[float]] = {}
    for seq in oracle_seq.spawn(batches):
        rng = np.random.default_rng(seq)
        units = _draw_units(config, rng, per_batch)
        _check_overlap(config, units.probabilities, overlap_epsilon)
        group = np.asarray(config.categories)[units.category]
        x = _x_path(config, units, rng)
        tau = _effects(config, group, x, units.z)
        probs = {g: float(units.probabilities[:, j].mean()) for j, g in enumerate(config.categories)}
        cells = dict(exact_cells) if exact_cells is not None else {}
        for g in config.cohorts:
            members = group == g
            for t in range(g, config.n_periods + 1):
                if (g, t) not in cells:
                    cells[(g, t)] = float(tau[members, t - 1].mean()) if members.any() else np.nan
        overall, es = _aggregates(config, cells, probs)
        for key, value in cells.items():
            cell_values.setdefault(key, []).append(value)
        overall_values.append(overall)
        for e, value in es.items():
            es_values.setdefault(e, []).append(value)
        for g, p in probs.items():
            prob_values.setdefault(g, []).append(p)

    def _mean_se(values: List[float]) -> Tuple[float, float]:
        arr = np.asarray(values, dtype=float)
        arr = arr[np.isfinite(arr)]
        if arr.size < 2:
            return float(arr.mean()) if arr.size else float("nan"), float("nan")
        return float(arr.mean()), float(arr.std(ddof=1) / np.sqrt(arr.size))

    cells, cell_se = {}, {}
    for key, values in cell_values.items():
        if exact_cells is not None:
            cells[key], cell_se[key] = exact_cells[key], 0.0
        else:
            cells[key], cell_se[key] = _mean_se(values)
    overall, overall_se = _mean_se(overall_values)
    event_study, event_study_se = {}, {}
    for e, values in es_values.items():
        event_study[e], event_study_se[e] = _mean_se(values)
    method = "monte_carlo"
    if exact_cells is not None and len(set(exact_cells.values())) == 1:
        # a single effect size needs no cohort shares
        value = next(iter(exact_cells.values()))
        overall, overall_se = value, 0.0
        event_study = {e: value for e in event_study}
        event_study_se = {e: 0.0 for e in event_study}
        method = "analytic"
    return DgpOracle(
        cells=cells, overall=overall, event_study=event_study, method=method,
        draws=per_batch * batches, cell_se=cell_se, overall_se=overall_se, event_study_se=event_study_se,
        group_probabilities={g: float(np.mean(v)) for g, v in prob_values.items()},
    )


def compute_oracle(config: DgpConfig, method: str = "auto", draws: int = ORACLE_DRAWS,
                   batches: int = ORACLE_BATCHES, overlap_epsilon: float = OVERLAP_EPSILON) -> DgpOracle:
    """
    Population effects for ``config``.

    ``auto`` uses the closed form when cohort assignment ignores the covariates
    (so treated-population covariate means follow the AR(1) recursion).  When
    only the effect ignores the covariates, cell effects stay exact and cohort
    shares come from Monte Carlo.  Otherwise everything is Monte Carlo.
    """
    if method not in ("auto", "analytic", "monte_carlo"):
        raise InvalidConfig(f"unknown oracle method {method!r}", allowed=["auto", "analytic", "monte_carlo"])
    analytic_ok = not config.assignment_depends_on_covariates
    if method == "analytic" and not analytic_ok:
        raise InvalidConfig("no closed form when cohort assignment depends on covariates", preset=config.name)
    if method == "analytic" or (method == "auto" and analytic_ok):
        return _analytic_oracle(config)
    if batches < 2:
        raise InvalidConfig("Monte Carlo oracle needs at least two batches", batches=batches)
    exact = _analytic_cells(config) if method == "auto" and not config.effect_depends_on_covariates else None
    return _monte_carlo_oracle(config, draws, batches, overlap_epsilon, exact)


def _sample_values(data: PanelDataset, tau: np.ndarray) -> Tuple[Dict[Tuple[int, int], float], float, Dict[int, float]]:
    cells = {(g, t): float(np.mean(tau[data.group == g, t - 1])) for g, t in data.cells()}
    counts = {g: float(np.sum(data.group == g)) for g in data.treated_groups}
    T = data.n_periods
    total = sum(counts.values())
    overall = sum(counts[g] / total * np.mean([cells[(g, t)] for t in range(g, T + 1)]) for g in counts)
    event_study = {}
    for e in range(0, T - min(counts) + 1):
        eligible = [g for g in counts if g + e <= T]
        mass = sum(counts[g] for g in eligible)
        event_study[e] = float(sum(counts[g] / mass * cells[(g, g + e)] for g in eligible))
    return cells, float(overall), event_study


def generate(config: DgpConfig, oracle_method: str = "auto", oracle_draws: int = ORACLE_DRAWS,
             oracle_batches: int = ORACLE_BATCHES,
             overlap_epsilon: float = OVERLAP_EPSILON) -> Tuple[PanelDataset, DgpOracle]:
    """
    Draw a panel and its oracle.

    The panel and the Monte Carlo oracle use separate child streams of
    ``SeedSequence(config.seed)``, so the same config always yields the same output.
    """
    draw = _simulate(config, overlap_epsilon)
    oracle = compute_oracle(config, oracle_method, oracle_draws, oracle_batches, overlap_epsilon)
    if draw.data.treated_groups:
        oracle.sample_cells, oracle.sample_overall, oracle.sample_event_study = _sample_values(draw.data, draw.effects)
    oracle.conditional_att = draw.effects
    validate(draw.data)
    log.info(f"generated {config.name} panel: n={config.n_units} T={config.n_periods} k={config.k} "
             f"l={config.l} oracle={oracle.method} ATT^O={oracle.overall:.6g}")
    return draw.data, oracle


def draw_panel(config: DgpConfig, overlap_epsilon: float = OVERLAP_EPSILON) -> Tuple[PanelDataset, np.ndarray]:
    """The panel of ``generate(config)`` and its conditional effects, without the oracle."""
    draw = _simulate(config, overlap_epsilon)
    return draw.data, draw.effects


def potential_outcomes(config: DgpConfig, overlap_epsilon: float = OVERLAP_EPSILON) -> Tuple[np.ndarray, np.ndarray]:
    """(Y(0), Y(1)) paths behind ``generate(config)``; Y(1) is NaN before adoption."""
    draw = _simulate(config, overlap_epsilon)
    return draw.untreated, draw.untreated + draw.effects


def oracle_conditional_atts(config: DgpConfig, data: PanelDataset) -> np.ndarray:
    """
    tau(g, t, X_it, Z_i) for every treated unit-period of ``data`` (NaN elsewhere).

    Raises:
        ConfigMismatch: when ``data`` cannot have come from ``config``.
    """
    if (data.n_units, data.n_periods, data.k, data.l) != (config.n_units, config.n_periods, config.k, config.l):
        raise ConfigMismatch(
            "dataset dimensions differ from the configuration",
            dataset=[data.n_units, data.n_periods, data.k, data.l],
            config=[config.n_units, config.n_periods, config.k, config.l],
        )
    foreign = sorted(set(data.groups) - set(config.categories))
    if foreign:
        raise ConfigMismatch("dataset has cohorts the configuration never assigns", cohorts=foreign,
                             configured=config.categories)
    return _effects(config, np.asarray(data.group), np.asarray(data.x_tv), np.asarray(data.z_ti))


# --- presets ---

def _base(T: int = 4, **overrides: Any) -> Dict[str, Any]:
    m = T  # T - 1 cohorts plus never-treated
    base = {
        "n_periods": T,
        "k": 1,
        "l": 1,
        "assign_intercept": [0.0] * m,
        "assign_x": [[0.4 * (j + 1) - 0.2 * m] for j in range(m)],
        "assign_z": [[0.0] for _ in range(m)],
        "assign_eta": [0.0] * m,
        "x_shift": [0.0] * m,
    }
    base.update(overrides)
    return base


def violation_preset(name: str, n_units: Optional[int] = None, seed: Optional[int] = None) -> DgpConfig:
    """
    Configuration that satisfies every no-bias condition except the named one.

    Args:
        name: one of ``PRESETS``.
        n_units: optional sample size override.
        seed: optional seed override.
    """
    T = 4
    m = T
    imbalance = [[0.5 * (j + 1) - 0.25 * (m + 1)] for j in range(m)]
    if name == "clean":
        settings = _base(T, assign_eta=[0.5 * j for j in range(m)])
    elif name == "violate_A_timeinvariant":
        # effect of Z changes over time while Z differs across cohorts
        settings = _base(T, assign_z=imbalance, delta=[[1.0 + 0.75 * t] for t in range(T)])
    elif name == "violate_B_levels":
        # trend depends on the level of X through a drifting beta_t
        settings = _base(T, assign_x=[[0.8 * (j + 1) - 0.4 * (m + 1)] for j in range(m)],
                         beta=[[1.0 + 0.75 * t] for t in range(T)])
    elif name == "violate_C_nonlinear":
        settings = _base(T, nonlinear_amplitude=0.5)
    elif name == "violate_E_timevarying_beta":
        # the effect of dX on dY changes across periods; dX drifts differently by cohort
        settings = _base(T, x_shift=[0.6 - 0.3 * j for j in range(m)],
                         change_coefficients=[[0.0], [0.0], [1.5], [3.0]])
    elif name == "negative_weights":
        settings = {
            "n_periods": 2, "k": 1, "l": 1,
            "assign_intercept": [0.0, 0.0], "assign_x": [[0.0], [0.0]], "assign_z": [[0.0], [0.0]],
            "assign_eta": [0.0, 0.0], "x_shift": [2.0, 0.0],
        }
    elif name == "weight_reversal":
        settings = {
            "n_periods": 2, "k": 1, "l": 1,
            "assign_intercept": [-0.5, 0.0], "assign_x": [[0.0], [0.0]], "assign_z": [[0.0], [0.0]],
            "assign_eta": [0.0, 0.0], "x_shift": [1.5, 0.0], "tau_x": [1.0],
        }
    elif name == "heterogeneous_att":
        settings = _base(T, assign_z=imbalance, tau_x=[0.5], tau_z=[1.0], tau_event_slope=0.5,
                         tau_group_slope=-0.5)
    else:
        raise UnknownPreset(f"unknown preset {name!r}", preset=name, available=list(PRESETS))
    config = DgpConfig(name=name, **settings)
    if n_units is not None:
        config = replace(config, n_units=int(n_units))
    if seed is not None:
        config = replace(config, seed=int(seed))
    return config


class DataGenerator(LoggerMixin):
    """Presets and generation with oracle settings from the [SIMULATION] section."""

    def __init__(self, config: Optional[ConfigManager] = None):
        if config is not None:
            self.oracle_draws = config.get_int("SIMULATION", "oracle_draws", fallback=ORACLE_DRAWS)
            self.oracle_batches = config.get_int("SIMULATION", "oracle_batches", fallback=ORACLE_BATCHES)
            self.overlap_epsilon = config.get_float("SIMULATION", "overlap_epsilon", fallback=OVERLAP_EPSILON)
        else:
            self.oracle_draws, self.oracle_batches, self.overlap_epsilon = ORACLE_DRAWS, ORACLE_BATCHES, OVERLAP_EPSILON

    def config_for(self, preset: Optional[str] = None, config_path: Optional[str] = None,
                   n_units: Optional[int] = None, seed: Optional[int] = None) -> DgpConfig:
        if config_path:
            dgp_config = DgpConfig.load(config_path)
            if n_units is not None:
                dgp_config = replace(dgp_config, n_units=int(n_units))
            if seed is not None:
                dgp_config = replace(dgp_config, seed=int(seed))
            return dgp_config
        return violation_preset(preset or "clean", n_units=n_units, seed=seed)

    def generate(self, dgp_config: DgpConfig, oracle_method: str = "auto") -> Tuple[PanelDataset, DgpOracle]:
        self.logger.info(f"Generating {dgp_config.name} (n={dgp_config.n_units}, seed={dgp_config.seed})")
        return generate(dgp_config, oracle_method, self.oracle_draws, self.oracle_batches, self.overlap_epsilon)
