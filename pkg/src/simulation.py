"""
Monte Carlo harness: repeat generate -> estimate over seeds and summarise against the oracle.
"""

from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd
from scipy import stats

from src.config_manager import ConfigManager
from src.dgp import (
    ORACLE_BATCHES,
    ORACLE_DRAWS,
    OVERLAP_EPSILON,
    DgpConfig,
    DgpOracle,
    compute_oracle,
    draw_panel,
    violation_preset,
)
from src.exceptions import InvalidConfig, NumericalError
from src.gtatt import GroupTimeEstimator, aggregate_overall
from src.inference import InfluenceMatrix, multiplier_bootstrap
from src.logger import LoggerMixin
from src.twfe import FitMode, TwfeAnalyzer, conditional_att_weights

ESTIMATORS = ("twfe", "ra", "ipw", "dr")
TWFE_KEYS = ("estimate", "se", "share_negative")
GROUP_TIME_KEYS = ("estimate", "se")


@dataclass
class SimulationSummary:
    """Replication statistics for one estimator."""

    estimator: str
    truth: float
    mean: float
    bias: float
    sd: float
    mc_se: float
    rmse: float
    n_reps: int
    failures: int = 0
    coverage: Optional[float] = None
    extra: Dict[str, float] = field(default_factory=dict)

    @property
    def bias_in_se(self) -> float:
        """|bias| measured in Monte Carlo standard errors."""
        if self.mc_se > 0:
            return abs(self.bias) / self.mc_se
        return 0.0 if self.bias == 0 else float("inf")

    def to_dict(self) -> Dict[str, Any]:
        out = {
            "estimator": self.estimator,
            "truth": self.truth,
            "mean": self.mean,
            "bias": self.bias,
            "sd": self.sd,
            "mc_se": self.mc_se,
            "rmse": self.rmse,
            "n_reps": self.n_reps,
            "failures": self.failures,
            "coverage": self.coverage,
        }
        out.update(self.extra)
        return out

    def __str__(self):
        return (f"{self.estimator}: mean={self.mean:.4f} bias={self.bias:.4f} "
                f"sd={self.sd:.4f} mc_se={self.mc_se:.4f} rmse={self.rmse:.4f} N={self.n_reps}")


@dataclass
class SimulationResult:
    """All estimators of one Monte Carlo run; ``estimates`` has one column per estimator."""

    config: DgpConfig
    oracle: DgpOracle
    summaries: Dict[str, SimulationSummary]
    estimates: pd.DataFrame

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame.from_records([s.to_dict() for s in self.summaries.values()])


class SimulationRunner(LoggerMixin):
    """
    Monte Carlo runner for the estimators against one DGP.

    Replication r uses seed ``first_seed + r``; the oracle is computed once.
    The target is the overall ATT for every estimator.

    Example:
        >>> runner = SimulationRunner("violate_B_levels", ["twfe", "dr"], n_units=4000)
        >>> result = runner.simulate(n_sim=200)
        >>> print(result.summaries["twfe"])
    """

    def __init__(self, dgp: Union[str, DgpConfig], estimators: Sequence[str] = ESTIMATORS,
                 config: Optional[ConfigManager] = None, n_units: Optional[int] = None,
                 estimator_options: Optional[Dict[str, Dict[str, Any]]] = None,
                 bootstrap_draws: int = 0, ci_level: float = 0.95):
        """
        Args:
            dgp: preset name or DgpConfig.
            estimators: subset of ``twfe``, ``ra``, ``ipw``, ``dr``.  The same method
                may appear under several names via ``estimator_options``.
            config: ConfigManager for estimator and oracle settings.
            n_units: optional sample size override.
            estimator_options: per-name GroupTimeEstimator overrides, e.g.
                ``{"dr_or_wrong": {"method": "dr", "or_terms": ("change",)}}``.
            bootstrap_draws: when positive, coverage uses multiplier-bootstrap SEs;
                otherwise the analytic influence-function SE.
        """
        self.dgp = violation_preset(dgp) if isinstance(dgp, str) else dgp
        if n_units is not None:
            self.dgp = replace(self.dgp, n_units=int(n_units))
        self.config = config
        self.estimator_options = dict(estimator_options or {})
        self.estimators = list(estimators) + [k for k in self.estimator_options if k not in estimators]
        unknown = [e for e in self.estimators if e not in ESTIMATORS and e not in self.estimator_options]
        if unknown:
            raise InvalidConfig(f"unknown estimators {unknown}", allowed=list(ESTIMATORS))
        self.bootstrap_draws = int(bootstrap_draws)
        self.ci_level = ci_level
        if config is not None:
            self.oracle_draws = config.get_int("SIMULATION", "oracle_draws", fallback=ORACLE_DRAWS)
            self.oracle_batches = config.get_int("SIMULATION", "oracle_batches", fallback=ORACLE_BATCHES)
            self.overlap_epsilon = config.get_float("SIMULATION", "overlap_epsilon", fallback=OVERLAP_EPSILON)
        else:
            self.oracle_draws, self.oracle_batches, self.overlap_epsilon = ORACLE_DRAWS, ORACLE_BATCHES, OVERLAP_EPSILON
        self._twfe = TwfeAnalyzer(config)
        self._gt = {name: self._group_time(name) for name in self.estimators if name != "twfe"}

    def _group_time(self, name: str) -> GroupTimeEstimator:
        options = dict(self.estimator_options.get(name, {}))
        options.setdefault("method", name if name in ESTIMATORS else "dr")
        return GroupTimeEstimator(self.config, **options)

    def _estimate(self, name: str, data) -> Dict[str, float]:
        if name == "twfe":
            fit = self._twfe.fit(data)
            weights = conditional_att_weights(fit, data).weights
            if fit.mode is FitMode.TWO_PERIOD:
                share_negative = float(np.mean(weights[np.isfinite(weights)] < 0))
            else:
                post = np.arange(1, data.n_periods + 1)[None, :] >= np.asarray(data.group)[:, None]
                share_negative = float(np.mean(weights[post] < 0))
            return {"estimate": fit.alpha, "se": np.nan, "share_negative": share_negative}
        estimator = self._gt[name]
        results = estimator.estimate_all(data)
        overall = aggregate_overall(results, data)
        if self.bootstrap_draws > 0:
            boot = multiplier_bootstrap(InfluenceMatrix.from_results([overall]), B=self.bootstrap_draws,
                                        seed=0, ci_level=self.ci_level, threads=estimator.threads)
            se = float(boot.se[0])
        else:
            se = float(np.sqrt(np.mean(overall.influence ** 2) / data.n_units))
        return {"estimate": overall.estimate, "se": se}

    def simulate(self, n_sim: int = 100, first_seed: Optional[int] = None) -> SimulationResult:
        """
        Run ``n_sim`` replications.

        Replications whose estimator raises a numerical error are counted as
        failures and left out of that estimator's statistics.
        """
        first_seed = self.dgp.seed if first_seed is None else first_seed
        oracle = compute_oracle(self.dgp, "auto", self.oracle_draws, self.oracle_batches, self.overlap_epsilon)
        truth = oracle.overall
        self.logger.info(f"Simulating {self.dgp.name}: {n_sim} replications of n={self.dgp.n_units}, "
                         f"truth={truth:.6g} ({oracle.method})")

        records: List[Dict[str, Any]] = []
        for r in range(n_sim):
            data, _ = draw_panel(replace(self.dgp, seed=first_seed + r), self.overlap_epsilon)
            row: Dict[str, Any] = {"replication": r, "seed": first_seed + r}
            for name in self.estimators:
                try:
                    values = self._estimate(name, data)
                except NumericalError as e:
                    self.logger.warning(f"replication {r}: {name} failed with {e.code}")
                    values = dict.fromkeys(TWFE_KEYS if name == "twfe" else GROUP_TIME_KEYS, np.nan)
                for key, value in values.items():
                    row[f"{name}_{key}"] = value
            records.append(row)
            if (r + 1) % 50 == 0:
                self.logger.info(f"  {r + 1}/{n_sim} replications done")

        frame = pd.DataFrame.from_records(records)
        summaries = {name: self._summarize(name, frame, truth) for name in self.estimators}
        for summary in summaries.values():
            self.logger.info(str(summary))
        return SimulationResult(config=self.dgp, oracle=oracle, summaries=summaries, estimates=frame)

    def _summarize(self, name: str, frame: pd.DataFrame, truth: float) -> SimulationSummary:
        est = frame[f"{name}_estimate"].to_numpy(dtype=float)
        se = frame[f"{name}_se"].to_numpy(dtype=float)
        ok = np.isfinite(est)
        if not ok.any():
            raise NumericalError(f"every replication failed for {name}", estimator=name)
        est_ok = est[ok]
        diff = est_ok - truth
        sd = float(est_ok.std(ddof=1)) if est_ok.size > 1 else 0.0
        coverage = None
        if np.isfinite(se[ok]).all():
            z = stats.norm.ppf(0.5 + self.ci_level / 2.0)
            coverage = float(np.mean(np.abs(diff) <= z * se[ok]))
        extra = {}
        if f"{name}_share_negative" in frame:
            shares = frame.loc[ok, f"{name}_share_negative"].to_numpy(dtype=float)
            extra = {"share_negative_mean": float(shares.mean()),
                     "share_reps_with_negative": float(np.mean(shares > 0))}
        return SimulationSummary(
            estimator=name, truth=truth, mean=float(est_ok.mean()), bias=float(diff.mean()),
            sd=sd, mc_se=sd / np.sqrt(est_ok.size), rmse=float(np.sqrt(np.mean(diff ** 2))),
            n_reps=int(est_ok.size), failures=int((~ok).sum()), coverage=coverage, extra=extra,
        )
