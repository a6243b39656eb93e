"""
Command-line front end for didforge.

Four subcommands share one output directory per run:

    estimate   group-time ATTs with aggregates and standard errors
    decompose  TWFE fit, every weight variant and the weighted-term decomposition
    diagnose   covariate balance under the implicit TWFE weights
    simulate   a synthetic panel with its oracle effects

Exit codes: 0 success, 2 input or validation error, 3 numerical failure.
"""

import argparse
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import pandas as pd
from scipy import stats

from src.config_manager import ConfigManager
from src.dgp import DataGenerator, DgpConfig, oracle_conditional_atts
from src.diagnostics import BalanceAuditor
from src.exceptions import EXIT_INPUT, DidForgeError, InvalidConfig, NumericalError
from src.file_processor import PanelFileProcessor, parse_columns
from src.gtatt import GroupTimeEstimator, aggregate_group, fit_gps, results_frame
from src.inference import InfluenceMatrix, multiplier_bootstrap
from src.logger import LoggerMixin, framework_logger
from src.panel import ColumnMapping, PanelDataset, validate
from src.report_generator import ReportGenerator
from src.twfe import FitMode, TwfeAnalyzer

COMMANDS = ("estimate", "decompose", "diagnose", "simulate")
RECONSTRUCTION_TOLERANCE = 1e-8


def _input_arguments(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("input")
    group.add_argument("--input", required=True, help="Long-format panel CSV")
    group.add_argument("--id-col", help="Unit identifier column (default: id)")
    group.add_argument("--time-col", help="Period column (default: time)")
    group.add_argument("--y-col", help="Outcome column (default: y)")
    group.add_argument("--g-col", help="First-treatment period column, 0 or empty for never treated (default: g)")
    group.add_argument("--xvars", help="Comma-separated time-varying covariates")
    group.add_argument("--zvars", help="Comma-separated time-invariant covariates")


def _common_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--out-dir", help="Output directory (default: [PATHS] output_dir)")
    parser.add_argument("--settings", help="Path to an alternative config.ini")
    parser.add_argument("--threads", type=int, help="Worker threads (default: DIDFORGE_THREADS or [RUNTIME] threads)")
    parser.add_argument("--log-level", choices=["DEBUG", "INFO", "WARNING", "ERROR"], help="Console log level")
    parser.add_argument("--stamp", action="store_true", help="Write a timestamp into run_meta.json")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="didforge",
        description="Difference-in-differences estimation, TWFE decomposition and balance diagnostics",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    estimate = sub.add_parser("estimate", help="Group-time ATTs with aggregates")
    _input_arguments(estimate)
    _common_arguments(estimate)
    estimate.add_argument("--method", choices=["ra", "ipw", "dr"])
    estimate.add_argument("--base-period", choices=["varying", "universal"])
    estimate.add_argument("--comparison", choices=["notyet", "never"])
    estimate.add_argument("--link", choices=["logit", "probit"], help="Propensity link")
    estimate.add_argument("--bootstrap-draws", type=int,
                          help="Multiplier bootstrap draws; 0 keeps the analytic standard errors")
    estimate.add_argument("--multiplier", choices=["rademacher", "mammen"])
    estimate.add_argument("--se-method", choices=["std", "iqr"])
    estimate.add_argument("--ci-method", choices=["normal", "quantile"])
    estimate.add_argument("--seed", type=int, help="Bootstrap seed")
    estimate.add_argument("--ci-level", type=float)

    decompose = sub.add_parser("decompose", help="TWFE weights and decomposition")
    _input_arguments(decompose)
    _common_arguments(decompose)
    decompose.add_argument("--reference", choices=["zero", "never_treated"],
                           help="Reference constants of the multi-period decomposition (default: zero)")
    decompose.add_argument("--config", help="DGP config JSON; adds the true weighted ATT and the TWFE bias")

    diagnose = sub.add_parser("diagnose", help="Balance under the implicit TWFE weights")
    _input_arguments(diagnose)
    _common_arguments(diagnose)
    diagnose.add_argument("--functions", help="Extra functions: column names, square:<col>, interact:<a>:<b>")
    diagnose.add_argument("--squares", action="store_true", help="Add squares of every covariate")
    diagnose.add_argument("--interactions", action="store_true", help="Add pairwise covariate interactions")
    diagnose.add_argument("--benchmark", action="store_true",
                          help="Also report balance under propensity-score weights")
    diagnose.add_argument("--comparison", choices=["notyet", "never"], help="Benchmark comparison group")
    diagnose.add_argument("--link", choices=["logit", "probit"], help="Benchmark propensity link")

    simulate = sub.add_parser("simulate", help="Synthetic panel and oracle")
    _common_arguments(simulate)
    simulate.add_argument("--preset", help="Named DGP preset (default: clean)")
    simulate.add_argument("--config", help="DGP config JSON, used instead of a preset")
    simulate.add_argument("--n", type=int, help="Number of units")
    simulate.add_argument("--seed", type=int, help="Sample seed")
    simulate.add_argument("--oracle-method", choices=["auto", "analytic", "monte_carlo"], default="auto")
    return parser


class DidForgeApp(LoggerMixin):
    """
    Runs one subcommand and turns library errors into exit codes.

    Example:
        >>> app = DidForgeApp(build_parser().parse_args(["simulate", "--preset", "clean", "--out-dir", "out"]))
        >>> app.run()
        0
    """

    def __init__(self, args: argparse.Namespace):
        self.args = args
        self.config = ConfigManager(args.settings)
        self._apply_overrides()
        self._setup_logging()
        self.report = ReportGenerator(self.config, args.out_dir)
        self.files = PanelFileProcessor(self.config)

    def _apply_overrides(self) -> None:
        """CLI flags win over config.ini; the merged settings are echoed into run_meta.json."""
        args = self.args
        pairs = [
            ("ESTIMATION", "method", "method"),
            ("ESTIMATION", "base_period", "base_period"),
            ("ESTIMATION", "comparison", "comparison"),
            ("ESTIMATION", "pscore_link", "link"),
            ("BOOTSTRAP", "draws", "bootstrap_draws"),
            ("BOOTSTRAP", "multiplier", "multiplier"),
            ("BOOTSTRAP", "se_method", "se_method"),
            ("BOOTSTRAP", "ci_method", "ci_method"),
            ("BOOTSTRAP", "ci_level", "ci_level"),
            ("RUNTIME", "threads", "threads"),
            ("LOGGING", "level", "log_level"),
        ]
        for section, key, attr in pairs:
            value = getattr(args, attr, None)
            if value is not None:
                self.config.set(section, key, str(value))
        if getattr(args, "seed", None) is not None and args.command == "estimate":
            self.config.set("BOOTSTRAP", "seed", str(args.seed))
        if getattr(args, "squares", False):
            self.config.set("DIAGNOSTICS", "include_squares", "true")
        if getattr(args, "interactions", False):
            self.config.set("DIAGNOSTICS", "include_interactions", "true")

    def _setup_logging(self) -> None:
        level = self.config.get("LOGGING", "level", fallback="INFO")
        to_file = self.config.get_boolean("LOGGING", "log_to_file", fallback=False)
        log_file = None
        if to_file:
            log_file = str(Path(self.config.get("PATHS", "logs_output", fallback="./logs")) / "didforge.log")
        framework_logger.setup_logging(log_file=log_file, to_file=to_file, log_level=level)

    def _threads(self) -> int:
        if self.args.threads is not None:
            return max(1, self.args.threads)
        return self.config.threads()

    # --- input ---

    def _schema(self) -> Optional[ColumnMapping]:
        """Explicit mapping when any column flag is given, else the sidecar or defaults."""
        args = self.args
        flags = [args.id_col, args.time_col, args.y_col, args.g_col, args.xvars, args.zvars]
        if all(f is None for f in flags):
            return None
        return ColumnMapping(
            id_col=args.id_col or "id",
            time_col=args.time_col or "time",
            y_col=args.y_col or "y",
            g_col=args.g_col or "g",
            x_cols=tuple(parse_columns(args.xvars)),
            z_cols=tuple(parse_columns(args.zvars)),
        )

    def _load(self) -> PanelDataset:
        check = self.files.validate_file(self.args.input)
        if not check["is_valid"]:
            raise InvalidConfig(f"input file rejected: {self.args.input}", errors=check["errors"])
        for warning in check["warnings"]:
            self.logger.warning(warning)
        return self.files.load_csv(self.args.input, self._schema())

    def _validate(self, data: PanelDataset, comparison: str, gps_summaries=None) -> Dict[str, Any]:
        min_size = self.config.get_int("PANEL", "min_group_size", fallback=5)
        return validate(data, min_size, comparison, gps_summaries).to_dict()

    def _options(self) -> Dict[str, Any]:
        return {k: v for k, v in sorted(vars(self.args).items()) if v is not None and k != "stamp"}

    # --- subcommands ---

    def cmd_estimate(self) -> int:
        data = self._load()
        estimator = GroupTimeEstimator(self.config, threads=self._threads())
        results = estimator.estimate_all(data)
        aggregates = estimator.aggregate(results, data)
        groups = [aggregate_group(results, data, g) for g in data.treated_groups]
        estimands: List[Any] = [*results, *aggregates, *groups]

        inference = self._inference(estimands, estimator.threads)
        validation = self._validate(data, estimator.comparison, estimator.gps_summaries(results))

        overall = aggregates[0]
        self.logger.info(f"Overall ATT = {overall.estimate:.6g} (se {overall.se:.4g}) over {len(results)} cells")
        self.report.write_json("att_gt.json", {
            "cells": [r.to_dict() for r in results],
            "estimator": estimator.options(),
            "inference": inference,
        })
        self.report.write_csv("att_gt.csv", results_frame(results))
        self.report.write_json("aggregates.json", {
            "overall": overall.to_dict(),
            "event_study": [a.to_dict() for a in aggregates[1:]],
            "groups": [a.to_dict() for a in groups],
            "inference": inference,
        })
        self.report.write_run_meta("estimate", {**self._options(), "validation": validation},
                                   seed=inference.get("seed"), stamp=self.args.stamp)
        return 0

    def _inference(self, estimands: Sequence[Any], threads: int) -> Dict[str, Any]:
        """Fill se and ci on every estimand; bootstrap when draws > 0, else analytic."""
        infl = InfluenceMatrix.from_results(estimands)
        draws = self.config.get_int("BOOTSTRAP", "draws", fallback=999)
        ci_level = self.config.get_float("BOOTSTRAP", "ci_level", fallback=0.95)
        if draws > 0:
            boot = multiplier_bootstrap(
                infl,
                B=draws,
                multiplier=self.config.get("BOOTSTRAP", "multiplier", fallback="rademacher"),
                seed=self.config.get_int("BOOTSTRAP", "seed", fallback=20240101),
                ci_level=ci_level,
                se_method=self.config.get("BOOTSTRAP", "se_method", fallback="std"),
                ci_method=self.config.get("BOOTSTRAP", "ci_method", fallback="normal"),
                threads=threads,
            )
            se, lower, upper = boot.se, boot.ci_lower, boot.ci_upper
            meta = {"type": "multiplier_bootstrap", **boot.meta()}
        else:
            se = infl.analytic_se()
            z = stats.norm.ppf(0.5 + ci_level / 2.0)
            lower, upper = infl.estimates - z * se, infl.estimates + z * se
            meta = {"type": "analytic", "ci_level": ci_level, "seed": None}
        for item, s, lo, hi in zip(estimands, se, lower, upper):
            item.se, item.ci_lower, item.ci_upper = float(s), float(lo), float(hi)
        return meta

    def cmd_decompose(self) -> int:
        data = self._load()
        analyzer = TwfeAnalyzer(self.config)
        fit = analyzer.fit(data)
        fits = {fit.mode: fit}
        if fit.mode is FitMode.TWO_PERIOD:
            fits[FitMode.MULTI_PERIOD] = analyzer.fit(data, FitMode.MULTI_PERIOD)

        auditor = BalanceAuditor(self.config)
        frames, checks = [], {}
        for mode, each in fits.items():
            for variant in analyzer.weights(each, data).values():
                frames.append(variant.to_frame())
                if variant.variant.implicit:
                    value = auditor.self_check(variant, data)
                    checks[variant.variant.value] = {"alpha": each.alpha, "reconstruction": value}
                    if abs(value - each.alpha) > RECONSTRUCTION_TOLERANCE * max(1.0, abs(each.alpha)):
                        raise NumericalError("implicit weights do not reproduce alpha",
                                             variant=variant.variant.value, alpha=each.alpha,
                                             reconstruction=value)

        oracle = None
        if self.args.config:
            oracle = oracle_conditional_atts(DgpConfig.load(self.args.config), data)
        decomposition = analyzer.decompose(fit, data, oracle=oracle, reference=self.args.reference or "zero")

        self.report.write_json("twfe.json", {
            **fit.to_dict(),
            "x_names": list(data.x_names),
            "z_names": list(data.z_names),
        })
        self.report.write_csv("weights.csv", pd.concat(frames, ignore_index=True))
        self.report.write_json("decomposition.json", {**decomposition.to_dict(), "implicit_checks": checks})
        self.report.write_run_meta("decompose", self._options(), stamp=self.args.stamp)
        return 0

    def cmd_diagnose(self) -> int:
        data = self._load()
        analyzer = TwfeAnalyzer(self.config)
        fit = analyzer.fit(data)
        implicit = analyzer.weights(fit, data)["implicit"]
        auditor = BalanceAuditor(self.config, parse_columns(self.args.functions))
        reports = [auditor.audit(implicit, data)]
        auditor.self_check(implicit, data)

        if self.args.benchmark:
            estimator = GroupTimeEstimator(self.config, threads=self._threads())
            fits = [fit_gps(data, g, t, link=estimator.link, comparison=estimator.comparison,
                            base_period=estimator.base_period, terms=estimator.gps_terms,
                            max_iter=estimator.max_iter,
                            tolerance=estimator.tolerance, rank_tolerance=estimator.rank_tolerance)
                    for g, t in data.cells()]
            reports.append(auditor.benchmark(data, fits))

        self.report.write_json("balance.json", {r.source: r.to_dict() for r in reports})
        frame = pd.concat([r.to_frame().assign(source=r.source) for r in reports], ignore_index=True)
        self.report.write_csv("balance.csv", frame)

        columns = ["panel", "function", "treated_mean", "comparison_mean", "difference", "std_difference"]
        for report in reports:
            for name in report.tables:
                title = f"{report.source} balance, table {name}"
                sys.stdout.write(self.report.render_table(report.table(name)[columns], title=title))
                sys.stdout.write("\n")
        self.report.write_run_meta("diagnose", self._options(), stamp=self.args.stamp)
        return 0

    def cmd_simulate(self) -> int:
        generator = DataGenerator(self.config)
        dgp_config = generator.config_for(self.args.preset, self.args.config, self.args.n, self.args.seed)
        data, oracle = generator.generate(dgp_config, self.args.oracle_method)

        self.files.write_csv(data, str(self.report.path("panel.csv")))
        self.report.write_json("oracle.json", oracle.to_dict())
        dgp_config.save(str(self.report.path("dgp_config.json")))
        self.logger.info(f"Oracle ATT^O = {oracle.overall:.6g} ({oracle.method})")
        self.report.write_run_meta("simulate", self._options(), seed=dgp_config.seed, stamp=self.args.stamp)
        return 0

    def run(self) -> int:
        handler = getattr(self, f"cmd_{self.args.command}")
        try:
            return handler()
        except DidForgeError as e:
            self.logger.error(f"{self.args.command} failed: {e.code}: {e.message}")
            self.report.write_error(e.to_dict())
            return e.exit_code
        except (FileNotFoundError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
            self.logger.error(f"{self.args.command} failed reading input: {e}")
            self.report.write_error({"error": type(e).__name__, "message": str(e), "context": {}})
            return EXIT_INPUT


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    return DidForgeApp(args).run()
