import numpy as np
import pytest

from src.exceptions import InvalidConfig, RankDeficient
from src.simulation import SimulationRunner


def test_small_run_shapes(config):
    runner = SimulationRunner("clean", ["twfe", "ra"], config=config, n_units=300)
    result = runner.simulate(n_sim=3, first_seed=10)
    assert list(result.estimates["seed"]) == [10, 11, 12]
    assert set(result.summaries) == {"twfe", "ra"}
    assert result.summaries["twfe"].truth == 2.0
    assert result.summaries["twfe"].coverage is None
    assert 0.0 <= result.summaries["ra"].coverage <= 1.0
    assert "share_negative_mean" in result.summaries["twfe"].to_dict()
    assert len(result.to_frame()) == 2


def test_named_variants(config):
    runner = SimulationRunner("clean", ["dr"], config=config, n_units=300,
                              estimator_options={"dr_or_wrong": {"method": "dr", "or_terms": ("z",)}})
    assert runner.estimators == ["dr", "dr_or_wrong"]
    result = runner.simulate(n_sim=2)
    assert np.isfinite(result.summaries["dr_or_wrong"].mean)


def test_unknown_estimator():
    with pytest.raises(InvalidConfig):
        SimulationRunner("clean", ["twfe", "lasso"])


@pytest.mark.slow
def test_clean_design_is_unbiased(config):
    result = SimulationRunner("clean", ["twfe", "dr"], config=config, n_units=2000).simulate(n_sim=60)
    for name in ("twfe", "dr"):
        assert result.summaries[name].bias_in_se < 3.5, str(result.summaries[name])


@pytest.mark.slow
def test_level_dependent_trends_bias_twfe_only(config):
    result = SimulationRunner("violate_B_levels", ["twfe", "dr"], config=config, n_units=2000).simulate(n_sim=60)
    assert result.summaries["twfe"].bias_in_se > 3.5
    assert result.summaries["dr"].bias_in_se < 3.5


@pytest.mark.slow
def test_nonlinear_trend_moves_twfe(config):
    result = SimulationRunner("violate_C_nonlinear", ["twfe"], config=config, n_units=2000).simulate(n_sim=40)
    assert result.summaries["twfe"].bias != 0.0


@pytest.mark.slow
def test_dr_coverage_near_nominal(config):
    result = SimulationRunner("clean", ["dr"], config=config, n_units=1000).simulate(n_sim=100)
    assert 0.85 <= result.summaries["dr"].coverage <= 1.0


@pytest.mark.slow
def test_base_period_choice_agrees_under_parallel_trends(config):
    runner = SimulationRunner("clean", ["ra"], config=config, n_units=4000,
                              estimator_options={"ra_universal": {"method": "ra", "base_period": "universal"}})
    frame = runner.simulate(n_sim=40).estimates
    gap = (frame["ra_estimate"] - frame["ra_universal_estimate"]).to_numpy()
    mc_se = gap.std(ddof=1) / np.sqrt(gap.size)
    assert abs(gap.mean()) <= 3.0 * mc_se


def test_failed_twfe_replication_keeps_its_columns(config, monkeypatch):
    runner = SimulationRunner("clean", ["twfe", "ra"], config=config, n_units=300)
    fit = runner._twfe.fit
    calls = []

    def flaky_fit(data, *args, **kwargs):
        calls.append(1)
        if len(calls) == 1:
            raise RankDeficient("collinear covariates", columns=["x1"])
        return fit(data, *args, **kwargs)

    monkeypatch.setattr(runner._twfe, "fit", flaky_fit)
    frame = runner.simulate(n_sim=2).estimates
    assert list(frame.columns) == ["replication", "seed", "twfe_estimate", "twfe_se", "twfe_share_negative",
                                   "ra_estimate", "ra_se"]
    assert np.isnan(frame.loc[0, "twfe_share_negative"])
    assert np.isfinite(frame.loc[1, "twfe_share_negative"])
