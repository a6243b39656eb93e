from dataclasses import replace

import numpy as np
import pytest
from numpy.testing import assert_allclose

from src.dgp import (
    PRESETS,
    DataGenerator,
    DgpConfig,
    compute_oracle,
    draw_panel,
    generate,
    oracle_conditional_atts,
    potential_outcomes,
    violation_preset,
)
from src.exceptions import ConfigMismatch, InvalidConfig, OverlapConfigError, UnknownPreset
from src.twfe import decompose, fit_multi_period


class TestConfig:
    def test_defaults_fill_per_category_lists(self):
        config = DgpConfig(n_units=50, n_periods=3)
        assert config.categories == [2, 3, 4]
        assert config.assign_x == [[0.0], [0.0], [0.0]]
        assert config.theta == [0.0, 0.5, 1.0]
        assert not config.assignment_depends_on_covariates

    def test_without_never_treated(self):
        config = DgpConfig(n_units=50, n_periods=3, never_treated=False)
        assert config.categories == [2, 3]

    @pytest.mark.parametrize("kwargs", [{"n_periods": 1}, {"cohorts": [1, 2]}, {"cohorts": [5]},
                                        {"assign_intercept": [0.0]}, {"k": -1}])
    def test_invalid(self, kwargs):
        with pytest.raises(InvalidConfig):
            DgpConfig(**{"n_units": 20, "n_periods": 3, **kwargs})

    def test_save_and_load(self, tmp_path):
        config = violation_preset("violate_B_levels", n_units=300, seed=4)
        path = config.save(str(tmp_path / "dgp.json"))
        assert DgpConfig.load(str(path)) == config

    def test_unknown_key(self):
        with pytest.raises(InvalidConfig) as info:
            DgpConfig.from_dict({"n_units": 10, "gamma": 1.0})
        assert info.value.context["unknown"] == ["gamma"]


class TestPresets:
    def test_every_preset_builds(self):
        for name in PRESETS:
            config = violation_preset(name, n_units=200, seed=1)
            assert config.name == name
            assert config.n_units == 200

    def test_unknown_preset(self):
        with pytest.raises(UnknownPreset):
            violation_preset("violate_Z")

    def test_two_period_presets(self):
        assert violation_preset("negative_weights").n_periods == 2
        assert violation_preset("weight_reversal").n_periods == 2


class TestDraws:
    def test_same_seed_same_panel(self):
        config = violation_preset("clean", n_units=300, seed=9)
        a, tau_a = draw_panel(config)
        b, tau_b = draw_panel(config)
        assert_allclose(a.outcome, b.outcome, rtol=0, atol=0)
        assert_allclose(tau_a, tau_b, rtol=0, atol=0)
        assert a.group.tolist() == b.group.tolist()

    def test_different_seed_different_panel(self):
        a, _ = draw_panel(violation_preset("clean", n_units=300, seed=1))
        b, _ = draw_panel(violation_preset("clean", n_units=300, seed=2))
        assert not np.allclose(a.outcome, b.outcome)

    def test_effects_only_after_adoption(self):
        data, tau = draw_panel(violation_preset("heterogeneous_att", n_units=400, seed=3))
        periods = np.arange(1, data.n_periods + 1)
        post = periods[None, :] >= data.group[:, None]
        assert np.all(np.isfinite(tau[post]))
        assert np.all(np.isnan(tau[~post]))

    def test_potential_outcomes(self):
        config = violation_preset("clean", n_units=300, seed=5)
        data, _ = draw_panel(config)
        y0, y1 = potential_outcomes(config)
        observed = np.where(np.isnan(y1), y0, y1)
        assert_allclose(observed, data.outcome)
        assert_allclose(np.nanmean(y1 - y0), 2.0)

    def test_overlap_failure(self):
        config = DgpConfig(n_units=500, n_periods=2, assign_intercept=[12.0, 0.0])
        with pytest.raises(OverlapConfigError):
            draw_panel(config)


class TestOracle:
    def test_analytic_when_assignment_ignores_covariates(self):
        config = DgpConfig(n_units=100, n_periods=4, tau_event_slope=0.5)
        oracle = compute_oracle(config)
        assert oracle.method == "analytic"
        assert oracle.cells[(2, 4)] == pytest.approx(3.0)
        assert oracle.event_study[0] == pytest.approx(2.0)
        assert sum(oracle.group_probabilities.values()) == pytest.approx(1.0)

    def test_constant_effect_is_exact(self):
        oracle = compute_oracle(violation_preset("clean", n_units=200), draws=2000, batches=4)
        assert oracle.method == "analytic"
        assert oracle.overall == 2.0
        assert oracle.overall_se == 0.0

    def test_monte_carlo_with_covariate_effects(self):
        oracle = compute_oracle(violation_preset("heterogeneous_att", n_units=200, seed=3), draws=4000, batches=4)
        assert oracle.method == "monte_carlo"
        assert oracle.draws == 4000
        assert oracle.overall_se > 0

    def test_monte_carlo_agrees_with_closed_form(self):
        config = DgpConfig(n_units=100, n_periods=4, tau_group_slope=0.25, tau_event_slope=0.5,
                           tau_x=[0.8], x_drift=0.3, x_shift=[0.2, 0.0, -0.1, 0.0], seed=17)
        exact = compute_oracle(config, method="analytic")
        simulated = compute_oracle(config, method="monte_carlo", draws=40_000, batches=20)
        assert simulated.method == "monte_carlo"
        for cell, value in exact.cells.items():
            assert abs(simulated.cells[cell] - value) <= 3.5 * simulated.cell_se[cell] + 1e-12, cell
        assert abs(simulated.overall - exact.overall) <= 3.0 * simulated.overall_se + 1e-12
        for e, value in exact.event_study.items():
            assert abs(simulated.event_study[e] - value) <= 3.5 * simulated.event_study_se[e] + 1e-12, e

    def test_analytic_refused_when_assignment_uses_covariates(self):
        with pytest.raises(InvalidConfig):
            compute_oracle(violation_preset("clean"), method="analytic")

    def test_generate_adds_sample_values(self):
        data, oracle = generate(violation_preset("clean", n_units=400, seed=2), oracle_draws=2000,
                                oracle_batches=4)
        assert oracle.sample_overall == pytest.approx(2.0)
        assert set(oracle.sample_cells) == set(data.cells())
        payload = oracle.to_dict()
        assert payload["overall"]["value"] == 2.0
        assert len(payload["att_gt"]) == len(data.cells())

    def test_conditional_atts(self):
        config = violation_preset("heterogeneous_att", n_units=300, seed=6)
        data, tau = draw_panel(config)
        assert_allclose(oracle_conditional_atts(config, data), tau)

    def test_config_mismatch(self):
        config = violation_preset("clean", n_units=300, seed=6)
        data, _ = draw_panel(config)
        with pytest.raises(ConfigMismatch):
            oracle_conditional_atts(replace(config, n_units=301), data)


class TestViolations:
    def test_constant_effect_oracle_weighting(self):
        config = violation_preset("clean", n_units=6000, seed=21)
        data, tau = draw_panel(config)
        report = decompose(fit_multi_period(data), data, oracle=tau)
        assert report.oracle["weighted_att"] == pytest.approx(2.0, abs=1e-10)

    def test_generator_uses_config(self, config):
        generator = DataGenerator(config)
        dgp = generator.config_for("weight_reversal", n_units=500, seed=3)
        assert (dgp.name, dgp.n_units, dgp.seed) == ("weight_reversal", 500, 3)

    def test_generator_loads_json(self, config, tmp_path):
        path = violation_preset("clean", n_units=120).save(str(tmp_path / "dgp.json"))
        dgp = DataGenerator(config).config_for(config_path=str(path), seed=8)
        assert (dgp.n_units, dgp.seed) == (120, 8)
