import numpy as np
import pytest
from numpy.testing import assert_allclose

from src.exceptions import InvalidConfig, MissingNuisance, TooFewDraws
from src.gtatt import GroupTimeEstimator, aggregate_overall, att_gt_ra
from src.inference import (
    InfluenceMatrix,
    Multiplier,
    build_influence,
    draw_multipliers,
    multiplier_bootstrap,
)
from src.panel import PanelDataset


@pytest.fixture
def influence(staggered_panel):
    results = GroupTimeEstimator(method="dr").estimate_all(staggered_panel)
    return InfluenceMatrix.from_results([*results, aggregate_overall(results, staggered_panel)])


class TestInfluence:
    def test_rebuild_matches_stored_column(self, staggered_panel):
        result = att_gt_ra(staggered_panel, 2, 2)
        assert_allclose(build_influence(result, staggered_panel), result.influence)

    def test_difference_in_means_closed_form(self, rng):
        n = 200
        group = np.where(np.arange(n) < 70, 2, 3)
        y = rng.standard_normal((n, 2))
        data = PanelDataset(outcome=y, x_tv=np.zeros((n, 2, 0)), z_ti=np.zeros((n, 0)), group=group)
        dy = y[:, 1] - y[:, 0]
        d = (group == 2).astype(float)
        p = d.mean()
        expected = d / p * (dy - dy[d == 1].mean()) - (1 - d) / (1 - p) * (dy - dy[d == 0].mean())
        assert_allclose(att_gt_ra(data, 2, 2).influence, expected, atol=1e-10)

    def test_columns_are_zero_outside_the_cell(self, staggered_panel):
        result = att_gt_ra(staggered_panel, 3, 3)
        outside = ~(staggered_panel.group >= 3)
        assert_allclose(result.influence[outside], 0.0)

    def test_missing_nuisance(self, staggered_panel):
        result = att_gt_ra(staggered_panel, 2, 2)
        result.nuisance = None
        with pytest.raises(MissingNuisance):
            build_influence(result)

    def test_panel_size_mismatch(self, staggered_panel, two_period_panel):
        result = att_gt_ra(staggered_panel, 2, 2)
        with pytest.raises(MissingNuisance):
            build_influence(result, two_period_panel)

    def test_matrix_labels(self, influence, staggered_panel):
        assert influence.labels[0] == "att_2_2"
        assert influence.labels[-1] == "overall"
        assert influence.values.shape == (staggered_panel.n_units, len(staggered_panel.cells()) + 1)
        assert np.all(influence.analytic_se() > 0)

    def test_empty_matrix(self):
        with pytest.raises(InvalidConfig):
            InfluenceMatrix.from_results([])


class TestMultipliers:
    @pytest.mark.parametrize("kind", list(Multiplier))
    def test_mean_zero_variance_one(self, kind):
        v = draw_multipliers(np.random.default_rng(3), 200_000, kind)
        assert v.mean() == pytest.approx(0.0, abs=0.01)
        assert v.var() == pytest.approx(1.0, abs=0.01)

    def test_mammen_support(self):
        v = draw_multipliers(np.random.default_rng(3), 1000, Multiplier.MAMMEN)
        assert_allclose(np.unique(v), [(1 - np.sqrt(5)) / 2, (1 + np.sqrt(5)) / 2])


class TestBootstrap:
    def test_seed_reproduces_exactly(self, influence):
        a = multiplier_bootstrap(influence, B=299, seed=7)
        b = multiplier_bootstrap(influence, B=299, seed=7)
        assert_allclose(a.se, b.se, rtol=0, atol=0)
        assert_allclose(a.ci_lower, b.ci_lower, rtol=0, atol=0)

    def test_threads_do_not_change_draws(self, influence):
        serial = multiplier_bootstrap(influence, B=250, seed=11, keep_replicates=True)
        pooled = multiplier_bootstrap(influence, B=250, seed=11, threads=3, keep_replicates=True)
        assert_allclose(pooled.replicates, serial.replicates, rtol=0, atol=0)

    def test_se_tracks_analytic(self, influence):
        result = multiplier_bootstrap(influence, B=999, seed=5)
        assert_allclose(result.se, result.analytic_se, rtol=0.2)

    def test_normal_interval(self, influence):
        result = multiplier_bootstrap(influence, B=500, seed=5, ci_level=0.9)
        half = result.estimates - result.ci_lower
        assert_allclose(half, 1.6448536269514722 * result.se, rtol=1e-10)
        assert_allclose(result.ci_upper - result.estimates, half, rtol=1e-10)

    def test_quantile_interval_contains_estimate(self, influence):
        result = multiplier_bootstrap(influence, B=400, seed=5, ci_method="quantile", se_method="iqr")
        assert np.all(result.ci_lower <= result.estimates)
        assert np.all(result.estimates <= result.ci_upper)
        assert result.meta()["se_method"] == "iqr"

    def test_zero_influence_gives_zero_se(self):
        infl = InfluenceMatrix(values=np.zeros((50, 2)), labels=["a", "b"], estimates=np.array([1.0, 2.0]))
        result = multiplier_bootstrap(infl, B=200)
        assert_allclose(result.se, 0.0)
        assert_allclose(result.ci_lower, [1.0, 2.0])

    def test_too_few_draws(self, influence):
        with pytest.raises(TooFewDraws):
            multiplier_bootstrap(influence, B=199)

    @pytest.mark.parametrize("kwargs", [{"multiplier": "normal"}, {"se_method": "mad"},
                                        {"ci_method": "bca"}, {"ci_level": 1.0}])
    def test_invalid_options(self, influence, kwargs):
        with pytest.raises(InvalidConfig):
            multiplier_bootstrap(influence, B=200, **kwargs)

    def test_frame_and_lookup(self, influence):
        result = multiplier_bootstrap(influence, B=200, seed=1)
        frame = result.to_frame()
        assert list(frame["label"]) == influence.labels
        assert set(result.by_label()["overall"]) == {"se", "ci_lower", "ci_upper"}
