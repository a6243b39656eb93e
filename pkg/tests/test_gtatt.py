import numpy as np
import pytest
from numpy.testing import assert_allclose

from src.dgp import draw_panel, violation_preset
from src.exceptions import EmptyComparison, InvalidConfig, MissingCell, NoEligibleGroup
from src.gtatt import (
    EstimationMethod,
    GroupTimeEstimator,
    aggregate_event_study,
    aggregate_group,
    aggregate_overall,
    att_gt_dr,
    att_gt_ipw,
    att_gt_ra,
    base_index,
    cell_design,
    event_times,
    fit_gps,
    results_frame,
)
from src.panel import PanelDataset


@pytest.fixture(scope="module")
def clean_panel():
    data, _ = draw_panel(violation_preset("clean", n_units=3000, seed=11))
    return data


@pytest.fixture
def ra_results(staggered_panel):
    return GroupTimeEstimator(method="ra").estimate_all(staggered_panel)


class TestCellSetup:
    def test_base_index(self):
        assert base_index(4) == 3
        assert base_index(4, "universal") == 1
        with pytest.raises(InvalidConfig):
            base_index(4, "previous")

    def test_cell_design_blocks(self, staggered_panel):
        design, names = cell_design(staggered_panel, 3, 4)
        assert names == ["intercept", "d_x1", "x1_base", "z1"]
        assert_allclose(design[:, 1], staggered_panel.x_tv[:, 3, 0] - staggered_panel.x_tv[:, 1, 0])
        _, names = cell_design(staggered_panel, 3, 4, terms=("z",))
        assert names == ["intercept", "z1"]

    def test_unknown_block(self, staggered_panel):
        with pytest.raises(InvalidConfig):
            cell_design(staggered_panel, 2, 2, terms=("change", "squares"))

    def test_not_a_cell(self, staggered_panel):
        with pytest.raises(InvalidConfig):
            att_gt_ra(staggered_panel, 3, 2)

    def test_empty_comparison(self, panel_factory, rng):
        data = panel_factory(rng, n=90, T=3, never_treated=False)
        with pytest.raises(EmptyComparison):
            att_gt_ra(data, 3, 3)


class TestEstimators:
    def test_ra_without_covariates_is_plain_did(self, rng):
        n = 300
        group = np.array([2, 3])[np.arange(n) % 2]
        y = rng.standard_normal((n, 2))
        data = PanelDataset(outcome=y, x_tv=np.zeros((n, 2, 0)), z_ti=np.zeros((n, 0)), group=group)
        dy = y[:, 1] - y[:, 0]
        result = att_gt_ra(data, 2, 2)
        assert result.estimate == pytest.approx(dy[group == 2].mean() - dy[group == 3].mean(), abs=1e-12)

    @pytest.mark.parametrize("method", ["ra", "ipw", "dr"])
    def test_clean_design_recovers_effect(self, clean_panel, method):
        estimator = GroupTimeEstimator(method=method)
        results = estimator.estimate_all(clean_panel)
        assert [(r.g, r.t) for r in results] == clean_panel.cells()
        assert aggregate_overall(results, clean_panel).estimate == pytest.approx(2.0, abs=0.3)

    def test_influence_columns_center_at_zero(self, staggered_panel):
        for fn in (att_gt_ra, att_gt_ipw, att_gt_dr):
            result = fn(staggered_panel, 2, 3)
            assert result.influence.shape == (staggered_panel.n_units,)
            assert np.mean(result.influence) == pytest.approx(0.0, abs=1e-6)

    def test_dr_survives_misspecified_propensity(self, staggered_panel):
        dr = att_gt_dr(staggered_panel, 2, 4, gps_terms=("z",))
        ra = att_gt_ra(staggered_panel, 2, 4)
        assert dr.estimate == pytest.approx(ra.estimate, abs=0.3)

    def test_ipw_reuses_supplied_fit(self, staggered_panel):
        gps = fit_gps(staggered_panel, 3, 3, link="probit")
        assert gps.converged
        result = att_gt_ipw(staggered_panel, 3, 3, gps=gps)
        assert_allclose(result.gps_coefficients, gps.coefficients)
        with pytest.raises(InvalidConfig):
            att_gt_ipw(staggered_panel, 2, 3, gps=gps)

    def test_result_record(self, staggered_panel):
        result = att_gt_dr(staggered_panel, 2, 3)
        record = result.to_dict()
        assert (record["g"], record["t"], record["e"]) == (2, 3, 1)
        assert record["method"] == "dr"
        assert 0.0 < record["gps_min"] <= record["gps_max"] < 1.0

    def test_universal_base_period(self, staggered_panel):
        result = att_gt_ra(staggered_panel, 3, 4, base_period="universal")
        assert result.base_period == 1


class TestAggregation:
    def test_overall_weights(self, ra_results, staggered_panel):
        overall = aggregate_overall(ra_results, staggered_panel)
        lookup = {(r.g, r.t): r.estimate for r in ra_results}
        assert sum(overall.weights.values()) == pytest.approx(1.0)
        assert overall.estimate == pytest.approx(sum(w * lookup[c] for c, w in overall.weights.items()))
        assert overall.estimate == pytest.approx(1.0, abs=0.4)

    def test_group_average(self, ra_results, staggered_panel):
        group = aggregate_group(ra_results, staggered_panel, 3)
        expected = np.mean([r.estimate for r in ra_results if r.g == 3])
        assert group.estimate == pytest.approx(expected)
        assert group.label == "group_3"

    def test_event_study(self, ra_results, staggered_panel):
        assert event_times(staggered_panel) == [0, 1, 2]
        es = aggregate_event_study(ra_results, staggered_panel, 1)
        assert set(es.weights) == {(2, 3), (3, 4)}
        assert sum(es.weights.values()) == pytest.approx(1.0)
        assert es.label == "es_1"

    def test_negative_event_time(self, ra_results, staggered_panel):
        with pytest.raises(NoEligibleGroup):
            aggregate_event_study(ra_results, staggered_panel, -1)
        with pytest.raises(NoEligibleGroup):
            aggregate_event_study(ra_results, staggered_panel, 3)

    def test_missing_cell(self, ra_results, staggered_panel):
        with pytest.raises(MissingCell):
            aggregate_overall(ra_results[1:], staggered_panel)

    def test_share_term_enters_influence(self, ra_results, staggered_panel):
        overall = aggregate_overall(ra_results, staggered_panel)
        assert not np.allclose(overall.influence, overall.influence_fixed_shares)


class TestGroupTimeEstimator:
    def test_config_defaults(self, config):
        estimator = GroupTimeEstimator(config)
        assert estimator.method is EstimationMethod.DR
        assert estimator.options()["comparison"] == "notyet"

    def test_invalid_settings(self):
        with pytest.raises(InvalidConfig):
            GroupTimeEstimator(method="ols")
        with pytest.raises(InvalidConfig):
            GroupTimeEstimator(base_period="first")

    def test_threads_do_not_change_results(self, staggered_panel):
        serial = GroupTimeEstimator(method="dr", threads=1).estimate_all(staggered_panel)
        pooled = GroupTimeEstimator(method="dr", threads=4).estimate_all(staggered_panel)
        assert [(r.g, r.t) for r in pooled] == [(r.g, r.t) for r in serial]
        assert_allclose([r.estimate for r in pooled], [r.estimate for r in serial], rtol=0, atol=0)

    def test_aggregate_and_frame(self, ra_results, staggered_panel):
        aggregates = GroupTimeEstimator(method="ra").aggregate(ra_results, staggered_panel)
        assert [a.label for a in aggregates] == ["overall", "es_0", "es_1", "es_2"]
        frame = results_frame(ra_results)
        assert len(frame) == len(staggered_panel.cells())
        assert "or_coefficients" not in frame.columns

    def test_gps_summaries(self, staggered_panel):
        results = GroupTimeEstimator(method="ipw").estimate_all(staggered_panel)
        summaries = GroupTimeEstimator.gps_summaries(results)
        assert set(summaries) == set(staggered_panel.cells())
