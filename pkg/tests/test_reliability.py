import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from perften.data_io import PerformanceRecord
from perften.errors import DomainError, InfeasibleFitError
from perften.models import MeanBaseline, make_model, vocabulary_for
from perften.reliability import (
    CalibrationReport,
    PredictionDistribution,
    bootstrap_distributions,
    calibration_error,
    ci_accuracy,
    default_levels,
    ece,
    parse_levels,
    percentile_ci,
    quantile,
    reliability_diagram,
    write_diagram_csv,
)

samples_st = hnp.arrays(float, st.integers(1, 60), elements=st.floats(-1e6, 1e6))
gamma_st = st.floats(0.01, 1.0)


class TestQuantile:
    def test_interval_examples(self):
        s = [1.0, 2.0, 3.0, 4.0, 5.0]
        ci = percentile_ci(s, 1.0)
        assert (ci.lower, ci.upper) == (1.0, 5.0)
        ci = percentile_ci(s, 0.5)
        assert (ci.lower, ci.upper) == (2.0, 4.0)

    def test_constant_samples(self):
        for g in default_levels():
            ci = percentile_ci(np.full(7, 3.5), g)
            assert ci.lower == ci.upper == 3.5

    @settings(max_examples=200, deadline=None)
    @given(samples_st, st.floats(0.0, 1.0))
    def test_matches_numpy_linear(self, s, p):
        assert quantile(s, p) == pytest.approx(np.quantile(s, p, method="linear"), rel=1e-12, abs=1e-9)

    def test_domain(self):
        with pytest.raises(DomainError):
            percentile_ci([1.0, 2.0], 0.0)
        with pytest.raises(DomainError):
            percentile_ci([1.0, 2.0], 1.5)

    @settings(max_examples=150, deadline=None)
    @given(samples_st, gamma_st, gamma_st)
    def test_nesting(self, s, g1, g2):
        lo, hi = sorted((g1, g2))
        a, b = percentile_ci(s, lo), percentile_ci(s, hi)
        assert a.lower <= a.upper
        assert b.lower <= a.lower and a.upper <= b.upper


def three_interval_construction():
    dists = [PredictionDistribution("1", [0.0, 1.0, 2.0]),
             PredictionDistribution("2", [5.0, 6.0, 7.0]),
             PredictionDistribution("3", [0.0, 1.0, 2.0])]
    return [1.0, 6.5, 3.0], dists


class TestCiAccuracy:
    def test_two_of_three(self):
        actuals, dists = three_interval_construction()
        assert ci_accuracy(actuals, dists, 1.0) == 2 / 3

    def test_all_inside(self):
        dists = [PredictionDistribution(str(i), [0.0, 10.0]) for i in range(4)]
        assert ci_accuracy([1, 2, 3, 4], dists, 1.0) == 1.0

    def test_endpoint_not_covered(self):
        d = PredictionDistribution("a", [1.0, 2.0, 3.0])
        assert ci_accuracy([3.0], [d], 1.0) == 0.0
        assert ci_accuracy([1.0], [d], 1.0) == 0.0
        assert not percentile_ci(d, 0.5).contains(percentile_ci(d, 0.5).lower)

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.tuples(samples_st, st.floats(-1e6, 1e6)), min_size=1, max_size=10))
    def test_non_decreasing_in_gamma(self, pairs):
        dists = [PredictionDistribution(str(i), s) for i, (s, _) in enumerate(pairs)]
        actuals = [y for _, y in pairs]
        acc = [ci_accuracy(actuals, dists, g) for g in default_levels()]
        assert all(b >= a for a, b in zip(acc, acc[1:]))


class TestCalibrationError:
    def test_two_level_example(self):
        d = PredictionDistribution("x", [0.0, 1.0, 2.0, 3.0, 4.0])
        rep = calibration_error([2.0, 0.5, 3.5, 10.0], [d] * 4, [0.5, 1.0])
        assert rep.acc == [0.25, 0.75]
        assert abs(rep.ce - 0.5) < 1e-12
        assert abs(rep.mean_deviation - 0.25) < 1e-12

    def test_width_and_coverage_fixture(self):
        dists = [PredictionDistribution("a", [1.0, 2.0, 3.0]),
                 PredictionDistribution("b", [5.0, 5.0, 5.0]),
                 PredictionDistribution("c", [0.0, 10.0])]
        rep = calibration_error([2.0, 5.0, 10.0], dists)
        assert abs(rep.average_width - 4.0) < 1e-12
        assert abs(rep.coverage - 1 / 3) < 1e-12
        assert rep.coverage == rep.acc[-1]

    def test_perfect_calibration(self):
        d = PredictionDistribution("x", [0.0, 1.0, 2.0, 3.0, 4.0])
        # 2 lies inside both intervals, 0.5 only inside the gamma=1 range
        rep = calibration_error([2.0, 0.5], [d, d], [0.5, 1.0])
        assert rep.acc == [0.5, 1.0]
        assert rep.ce == 0.0

    def test_nothing_covered(self):
        dists = [PredictionDistribution(str(i), np.full(5, 1.0)) for i in range(3)]
        rep = calibration_error([0.0, 2.0, 1.0], dists)
        assert rep.coverage == 0.0
        assert rep.ce == pytest.approx(sum(default_levels()), abs=1e-12)
        assert rep.average_width == 0.0

    def test_coverage_without_unit_level(self):
        d = PredictionDistribution("x", [0.0, 1.0, 2.0, 3.0, 4.0])
        rep = calibration_error([0.5], [d], [0.1, 0.5])
        assert rep.levels == [0.1, 0.5]
        assert rep.acc == [0.0, 0.0]
        assert rep.coverage == 1.0

    def test_bad_levels(self):
        d = PredictionDistribution("x", [0.0, 1.0])
        for bad in ([0.5, 0.4], [0.0, 0.5], [0.5, 1.2]):
            with pytest.raises(DomainError):
                calibration_error([0.5], [d], bad)

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.tuples(samples_st, st.floats(-1e3, 1e3)), min_size=1, max_size=8),
           st.floats(-1e3, 1e3))
    def test_shift_invariance(self, pairs, c):
        pairs = [(np.round(s, 3), round(y, 3)) for s, y in pairs]
        c = round(c, 1)
        dists = [PredictionDistribution(str(i), s) for i, (s, _) in enumerate(pairs)]
        actuals = np.array([y for _, y in pairs])
        shifted = [PredictionDistribution(d.test_id, d.samples + c) for d in dists]
        a = calibration_error(actuals, dists)
        b = calibration_error(actuals + c, shifted)
        # float shifts can move values across an endpoint only by round-off; exclude those cases
        near = any(np.min(np.abs(percentile_ci(d, g).lower - y)) < 1e-6 or
                   np.min(np.abs(percentile_ci(d, g).upper - y)) < 1e-6
                   for d, y in zip(dists, actuals) for g in default_levels())
        if not near:
            assert a.acc == b.acc and a.ce == b.ce and a.coverage == b.coverage
        for d, s in zip(dists, shifted):
            assert percentile_ci(s, 0.5).lower == pytest.approx(percentile_ci(d, 0.5).lower + c, abs=1e-6)

    def test_ce_zero_iff_on_diagonal(self):
        rep = CalibrationReport([0.5, 1.0], [0.5, 1.0], 0.0, 0.0, 0.0, 1.0)
        assert all(a == g for g, a in reliability_diagram(rep))

    def test_report_json_round_trip(self, tmp_path):
        d = PredictionDistribution("x", [0.0, 1.0, 2.0])
        rep = calibration_error([1.0, 5.0], [d, d], K=3, seed=7, model="baseline")
        rep.write_json(tmp_path / "c.json")
        back = CalibrationReport.read_json(tmp_path / "c.json")
        assert back.to_dict() == rep.to_dict()
        for key in ("levels", "acc", "CE", "average_width", "coverage", "K", "seed"):
            assert key in rep.to_dict()


class TestEce:
    def test_all_confident_and_correct(self):
        assert ece([1.0, 1.0, 1.0], [True, True, True]) == 0.0

    def test_two_sample_example(self):
        assert abs(ece([0.9, 0.9], [True, False]) - 0.4) < 1e-12

    def test_domain(self):
        with pytest.raises(DomainError):
            ece([1.2], [True])
        with pytest.raises(DomainError):
            ece([-0.1], [True])

    def test_zero_confidence_in_first_bin(self):
        assert ece([0.0, 0.1], [False, False]) == pytest.approx(0.05)

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.tuples(st.floats(0, 1), st.booleans()), min_size=1, max_size=40), st.randoms())
    def test_order_invariant(self, rows, rnd):
        conf, corr = zip(*rows)
        shuffled = list(rows)
        rnd.shuffle(shuffled)
        c2, k2 = zip(*shuffled)
        assert ece(conf, corr) == pytest.approx(ece(c2, k2), abs=1e-12)
        assert 0.0 <= ece(conf, corr) <= 1.0

    def test_zero_when_bin_accuracy_matches_confidence(self):
        conf = [0.25] * 4 + [0.75] * 4
        corr = [True, False, False, False, True, True, True, False]
        assert ece(conf, corr, n_bins=4) == 0.0


class TestDiagram:
    def test_default_grid(self):
        levels = default_levels()
        assert len(levels) == 20 and levels[0] == 0.05 and levels[-1] == 1.0
        np.testing.assert_array_equal(parse_levels("0.05:1.00:0.05"), levels)

    def test_rows_sorted(self, tmp_path):
        rep = CalibrationReport([0.5, 1.0], [0.4, 0.9], 0.2, 0.1, 1.0, 0.9)
        assert reliability_diagram(rep) == [(0.5, 0.4), (1.0, 0.9)]
        write_diagram_csv(tmp_path / "d.csv", rep)
        assert (tmp_path / "d.csv").read_text() == "gamma,accuracy\n0.5,0.4\n1.0,0.9\n"

    def test_empty_levels(self):
        assert reliability_diagram(CalibrationReport([], [], 0.0, 0.0, 0.0, 0.0)) == []

    def test_parse_errors(self):
        for bad in ("0.5", "a:b:c", "0.5:0.1:0.1", "0.1:1.0:0", "0:1:0.1"):
            with pytest.raises(ValueError):
                parse_levels(bad)


def records(scores):
    return [PerformanceRecord({"row": f"r{i}", "col": "c"}, float(s)) for i, s in enumerate(scores)]


class TestBootstrap:
    def test_constant_training_scores(self):
        dists = bootstrap_distributions(records([0, 0, 0]), MeanBaseline, records([5]), K=50, seed=0)
        assert np.all(dists[0].samples == 0.0) and dists[0].K == 50

    def test_resampled_mean(self):
        dists = bootstrap_distributions(records([0, 1]), MeanBaseline, records([0]), K=1000, seed=3)
        assert abs(dists[0].samples.mean() - 0.5) < 0.05
        assert set(np.unique(dists[0].samples)) <= {0.0, 0.5, 1.0}

    def test_deterministic(self):
        a = bootstrap_distributions(records([1, 2, 4]), MeanBaseline, records([0]), K=2, seed=11)
        b = bootstrap_distributions(records([1, 2, 4]), MeanBaseline, records([0]), K=2, seed=11)
        np.testing.assert_array_equal(a[0].samples, b[0].samples)

    def test_models_shared_across_test_points(self):
        dists = bootstrap_distributions(records(range(10)), MeanBaseline, records([0, 0, 0]), K=30, seed=1)
        np.testing.assert_array_equal(dists[0].samples, dists[1].samples)

    def test_infeasible_resamples_redrawn(self):
        train = [PerformanceRecord({"a": a, "b": b}, 1.0 + i) for i, (a, b) in
                 enumerate([("x", "p"), ("x", "q"), ("y", "p"), ("y", "q")])]
        vocab = vocabulary_for(train)
        factory = lambda: make_model("cp", vocab, {"rank": 1})
        dists = bootstrap_distributions(train, factory, train, K=20, seed=0)
        assert all(d.K == 20 for d in dists)

    def test_gives_up_after_budget(self):
        class Never:
            def fit(self, recs):
                raise InfeasibleFitError("no")

        with pytest.raises(InfeasibleFitError):
            bootstrap_distributions(records([1, 2]), Never, records([0]), K=3, seed=0)

    def test_k_minimum(self):
        with pytest.raises(ValueError):
            bootstrap_distributions(records([1, 2]), MeanBaseline, records([0]), K=1)

    def test_distribution_invariants(self):
        with pytest.raises(ValueError):
            PredictionDistribution("x", [1.0, np.inf])
        d = PredictionDistribution("x", [3.0, 1.0, 2.0])
        assert d.K == 3 and d.width == 2.0
