import csv
import json
import math

import numpy as np
import pytest

from isomech.errors import ConfigurationError, ParameterError, SimulationError
from isomech.isotonic import Ranking, project_with_ranking
from isomech.mechanisms import (
    CoarseElement,
    CoarseRanking,
    IsotonicElement,
    LineElement,
    all_coarse_rankings,
    all_rankings,
    unit,
)
from isomech.simulation import (
    BLOCK,
    NoiseModel,
    candidate_rankings,
    consistency_experiment,
    counterexample_nonconvex,
    counterexample_pairwise,
    estimate_expected_utility,
    make_truth,
    monte_carlo,
    nested_cone_experiment,
    risk_curve,
    sample_noise,
    truthfulness_scan,
)
from isomech.simulation.engine import RunningStats, UtilityEstimate
from isomech.utilities import UtilitySpec

SQUARE = UtilitySpec.separable("square")


# -- noise -------------------------------------------------------------------


def test_zero_noise_is_zero():
    np.testing.assert_array_equal(sample_noise(NoiseModel.gaussian(0.0), 5, 17), np.zeros(5))


def test_noise_is_deterministic():
    model = NoiseModel.parse("laplace:0.5", seed=11)
    for draw in (0, 5, BLOCK + 3):
        np.testing.assert_array_equal(sample_noise(model, 4, draw), sample_noise(model, 4, draw))
    assert not np.array_equal(sample_noise(model, 4, 0), sample_noise(model.with_seed(12), 4, 0))
    assert not np.array_equal(sample_noise(model, 4, 0), sample_noise(model, 4, 1))


def test_draw_index_addresses_blocks():
    model = NoiseModel.gaussian(1.0, seed=3)
    block1 = model.block(3, 1)
    np.testing.assert_array_equal(sample_noise(model, 3, BLOCK + 7), block1[7])


def test_gaussian_law_of_large_numbers():
    model = NoiseModel.gaussian(1.0, seed=5)
    z = np.concatenate([model.block(1, b) for b in range(25)])[:100_000, 0]
    assert abs(z.mean()) <= 3 / math.sqrt(z.size)
    assert abs(z.var() - 1.0) <= 0.05


def test_latent_noise_is_correlated_and_exchangeable():
    model = NoiseModel.parse("latent:1:gaussian:1", seed=2)
    z = np.concatenate([model.block(3, b) for b in range(10)])
    cov = np.cov(z.T)
    np.testing.assert_allclose(np.diag(cov), 2.0, rtol=0.05)
    np.testing.assert_allclose(cov[np.triu_indices(3, 1)], 1.0, rtol=0.1)


def test_noise_parse_round_trip_and_errors():
    for text in ["gaussian:1.0", "uniform:-1.0:3.0", "laplace:0.5", "latent:0.5:gaussian:1.0"]:
        assert str(NoiseModel.parse(text)) == text
    with pytest.raises(ParameterError):
        NoiseModel.gaussian(-1.0)
    with pytest.raises(ParameterError):
        NoiseModel.parse("cauchy:1")
    with pytest.raises(ParameterError):
        sample_noise(NoiseModel.gaussian(1.0), 0, 0)


def test_moments():
    assert NoiseModel.uniform(1, 3).mean == 2.0
    assert NoiseModel.uniform(-1, 1).second_moment == pytest.approx(1 / 3)
    assert NoiseModel.laplace(0.5).second_moment == 0.5
    assert NoiseModel.parse("latent:2:gaussian:1").second_moment == 5.0


# -- engine ------------------------------------------------------------------


def test_running_stats_merge_matches_direct():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(1000, 3))
    merged = RunningStats.of(x[:300]).merge(RunningStats.of(x[300:]))
    direct = RunningStats.of(x)
    np.testing.assert_allclose(merged.mean, direct.mean, rtol=1e-13)
    np.testing.assert_allclose(merged.m2, direct.m2, rtol=1e-12)
    np.testing.assert_allclose(merged.variance, x.var(axis=0, ddof=1), rtol=1e-12)


def test_estimate_invariants():
    with pytest.raises(ParameterError):
        UtilityEstimate(1.0, 0.1, 1)
    with pytest.raises(ParameterError):
        UtilityEstimate(1.0, -0.1, 10)


def test_monte_carlo_thread_independent():
    noise = NoiseModel.gaussian(1.0, seed=9)

    def stat(z, first):
        return np.column_stack([z.sum(axis=1), np.square(z).sum(axis=1)])

    serial = monte_carlo(stat, noise, 3, 3 * BLOCK + 11, threads=1)
    parallel = monte_carlo(stat, noise, 3, 3 * BLOCK + 11, threads=4)
    np.testing.assert_array_equal(serial.mean, parallel.mean)
    np.testing.assert_array_equal(serial.m2, parallel.m2)


def test_domain_error_reports_draw_index():
    truth = np.array([0.5, 0.2])
    noise = NoiseModel.gaussian(1.0, seed=4)
    utility = UtilitySpec.separable("power:2")
    pi = Ranking.identity(2)
    with pytest.raises(SimulationError) as err:
        estimate_expected_utility(truth, IsotonicElement(pi), utility, noise, 1000)
    expected = next(
        t for t in range(1000) if project_with_ranking(truth + sample_noise(noise, 2, t), pi).min() < 0
    )
    assert err.value.draw == expected


# -- estimate_expected_utility -------------------------------------------------


def test_noiseless_estimate_is_exact():
    truth = [3.0, 2.0, 1.0]
    est = estimate_expected_utility(truth, IsotonicElement(Ranking.identity(3)), SQUARE,
                                    NoiseModel.gaussian(0.0), 200)
    assert est.mean == 14.0
    assert est.std_error == 0.0


@pytest.mark.parametrize("noise", ["gaussian:1", "uniform:0:2", "laplace:0.7"])
def test_mean_preservation(noise):
    truth = np.array([2.0, 1.5, -1.0, -3.0])
    model = NoiseModel.parse(noise, seed=1)
    est = estimate_expected_utility(truth, IsotonicElement(Ranking.identity(4)),
                                    UtilitySpec.separable("identity"), model, 20_000)
    target = truth.sum() + truth.size * model.mean
    assert abs(est.mean - target) <= 3 * est.std_error + 1e-12


def test_one_dimensional_line_closed_form():
    truth = np.array([2.5])
    noise = NoiseModel.gaussian(0.8, seed=7)
    est = estimate_expected_utility(truth, LineElement(tuple(unit(truth))), SQUARE, noise, 50_000)
    assert abs(est.mean - (6.25 + 0.64)) <= 3 * est.std_error


def test_minimum_replications():
    with pytest.raises(ParameterError):
        estimate_expected_utility([1.0], IsotonicElement(Ranking.identity(1)), SQUARE, NoiseModel.gaussian(1), 50)


# -- truthfulness scans --------------------------------------------------------


def _full_scan(truth, utility, noise, n_reps, **kw):
    reports = [IsotonicElement(pi) for pi in all_rankings(len(truth))]
    return truthfulness_scan(truth, reports, utility, noise, n_reps, **kw)


def test_scan_small_n():
    report = _full_scan([3.0, 2.0, 1.0], SQUARE, NoiseModel.gaussian(1.0, seed=0), 40_000,
                        strict_against=["rank[3,2,1]"])
    assert report.verdicts["truthful[full]"]
    assert report.verdicts["strict[rank[3,2,1]]"]
    assert report.notes["truthful_reports"] == {"full": "rank[1,2,3]"}
    assert report.notes["best_report"] == "rank[1,2,3]"
    assert len([r for r in report.rows if r.report_id.startswith("diff[")]) == 5


def test_scan_noiseless_strict():
    truth = [3.0, 2.0, 1.0]
    report = _full_scan(truth, SQUARE, NoiseModel.gaussian(0.0), 200)
    honest = report.row("rank[1,2,3]").mean
    assert honest == 14.0
    for row in report.rows:
        if row.report_id.startswith("rank[") and row.report_id != "rank[1,2,3]":
            assert row.mean < honest


def test_scan_exchangeable_noise():
    noise = NoiseModel.parse("latent:1:gaussian:1", seed=3)
    report = _full_scan([3.0, 2.0, 1.0], SQUARE, noise, 40_000)
    assert report.verdicts["truthful[full]"]


def test_scan_coarse():
    reports = [CoarseElement(c) for c in all_coarse_rankings((2, 2))]
    report = truthfulness_scan([4.0, 3.0, 2.0, 1.0], reports, UtilitySpec.separable("exponential"),
                               NoiseModel.gaussian(1.0, seed=2), 40_000)
    assert report.verdicts["truthful[coarse]"]
    assert report.notes["truthful_reports"] == {"coarse": "coarse[1,2|3,4]"}


def test_scan_multiple_partitions_checked_per_family():
    truth = [4.0, 3.0, 2.0, 1.0]
    reports = [CoarseElement(c) for c in all_coarse_rankings((2, 2))]
    reports += [IsotonicElement(pi) for pi in candidate_rankings(truth)[:6]]
    report = truthfulness_scan(truth, reports, SQUARE, NoiseModel.gaussian(1.0, seed=4), 20_000)
    assert set(report.verdicts) == {"truthful[coarse]", "truthful[full]"}
    assert report.passed


def test_scan_requires_truthful_report():
    with pytest.raises(ConfigurationError):
        truthfulness_scan([3.0, 2.0, 1.0], [IsotonicElement(Ranking.parse("3,2,1", 3))], SQUARE,
                          NoiseModel.gaussian(1.0), 200)
    with pytest.raises(ConfigurationError):
        _full_scan([3.0, 2.0], SQUARE, NoiseModel.gaussian(1.0), 200, strict_against=["rank[9]"])


def test_scan_rounds_trip_through_files(tmp_path):
    report = _full_scan([2.0, 1.0], SQUARE, NoiseModel.gaussian(1.0, seed=1), 500)
    csv_path, json_path = report.write(tmp_path / "scan")
    assert csv_path.read_text().splitlines()[0] == "report_id,mean,std_error,n_reps"
    with open(csv_path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert [r["report_id"] for r in rows] == [r.report_id for r in report.rows]
    # repr formatting round-trips floats exactly
    assert [float(r["mean"]) for r in rows] == [r.mean for r in report.rows]
    summary = json.loads(json_path.read_text())
    assert summary["format"] == "isomech-summary"
    assert summary["verdict"] == ("PASS" if report.passed else "FAIL")


def test_candidate_rankings():
    assert len(candidate_rankings([1.0, 2.0, 3.0])) == 6
    cands = candidate_rankings(np.arange(10.0), seed=1)
    assert len(cands) == 101
    assert cands[0] == Ranking.sorting(np.arange(10.0))


# -- consistency ---------------------------------------------------------------


@pytest.mark.parametrize(
    "truth,worse,swap",
    [([3.0, 2.0, 1.0], "2,1,3", (0, 1)), ([4.0, 3.0, 2.0, 1.0], "2,1,4,3", (0, 1))],
)
def test_consistency_examples(truth, worse, swap):
    pi = Ranking.parse(worse, len(truth))
    report = consistency_experiment(truth, pi, swap, SQUARE, NoiseModel.gaussian(1.0, seed=0), 20_000)
    assert report.verdicts["more_consistent_not_worse"]


def test_consistency_noiseless():
    truth = [4.0, 3.0, 2.0, 1.0]
    report = consistency_experiment(truth, Ranking.parse("2,1,4,3", 4), (0, 1), SQUARE,
                                    NoiseModel.gaussian(0.0), 200)
    diff = [r for r in report.rows if r.report_id.startswith("diff[")][0]
    # better (4,3,1.5,1.5) earns 29.5, worse (3.5,3.5,1.5,1.5) earns 29
    assert diff.mean == 0.5
    assert diff.std_error == 0.0


def test_consistency_rejects_downward_swap():
    with pytest.raises(ConfigurationError):
        consistency_experiment([3.0, 2.0, 1.0], Ranking.identity(3), (0, 1), SQUARE,
                               NoiseModel.gaussian(1.0), 200)


# -- risk curves -----------------------------------------------------------------


def test_make_truth():
    np.testing.assert_array_equal(make_truth("linear-tv:2", 3), [2.0, 1.0, 0.0])
    np.testing.assert_array_equal(make_truth("constant:1.5", 2), [1.5, 1.5])
    np.testing.assert_array_equal(make_truth("3,2,1"), [3.0, 2.0, 1.0])
    with pytest.raises(ParameterError):
        make_truth("linear-tv:x", 3)
    with pytest.raises(ParameterError):
        make_truth("3,2,1", 4)


def test_risk_curve_columns():
    report = risk_curve("linear-tv:1", [16, 128], 0.5, 2000, seed=1)
    for n in (16, 128):
        assert report.row(f"raw_risk[n={n}]").mean == n * 0.25
        assert report.row(f"pathwise_violations[n={n}]").mean == 0
        risk = report.row(f"risk[n={n}]").mean
        assert report.row(f"ratio[n={n}]").mean == risk / (n * 0.25)
        assert risk < n * 0.25
    assert report.verdicts["pathwise[n=16]"]


def test_risk_curve_constant_truth_has_no_normalization():
    report = risk_curve("constant:0", [8], 1.0, 500)
    assert not any(r.report_id.startswith("normalized") for r in report.rows)


# -- nested cones ------------------------------------------------------------------


def test_nested_cones_identical_cones():
    truth = [4.0, 3.0, 2.0, 1.0]
    report = nested_cone_experiment(truth, CoarseRanking.parse("1|2|3|4"), [0.5, 2.0], 2000)
    for sigma in (0.5, 2.0):
        assert report.row(f"ratio[sigma={sigma!r}]").mean == 1.0
    assert report.passed


def test_nested_cones_limits():
    report = nested_cone_experiment([4.0, 3.0, 2.0, 1.0], CoarseRanking.parse("1,2|3,4"),
                                    [1e-3, 1.0, 1e3], 10_000, seed=2)
    assert report.passed
    assert report.row("ratio[sigma=1.0]").mean <= 1.0


def test_nested_cones_infeasible():
    with pytest.raises(ConfigurationError):
        nested_cone_experiment([4.0, 3.0, 2.0, 1.0], CoarseRanking.parse("3,4|1,2"), [1.0], 200)


# -- counterexamples ---------------------------------------------------------------


def test_pairwise_counterexample_small():
    report = counterexample_pairwise(3, 0.1, 1.0, SQUARE, 50_000, seed=0)
    assert report.verdicts["complement_better"]


def test_pairwise_inverts_for_large_epsilon():
    report = counterexample_pairwise(3, 100.0, 1.0, SQUARE, 5_000, seed=0)
    diff = report.row("diff[S2 - S1]")
    assert diff.mean < -2 * diff.std_error
    assert not report.passed


def test_pairwise_noiseless_facet_rule():
    # sigma = 0: the complement averages the closest adjacent pair
    report = counterexample_pairwise(3, 0.1, 0.0, SQUARE, 200)
    truth = np.array([0.3, 0.2, 0.1])
    s2 = np.array([0.25, 0.25, 0.1])
    s1 = truth
    assert report.row("S2[complement]").mean == pytest.approx(float(np.sum(s2**2)), rel=1e-12)
    assert report.row("S1[isotonic]").mean == pytest.approx(float(np.sum(s1**2)), rel=1e-12)


def test_nonconvex_counterexample():
    report = counterexample_nonconvex(1.0, 2.0, 0.0, 3)
    assert report.notes["truthful"] == -2.0
    assert report.notes["swapped"] == -1.0
    assert report.verdicts["reproduced"]


def test_nonconvex_degenerate_cases():
    convex = counterexample_nonconvex(math.inf, 2.0, 0.0, 3, require_witness=False)
    assert convex.notes["swapped"] <= convex.notes["truthful"]
    assert not convex.verdicts["reproduced"]
    tie = counterexample_nonconvex(1.0, 0.5, 0.5, 4, require_witness=False)
    assert tie.notes["swapped"] == tie.notes["truthful"]
    with pytest.raises(ConfigurationError):
        counterexample_nonconvex(math.inf, 2.0, 0.0, 3)
