"""Experiments that check the mechanism's incentive and risk properties by simulation.

Every experiment evaluates all competing reports on the same noise draws
(common random numbers). Verdicts use the standard error of the *paired*
difference.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from numpy.typing import ArrayLike

from isomech.errors import ConfigurationError, ParameterError, SimulationError
from isomech.isotonic import FloatArray, Ranking, as_grades, project_with_ranking
from isomech.mechanisms import (
    CoarseElement,
    CoarseRanking,
    ComplementElement,
    Element,
    IsotonicElement,
    LineElement,
    all_rankings,
    unit,
)
from isomech.simulation.engine import ExperimentReport, RunningStats, UtilityEstimate, monte_carlo
from isomech.simulation.noise import NoiseModel
from isomech.utilities import UtilitySpec

DOMINANCE_SE = 2.0
STRICT_SE = 3.0
RISK_UPPER_CONSTANT = 7.5625
RISK_UPPER_SLACK = 0.5
GROWTH_BAND = (0.7, 1.4)
EXHAUSTIVE_MAX_N = 6
# relative slack on squared norms in the inline contraction check
CONTRACTION_RTOL = 1e-12

Mechanism = Callable[[FloatArray], FloatArray]


def _check_contraction(fitted: FloatArray, y: FloatArray, truth: FloatArray, first_draw: int) -> None:
    """Projection onto a closed convex set containing ``truth`` never moves away from it."""
    fit_err = np.square(fitted - truth).sum(axis=1)
    raw_err = np.square(y - truth).sum(axis=1)
    bad = np.flatnonzero(fit_err > raw_err * (1.0 + CONTRACTION_RTOL))
    if bad.size:
        draw = first_draw + int(bad[0])
        raise SimulationError(f"projection increased the error at draw {draw}", draw=draw)


def estimate_expected_utility(
    truth: ArrayLike,
    mechanism: Mechanism,
    utility: UtilitySpec,
    noise: NoiseModel,
    replications: int,
    threads: int = 1,
) -> UtilityEstimate:
    """Monte Carlo estimate of ``E U(mechanism(R + z))``.

    ``mechanism`` maps an (N, n) batch of observations to estimates;
    knowledge elements from ``isomech.mechanisms`` are such callables.
    """
    truth = as_grades(truth, "R")
    if replications < 100:
        raise ParameterError(f"need at least 100 replications, got {replications}")

    def stat(z, first):
        return utility.evaluate_batch(mechanism(truth + z), truth)

    return monte_carlo(stat, noise, truth.size, replications, threads).estimate(0)


@dataclass(frozen=True)
class _Comparison:
    reference: int
    rival: int


def _compare_elements(
    truth: FloatArray,
    elements: Sequence[Element],
    comparisons: Sequence[_Comparison],
    utility: UtilitySpec,
    noise: NoiseModel,
    replications: int,
    threads: int,
) -> RunningStats:
    """Columns: one utility per element, then ``u_ref - u_rival`` for each comparison."""
    guarded = [el.convex and el.contains(truth) for el in elements]

    def stat(z, first):
        y = truth + z
        utils = np.empty((z.shape[0], len(elements) + len(comparisons)))
        for k, el in enumerate(elements):
            fitted = el.project_batch(y)
            if guarded[k]:
                _check_contraction(fitted, y, truth, first)
            utils[:, k] = utility.evaluate_batch(fitted, truth)
        for c, cmp in enumerate(comparisons):
            utils[:, len(elements) + c] = utils[:, cmp.reference] - utils[:, cmp.rival]
        return utils

    return monte_carlo(stat, noise, truth.size, replications, threads)


def _config(**kwargs) -> dict:
    out = {}
    for key, value in kwargs.items():
        if isinstance(value, np.ndarray):
            value = value.tolist()
        elif isinstance(value, (NoiseModel, UtilitySpec, Ranking, CoarseRanking)):
            value = str(value)
        out[key] = value
    return out


def truthfulness_scan(
    truth: ArrayLike,
    reports: Sequence[Element],
    utility: UtilitySpec,
    noise: NoiseModel,
    replications: int,
    threads: int = 1,
    strict_against: Sequence[str] = (),
    experiment_id: str = "truthfulness",
) -> ExperimentReport:
    """Compare the truthful report against every rival on common noise draws.

    Reports are grouped by partition family (full ranking, coarse ranking,
    line, ...). Within each family the first element containing ``truth`` is
    the truthful report; if several families are present each is checked
    separately, which is what offering several partitions at once requires.

    Verdict ``truthful[<family>]`` holds iff the truthful mean is at least every
    rival's mean minus ``DOMINANCE_SE`` paired standard errors. For each label
    in ``strict_against`` a verdict ``strict[<label>]`` additionally requires
    the truthful mean to exceed that rival by more than ``STRICT_SE`` paired SEs.
    """
    start = time.perf_counter()
    truth = as_grades(truth, "R")
    reports = list(reports)
    if not reports:
        raise ConfigurationError("no reports to scan")
    families: dict[str, list[int]] = {}
    for k, el in enumerate(reports):
        families.setdefault(el.family, []).append(k)
    references: dict[str, int] = {}
    for family, idx in families.items():
        honest = [k for k in idx if reports[k].contains(truth)]
        if not honest:
            raise ConfigurationError(f"no {family} report contains the ground truth")
        references[family] = honest[0]
    comparisons = [
        _Comparison(references[el.family], k)
        for k, el in enumerate(reports)
        if k != references[el.family]
    ]
    labels = [el.label for el in reports]
    unknown = set(strict_against) - set(labels)
    if unknown:
        raise ConfigurationError(f"strict comparison against unknown reports {sorted(unknown)}")

    stats = _compare_elements(truth, reports, comparisons, utility, noise, replications, threads)

    report = ExperimentReport(
        experiment_id,
        _config(truth=truth, utility=utility, noise=noise, seed=noise.seed,
                replications=replications, reports=labels),
    )
    for k, label in enumerate(labels):
        report.add_estimate(label, stats.estimate(k))
    ok = {family: True for family in families}
    for c, cmp in enumerate(comparisons):
        est = stats.estimate(len(reports) + c)
        report.add_estimate(f"diff[{labels[cmp.reference]} - {labels[cmp.rival]}]", est)
        family = reports[cmp.rival].family
        ok[family] = ok[family] and est.mean >= -DOMINANCE_SE * est.std_error
        if labels[cmp.rival] in strict_against:
            report.verdicts[f"strict[{labels[cmp.rival]}]"] = est.mean > STRICT_SE * est.std_error
    for family in families:
        report.verdicts[f"truthful[{family}]"] = ok[family]
    report.notes["truthful_reports"] = {f: labels[k] for f, k in references.items()}
    best = max(range(len(reports)), key=lambda k: stats.mean[k])
    report.notes["best_report"] = labels[best]
    report.wall_clock = time.perf_counter() - start
    return report


def candidate_rankings(truth: ArrayLike, seed: int = 0, n_swaps: int = 50, n_shuffles: int = 50) -> list[Ranking]:
    """All rankings for small n; otherwise the truth plus random single swaps and shuffles."""
    truth = as_grades(truth, "R")
    n = truth.size
    if n <= EXHAUSTIVE_MAX_N:
        return list(all_rankings(n))
    rng = np.random.default_rng(seed)
    honest = Ranking.sorting(truth)
    out = [honest]
    for _ in range(n_swaps):
        order = list(honest.order)
        i, j = rng.choice(n, size=2, replace=False)
        order[i], order[j] = order[j], order[i]
        out.append(Ranking(tuple(order)))
    for _ in range(n_shuffles):
        out.append(Ranking(tuple(rng.permutation(n).tolist())))
    return out


def swap_positions(ranking: Ranking, i: int, j: int) -> Ranking:
    order = list(ranking.order)
    order[i], order[j] = order[j], order[i]
    return Ranking(tuple(order))


def consistency_experiment(
    truth: ArrayLike,
    worse: Ranking,
    swap: tuple[int, int],
    utility: UtilitySpec,
    noise: NoiseModel,
    replications: int,
    threads: int = 1,
    experiment_id: str = "consistency",
) -> ExperimentReport:
    """Compare ``worse`` with the ranking obtained by an upward swap of positions ``swap`` (0-based).

    The swap must put the item with the larger true grade at the earlier
    position, i.e. ``R[worse[j]] > R[worse[i]]`` for ``i < j``.
    """
    start = time.perf_counter()
    truth = as_grades(truth, "R")
    i, j = sorted(int(s) for s in swap)
    n = truth.size
    if len(worse) != n or not (0 <= i < j < n):
        raise ConfigurationError(f"swap positions {swap} invalid for {n} items")
    if not truth[worse.order[j]] > truth[worse.order[i]]:
        raise ConfigurationError(
            f"swapping positions {i + 1},{j + 1} of {worse} is not upward with respect to R"
        )
    better = swap_positions(worse, i, j)
    elements = [IsotonicElement(better), IsotonicElement(worse)]
    stats = _compare_elements(truth, elements, [_Comparison(0, 1)], utility, noise, replications, threads)
    report = ExperimentReport(
        experiment_id,
        _config(truth=truth, worse=worse, better=better, swap=[i + 1, j + 1], utility=utility,
                noise=noise, seed=noise.seed, replications=replications),
    )
    for k, el in enumerate(elements):
        report.add_estimate(el.label, stats.estimate(k))
    diff = stats.estimate(2)
    report.add_estimate(f"diff[{elements[0].label} - {elements[1].label}]", diff)
    report.verdicts["more_consistent_not_worse"] = diff.mean >= -DOMINANCE_SE * diff.std_error
    report.wall_clock = time.perf_counter() - start
    return report


def random_consistency_case(rng: np.random.Generator, n: int) -> tuple[FloatArray, Ranking, tuple[int, int]]:
    """Random ``(R, worse, swap)`` with distinct grades and an upward swap."""
    truth = np.round(rng.normal(0.0, 2.0, size=n), 6)
    while np.unique(truth).size < n:
        truth = np.round(rng.normal(0.0, 2.0, size=n), 6)
    while True:
        worse = Ranking(tuple(rng.permutation(n).tolist()))
        pairs = [
            (i, j) for i in range(n) for j in range(i + 1, n)
            if truth[worse.order[j]] > truth[worse.order[i]]
        ]
        if pairs:
            return truth, worse, pairs[int(rng.integers(len(pairs)))]


def make_truth(spec: str | ArrayLike, n: int | None = None) -> FloatArray:
    """Build a ground truth from ``linear-tv:V``, ``constant:c`` or an explicit vector."""
    if isinstance(spec, str):
        kind, _, arg = spec.partition(":")
        if kind in ("linear-tv", "constant"):
            if n is None or n < 1:
                raise ParameterError(f"{kind} ground truth needs n >= 1")
            try:
                value = float(arg)
            except ValueError:
                raise ParameterError(f"bad parameter in ground truth {spec!r}") from None
            if kind == "constant":
                return np.full(n, value)
            if n == 1:
                return np.zeros(1)
            return value * (n - 1 - np.arange(n)) / (n - 1)
        spec = [float(t) for t in spec.split(",")]
    truth = np.array(as_grades(spec, "R"))
    if n is not None and truth.size != n:
        raise ParameterError(f"ground truth has {truth.size} entries, expected {n}")
    return truth


def risk_curve(
    truth: str | Callable[[int], ArrayLike],
    n_list: Sequence[int],
    sigma: float,
    replications: int | dict[int, int],
    seed: int = 0,
    threads: int = 1,
    experiment_id: str = "risk-curve",
) -> ExperimentReport:
    """Risk of the isotonic estimate under the true ranking, as n grows.

    Rows per n: ``risk`` (Monte Carlo), ``raw_risk`` (n sigma^2, analytic),
    ``ratio`` (risk / raw_risk), ``normalized`` (risk / (n^{1/3} sigma^{4/3} V^{2/3})
    with V the total variation of R) and ``pathwise_violations`` (count of
    draws where the estimate was farther from R than the raw grades).
    """
    start = time.perf_counter()
    if not sigma > 0:
        raise ParameterError(f"risk curves need sigma > 0, got {sigma}")
    noise = NoiseModel.gaussian(sigma, seed)
    report = ExperimentReport(
        experiment_id,
        _config(truth=truth if isinstance(truth, str) else "custom", n_list=list(n_list),
                sigma=sigma, replications=replications, seed=seed),
    )
    risks: dict[int, tuple[float, float]] = {}
    for n in n_list:
        reps = replications[n] if isinstance(replications, dict) else replications
        R = make_truth(truth, n) if isinstance(truth, str) else as_grades(truth(n), "R")
        element = IsotonicElement(Ranking.sorting(R))

        def stat(z, first, R=R, element=element):
            y = R + z
            fit_err = np.square(element.project_batch(y) - R).sum(axis=1)
            raw_err = np.square(y - R).sum(axis=1)
            return np.column_stack([fit_err, (fit_err > raw_err).astype(np.float64)])

        stats = monte_carlo(stat, noise, n, reps, threads)
        risk = stats.estimate(0)
        raw = n * sigma**2
        tv = float(R.max() - R.min())
        risks[n] = (risk.mean, risk.std_error)
        report.add_estimate(f"risk[n={n}]", risk)
        report.add(f"raw_risk[n={n}]", raw, 0.0, reps)
        report.add(f"ratio[n={n}]", risk.mean / raw, risk.std_error / raw, reps)
        violations = int(round(stats.mean[1] * stats.count))
        report.add(f"pathwise_violations[n={n}]", violations, 0.0, reps)
        report.verdicts[f"pathwise[n={n}]"] = violations == 0
        if tv > 0:
            scale = n ** (1 / 3) * sigma ** (4 / 3) * tv ** (2 / 3)
            normalized = risk.mean / scale
            report.add(f"normalized[n={n}]", normalized, risk.std_error / scale, reps)
            report.verdicts[f"upper_bound[n={n}]"] = normalized <= RISK_UPPER_CONSTANT + RISK_UPPER_SLACK
    ordered = list(n_list)
    for a, b in zip(ordered, ordered[1:]):
        growth = risks[b][0] / risks[a][0]
        expected = (b / a) ** (1 / 3)
        rel = math.hypot(risks[a][1] / risks[a][0], risks[b][1] / risks[b][0])
        report.add(f"growth[n={a}->{b}]", growth, growth * rel, 0)
        report.verdicts[f"growth[n={a}->{b}]"] = (
            GROWTH_BAND[0] * expected <= growth <= GROWTH_BAND[1] * expected
        )
    report.wall_clock = time.perf_counter() - start
    return report


def nested_cone_experiment(
    truth: ArrayLike,
    coarse: CoarseRanking,
    sigmas: Sequence[float],
    replications: int,
    seed: int = 0,
    threads: int = 1,
    experiment_id: str = "nested-cones",
) -> ExperimentReport:
    """Risk ratio of the full isotonic cone of the true ranking to the larger coarse cone.

    The ratio's standard error comes from the delta method, with the covariance
    of the two paired losses recovered from the variance of their sum. The
    verdict checks ``ratio <= 1 + 3 SE`` at the smallest and largest sigma.
    """
    start = time.perf_counter()
    truth = as_grades(truth, "R")
    inner = IsotonicElement(Ranking.sorting(truth))
    outer = CoarseElement(coarse)
    if not (inner.contains(truth) and outer.contains(truth)):
        raise ConfigurationError(f"R is not feasible for the coarse ranking {coarse}")
    if not sigmas:
        raise ConfigurationError("need at least one noise level")
    report = ExperimentReport(
        experiment_id,
        _config(truth=truth, coarse=coarse, sigmas=list(sigmas), replications=replications, seed=seed),
    )
    ratios = {}
    for sigma in sigmas:
        noise = NoiseModel.gaussian(sigma, seed)

        def stat(z, first):
            y = truth + z
            a = np.square(inner.project_batch(y) - truth).sum(axis=1)
            b = np.square(outer.project_batch(y) - truth).sum(axis=1)
            return np.column_stack([a, b, a + b])

        stats = monte_carlo(stat, noise, truth.size, replications, threads)
        A, B = stats.mean[0], stats.mean[1]
        va, vb, vs = stats.variance
        cov = 0.5 * (vs - va - vb)
        ratio = A / B
        var_ratio = (va - 2.0 * ratio * cov + ratio**2 * vb) / (B**2 * stats.count)
        se = math.sqrt(max(var_ratio, 0.0))
        ratios[sigma] = (ratio, se)
        report.add_estimate(f"risk_full[sigma={sigma!r}]", stats.estimate(0))
        report.add_estimate(f"risk_coarse[sigma={sigma!r}]", stats.estimate(1))
        report.add(f"ratio[sigma={sigma!r}]", ratio, se, stats.count)
    for sigma in sorted({min(sigmas), max(sigmas)}):
        ratio, se = ratios[sigma]
        report.verdicts[f"ratio_at_most_one[sigma={sigma!r}]"] = ratio <= 1.0 + STRICT_SE * se
    report.wall_clock = time.perf_counter() - start
    return report


def counterexample_pairwise(
    n: int,
    epsilon: float,
    sigma: float,
    utility: UtilitySpec,
    replications: int,
    seed: int = 0,
    threads: int = 1,
    experiment_id: str = "counterexample-pairwise",
) -> ExperimentReport:
    """The two-element partition {isotonic cone, its complement} is not truthful.

    Ground truth ``R = epsilon * (n, n-1, ..., 1)`` lies in the cone, yet
    reporting the complement yields higher expected utility for small epsilon.
    The verdict ``complement_better`` holds iff the paired difference
    ``U(complement) - U(cone)`` exceeds ``DOMINANCE_SE`` standard errors.
    """
    start = time.perf_counter()
    if n < 2:
        raise ParameterError("the counterexample needs n >= 2")
    if not epsilon > 0:
        raise ParameterError("epsilon must be positive")
    truth = epsilon * np.arange(n, 0, -1, dtype=np.float64)
    identity = Ranking.identity(n)
    elements = [ComplementElement(identity), IsotonicElement(identity)]
    noise = NoiseModel.gaussian(sigma, seed)
    report = ExperimentReport(
        experiment_id,
        _config(n=n, epsilon=epsilon, sigma=sigma, utility=utility, replications=replications, seed=seed),
    )
    stats = _compare_elements(truth, elements, [_Comparison(0, 1)], utility, noise, replications, threads)
    report.add_estimate("S2[complement]", stats.estimate(0))
    report.add_estimate("S1[isotonic]", stats.estimate(1))
    diff = stats.estimate(2)
    report.add_estimate("diff[S2 - S1]", diff)
    report.verdicts["complement_better"] = diff.mean > DOMINANCE_SE * diff.std_error
    report.wall_clock = time.perf_counter() - start
    return report


def counterexample_nonconvex(
    cap: float,
    r1: float,
    r2: float,
    n: int,
    require_witness: bool = True,
    experiment_id: str = "counterexample-nonconvex",
) -> ExperimentReport:
    """Noiseless counterexample for the capped utility ``sum_i min(x_i, cap)``.

    With ``R = (r1, r2, r2 - 3, ..., r2 - n)``, reporting the ranking that swaps
    the top two items pools them to their mean, which a concave-somewhere
    utility can prefer. Verdict ``reproduced`` holds iff the swapped report
    earns strictly more than the truthful one.

    With ``require_witness`` the inputs must satisfy ``r1 > r2`` and
    ``U(r1) + U(r2) < 2 U((r1 + r2) / 2)``; turn it off to evaluate the
    degenerate cases where honesty is expected to win or tie.
    """
    start = time.perf_counter()
    if n < 2:
        raise ParameterError("the counterexample needs n >= 2")
    utility = UtilitySpec.capped(cap)
    capped = lambda t: min(t, cap)  # noqa: E731
    witness = r1 > r2 and capped(r1) + capped(r2) < 2.0 * capped(0.5 * (r1 + r2))
    if require_witness and not witness:
        raise ConfigurationError(
            f"need r1 > r2 and U(r1) + U(r2) < 2 U((r1 + r2)/2) for cap {cap}; got r1={r1}, r2={r2}"
        )
    truth = np.array([r1, r2] + [r2 - i for i in range(3, n + 1)], dtype=np.float64)
    honest = Ranking.identity(n)
    swapped = swap_positions(honest, 0, 1)
    truthful_u = utility.evaluate(project_with_ranking(truth, honest))
    swapped_u = utility.evaluate(project_with_ranking(truth, swapped))
    report = ExperimentReport(
        experiment_id, _config(cap=cap, r1=r1, r2=r2, n=n, truth=truth)
    )
    report.add(f"truthful[{honest}]", truthful_u, 0.0, 1)
    report.add(f"swapped[{swapped}]", swapped_u, 0.0, 1)
    report.add("diff[swapped - truthful]", swapped_u - truthful_u, 0.0, 1)
    report.verdicts["reproduced"] = swapped_u > truthful_u
    report.notes.update(truthful=truthful_u, swapped=swapped_u, witness=witness)
    report.wall_clock = time.perf_counter() - start
    return report


def line_mechanism_experiment(
    truth: ArrayLike,
    directions: Sequence[ArrayLike],
    noise: NoiseModel,
    replications: int,
    threads: int = 1,
    experiment_id: str = "line-mechanism",
) -> ExperimentReport:
    """Squared-norm utility under the line mechanism.

    The direction of ``R`` is always added to the reports. Verdicts check each
    estimate against the closed form ``(u . R)^2 + E z_1^2`` within ``STRICT_SE``
    standard errors, and that the truthful line wins the scan.
    """
    start = time.perf_counter()
    truth = as_grades(truth, "R")
    honest = LineElement(tuple(unit(truth)))
    elements = [honest] + [
        el for el in (LineElement(tuple(as_grades(d, "u"))) for d in directions) if el != honest
    ]
    utility = UtilitySpec.separable("square")
    report = truthfulness_scan(truth, elements, utility, noise, replications, threads,
                               experiment_id=experiment_id)
    for el in elements:
        u = np.asarray(el.direction)
        closed = float(u @ truth) ** 2 + noise.second_moment
        row = report.row(el.label)
        report.add(f"closed_form[{el.label}]", closed, 0.0, row.n_reps)
        report.verdicts[f"closed_form[{el.label}]"] = abs(row.mean - closed) <= STRICT_SE * row.std_error
    report.wall_clock = time.perf_counter() - start
    return report
