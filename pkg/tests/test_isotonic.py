import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from isomech.errors import DimensionError, DomainError, StructureError
from isomech.isotonic import (
    KL,
    Ranking,
    apply_permutation,
    bregman_objective,
    bregman_project,
    minmax_oracle,
    pava_descending,
    pava_descending_batch,
    project_complement_isotonic,
    project_with_ranking,
)

from oracles import isotonic_by_enumeration, kl_divergence_sum, project_by_qp

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


def vectors(max_size=30):
    return arrays(np.float64, st.integers(1, max_size), elements=finite)


def rankings_for(n):
    return st.permutations(range(n)).map(lambda p: Ranking(tuple(p)))


# -- Ranking / apply_permutation ------------------------------------------------


def test_apply_permutation_example():
    out = apply_permutation([3.5, 7.5, 5, -1], Ranking.from_one_based([3, 1, 2, 4]))
    np.testing.assert_array_equal(out, [5, 3.5, 7.5, -1])


def test_apply_permutation_identity_and_involution():
    a = np.array([4.0, -1.0, 2.5])
    np.testing.assert_array_equal(apply_permutation(a, Ranking.identity(3)), a)
    swap = Ranking.from_one_based([2, 1])
    np.testing.assert_array_equal(apply_permutation(apply_permutation([1, 2], swap), swap), [1, 2])


def test_apply_permutation_inverse_round_trip():
    rng = np.random.default_rng(3)
    a = rng.normal(size=7)
    pi = Ranking(tuple(rng.permutation(7).tolist()))
    back = apply_permutation(apply_permutation(a, pi), pi.inverse())
    np.testing.assert_array_equal(back, a)
    assert pi.compose(pi.inverse()) == Ranking.identity(7)


def test_apply_permutation_length_mismatch():
    with pytest.raises(DimensionError):
        apply_permutation([1, 2, 3], Ranking.identity(2))


@pytest.mark.parametrize("bad", [(0, 0, 1), (1, 2, 3), ()])
def test_ranking_rejects_non_permutations(bad):
    with pytest.raises(StructureError):
        Ranking(bad)


def test_ranking_parsing():
    assert Ranking.parse("3,1,2") == Ranking((2, 0, 1))
    assert Ranking.parse("identity", 3) == Ranking((0, 1, 2))
    assert str(Ranking((2, 0, 1))) == "3,1,2"
    with pytest.raises(DimensionError):
        Ranking.parse("1,2", 3)


# -- PAVA ---------------------------------------------------------------------------


def test_enumeration_oracle_matches_frozen_values():
    # frozen from the oracle itself before checking the implementation
    np.testing.assert_allclose(isotonic_by_enumeration([1, 3, 2]), [2, 2, 2])
    np.testing.assert_allclose(isotonic_by_enumeration([1, 2, 3]), [2, 2, 2])
    np.testing.assert_allclose(isotonic_by_enumeration([3, 2, 1]), [3, 2, 1])


@pytest.mark.parametrize(
    "v, expected",
    [((3, 2, 1), (3, 2, 1)), ((1, 3, 2), (2, 2, 2)), ((1, 2, 3), (2, 2, 2)), ((7,), (7,))],
)
def test_pava_examples(v, expected):
    np.testing.assert_allclose(pava_descending(v), expected, rtol=0, atol=1e-14)


@pytest.mark.parametrize("bad", [[1.0, np.nan], [np.inf], []])
def test_pava_rejects_bad_input(bad):
    with pytest.raises((DomainError, DimensionError)):
        pava_descending(bad)


@given(arrays(np.float64, st.integers(1, 9), elements=finite))
def test_pava_matches_block_enumeration(v):
    np.testing.assert_allclose(pava_descending(v), isotonic_by_enumeration(v), atol=1e-9)


@given(vectors(60))
def test_pava_matches_minmax(v):
    np.testing.assert_allclose(pava_descending(v), minmax_oracle(v), rtol=0, atol=1e-10)


@given(vectors())
def test_pava_output_nonincreasing_and_mean_preserving(v):
    out = pava_descending(v)
    assert np.all(out[:-1] >= out[1:])
    assert abs(out.sum() - v.sum()) <= 1e-9 * v.size * max(1.0, np.abs(v).max())


@given(vectors())
def test_pava_blocks_are_means(v):
    out = pava_descending(v)
    starts = np.flatnonzero(np.r_[True, out[1:] != out[:-1]])
    stops = np.r_[starts[1:], v.size]
    for a, b in zip(starts, stops):
        assert out[a] == pytest.approx(v[a:b].mean(), abs=1e-9)


@given(vectors())
def test_pava_idempotent(v):
    once = pava_descending(v)
    np.testing.assert_array_equal(pava_descending(once), once)


@given(vectors(), st.data(), st.floats(1e-3, 5))
def test_pava_componentwise_monotone(v, data, delta):
    i = data.draw(st.integers(0, v.size - 1))
    bumped = v.copy()
    bumped[i] += delta
    lo, hi = pava_descending(v), pava_descending(bumped)
    assert np.all(hi >= lo - 1e-12)
    assert hi.sum() - lo.sum() == pytest.approx(delta, abs=1e-9)


@given(vectors())
def test_constant_projection_criterion(v):
    out = pava_descending(v)
    constant = np.allclose(out, out[0], rtol=0, atol=1e-12)
    prefix_means = np.cumsum(v) / np.arange(1, v.size + 1)
    criterion = bool(np.all(prefix_means <= v.mean() + 1e-12))
    assert constant == criterion


def test_constant_projection_criterion_both_directions():
    # pools to the mean: every prefix mean below the overall mean
    v = np.array([0.0, 1.0, 2.0])
    assert np.allclose(pava_descending(v), 1.0)
    # first prefix mean above the overall mean: not constant
    w = np.array([3.0, 0.0, 0.0])
    assert not np.allclose(pava_descending(w), w.mean())


def test_batch_matches_single_rows():
    rng = np.random.default_rng(0)
    y = rng.normal(size=(50, 8))
    batch = pava_descending_batch(y)
    for row, out in zip(y, batch):
        np.testing.assert_array_equal(pava_descending(row), out)


def test_ties_in_input_give_ties_in_output():
    np.testing.assert_array_equal(pava_descending([2.0, 2.0, 1.0]), [2.0, 2.0, 1.0])


# -- min-max oracle -------------------------------------------------------------------


@pytest.mark.parametrize(
    "v, expected", [((1, 3, 2), (2, 2, 2)), ((5, 5, 5), (5, 5, 5)), ((0, 4), (2, 2))]
)
def test_minmax_examples(v, expected):
    np.testing.assert_allclose(minmax_oracle(v), expected, atol=1e-14)


# -- project_with_ranking ---------------------------------------------------------------


def test_project_with_ranking_examples():
    np.testing.assert_allclose(project_with_ranking([1, 3, 2], Ranking.identity(3)), [2, 2, 2])
    np.testing.assert_array_equal(
        project_with_ranking([3, 1, 2], Ranking.from_one_based([1, 3, 2])), [3, 1, 2]
    )
    out = project_with_ranking([3.5, 7.5, 5, -1], Ranking.from_one_based([3, 1, 2, 4]))
    np.testing.assert_allclose(out, [16 / 3, 16 / 3, 16 / 3, -1], atol=1e-14)


def test_project_with_ranking_matches_generic_solver():
    pytest.importorskip("scipy")
    rng = np.random.default_rng(11)
    for _ in range(10):
        n = int(rng.integers(2, 7))
        y = rng.normal(size=n) * 3
        order = rng.permutation(n)
        ours = project_with_ranking(y, Ranking(tuple(order.tolist())))
        np.testing.assert_allclose(ours, project_by_qp(y, order), atol=1e-5)


@given(vectors(20).flatmap(lambda v: st.tuples(st.just(v), rankings_for(v.size))))
def test_project_with_ranking_feasible_and_optimal_vs_perturbations(case):
    y, pi = case
    out = project_with_ranking(y, pi)
    assert pi.contains(out)
    best = np.sum((out - y) ** 2)
    # any feasible point is at least as far; sampled from the projection of jittered inputs
    rng = np.random.default_rng(0)
    for _ in range(5):
        other = project_with_ranking(y + rng.normal(size=y.size), pi)
        assert np.sum((other - y) ** 2) >= best - 1e-9


@given(vectors(20).flatmap(lambda v: st.tuples(st.just(v), rankings_for(v.size))))
def test_moreau_identity(case):
    y, pi = case
    fit = project_with_ranking(y, pi)
    lhs = np.sum((fit - y) ** 2) + np.sum(fit**2)
    rhs = np.sum(y**2)
    assert abs(lhs - rhs) <= 1e-8 * max(rhs, 1e-300) + 1e-12


@given(
    vectors(20).flatmap(
        lambda v: st.tuples(st.just(v), rankings_for(v.size), arrays(np.float64, v.size, elements=finite))
    )
)
def test_pathwise_contraction(case):
    y, pi, r = case
    truth = project_with_ranking(r, pi)  # any point of S_pi
    fit = project_with_ranking(y, pi)
    assert np.linalg.norm(fit - truth) <= np.linalg.norm(y - truth) + 1e-9


# -- Bregman ------------------------------------------------------------------------------


def test_bregman_squared_matches_euclidean():
    y = [0.3, -2.0, 5.0, 1.0]
    pi = Ranking.from_one_based([2, 4, 1, 3])
    np.testing.assert_array_equal(bregman_project(y, "squared", pi), project_with_ranking(y, pi))


def test_bregman_kl_pools_and_is_grid_optimal():
    y = np.array([0.2, 0.8, 0.5])
    out = bregman_project(y, "kl", Ranking.identity(3))
    np.testing.assert_allclose(out, [0.5, 0.5, 0.5], atol=1e-12)
    # grid search over descending triples in (0,1)
    grid = np.linspace(0.01, 0.99, 99)
    best = np.inf
    for a, b, c in itertools.product(grid, repeat=3):
        if a >= b >= c:
            best = min(best, kl_divergence_sum(y, [a, b, c]))
    assert bregman_objective(y, out, "kl") <= best + 1e-12
    assert bregman_objective(y, out, KL) == pytest.approx(kl_divergence_sum(y, out))


def test_bregman_kl_feasible_input_fixed():
    y = [0.9, 0.5, 0.1]
    np.testing.assert_array_equal(bregman_project(y, "kl", Ranking.identity(3)), y)


def test_bregman_kl_matches_generic_solver():
    pytest.importorskip("scipy")
    rng = np.random.default_rng(5)
    for _ in range(5):
        n = int(rng.integers(2, 6))
        y = rng.uniform(0.05, 0.95, size=n)
        order = rng.permutation(n)
        ours = bregman_project(y, "kl", Ranking(tuple(order.tolist())))
        qp = project_by_qp(y, order, objective=lambda r: kl_divergence_sum(y, np.clip(r, 1e-9, 1 - 1e-9)))
        np.testing.assert_allclose(ours, qp, atol=1e-4)


@pytest.mark.parametrize("y", [[0.0, 0.5], [1.2, 0.3], [-0.1, 0.5]])
def test_bregman_kl_domain(y):
    with pytest.raises(DomainError):
        bregman_project(y, "kl", Ranking.identity(2))


def test_bregman_unknown_generator():
    with pytest.raises(DomainError):
        bregman_project([1.0], "hellinger", Ranking.identity(1))


# -- complement projection -----------------------------------------------------------------


def _nearest_on_facets_by_sampling(y, n_samples=20001):
    """Dense search over the boundary facets {x_i = x_{i+1}} of the descending cone."""
    y = np.asarray(y, dtype=float)
    best, best_d = None, np.inf
    for i in range(y.size - 1):
        # points with x_i = x_{i+1} = t, other coordinates equal to y (closest choice)
        ts = np.linspace(y.min() - 1, y.max() + 1, n_samples)
        cand = np.repeat(y[None, :], ts.size, axis=0)
        cand[:, i] = ts
        cand[:, i + 1] = ts
        d = np.linalg.norm(cand - y, axis=1)
        k = int(np.argmin(d))
        if d[k] < best_d:
            best, best_d = cand[k], d[k]
    return best, best_d


def test_complement_examples():
    ident = Ranking.identity(3)
    np.testing.assert_array_equal(project_complement_isotonic([1, 3, 2], ident), [1, 3, 2])
    out = project_complement_isotonic([5, 3, 2.5], ident)
    np.testing.assert_allclose(out, [5, 2.75, 2.75])
    _, d = _nearest_on_facets_by_sampling([5, 3, 2.5])
    assert np.linalg.norm(out - [5, 3, 2.5]) <= d + 1e-12
    assert np.linalg.norm(out - [5, 3, 2.5]) == pytest.approx(0.5 / np.sqrt(2))
    out2 = project_complement_isotonic([2, 1], Ranking.identity(2))
    np.testing.assert_allclose(out2, [1.5, 1.5])
    _, d2 = _nearest_on_facets_by_sampling([2, 1])
    assert np.linalg.norm(out2 - [2, 1]) <= d2 + 1e-12


def test_complement_respects_ranking_and_ties():
    pi = Ranking.from_one_based([3, 1, 2])  # requires y3 >= y1 >= y2
    np.testing.assert_allclose(project_complement_isotonic([2, 0, 5], pi), [1, 1, 5])
    # boundary point (tie) is already in the closed complement
    np.testing.assert_array_equal(project_complement_isotonic([3, 3, 1], Ranking.identity(3)), [3, 3, 1])


@settings(max_examples=50)
@given(arrays(np.float64, st.integers(2, 6), elements=finite))
def test_complement_is_no_farther_than_sampled_boundary(y):
    out = project_complement_isotonic(y, Ranking.identity(y.size))
    ordered = out[:-1] > out[1:]
    assert not np.all(ordered)  # result lies in the closed complement
    if np.all(y[:-1] > y[1:]):
        _, d = _nearest_on_facets_by_sampling(y, 2001)
        # sampling grid step bounds the oracle's error
        step = (y.max() - y.min() + 2) / 2000
        assert np.linalg.norm(out - y) <= d + 1e-9
        assert np.linalg.norm(out - y) >= d - step
