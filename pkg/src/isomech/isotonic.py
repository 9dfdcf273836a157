"""Projections onto descending isotonic cones.

Every cone here is descending: for a ranking ``pi`` the cone is

    S_pi = {x : x[pi[0]] >= x[pi[1]] >= ... >= x[pi[n-1]]}.

There is deliberately no ascending mode.

Rankings are stored 0-based. ``Ranking.from_one_based`` and ``Ranking.parse``
accept the 1-based notation used on the command line.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable

import numba
import numpy as np
from numpy.typing import ArrayLike, NDArray

from isomech.errors import DimensionError, DomainError, StructureError

FloatArray = NDArray[np.float64]


def as_grades(values: ArrayLike, name: str = "grades") -> FloatArray:
    """Validate and copy a grade vector into a read-only 1-D float64 array."""
    arr = np.array(values, dtype=np.float64)
    if arr.ndim != 1:
        raise DimensionError(f"{name} must be one-dimensional, got shape {arr.shape}")
    if arr.size == 0:
        raise DimensionError(f"{name} must have at least one entry")
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"{name} contains non-finite entries")
    arr.flags.writeable = False
    return arr


def as_grade_matrix(values: ArrayLike, name: str = "grades") -> FloatArray:
    """Validate a batch of grade vectors, one per row."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] == 0:
        raise DimensionError(f"{name} must be a non-empty 2-D array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"{name} contains non-finite entries")
    return arr


@dataclass(frozen=True)
class Ranking:
    """A permutation of item indices: ``order[k]`` is the item placed at position ``k``."""

    order: tuple[int, ...]

    def __post_init__(self):
        order = tuple(int(i) for i in self.order)
        if len(order) == 0:
            raise StructureError("a ranking needs at least one item")
        if sorted(order) != list(range(len(order))):
            raise StructureError(f"{order} is not a permutation of 0..{len(order) - 1}")
        object.__setattr__(self, "order", order)

    @classmethod
    def identity(cls, n: int) -> "Ranking":
        return cls(tuple(range(n)))

    @classmethod
    def from_one_based(cls, order: Iterable[int]) -> "Ranking":
        return cls(tuple(int(i) - 1 for i in order))

    @classmethod
    def parse(cls, text: str, n: int | None = None) -> "Ranking":
        """Parse ``"3,1,2"`` (1-based) or ``"identity"`` (needs ``n``)."""
        text = text.strip()
        if text == "identity":
            if n is None:
                raise StructureError("'identity' needs the number of items")
            return cls.identity(n)
        try:
            items = [int(tok) for tok in text.split(",")]
        except ValueError as exc:
            raise StructureError(f"cannot parse ranking {text!r}") from exc
        ranking = cls.from_one_based(items)
        if n is not None and len(ranking) != n:
            raise DimensionError(f"ranking has {len(ranking)} items, expected {n}")
        return ranking

    @classmethod
    def sorting(cls, values: ArrayLike) -> "Ranking":
        """The ranking that lists items by descending value, ties by ascending index."""
        v = np.asarray(values, dtype=np.float64)
        return cls(tuple(np.argsort(-v, kind="stable").tolist()))

    def __len__(self) -> int:
        return len(self.order)

    def __str__(self) -> str:
        return ",".join(str(i + 1) for i in self.order)

    @property
    def array(self) -> NDArray[np.intp]:
        return np.asarray(self.order, dtype=np.intp)

    def one_based(self) -> tuple[int, ...]:
        return tuple(i + 1 for i in self.order)

    def inverse(self) -> "Ranking":
        inv = [0] * len(self.order)
        for pos, item in enumerate(self.order):
            inv[item] = pos
        return Ranking(tuple(inv))

    def compose(self, other: "Ranking") -> "Ranking":
        """``(self o other)[k] = self[other[k]]``, matching ``apply_permutation``."""
        if len(other) != len(self):
            raise DimensionError("cannot compose rankings of different lengths")
        return Ranking(tuple(self.order[k] for k in other.order))

    def contains(self, values: ArrayLike) -> bool:
        """True iff ``values`` lies in the closed cone S_pi."""
        v = np.asarray(values, dtype=np.float64)[self.array]
        return bool(np.all(v[:-1] >= v[1:]))


def _check_ranking(n: int, ranking: Ranking) -> Ranking:
    if not isinstance(ranking, Ranking):
        ranking = Ranking(tuple(ranking))
    if len(ranking) != n:
        raise DimensionError(f"ranking has {len(ranking)} items, vector has {n}")
    return ranking


def apply_permutation(a: ArrayLike, ranking: Ranking) -> FloatArray:
    """Return ``(a[pi[0]], ..., a[pi[n-1]])``."""
    a = as_grades(a)
    ranking = _check_ranking(a.size, ranking)
    return a[ranking.array]


@numba.njit(cache=True, nogil=True)
def _pava_rows(values, out):
    n_rows, n = values.shape
    sums = np.empty(n)
    counts = np.empty(n, dtype=np.int64)
    for r in range(n_rows):
        top = -1
        for i in range(n):
            top += 1
            sums[top] = values[r, i]
            counts[top] = 1
            # strict violation only: equal neighbours stay separate blocks
            while top > 0 and sums[top - 1] / counts[top - 1] < sums[top] / counts[top]:
                sums[top - 1] += sums[top]
                counts[top - 1] += counts[top]
                top -= 1
        pos = 0
        for b in range(top + 1):
            level = sums[b] / counts[b]
            for _ in range(counts[b]):
                out[r, pos] = level
                pos += 1


def pava_descending_batch(values: ArrayLike) -> FloatArray:
    """Project every row of ``values`` onto the descending cone."""
    v = np.ascontiguousarray(as_grade_matrix(values))
    out = np.empty_like(v)
    _pava_rows(v, out)
    return out


def pava_descending(v: ArrayLike) -> FloatArray:
    """Euclidean projection onto ``{x : x_1 >= x_2 >= ... >= x_n}`` by pooling adjacent violators.

    Blocks are kept as (sum, count) pairs and compared with exact floating-point
    arithmetic, so the output is idempotent and ties in the input map to ties
    in the output deterministically.
    """
    v = as_grades(v, "v")
    out = np.empty((1, v.size))
    _pava_rows(np.ascontiguousarray(v[None, :]), out)
    return out[0]


def minmax_oracle(v: ArrayLike) -> FloatArray:
    """Isotonic regression by the max-min formula over window means.

    ``out[k] = max_{w >= k} min_{u <= k} mean(v[u..w])``. Costs O(n^3); meant as a
    test oracle for small inputs.
    """
    v = as_grades(v, "v")
    n = v.size
    csum = np.concatenate(([0.0], np.cumsum(v)))
    u = np.arange(n)[:, None]
    w = np.arange(n)[None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        means = (csum[w + 1] - csum[u]) / (w - u + 1)
    out = np.empty(n)
    for k in range(n):
        out[k] = means[: k + 1, k:].min(axis=0).max()
    return out


def project_with_ranking(y: ArrayLike, ranking: Ranking) -> FloatArray:
    """Euclidean projection of ``y`` onto S_pi, i.e. ``pi^-1 o (pi o y)^+``."""
    y = as_grades(y, "y")
    ranking = _check_ranking(y.size, ranking)
    idx = ranking.array
    out = np.empty_like(y)
    out[idx] = pava_descending(y[idx])
    return out


def project_with_ranking_batch(y: ArrayLike, ranking: Ranking) -> FloatArray:
    """Row-wise ``project_with_ranking`` for an (N, n) batch."""
    y = as_grade_matrix(y, "y")
    ranking = _check_ranking(y.shape[1], ranking)
    idx = ranking.array
    out = np.empty_like(y)
    out[:, idx] = pava_descending_batch(y[:, idx])
    return out


@dataclass(frozen=True)
class BregmanGenerator:
    """A strictly convex, twice differentiable generator ``phi`` and its domain."""

    name: str
    phi: Callable[[FloatArray], FloatArray]
    dphi: Callable[[FloatArray], FloatArray]
    lower: float = -np.inf
    upper: float = np.inf

    def check_domain(self, x: FloatArray, name: str = "y") -> None:
        if np.any(x <= self.lower) or np.any(x >= self.upper):
            raise DomainError(
                f"{name} must lie in ({self.lower}, {self.upper}) for the {self.name} generator"
            )

    def divergence(self, y: ArrayLike, r: ArrayLike) -> FloatArray:
        """Elementwise ``D(y, r) = phi(y) - phi(r) - (y - r) phi'(r)``."""
        y = np.asarray(y, dtype=np.float64)
        r = np.asarray(r, dtype=np.float64)
        return self.phi(y) - self.phi(r) - (y - r) * self.dphi(r)


def _neg_entropy(x):
    return x * np.log(x) + (1.0 - x) * np.log1p(-x)


def _neg_entropy_grad(x):
    return np.log(x) - np.log1p(-x)


SQUARED = BregmanGenerator("squared", lambda x: x * x, lambda x: 2.0 * x)
KL = BregmanGenerator("kl", _neg_entropy, _neg_entropy_grad, lower=0.0, upper=1.0)

GENERATORS = {"squared": SQUARED, "kl": KL}


def get_generator(spec: str | BregmanGenerator) -> BregmanGenerator:
    if isinstance(spec, BregmanGenerator):
        return spec
    try:
        return GENERATORS[spec]
    except KeyError:
        raise DomainError(f"unknown Bregman generator {spec!r}; choose from {sorted(GENERATORS)}") from None


def bregman_project(y: ArrayLike, generator: str | BregmanGenerator, ranking: Ranking) -> FloatArray:
    """Minimize ``sum_i D_phi(y_i, r_i)`` over r in S_pi.

    For a separable Bregman objective the minimizer over any block is the block
    mean, so the solution coincides with the Euclidean projection. ``phi`` is
    only used to validate the domain.
    """
    gen = get_generator(generator)
    y = as_grades(y, "y")
    gen.check_domain(y)
    return project_with_ranking(y, ranking)


def bregman_objective(y: ArrayLike, r: ArrayLike, generator: str | BregmanGenerator) -> float:
    gen = get_generator(generator)
    return float(np.sum(gen.divergence(y, r)))


def project_complement_isotonic(y: ArrayLike, ranking: Ranking) -> FloatArray:
    """Project onto the closure of the complement of S_pi.

    Points outside the interior of S_pi are returned unchanged. For an interior
    point the nearest boundary point averages the adjacent (in ranking order)
    pair with the smallest gap; ties go to the earliest pair.
    """
    y = as_grades(y, "y")
    ranking = _check_ranking(y.size, ranking)
    return project_complement_isotonic_batch(y[None, :], ranking)[0]


def project_complement_isotonic_batch(y: ArrayLike, ranking: Ranking) -> FloatArray:
    y = as_grade_matrix(y, "y")
    ranking = _check_ranking(y.shape[1], ranking)
    out = np.array(y, dtype=np.float64, copy=True)
    if y.shape[1] < 2:
        # S_pi is the whole line; its complement is empty and there is nothing to project onto
        return out
    idx = ranking.array
    ordered = y[:, idx]
    gaps = ordered[:, :-1] - ordered[:, 1:]
    interior = np.all(gaps > 0, axis=1)
    if not np.any(interior):
        return out
    rows = np.nonzero(interior)[0]
    k = np.argmin(gaps[rows], axis=1)
    left, right = idx[k], idx[k + 1]
    mid = 0.5 * (y[rows, left] + y[rows, right])
    out[rows, left] = mid
    out[rows, right] = mid
    return out

