"""Mechanisms the appraiser runs on an owner's report.

The functional API (``isotonic_mechanism``, ``coarse_isotonic_mechanism``, ...)
works on single grade vectors. The ``*Element`` classes wrap the same
projections as knowledge elements: each knows whether it contains a ground
truth and can project a whole (N, n) batch of observations at once, which is
what the Monte Carlo engine needs.
"""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

from isomech.errors import DimensionError, ParameterError, StructureError
from isomech.isotonic import (
    FloatArray,
    Ranking,
    as_grade_matrix,
    as_grades,
    pava_descending_batch,
    project_complement_isotonic_batch,
    project_with_ranking,
    project_with_ranking_batch,
)

UNIT_TOL = 1e-9


@dataclass(frozen=True)
class CoarseRanking:
    """Ordered blocks of item indices (0-based); every item of an earlier block outranks every later one."""

    blocks: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        blocks = tuple(tuple(sorted(int(i) for i in block)) for block in self.blocks)
        if not blocks or any(len(b) == 0 for b in blocks):
            raise StructureError("coarse ranking blocks must be nonempty")
        items = [i for b in blocks for i in b]
        if sorted(items) != list(range(len(items))):
            raise StructureError(f"blocks {blocks} do not partition 0..{len(items) - 1}")
        object.__setattr__(self, "blocks", blocks)

    @classmethod
    def parse(cls, text: str) -> "CoarseRanking":
        """Parse the 1-based ``|``-separated notation, e.g. ``"1,3|2,4"``."""
        try:
            return cls(tuple(tuple(int(t) - 1 for t in part.split(",")) for part in text.split("|")))
        except ValueError:
            raise StructureError(f"cannot parse coarse ranking {text!r}") from None

    @classmethod
    def from_ranking(cls, ranking: Ranking, sizes: Sequence[int]) -> "CoarseRanking":
        """Cut a full ranking into consecutive blocks of the given sizes."""
        if sum(sizes) != len(ranking):
            raise StructureError(f"sizes {tuple(sizes)} do not sum to {len(ranking)}")
        cuts = np.cumsum([0, *sizes])
        return cls(tuple(ranking.order[a:b] for a, b in zip(cuts[:-1], cuts[1:])))

    @property
    def n(self) -> int:
        return sum(len(b) for b in self.blocks)

    @property
    def sizes(self) -> tuple[int, ...]:
        return tuple(len(b) for b in self.blocks)

    def __str__(self) -> str:
        return "|".join(",".join(str(i + 1) for i in b) for b in self.blocks)

    def contains(self, values: ArrayLike) -> bool:
        v = np.asarray(values, dtype=np.float64)
        return all(v[list(a)].min() >= v[list(b)].max() for a, b in zip(self.blocks, self.blocks[1:]))


def all_coarse_rankings(sizes: Sequence[int]) -> Iterator[CoarseRanking]:
    """Every ordered partition of ``0..n-1`` into blocks of the given sizes."""
    n = sum(sizes)

    def rec(remaining: tuple[int, ...], q: int):
        if q == len(sizes):
            yield ()
            return
        for block in itertools.combinations(remaining, sizes[q]):
            rest = tuple(i for i in remaining if i not in block)
            for tail in rec(rest, q + 1):
                yield (block, *tail)

    for blocks in rec(tuple(range(n)), 0):
        yield CoarseRanking(blocks)


def all_rankings(n: int) -> Iterator[Ranking]:
    for perm in itertools.permutations(range(n)):
        yield Ranking(perm)


def _check(y: FloatArray, n: int, what: str) -> None:
    if y.size != n:
        raise DimensionError(f"{what} covers {n} items, vector has {y.size}")


def isotonic_mechanism(y: ArrayLike, ranking: Ranking) -> FloatArray:
    """Project the observed grades onto the isotonic cone of the reported ranking."""
    return project_with_ranking(y, ranking)


def build_coarse_permutation(y: ArrayLike, coarse: CoarseRanking) -> Ranking:
    """Sort each block by observed grade (descending, ties by index) and concatenate."""
    y = as_grades(y, "y")
    _check(y, coarse.n, "coarse ranking")
    order: list[int] = []
    for block in coarse.blocks:
        order.extend(sorted(block, key=lambda i: (-y[i], i)))
    return Ranking(tuple(order))


def coarse_isotonic_mechanism(y: ArrayLike, coarse: CoarseRanking) -> FloatArray:
    return isotonic_mechanism(y, build_coarse_permutation(y, coarse))


def coarse_isotonic_mechanism_batch(y: ArrayLike, coarse: CoarseRanking) -> FloatArray:
    y = as_grade_matrix(y, "y")
    if y.shape[1] != coarse.n:
        raise DimensionError(f"coarse ranking covers {coarse.n} items, rows have {y.shape[1]}")
    perms = []
    for block in coarse.blocks:
        idx = np.asarray(block, dtype=np.intp)
        # blocks are stored in ascending index order, so a stable sort breaks ties by index
        local = np.argsort(-y[:, idx], axis=1, kind="stable")
        perms.append(idx[local])
    perm = np.concatenate(perms, axis=1)
    fitted = pava_descending_batch(np.take_along_axis(y, perm, axis=1))
    out = np.empty_like(y)
    np.put_along_axis(out, perm, fitted, axis=1)
    return out


def _local_structure(
    n: int, subsets: Sequence[Sequence[int]], local_orders: Sequence[Sequence[int]]
) -> list[NDArray[np.intp]]:
    if len(subsets) != len(local_orders):
        raise StructureError("need exactly one local order per subset")
    items = sorted(int(i) for s in subsets for i in s)
    if items != list(range(n)):
        raise StructureError(f"subsets do not partition 0..{n - 1}")
    orders = []
    for subset, order in zip(subsets, local_orders):
        if sorted(int(i) for i in order) != sorted(int(i) for i in subset):
            raise StructureError(f"local order {tuple(order)} is not a permutation of its subset")
        orders.append(np.asarray(order, dtype=np.intp))
    return orders


def local_ranking_mechanism(
    y: ArrayLike, subsets: Sequence[Sequence[int]], local_orders: Sequence[Sequence[int]]
) -> FloatArray:
    """Run the isotonic mechanism independently inside each subset.

    ``local_orders[q]`` lists the items of ``subsets[q]`` from best to worst
    (0-based item indices). No constraint links different subsets.
    """
    y = as_grades(y, "y")
    return local_ranking_mechanism_batch(y[None, :], subsets, local_orders)[0]


def local_ranking_mechanism_batch(
    y: ArrayLike, subsets: Sequence[Sequence[int]], local_orders: Sequence[Sequence[int]]
) -> FloatArray:
    y = as_grade_matrix(y, "y")
    orders = _local_structure(y.shape[1], subsets, local_orders)
    out = np.empty_like(y)
    for order in orders:
        out[:, order] = pava_descending_batch(y[:, order])
    return out


def canonical_direction(u: ArrayLike) -> FloatArray:
    """Validate a unit vector and flip its sign so the first nonzero entry is positive."""
    u = as_grades(u, "u")
    norm = float(np.linalg.norm(u))
    if abs(norm - 1.0) > UNIT_TOL:
        raise ParameterError(f"direction must have unit norm, got {norm}")
    nz = np.flatnonzero(u)
    if u[nz[0]] < 0:
        u = -u
    return u


def line_mechanism(y: ArrayLike, u: ArrayLike) -> FloatArray:
    """Orthogonal projection of ``y`` onto the line spanned by the unit vector ``u``."""
    y = as_grades(y, "y")
    u = canonical_direction(u)
    _check(y, u.size, "direction")
    return float(u @ y) * u


def line_mechanism_batch(y: ArrayLike, u: ArrayLike) -> FloatArray:
    y = as_grade_matrix(y, "y")
    u = canonical_direction(u)
    if y.shape[1] != u.size:
        raise DimensionError(f"direction has {u.size} entries, rows have {y.shape[1]}")
    return np.outer(y @ u, u)


# -- multiple owners ---------------------------------------------------------


@dataclass(frozen=True)
class OwnershipMatrix:
    """Item-by-owner 0/1 indicator grid."""

    owners: tuple[str, ...]
    indicator: NDArray[np.bool_]

    def __post_init__(self):
        ind = np.asarray(self.indicator, dtype=bool)
        if ind.ndim != 2 or ind.shape[1] != len(self.owners):
            raise StructureError(f"indicator shape {ind.shape} does not match {len(self.owners)} owners")
        if len(set(self.owners)) != len(self.owners):
            raise StructureError("owner ids must be unique")
        orphans = np.flatnonzero(~ind.any(axis=1))
        if orphans.size:
            raise StructureError(f"items without an owner: {(orphans + 1).tolist()}")
        ind.flags.writeable = False
        object.__setattr__(self, "indicator", ind)

    @property
    def n_items(self) -> int:
        return self.indicator.shape[0]

    @classmethod
    def from_owner_items(cls, owned: dict[str, Iterable[int]], n_items: int) -> "OwnershipMatrix":
        """Build from ``{owner: 0-based item indices}``."""
        owners = tuple(owned)
        ind = np.zeros((n_items, len(owners)), dtype=bool)
        for j, owner in enumerate(owners):
            for i in owned[owner]:
                ind[int(i), j] = True
        return cls(owners, ind)

    @classmethod
    def read_csv(cls, path: str | Path) -> "OwnershipMatrix":
        """Header row of owner ids, then one row of 0/1 flags per item."""
        with open(path, newline="") as fh:
            rows = [row for row in csv.reader(fh) if row and any(c.strip() for c in row)]
        if not rows:
            raise StructureError(f"{path}: empty ownership file")
        owners = tuple(c.strip() for c in rows[0])
        flags = []
        for lineno, row in enumerate(rows[1:], start=2):
            if len(row) != len(owners):
                raise StructureError(f"{path}:{lineno}: expected {len(owners)} flags, got {len(row)}")
            try:
                vals = [int(c) for c in row]
            except ValueError:
                raise StructureError(f"{path}:{lineno}: flags must be 0 or 1") from None
            if any(v not in (0, 1) for v in vals):
                raise StructureError(f"{path}:{lineno}: flags must be 0 or 1")
            flags.append(vals)
        return cls(owners, np.array(flags, dtype=bool).reshape(len(flags), len(owners)))

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(self.owners)
            writer.writerows(self.indicator.astype(int).tolist())


@dataclass(frozen=True)
class OwnerGroups:
    groups: tuple[tuple[str, tuple[int, ...]], ...]

    @property
    def singletons(self) -> tuple[str, ...]:
        """Owners whose group has a single item; the mechanism cannot use their ranking."""
        return tuple(owner for owner, items in self.groups if len(items) == 1)

    def __iter__(self):
        return iter(self.groups)

    def __len__(self) -> int:
        return len(self.groups)


def owner_partition(matrix: OwnershipMatrix, seed: int = 0) -> OwnerGroups:
    """Greedy partition of items into single-owner groups.

    Repeatedly pick the owner holding the most remaining items (ties broken
    uniformly at random with a generator seeded by ``seed``), give that owner
    all of those items, and remove both.
    """
    rng = np.random.default_rng(seed)
    ind = matrix.indicator
    remaining = np.ones(matrix.n_items, dtype=bool)
    active = np.ones(len(matrix.owners), dtype=bool)
    groups = []
    while remaining.any():
        counts = np.where(active, ind[remaining].sum(axis=0), -1)
        best = np.flatnonzero(counts == counts.max())
        j = int(best[0]) if best.size == 1 else int(rng.choice(best))
        items = np.flatnonzero(remaining & ind[:, j])
        groups.append((matrix.owners[j], tuple(items.tolist())))
        remaining[items] = False
        active[j] = False
    return OwnerGroups(tuple(groups))


def partitioned_mechanism(
    y: ArrayLike, groups: OwnerGroups, reports: dict[str, Sequence[int]]
) -> FloatArray:
    """Run the isotonic mechanism inside each owner group.

    ``reports[owner]`` orders that owner's group items from best to worst.
    Singleton groups pass through unchanged.
    """
    subsets = [items for _, items in groups]
    orders = [reports[owner] if len(items) > 1 else items for owner, items in groups]
    return local_ranking_mechanism(y, subsets, orders)


# -- knowledge elements ------------------------------------------------------


class Element:
    """A reportable knowledge element with a batch projection."""

    family = "element"
    convex = True

    def project_batch(self, y: FloatArray) -> FloatArray:
        raise NotImplementedError

    def __call__(self, y: ArrayLike) -> FloatArray:
        return self.project_batch(as_grade_matrix(y))

    def project(self, y: ArrayLike) -> FloatArray:
        return self.project_batch(as_grades(y)[None, :])[0]

    def contains(self, truth: ArrayLike) -> bool:
        raise NotImplementedError

    @property
    def label(self) -> str:
        raise NotImplementedError


@dataclass(frozen=True)
class IsotonicElement(Element):
    ranking: Ranking
    family = "full"

    def project_batch(self, y):
        return project_with_ranking_batch(y, self.ranking)

    def contains(self, truth):
        return self.ranking.contains(truth)

    @property
    def label(self):
        return f"rank[{self.ranking}]"


@dataclass(frozen=True)
class CoarseElement(Element):
    coarse: CoarseRanking
    family = "coarse"

    def project_batch(self, y):
        return coarse_isotonic_mechanism_batch(y, self.coarse)

    def contains(self, truth):
        return self.coarse.contains(truth)

    @property
    def label(self):
        return f"coarse[{self.coarse}]"


@dataclass(frozen=True)
class LocalElement(Element):
    local_orders: tuple[tuple[int, ...], ...]
    family = "local"

    def project_batch(self, y):
        return local_ranking_mechanism_batch(y, self.local_orders, self.local_orders)

    def contains(self, truth):
        v = np.asarray(truth, dtype=np.float64)
        return all(bool(np.all(v[list(o)][:-1] >= v[list(o)][1:])) for o in self.local_orders)

    @property
    def label(self):
        return "local[" + "|".join(",".join(str(i + 1) for i in o) for o in self.local_orders) + "]"


@dataclass(frozen=True)
class LineElement(Element):
    direction: tuple[float, ...]
    family = "line"

    def __post_init__(self):
        object.__setattr__(self, "direction", tuple(canonical_direction(self.direction).tolist()))

    def project_batch(self, y):
        return line_mechanism_batch(y, self.direction)

    def contains(self, truth):
        v = np.asarray(truth, dtype=np.float64)
        u = np.asarray(self.direction)
        return bool(np.allclose(v, (u @ v) * u, rtol=0.0, atol=1e-9 * (1.0 + np.abs(v).max())))

    @property
    def label(self):
        return "line[" + ",".join(format(c, ".6g") for c in self.direction) + "]"


@dataclass(frozen=True)
class ComplementElement(Element):
    """Closure of the complement of an isotonic cone (nonconvex)."""

    ranking: Ranking
    family = "complement"
    convex = False

    def project_batch(self, y):
        return project_complement_isotonic_batch(y, self.ranking)

    def contains(self, truth):
        v = np.asarray(truth, dtype=np.float64)[self.ranking.array]
        return not bool(np.all(v[:-1] > v[1:]))

    @property
    def label(self):
        return f"complement[{self.ranking}]"


def unit(v: ArrayLike) -> FloatArray:
    v = as_grades(v)
    norm = float(np.linalg.norm(v))
    if norm == 0.0 or not math.isfinite(norm):
        raise ParameterError("cannot normalize the zero vector")
    return v / norm
