"""Majorization predicates and upward-transport chains.

Three orders are provided:

* weak majorization: sorted prefix sums of ``a`` dominate those of ``b``;
* majorization: weak majorization plus equal totals;
* natural-order majorization: the same with *unsorted* prefix sums.

``majorizes`` compares all accumulated sums to within ``ATOL``. The other
predicates compare prefixes exactly unless a caller passes ``slack``, and
check equality of totals to within ``ATOL``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike

from isomech.errors import DimensionError, OrderingError
from isomech.isotonic import FloatArray, as_grades

ATOL = 1e-9


def _pair(a: ArrayLike, b: ArrayLike) -> tuple[FloatArray, FloatArray]:
    a = as_grades(a, "a")
    b = as_grades(b, "b")
    if a.size != b.size:
        raise DimensionError(f"length mismatch: {a.size} vs {b.size}")
    return a, b


def weakly_majorizes(a: ArrayLike, b: ArrayLike, slack: float = 0.0) -> bool:
    """Every sum of the k largest entries of ``a`` is at least that of ``b``."""
    a, b = _pair(a, b)
    sa = np.cumsum(np.sort(a)[::-1])
    sb = np.cumsum(np.sort(b)[::-1])
    return bool(np.all(sa >= sb - slack))


def majorizes(a: ArrayLike, b: ArrayLike) -> bool:
    """Weak majorization with equal totals; all sums compared to within ``ATOL``."""
    a, b = _pair(a, b)
    return weakly_majorizes(a, b, slack=ATOL) and abs(a.sum() - b.sum()) <= ATOL


def natural_order_failure(a: ArrayLike, b: ArrayLike, slack: float = 0.0) -> int | None:
    """Return the 1-based prefix length where ``a >=_no b`` fails, or None."""
    a, b = _pair(a, b)
    pa, pb = np.cumsum(a), np.cumsum(b)
    bad = np.nonzero(pa[:-1] < pb[:-1] - slack)[0]
    if bad.size:
        return int(bad[0]) + 1
    if abs(pa[-1] - pb[-1]) > max(ATOL, slack):
        return a.size
    return None


def majorizes_natural_order(a: ArrayLike, b: ArrayLike, slack: float = 0.0) -> bool:
    """Unsorted prefix sums of ``a`` dominate those of ``b``, with equal totals."""
    return natural_order_failure(a, b, slack) is None


def is_upward_transport(a: ArrayLike, b: ArrayLike) -> bool:
    """True iff ``a`` arises from ``b`` by moving mass from a later coordinate to an earlier one.

    Formally there are ``i < j`` with ``a_k = b_k`` off ``{i, j}``, ``a_i + a_j = b_i + b_j``
    and ``a_i >= b_i``. The last two comparisons allow ``ATOL`` of rounding.
    """
    a, b = _pair(a, b)
    diff = np.nonzero(a != b)[0]
    if diff.size == 0:
        return True
    if diff.size > 2:
        return False
    if diff.size == 1:
        # pair the lone differing coordinate with any untouched one
        k = int(diff[0])
        return abs(a[k] - b[k]) <= ATOL
    i, j = int(diff[0]), int(diff[1])
    return abs((a[i] + a[j]) - (b[i] + b[j])) <= ATOL and a[i] >= b[i] - ATOL


@dataclass(frozen=True)
class TransportChain:
    """Vectors ``steps[0] = a, ..., steps[-1] = b``, each an upward transport of the next."""

    steps: tuple[FloatArray, ...]

    def __len__(self) -> int:
        return len(self.steps)

    def validate(self) -> None:
        first_sum = float(np.sum(self.steps[0]))
        for left, right in zip(self.steps, self.steps[1:]):
            if np.count_nonzero(left != right) > 2:
                raise OrderingError("consecutive chain elements differ in more than two coordinates", 0)
            if not is_upward_transport(left, right):
                raise OrderingError("chain step is not an upward transport", 0)
        for step in self.steps:
            if abs(float(np.sum(step)) - first_sum) > ATOL:
                raise OrderingError("chain elements have different totals", 0)


def transport_decompose(a: ArrayLike, b: ArrayLike) -> TransportChain:
    """Write ``a >=_no b`` as a chain of at most ``n`` upward transports ending at ``b``.

    Coordinate ``k`` is set to ``b_k`` by moving the surplus into coordinate
    ``k + 1``, then the tail is handled the same way. Coordinates that already
    agree are skipped, so no zero-mass steps appear.
    """
    a, b = _pair(a, b)
    failure = natural_order_failure(a, b, slack=ATOL)
    if failure is not None:
        raise OrderingError(f"a does not majorize b in the natural order (prefix {failure})", failure)
    n = a.size
    current = a.copy()
    steps = [a.copy()]
    for k in range(n - 1):
        if current[k] == b[k]:
            continue
        nxt = current.copy()
        nxt[k + 1] = current[k] + current[k + 1] - b[k]
        nxt[k] = b[k]
        if k == n - 2:
            # residual equals b[-1] up to rounding; snap so the chain ends exactly at b
            nxt[k + 1] = b[k + 1]
        steps.append(nxt)
        current = nxt
    if not np.array_equal(current, b):
        # only the last coordinate can still differ, by rounding
        tail = b.copy()
        steps.append(tail)
    for step in steps:
        step.flags.writeable = False
    return TransportChain(tuple(steps))


def random_upward_transport(rng: np.random.Generator, v: FloatArray, scale: float = 1.0) -> FloatArray:
    """Move a random nonnegative amount of mass from a random later coordinate to an earlier one."""
    out = np.array(v, dtype=np.float64, copy=True)
    n = out.size
    if n < 2:
        return out
    i, j = sorted(rng.choice(n, size=2, replace=False))
    mass = rng.exponential(scale)
    out[i] += mass
    out[j] -= mass
    return out


def random_natural_order_pair(
    rng: np.random.Generator, n: int, n_steps: int | None = None, scale: float = 1.0
) -> tuple[FloatArray, FloatArray]:
    """Draw ``(a, b)`` with ``a >=_no b`` by pushing random upward transports onto a random ``b``."""
    b = rng.normal(0.0, scale, size=n)
    if n_steps is None:
        n_steps = int(rng.integers(0, 2 * n + 1))
    a = b.copy()
    for _ in range(n_steps):
        a = random_upward_transport(rng, a, scale)
    return a, b
