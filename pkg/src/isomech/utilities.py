"""Owner utility families.

A ``UtilitySpec`` is a closed, serializable description of the owner's overall
utility. Four families exist:

``separable``   sum_i U(x_i) for a base function U
``grade``       sum_i sum_l g_l(R_i) h_l(x_i), which depends on the true grades R
``schur``       h(x_(1)) + ... + h(x_(k)) over the k largest entries
``nonconvex``   sum_i min(x_i, c)

Specs round-trip through strings such as ``separable:square``,
``grade:positive-part*square``, ``schur:2:square`` and ``nonconvex:cap:1``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from numpy.typing import ArrayLike

from isomech.errors import DimensionError, DomainError, ParameterError
from isomech.isotonic import FloatArray, as_grade_matrix, as_grades

EXP_CLAMP = 700.0

_SPOT_GRID = np.linspace(-10.0, 10.0, 201)


@dataclass(frozen=True)
class ScalarFunction:
    """A named scalar function with the analytic facts the tests rely on.

    Attributes:
        tag: serialized name, e.g. ``square`` or ``power:3``.
        lower: inputs must be ``>= lower``.
        monotone_from: the function is nondecreasing on ``[monotone_from, inf)``.
    """

    tag: str
    f: Callable[[FloatArray], FloatArray] = field(repr=False, compare=False)
    lower: float = -math.inf
    monotone_from: float = -math.inf

    def __post_init__(self):
        grid = _SPOT_GRID[_SPOT_GRID >= max(self.lower, -10.0)]
        h = 1e-3
        vals = self.f(grid)
        inner = grid[(grid - h >= self.lower)]
        second = self.f(inner - h) + self.f(inner + h) - 2.0 * self.f(inner)
        scale = 1.0 + np.abs(self.f(inner))
        if np.any(second < -1e-9 * scale):
            raise ParameterError(f"base function {self.tag!r} fails the convexity spot-check")
        mono = grid >= self.monotone_from
        if np.any(np.diff(vals[mono]) < -1e-12 * (1.0 + np.abs(vals[mono][1:]))):
            raise ParameterError(f"base function {self.tag!r} fails the monotonicity spot-check")

    def __call__(self, x: ArrayLike) -> FloatArray:
        x = np.asarray(x, dtype=np.float64)
        if np.any(x < self.lower):
            raise DomainError(f"{self.tag} is defined only for inputs >= {self.lower}")
        return self.f(x)

    def __str__(self) -> str:
        return self.tag


def _power(p: float) -> ScalarFunction:
    if not p >= 1.0:
        raise ParameterError(f"power utility needs p >= 1, got {p}")
    return ScalarFunction(f"power:{_fmt(p)}", lambda x: np.power(x, p), lower=0.0, monotone_from=0.0)


def _constant(c: float) -> ScalarFunction:
    if not c >= 0.0:
        raise ParameterError(f"constant weight must be nonnegative, got {c}")
    return ScalarFunction(f"constant:{_fmt(c)}", lambda x: np.full_like(x, c, dtype=np.float64))


def _fmt(x: float) -> str:
    return repr(float(x)).removesuffix(".0") if math.isfinite(x) else ("inf" if x > 0 else "-inf")


_BASES: dict[str, Callable[[], ScalarFunction]] = {
    "identity": lambda: ScalarFunction("identity", lambda x: x + 0.0),
    "square": lambda: ScalarFunction("square", np.square, monotone_from=0.0),
    "positive-part": lambda: ScalarFunction("positive-part", lambda x: np.maximum(x, 0.0)),
    "positive-part-square": lambda: ScalarFunction(
        "positive-part-square", lambda x: np.square(np.maximum(x, 0.0))
    ),
    "exponential": lambda: ScalarFunction(
        "exponential", lambda x: np.exp(np.minimum(x, EXP_CLAMP))
    ),
}


def base_function(tag: str) -> ScalarFunction:
    """Look up a base function by tag (``identity``, ``square``, ``power:2.5``, ...)."""
    tag = tag.strip()
    name, _, arg = tag.partition(":")
    if name == "power":
        return _power(_parse_float(arg, tag))
    if name == "constant":
        return _constant(_parse_float(arg, tag))
    if arg or name not in _BASES:
        raise ParameterError(f"unknown base function {tag!r}")
    return _BASES[name]()


def _parse_float(text: str, context: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise ParameterError(f"bad numeric parameter in {context!r}") from None


FAMILIES = ("separable", "grade", "schur", "nonconvex")


@dataclass(frozen=True)
class UtilitySpec:
    family: str
    base: ScalarFunction | None = None
    components: tuple[tuple[ScalarFunction, ScalarFunction], ...] = ()
    k: int | None = None
    cap: float = math.inf

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ParameterError(f"unknown utility family {self.family!r}")
        if self.family in ("separable", "schur") and self.base is None:
            raise ParameterError(f"{self.family} utility needs a base function")
        if self.family == "schur" and (self.k is None or self.k < 1):
            raise ParameterError("top-k utility needs k >= 1")
        if self.family == "grade" and not self.components:
            raise ParameterError("grade-dependent utility needs at least one (g, h) component")

    @classmethod
    def separable(cls, base: str) -> "UtilitySpec":
        return cls("separable", base=base_function(base))

    @classmethod
    def grade_dependent(cls, components: list[tuple[str, str]]) -> "UtilitySpec":
        return cls(
            "grade", components=tuple((base_function(g), base_function(h)) for g, h in components)
        )

    @classmethod
    def top_k(cls, k: int, base: str = "identity") -> "UtilitySpec":
        return cls("schur", base=base_function(base), k=int(k))

    @classmethod
    def capped(cls, cap: float) -> "UtilitySpec":
        return cls("nonconvex", cap=float(cap))

    @classmethod
    def parse(cls, text: str) -> "UtilitySpec":
        """Parse a serialized spec; bare base tags and ``max`` are accepted as shorthands."""
        text = text.strip()
        family, _, rest = text.partition(":")
        if family == "separable":
            return cls.separable(rest)
        if family == "grade":
            comps = []
            for term in rest.split("+"):
                g, sep, h = term.partition("*")
                if not sep:
                    raise ParameterError(f"grade component {term!r} must look like g*h")
                comps.append((g, h))
            return cls.grade_dependent(comps)
        if family == "schur":
            k, _, base = rest.partition(":")
            try:
                return cls.top_k(int(k), base or "identity")
            except ValueError:
                raise ParameterError(f"bad k in {text!r}") from None
        if family == "nonconvex":
            kind, _, c = rest.partition(":")
            if kind != "cap":
                raise ParameterError(f"the only nonconvex utility is the cap, got {text!r}")
            return cls.capped(_parse_float(c, text))
        if text == "max":
            return cls.top_k(1, "identity")
        return cls.separable(text)

    def __str__(self) -> str:
        if self.family == "separable":
            return f"separable:{self.base}"
        if self.family == "grade":
            return "grade:" + "+".join(f"{g}*{h}" for g, h in self.components)
        if self.family == "schur":
            return f"schur:{self.k}:{self.base}"
        return f"nonconvex:cap:{_fmt(self.cap)}"

    @property
    def needs_truth(self) -> bool:
        return self.family == "grade"

    def evaluate(self, x: ArrayLike, truth: ArrayLike | None = None) -> float:
        """Utility of a single estimate vector."""
        x = as_grades(x, "x")
        return float(self.evaluate_batch(x[None, :], truth)[0])

    def evaluate_batch(self, x: ArrayLike, truth: ArrayLike | None = None) -> FloatArray:
        """Utility of every row of an (N, n) batch of estimates."""
        x = as_grade_matrix(x, "x")
        n = x.shape[1]
        if self.family == "separable":
            return np.sum(self.base(x), axis=1)
        if self.family == "grade":
            if truth is None:
                raise DimensionError("grade-dependent utility needs the true grades")
            truth = as_grades(truth, "R")
            if truth.size != n:
                raise DimensionError(f"R has {truth.size} entries, estimates have {n}")
            total = np.zeros(x.shape[0])
            for g, h in self.components:
                if np.any(truth < g.monotone_from):
                    raise DomainError(f"weight {g} is not nondecreasing at the given R")
                weight = g(truth)
                if np.any(weight < 0):
                    raise DomainError(f"weight {g} is negative at the given R")
                total += h(x) @ weight
            return total
        if self.family == "schur":
            if self.k > n:
                raise ParameterError(f"top-k utility has k={self.k} > n={n}")
            top = -np.partition(-x, self.k - 1, axis=1)[:, : self.k]
            return np.sum(self.base(top), axis=1)
        return np.sum(np.minimum(x, self.cap), axis=1)


def _require(spec: UtilitySpec, family: str) -> None:
    if spec.family != family:
        raise ParameterError(f"expected a {family} utility, got {spec.family}")


def eval_separable(spec: UtilitySpec, x: ArrayLike) -> float:
    _require(spec, "separable")
    return spec.evaluate(x)


def eval_grade_dependent(spec: UtilitySpec, x: ArrayLike, truth: ArrayLike) -> float:
    _require(spec, "grade")
    return spec.evaluate(x, truth)


def eval_schur(spec: UtilitySpec, x: ArrayLike) -> float:
    _require(spec, "schur")
    return spec.evaluate(x)


def eval_nonconvex(spec: UtilitySpec, x: ArrayLike) -> float:
    _require(spec, "nonconvex")
    return spec.evaluate(x)
