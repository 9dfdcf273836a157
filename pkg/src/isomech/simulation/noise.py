"""Seeded noise models.

Draws are generated in fixed blocks of ``BLOCK`` rows. Block ``b`` of a model
with seed ``s`` comes from its own PCG64 stream keyed by ``(s, b)``, so draw
``t`` is row ``t % BLOCK`` of block ``t // BLOCK`` no matter how many draws are
requested or which worker produces them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from isomech.errors import ParameterError
from isomech.isotonic import FloatArray

BLOCK = 4096

IID_FAMILIES = ("gaussian", "uniform", "laplace")


@dataclass(frozen=True)
class NoiseModel:
    """Distribution of the noise vector ``z`` in ``y = R + z``.

    Families and their parameters:

    - ``gaussian``: ``scale`` is the standard deviation.
    - ``uniform``: support ``[low, high]``.
    - ``laplace``: ``scale`` is the Laplace scale ``b`` (variance ``2 b^2``).
    - ``latent``: ``z_i = w + e_i`` with ``e`` drawn i.i.d. from ``base`` and a
      shared ``w ~ N(0, latent_sigma^2)``. Exchangeable, not independent.
    """

    family: str = "gaussian"
    scale: float = 1.0
    low: float = 0.0
    high: float = 0.0
    latent_sigma: float = 0.0
    base: "NoiseModel | None" = None
    seed: int = 0

    def __post_init__(self):
        if self.family not in (*IID_FAMILIES, "latent"):
            raise ParameterError(f"unknown noise family {self.family!r}")
        if self.family in ("gaussian", "laplace") and not self.scale >= 0:
            raise ParameterError(f"{self.family} noise needs a nonnegative scale, got {self.scale}")
        if self.family == "uniform" and not self.low <= self.high:
            raise ParameterError(f"uniform noise needs low <= high, got [{self.low}, {self.high}]")
        if self.family == "latent":
            if self.base is None or self.base.family == "latent":
                raise ParameterError("latent noise needs an i.i.d. base family")
            if not self.latent_sigma >= 0:
                raise ParameterError(f"latent sigma must be nonnegative, got {self.latent_sigma}")

    @classmethod
    def gaussian(cls, sigma: float, seed: int = 0) -> "NoiseModel":
        return cls("gaussian", scale=float(sigma), seed=seed)

    @classmethod
    def uniform(cls, low: float, high: float, seed: int = 0) -> "NoiseModel":
        return cls("uniform", low=float(low), high=float(high), seed=seed)

    @classmethod
    def laplace(cls, scale: float, seed: int = 0) -> "NoiseModel":
        return cls("laplace", scale=float(scale), seed=seed)

    @classmethod
    def latent(cls, base: "NoiseModel", latent_sigma: float, seed: int = 0) -> "NoiseModel":
        return cls("latent", latent_sigma=float(latent_sigma), base=base, seed=seed)

    @classmethod
    def parse(cls, text: str, seed: int = 0) -> "NoiseModel":
        """``gaussian:1``, ``uniform:-1:1``, ``laplace:0.5`` or ``latent:0.5:gaussian:1``."""
        parts = text.strip().split(":")
        try:
            if parts[0] == "gaussian" and len(parts) == 2:
                return cls.gaussian(float(parts[1]), seed)
            if parts[0] == "uniform" and len(parts) == 3:
                return cls.uniform(float(parts[1]), float(parts[2]), seed)
            if parts[0] == "laplace" and len(parts) == 2:
                return cls.laplace(float(parts[1]), seed)
            if parts[0] == "latent" and len(parts) >= 3:
                return cls.latent(cls.parse(":".join(parts[2:])), float(parts[1]), seed)
        except ValueError:
            pass
        raise ParameterError(f"cannot parse noise model {text!r}")

    def __str__(self) -> str:
        if self.family == "uniform":
            return f"uniform:{self.low!r}:{self.high!r}"
        if self.family == "latent":
            return f"latent:{self.latent_sigma!r}:{self.base}"
        return f"{self.family}:{self.scale!r}"

    def with_seed(self, seed: int) -> "NoiseModel":
        return replace(self, seed=int(seed))

    @property
    def mean(self) -> float:
        """E z_1."""
        if self.family == "uniform":
            return 0.5 * (self.low + self.high)
        if self.family == "latent":
            return self.base.mean
        return 0.0

    @property
    def second_moment(self) -> float:
        """E z_1^2."""
        if self.family == "gaussian":
            return self.scale**2
        if self.family == "laplace":
            return 2.0 * self.scale**2
        if self.family == "uniform":
            a, b = self.low, self.high
            return (a * a + a * b + b * b) / 3.0
        return self.base.second_moment + self.latent_sigma**2

    def _rng(self, block: int) -> np.random.Generator:
        ss = np.random.SeedSequence(entropy=int(self.seed), spawn_key=(int(block),))
        return np.random.Generator(np.random.PCG64(ss))

    def _iid(self, rng: np.random.Generator, shape: tuple[int, int]) -> FloatArray:
        if self.family == "gaussian":
            return rng.standard_normal(shape) * self.scale
        if self.family == "uniform":
            return rng.uniform(self.low, self.high, size=shape)
        return rng.laplace(0.0, self.scale, size=shape) if self.scale > 0 else np.zeros(shape)

    def block(self, n: int, block: int) -> FloatArray:
        """All ``BLOCK`` draws of block ``block`` as a (BLOCK, n) array."""
        if n < 1:
            raise ParameterError(f"need n >= 1, got {n}")
        rng = self._rng(block)
        if self.family != "latent":
            return self._iid(rng, (BLOCK, n))
        e = self.base._iid(rng, (BLOCK, n))
        w = rng.standard_normal((BLOCK, 1)) * self.latent_sigma
        return e + w


def sample_noise(model: NoiseModel, n: int, draw: int) -> FloatArray:
    """The ``draw``-th noise vector of length ``n`` from ``model``."""
    if draw < 0:
        raise ParameterError(f"draw index must be nonnegative, got {draw}")
    return model.block(n, draw // BLOCK)[draw % BLOCK].copy()


def n_blocks(replications: int) -> int:
    return math.ceil(replications / BLOCK)
