"""
Parametric distributions used around tail index estimation: the generalized
Pareto distribution (GPD), the generalized extreme value distribution (GEV)
and the Beta distribution.

Closed form densities and distribution functions come from `scipy.stats`.
Samplers draw from a `RngState`, which wraps a numpy PCG64 generator so
that a seed produces the same stream on every platform.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import FrozenSet, Tuple

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy import stats

from libsmoothtail.utils import FloatOrArray, unwrap

# Below this |gamma| the exponential / Gumbel limits are used.
GAMMA_ZERO_TOL = 1e-12


class DistributionDomainException(ValueError):
    pass


@dataclass(frozen=True)
class GpdParams:
    gamma: float
    sigma: float = 1.0

    def __post_init__(self) -> None:
        if not (self.sigma > 0 and math.isfinite(self.sigma)):
            raise DistributionDomainException(
                f"GPD scale must be positive, got sigma={self.sigma}"
            )
        if not math.isfinite(self.gamma):
            raise DistributionDomainException("GPD tail index must be finite")

    @property
    def shape(self) -> float:
        return 0.0 if abs(self.gamma) < GAMMA_ZERO_TOL else self.gamma

    @property
    def lower_endpoint(self) -> float:
        return 0.0

    @property
    def upper_endpoint(self) -> float:
        """omega(F): -sigma/gamma for gamma < 0, infinite otherwise."""
        if self.shape < 0:
            return -self.sigma / self.gamma
        return math.inf

    def frozen(self) -> stats.rv_continuous:
        return stats.genpareto(c=self.shape, scale=self.sigma)


@dataclass(frozen=True)
class GevParams:
    gamma: float

    @property
    def shape(self) -> float:
        return 0.0 if abs(self.gamma) < GAMMA_ZERO_TOL else self.gamma

    def frozen(self) -> stats.rv_continuous:
        # scipy's genextreme uses c = -gamma
        return stats.genextreme(c=-self.shape)


@dataclass(frozen=True)
class BetaParams:
    theta1: float
    theta2: float

    def __post_init__(self) -> None:
        if not (self.theta1 > 0 and self.theta2 > 0):
            raise DistributionDomainException(
                "Beta shapes must be positive, got "
                f"theta1={self.theta1}, theta2={self.theta2}"
            )

    def frozen(self) -> stats.rv_continuous:
        return stats.beta(self.theta1, self.theta2)


class ShapeClass(Enum):
    CONVEX_NON_DECREASING = "convex non-decreasing"
    CONCAVE_NON_INCREASING = "concave non-increasing"
    CONVEX_NON_INCREASING = "convex non-increasing"
    LOG_CONCAVE = "log-concave"
    LOG_CONVEX = "log-convex"


@dataclass
class RngState:
    """
    Single owner random stream.

    Streams are derived through `numpy.random.SeedSequence`: the child for
    index `(i, j, ...)` is the sequence with entropy `seed` and spawn key
    `parent_key + (i, j, ...)`. Children never overlap each other or the
    parent.
    """

    seed: int
    spawn_key: Tuple[int, ...] = ()
    generator: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if self.seed < 0 or self.seed >= 2**64:
            raise DistributionDomainException(
                f"Seed must be a 64 bit unsigned integer, got {self.seed}"
            )
        sequence = np.random.SeedSequence(self.seed, spawn_key=self.spawn_key)
        self.generator = np.random.Generator(np.random.PCG64(sequence))

    def spawn(self, *index: int) -> RngState:
        return RngState(self.seed, self.spawn_key + tuple(int(i) for i in index))

    def uniform(self, n: int) -> NDArray[np.float64]:
        """Uniform deviates in the open interval (0, 1)."""
        bits = self.generator.integers(0, 2**53, size=n, dtype=np.int64)
        return (bits.astype(np.float64) + 0.5) / 2.0**53

    def standard_gamma(self, shape: float, n: int) -> NDArray[np.float64]:
        return self.generator.standard_gamma(shape, size=n)


def _check_count(n: int) -> None:
    if n < 1:
        raise DistributionDomainException(f"Sample size must be at least 1, got {n}")


def gpd_pdf(p: GpdParams, x: ArrayLike) -> FloatOrArray:
    return unwrap(np.asarray(p.frozen().pdf(x), dtype=np.float64), x)


def gpd_logpdf(p: GpdParams, x: ArrayLike) -> FloatOrArray:
    return unwrap(np.asarray(p.frozen().logpdf(x), dtype=np.float64), x)


def gpd_cdf(p: GpdParams, x: ArrayLike) -> FloatOrArray:
    return unwrap(np.asarray(p.frozen().cdf(x), dtype=np.float64), x)


def gpd_quantile(p: GpdParams, q: ArrayLike) -> FloatOrArray:
    levels = np.asarray(q, dtype=np.float64)
    if np.any((levels < 0) | (levels > 1)) or np.any(np.isnan(levels)):
        raise DistributionDomainException("Quantile levels must lie in [0, 1]")
    if p.shape >= 0 and np.any(levels == 1):
        raise DistributionDomainException(
            f"Level 1 has no finite quantile for gamma={p.gamma} >= 0"
        )
    values = np.asarray(p.frozen().ppf(levels), dtype=np.float64)
    if p.shape < 0:
        values = np.where(levels == 1, p.upper_endpoint, values)
    return unwrap(values, q)


def gpd_sample(p: GpdParams, n: int, rng: RngState) -> NDArray[np.float64]:
    _check_count(n)
    values = np.asarray(gpd_quantile(p, rng.uniform(n)), dtype=np.float64)
    return np.clip(values, 0.0, p.upper_endpoint)


def gev_pdf(p: GevParams, x: ArrayLike) -> FloatOrArray:
    return unwrap(np.asarray(p.frozen().pdf(x), dtype=np.float64), x)


def gev_cdf(p: GevParams, x: ArrayLike) -> FloatOrArray:
    return unwrap(np.asarray(p.frozen().cdf(x), dtype=np.float64), x)


def gev_quantile(p: GevParams, q: ArrayLike) -> FloatOrArray:
    levels = np.asarray(q, dtype=np.float64)
    if np.any((levels < 0) | (levels > 1)) or np.any(np.isnan(levels)):
        raise DistributionDomainException("Quantile levels must lie in [0, 1]")
    return unwrap(np.asarray(p.frozen().ppf(levels), dtype=np.float64), q)


def gev_sample(p: GevParams, n: int, rng: RngState) -> NDArray[np.float64]:
    _check_count(n)
    return np.asarray(gev_quantile(p, rng.uniform(n)), dtype=np.float64)


def beta_pdf(p: BetaParams, x: ArrayLike) -> FloatOrArray:
    return unwrap(np.asarray(p.frozen().pdf(x), dtype=np.float64), x)


def beta_cdf(p: BetaParams, x: ArrayLike) -> FloatOrArray:
    return unwrap(np.asarray(p.frozen().cdf(x), dtype=np.float64), x)


def beta_sample(p: BetaParams, n: int, rng: RngState) -> NDArray[np.float64]:
    """
    Beta deviates as G1 / (G1 + G2) with independent standard gamma
    deviates G1 ~ Gamma(theta1), G2 ~ Gamma(theta2).
    """
    _check_count(n)
    g1 = rng.standard_gamma(p.theta1, n)
    g2 = rng.standard_gamma(p.theta2, n)
    with np.errstate(invalid="ignore"):
        values = g1 / (g1 + g2)
    # both deviates underflowing to zero is possible for tiny shapes
    values = np.where(np.isnan(values), 0.5, values)
    return np.clip(values, np.finfo(np.float64).tiny, np.nextafter(1.0, 0.0))


def beta_tail_index(p: BetaParams) -> float:
    return -1.0 / p.theta2


def gpd_shape_class(gamma: float) -> FrozenSet[ShapeClass]:
    """
    Qualitative form of the GPD density, which does not depend on sigma.
    Boundary values of gamma belong to every closed range containing them.
    """
    labels = set()
    if gamma <= -1:
        labels.add(ShapeClass.CONVEX_NON_DECREASING)
    if -1 <= gamma <= -0.5:
        labels.add(ShapeClass.CONCAVE_NON_INCREASING)
    if gamma >= -0.5:
        labels.add(ShapeClass.CONVEX_NON_INCREASING)
    if -1 <= gamma <= 0:
        labels.add(ShapeClass.LOG_CONCAVE)
    if gamma <= -1 or gamma >= 0:
        labels.add(ShapeClass.LOG_CONVEX)
    return frozenset(labels)
