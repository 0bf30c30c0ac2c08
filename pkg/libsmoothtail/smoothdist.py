"""
The smooth distribution function of a log-concave fit, its inverse and the
sup distance to the empirical distribution function.

On the segment [x_j, x_{j+1}] the fitted log density is linear with slope
s_j, so the distribution function has the closed form

    F(x) = F_j + f_j (exp(s_j (x - x_j)) - 1) / s_j

and is inverted exactly by

    x = x_j + log(1 + s_j (q - F_j) / f_j) / s_j
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
from numpy.typing import ArrayLike, NDArray

from libsmoothtail.config import default_config
from libsmoothtail.distributions import DistributionDomainException
from libsmoothtail.logcon import LogConcaveFit, SampleData, exp_moment
from libsmoothtail.utils import FloatOrArray, unwrap

logger = logging.getLogger(__name__)

# Densities below this fall back to linear interpolation in mass.
DENSITY_FLOOR = 1e-300


@dataclass(frozen=True, eq=False)
class SmoothCdf:
    fit: LogConcaveFit

    @property
    def points(self) -> NDArray[np.float64]:
        return self.fit.points

    @property
    def cum_mass(self) -> NDArray[np.float64]:
        return self.fit.cum_mass

    @property
    def lower(self) -> float:
        return self.fit.lower

    @property
    def upper(self) -> float:
        return self.fit.upper

    def __call__(self, x: ArrayLike) -> FloatOrArray:
        return cdf_eval(self, x)

    def inverse(self, q: ArrayLike) -> FloatOrArray:
        return cdf_inverse(self, q)


def cdf_eval(s: SmoothCdf, x: ArrayLike) -> FloatOrArray:
    fit = s.fit
    values = np.asarray(x, dtype=np.float64)
    j = fit.segment_of(values)
    offset = np.clip(values - fit.points[j], 0.0, np.diff(fit.points)[j])
    phi_j = fit.phi[j]
    partial = offset * exp_moment(0, 0, phi_j, phi_j + fit.slopes[j] * offset)
    result = np.clip(fit.cum_mass[j] + partial, 0.0, 1.0)
    result = np.where(values <= fit.points[0], 0.0, result)
    result = np.where(values >= fit.points[-1], 1.0, result)
    return unwrap(result, x)


def cdf_inverse(s: SmoothCdf, q: ArrayLike) -> FloatOrArray:
    fit = s.fit
    levels = np.asarray(q, dtype=np.float64)
    if np.any(np.isnan(levels)) or np.any((levels < 0) | (levels > 1)):
        raise DistributionDomainException("Quantile levels must lie in [0, 1]")

    dx = np.diff(fit.points)
    j = np.searchsorted(fit.cum_mass, levels, side="right") - 1
    j = np.clip(j, 0, len(fit.points) - 2)
    x_j = fit.points[j]
    remaining = np.maximum(levels - fit.cum_mass[j], 0.0)
    slope = fit.slopes[j]
    f_j = np.exp(fit.phi[j])
    mass_j = fit.segment_mass[j]

    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        z = np.maximum(slope * remaining / f_j, -1.0)
        closed = x_j + np.log1p(z) / slope
        linear = x_j + dx[j] * np.where(mass_j > 0, remaining / mass_j, 0.0)
    use_linear = (slope == 0) | (f_j < DENSITY_FLOOR) | ~np.isfinite(closed)
    result = np.where(use_linear, linear, closed)
    result = np.clip(result, x_j, fit.points[j + 1])
    result = np.where(levels <= 0, fit.points[0], result)
    result = np.where(levels >= 1, fit.points[-1], result)
    return unwrap(result, q)


def density_eval(s: SmoothCdf, x: ArrayLike) -> FloatOrArray:
    return unwrap(s.fit.density(x), x)


def sharpen(s: SmoothCdf, n: int) -> NDArray[np.float64]:
    """
    Smoothed order statistics F^{-1}(i / n) for i = 1..n.
    """
    if n < 1:
        raise ValueError(f"n must be at least 1, got {n}")
    return np.asarray(cdf_inverse(s, np.arange(1, n + 1) / n), dtype=np.float64)


def sup_distance(
    s: SmoothCdf, data: SampleData, refine_points: Optional[int] = None
) -> float:
    """
    max |F_n - F| over the data range.

    Both one-sided limits of the empirical distribution function are used at
    every sample point. Inside a segment F_n is constant, and the segment is
    additionally scanned on a grid of `refine_points` points.
    """
    if refine_points is None:
        refine_points = default_config().smoothdist.refine_points
    x = data.points
    smooth = np.asarray(cdf_eval(s, x), dtype=np.float64)
    right = np.cumsum(data.weights)
    right[-1] = 1.0
    left = np.concatenate([[0.0], right[:-1]])
    distance = max(np.max(np.abs(smooth - right)), np.max(np.abs(smooth - left)))

    if refine_points > 0:
        u = np.arange(1, refine_points + 1) / (refine_points + 1)
        grid = x[:-1, None] + np.diff(x)[:, None] * u[None, :]
        inner = np.asarray(cdf_eval(s, grid), dtype=np.float64)
        distance = max(distance, np.max(np.abs(inner - right[:-1, None])))

    logger.debug("sup distance %.3e over %d points", distance, len(x))
    return float(distance)
