"""
Pickands, Falk and MVUE tail index estimators over a quantile source.

A quantile source H is either the empirical distribution function of a
sample, the smooth distribution function of a log-concave fit, or an exact
quantile function (for testing). Every estimator only needs H^{-1} at a few
levels of the form (n - j + 1) / n together with the sample size n.
"""

from __future__ import annotations

import csv
import logging
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass
from enum import Enum
from typing import IO, Callable, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from numpy.typing import ArrayLike, NDArray

from libsmoothtail.distributions import DistributionDomainException
from libsmoothtail.smoothdist import SmoothCdf, cdf_inverse

logger = logging.getLogger(__name__)

HILL_CSV_COLUMNS = ("estimator", "source", "k", "value", "truncated", "defined")


class UndefinedEstimateException(Exception):
    def __init__(self, message: str, k: Optional[int] = None) -> None:
        super().__init__(message)
        self.k = k


class InvalidEndpointException(ValueError):
    pass


class SourceKind(Enum):
    EMPIRICAL = "empirical"
    SMOOTHED = "smoothed"
    ORACLE = "oracle"


class EstimatorKind(Enum):
    PICKANDS = "pickands"
    FALK = "falk"
    MVUE = "mvue"


def _check_levels(q: ArrayLike) -> NDArray[np.float64]:
    levels = np.asarray(q, dtype=np.float64)
    if np.any(np.isnan(levels)) or np.any((levels <= 0) | (levels > 1)):
        raise DistributionDomainException("Quantile levels must lie in (0, 1]")
    return levels


class QuantileSource(ABC):
    """
    H^{-1} for a sample of size n.
    """

    kind: SourceKind

    @abstractmethod
    def quantile(self, q: ArrayLike) -> NDArray[np.float64]:
        """
        H^{-1}(q) for levels q in (0, 1]. Non-decreasing in q.
        """
        raise NotImplementedError

    @abstractmethod
    def sample_size(self) -> int:
        raise NotImplementedError

    @abstractmethod
    def x_max(self) -> float:
        """
        The largest observation X_(n).
        """
        raise NotImplementedError


class EmpiricalQuantiles(QuantileSource):
    kind = SourceKind.EMPIRICAL

    def __init__(self, values: ArrayLike) -> None:
        self.values = np.sort(np.asarray(values, dtype=np.float64).ravel())
        if self.values.size < 1:
            raise ValueError("An empirical source needs at least one value")

    def quantile(self, q: ArrayLike) -> NDArray[np.float64]:
        levels = _check_levels(q)
        n = len(self.values)
        # Rounding keeps q = i / n on X_(i) despite binary fractions.
        index = np.ceil(np.round(levels * n, 9)).astype(np.int64)
        return self.values[np.clip(index, 1, n) - 1]

    def sample_size(self) -> int:
        return len(self.values)

    def x_max(self) -> float:
        return float(self.values[-1])


class SmoothedQuantiles(QuantileSource):
    kind = SourceKind.SMOOTHED

    def __init__(self, cdf: SmoothCdf, n: Optional[int] = None) -> None:
        self.cdf = cdf
        self.n = cdf.fit.raw_n if n is None else n

    def quantile(self, q: ArrayLike) -> NDArray[np.float64]:
        return np.asarray(cdf_inverse(self.cdf, _check_levels(q)), dtype=np.float64)

    def sample_size(self) -> int:
        return self.n

    def x_max(self) -> float:
        return self.cdf.upper


class OracleQuantiles(QuantileSource):
    """
    Wraps a true quantile function. `x_max` defaults to its value at 1.
    """

    kind = SourceKind.ORACLE

    def __init__(
        self,
        quantile_fn: Callable[[NDArray[np.float64]], ArrayLike],
        n: int,
        x_max: Optional[float] = None,
    ) -> None:
        self.quantile_fn = quantile_fn
        self.n = n
        self._x_max = x_max

    def quantile(self, q: ArrayLike) -> NDArray[np.float64]:
        return np.asarray(self.quantile_fn(_check_levels(q)), dtype=np.float64)

    def sample_size(self) -> int:
        return self.n

    def x_max(self) -> float:
        if self._x_max is None:
            return float(self.quantile(np.array([1.0]))[0])
        return self._x_max


@dataclass(frozen=True)
class TailEstimate:
    value: float
    raw_value: float
    k: int
    kind: EstimatorKind
    source: SourceKind
    truncated: bool = False


@dataclass(frozen=True)
class HillSeries:
    estimator: EstimatorKind
    source: SourceKind
    ks: Tuple[int, ...]
    # None where the estimate is undefined for that k
    estimates: Tuple[Optional[TailEstimate], ...]

    @property
    def values(self) -> List[Optional[float]]:
        return [None if e is None else e.value for e in self.estimates]

    @property
    def defined_count(self) -> int:
        return sum(e is not None for e in self.estimates)


def valid_k_range(kind: EstimatorKind, n: int) -> range:
    if kind is EstimatorKind.PICKANDS:
        return range(4, n + 1)
    if kind is EstimatorKind.FALK:
        return range(3, n)
    return range(2, n)


def _check_k(kind: EstimatorKind, k: int, n: int) -> None:
    valid = valid_k_range(kind, n)
    if k not in valid:
        raise ValueError(
            f"k={k} is outside the {kind.value} range "
            f"{valid.start}..{valid.stop - 1} for n={n}"
        )


def _finish(
    raw: float, k: int, kind: EstimatorKind, source: SourceKind, truncate: bool
) -> TailEstimate:
    if not math.isfinite(raw):
        raise UndefinedEstimateException(f"{kind.value} estimate is not finite", k)
    value = raw
    truncated = False
    if truncate:
        value = min(max(raw, -1.0), 0.0)
        truncated = not -1.0 <= raw <= 0.0
    return TailEstimate(
        value=value, raw_value=raw, k=k, kind=kind, source=source, truncated=truncated
    )


def pickands_at_levels(h: QuantileSource, q1: float, q2: float, q3: float) -> float:
    """
    log2 of (H(q1) - H(q2)) / (H(q2) - H(q3)), for q1 > q2 > q3.
    """
    x1, x2, x3 = h.quantile(np.array([q1, q2, q3]))
    upper, lower = x1 - x2, x2 - x3
    if not (upper > 0 and lower > 0):
        raise UndefinedEstimateException(
            f"Pickands spacings must be positive, got {upper} and {lower}"
        )
    return math.log2(upper / lower)


def pickands(h: QuantileSource, k: int, truncate: bool = False) -> TailEstimate:
    n = h.sample_size()
    _check_k(EstimatorKind.PICKANDS, k, n)
    # Integer r for the step function avoids rounding between order statistics.
    r: float = k // 4 if h.kind is SourceKind.EMPIRICAL else k / 4
    try:
        raw = pickands_at_levels(
            h, (n - r + 1) / n, (n - 2 * r + 1) / n, (n - 4 * r + 1) / n
        )
    except UndefinedEstimateException as e:
        raise UndefinedEstimateException(str(e), k) from e
    return _finish(raw, k, EstimatorKind.PICKANDS, h.kind, truncate)


def _log_ratio_mean(
    h: QuantileSource,
    k: int,
    anchor: float,
    js: NDArray[np.int64],
    kind: EstimatorKind,
) -> float:
    n = h.sample_size()
    base = anchor - float(h.quantile(np.array([(n - k) / n]))[0])
    numerators = anchor - h.quantile((n - js + 1) / n)
    if not base > 0 or np.any(numerators <= 0):
        raise UndefinedEstimateException(
            f"{kind.value} log arguments must be positive", k
        )
    return float(np.mean(np.log(numerators / base)))


def falk(
    h: QuantileSource,
    k: int,
    x_max: Optional[float] = None,
    truncate: bool = False,
) -> TailEstimate:
    n = h.sample_size()
    _check_k(EstimatorKind.FALK, k, n)
    anchor = h.x_max() if x_max is None else x_max
    raw = _log_ratio_mean(h, k, anchor, np.arange(2, k + 1), EstimatorKind.FALK)
    return _finish(raw, k, EstimatorKind.FALK, h.kind, truncate)


def _check_omega(h: QuantileSource, omega: float) -> None:
    if not omega > h.x_max():
        raise InvalidEndpointException(
            f"The endpoint {omega} must exceed the largest observation {h.x_max()}"
        )


def mvue(h: QuantileSource, k: int, omega: float, truncate: bool = False) -> TailEstimate:
    n = h.sample_size()
    _check_k(EstimatorKind.MVUE, k, n)
    _check_omega(h, omega)
    raw = _log_ratio_mean(h, k, omega, np.arange(1, k + 1), EstimatorKind.MVUE)
    return _finish(raw, k, EstimatorKind.MVUE, h.kind, truncate)


def estimate(
    h: QuantileSource,
    kind: EstimatorKind,
    k: int,
    omega: Optional[float] = None,
    x_max: Optional[float] = None,
    truncate: bool = False,
) -> TailEstimate:
    if kind is EstimatorKind.PICKANDS:
        return pickands(h, k, truncate)
    if kind is EstimatorKind.FALK:
        return falk(h, k, x_max, truncate)
    if omega is None:
        raise InvalidEndpointException("The MVUE estimator needs the endpoint omega")
    return mvue(h, k, omega, truncate)


def hill_series(
    h: QuantileSource,
    kind: EstimatorKind,
    omega: Optional[float] = None,
    x_max: Optional[float] = None,
    truncate: bool = False,
    k_range: Optional[Tuple[int, int]] = None,
) -> HillSeries:
    """
    Estimates for every valid k, optionally restricted to `k_range`
    (inclusive). Undefined estimates are kept as None.
    """
    ks = valid_k_range(kind, h.sample_size())
    if k_range is not None:
        lo, hi = k_range
        ks = range(max(lo, ks.start), min(hi + 1, ks.stop))
    if kind is EstimatorKind.MVUE:
        if omega is None:
            raise InvalidEndpointException("The MVUE estimator needs the endpoint omega")
        _check_omega(h, omega)

    estimates: List[Optional[TailEstimate]] = []
    for k in ks:
        try:
            estimates.append(estimate(h, kind, k, omega, x_max, truncate))
        except UndefinedEstimateException:
            logger.debug("%s estimate undefined at k=%d", kind.value, k)
            estimates.append(None)
    return HillSeries(
        estimator=kind, source=h.kind, ks=tuple(ks), estimates=tuple(estimates)
    )


def _flag(value: bool) -> str:
    return "true" if value else "false"


def hill_rows(series: HillSeries) -> Iterable[Sequence[str]]:
    for k, est in zip(series.ks, series.estimates):
        if est is None:
            yield (
                series.estimator.value,
                series.source.value,
                str(k),
                "",
                "false",
                "false",
            )
        else:
            yield (
                series.estimator.value,
                series.source.value,
                str(k),
                repr(est.value),
                _flag(est.truncated),
                "true",
            )


def write_hill_csv(series_list: Iterable[HillSeries], stream: IO[str]) -> None:
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(HILL_CSV_COLUMNS)
    for series in series_list:
        writer.writerows(hill_rows(series))
