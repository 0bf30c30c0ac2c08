"""
Maximum likelihood estimation of a log-concave density.

The estimator is f = exp(phi) where phi is concave, piecewise linear with
knots at a subset of the observations and -inf outside the data range.
It maximizes

    L(phi) = sum_i w_i phi(x_i) - integral exp(phi(t)) dt

over vectors phi with non-increasing consecutive slopes. The integral term
takes care of the normalization: at the optimum the fitted density
integrates to one and its mean equals the sample mean.

The solver is an active set method. For a fixed set of knots phi is linear
between knots and the problem is smooth and strictly concave, so it is
solved with damped Newton steps. Steps that would break concavity at a knot
are shortened and the offending knot is removed. Once the restricted problem
is solved, the directional derivative in every single-knot concave direction
is computed; the point with the largest positive derivative becomes a new
knot. The fit is optimal when no derivative exceeds the tolerance.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, replace
from typing import IO, Any, Mapping, Optional, Tuple

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy import linalg, sparse, stats

from libsmoothtail.config import SolverSettings, default_config

logger = logging.getLogger(__name__)

# Exponential moments switch to their Taylor series below these |phi_b - phi_a|.
SERIES_THRESHOLD = 1e-4
HIGHER_MOMENT_SERIES_THRESHOLD = 0.05
SERIES_TERMS = 12

# Newton decrement below which a restricted problem counts as solved.
NEWTON_DECREMENT_TOL = 1e-22
MIN_STEP = 1e-12
FULL_STEP_DECREMENT = 1e-12
ARMIJO = 1e-4

Array = NDArray[np.float64]


class DegenerateSampleException(ValueError):
    pass


@dataclass(frozen=True)
class FitDiagnostics:
    iterations: int
    final_gap: float
    log_likelihood: float
    active_knots: int
    newton_steps: int = 0
    converged: bool = True


class ConvergenceException(Exception):
    def __init__(self, message: str, diagnostics: FitDiagnostics) -> None:
        super().__init__(message)
        self.diagnostics = diagnostics


@dataclass(frozen=True, eq=False)
class SampleData:
    """
    Sorted distinct observations with weights equal to their relative
    multiplicities. `raw_values` keeps the sorted sample with ties.
    """

    points: Array
    weights: Array
    raw_n: int
    raw_values: Array

    @property
    def size(self) -> int:
        return len(self.points)


@dataclass(frozen=True, eq=False)
class LogConcaveFit:
    # All sample points; phi, slopes and masses are indexed along them.
    points: Array
    phi: Array
    # slopes[j] is the slope of phi on [points[j], points[j + 1]]
    slopes: Array
    segment_mass: Array
    cum_mass: Array
    # Knot locations, always including both extremes.
    knots: Array
    raw_n: int
    tolerance: float
    log_likelihood: float

    @property
    def knot_indices(self) -> NDArray[np.int64]:
        return np.searchsorted(self.points, self.knots)

    @property
    def lower(self) -> float:
        return float(self.points[0])

    @property
    def upper(self) -> float:
        return float(self.points[-1])

    def segment_of(self, x: ArrayLike) -> NDArray[np.int64]:
        idx = np.searchsorted(self.points, x, side="right") - 1
        return np.clip(idx, 0, len(self.points) - 2)

    def log_density(self, x: ArrayLike) -> Array:
        values = np.asarray(x, dtype=np.float64)
        j = self.segment_of(values)
        inside = (values >= self.points[0]) & (values <= self.points[-1])
        logf = self.phi[j] + self.slopes[j] * (values - self.points[j])
        return np.where(inside, logf, -np.inf)

    def density(self, x: ArrayLike) -> Array:
        return np.exp(self.log_density(x))

    def mean(self) -> float:
        dx = np.diff(self.points)
        a, b = self.phi[:-1], self.phi[1:]
        first = self.points[:-1] * self.segment_mass
        second = dx**2 * exp_moment(0, 1, a, b)
        return float(np.sum(first + second))


def _series(p: int, q: int, d: Array) -> Array:
    out = np.zeros_like(d)
    for k in reversed(range(SERIES_TERMS)):
        coef = (
            math.factorial(p)
            * math.factorial(q + k)
            / (math.factorial(k) * math.factorial(p + q + k + 1))
        )
        out = out * d + coef
    return out


def _closed(p: int, q: int, d: Array) -> Array:
    e = np.expm1(d)
    if (p, q) == (0, 0):
        return e / d
    if (p, q) == (1, 0):
        return (e - d) / d**2
    if (p, q) == (0, 1):
        return (d * (e + 1.0) - e) / d**2
    if (p, q) == (2, 0):
        return 2.0 * (e - d - d**2 / 2.0) / d**3
    if (p, q) == (1, 1):
        return (d * (e + 2.0) - 2.0 * e) / d**3
    if (p, q) == (0, 2):
        return (e * (d**2 - 2.0 * d + 2.0) + d**2 - 2.0 * d) / d**3
    raise NotImplementedError(f"No closed form for moment ({p}, {q})")


def _kernel(p: int, q: int, d: Array) -> Array:
    """
    K_pq(d) = int_0^1 (1 - u)^p u^q exp(d u) du, evaluated for d <= 0.
    """
    threshold = SERIES_THRESHOLD if p + q == 0 else HIGHER_MOMENT_SERIES_THRESHOLD
    small = np.abs(d) < threshold
    safe = np.where(small, -1.0, d)
    return np.where(small, _series(p, q, d), _closed(p, q, safe))


def exp_moment(p: int, q: int, phi_a: ArrayLike, phi_b: ArrayLike) -> Array:
    """
    int_0^1 (1 - u)^p u^q exp((1 - u) phi_a + u phi_b) du

    Factored around max(phi_a, phi_b) so that nothing overflows when the
    exponent is bounded.
    """
    a = np.asarray(phi_a, dtype=np.float64)
    b = np.asarray(phi_b, dtype=np.float64)
    swap = b > a
    base = np.where(swap, b, a)
    d = np.where(swap, a - b, b - a)
    value = np.where(swap, _kernel(q, p, d), _kernel(p, q, d))
    with np.errstate(over="ignore", invalid="ignore"):
        return np.exp(base) * value


def segment_integral(a: float, b: float, phi_a: float, phi_b: float) -> float:
    """
    Mass of exp(phi) on [a, b] when phi is linear from phi_a to phi_b.
    """
    if not b > a:
        raise ValueError(f"Segment must have a < b, got [{a}, {b}]")
    return float((b - a) * exp_moment(0, 0, phi_a, phi_b))


def prepare_sample(raw: ArrayLike) -> SampleData:
    values = np.asarray(raw, dtype=np.float64).ravel()
    if values.size < 2:
        raise DegenerateSampleException(
            f"At least 2 observations are needed, got {values.size}"
        )
    if not np.all(np.isfinite(values)):
        raise DegenerateSampleException("The sample contains non-finite values")

    points, counts = np.unique(values, return_counts=True)
    if len(points) < 2:
        raise DegenerateSampleException(
            f"At least 2 distinct observations are needed, got {len(points)}"
        )
    weights = counts / values.size
    return SampleData(
        points=points,
        weights=weights / weights.sum(),
        raw_n=int(values.size),
        raw_values=np.sort(values),
    )


def _objective(phi: Array, dx: Array, w: Array) -> float:
    with np.errstate(over="ignore", invalid="ignore"):
        value = float(w @ phi - np.sum(dx * exp_moment(0, 0, phi[:-1], phi[1:])))
    return value if math.isfinite(value) else -math.inf


def _gradient_hessian(
    phi: Array, dx: Array, w: Array
) -> Tuple[Array, sparse.spmatrix]:
    a, b = phi[:-1], phi[1:]
    grad = w.copy()
    grad[:-1] -= dx * exp_moment(1, 0, a, b)
    grad[1:] -= dx * exp_moment(0, 1, a, b)

    diag = np.zeros_like(phi)
    diag[:-1] -= dx * exp_moment(2, 0, a, b)
    diag[1:] -= dx * exp_moment(0, 2, a, b)
    off = -dx * exp_moment(1, 1, a, b)
    hessian = sparse.diags([off, diag, off], [-1, 0, 1], format="csr")
    return grad, hessian


def _interpolation_matrix(x: Array, knots: NDArray[np.int64]) -> sparse.csr_matrix:
    """
    Maps values at the knots to values at every point, linear in between.
    """
    m = len(x)
    seg = np.searchsorted(knots, np.arange(m), side="right") - 1
    seg = np.clip(seg, 0, len(knots) - 2)
    left, right = x[knots[seg]], x[knots[seg + 1]]
    lam = (x - left) / (right - left)
    rows = np.concatenate([np.arange(m), np.arange(m)])
    cols = np.concatenate([seg, seg + 1])
    data = np.concatenate([1.0 - lam, lam])
    return sparse.csr_matrix((data, (rows, cols)), shape=(m, len(knots)))


def _kinks(values: Array, x: Array) -> Array:
    """
    Slope decrease at each interior knot; non-negative where concave.
    """
    slopes = np.diff(values) / np.diff(x)
    return slopes[:-1] - slopes[1:]


def _feasible_step(
    phi_k: Array, delta_k: Array, x_k: Array
) -> Tuple[float, NDArray[np.bool_]]:
    """
    Largest t such that phi + t * delta stays concave at the knots, and
    the interior knots whose constraint binds at that t.
    """
    now = np.maximum(_kinks(phi_k, x_k), 0.0)
    direction = _kinks(delta_k, x_k)
    limits = np.full_like(now, math.inf)
    shrinking = direction < 0
    limits[shrinking] = now[shrinking] / -direction[shrinking]
    if limits.size == 0:
        return math.inf, np.zeros(0, dtype=bool)
    t_max = float(limits.min())
    return t_max, limits <= t_max * (1.0 + 1e-12)


def _solve(matrix: Array, rhs: Array) -> Array:
    try:
        return linalg.solve(matrix, rhs, assume_a="pos")
    except (linalg.LinAlgError, ValueError):
        return linalg.lstsq(matrix, rhs)[0]


def _optimize_on_knots(
    phi: Array,
    knots: NDArray[np.int64],
    x: Array,
    dx: Array,
    w: Array,
    settings: SolverSettings,
) -> Tuple[Array, Optional[NDArray[np.int64]], int]:
    """
    Damped Newton ascent restricted to functions linear between `knots`.

    Returns the new phi, the knots to drop (None if the restricted problem
    was solved) and the number of Newton steps taken.
    """
    basis = _interpolation_matrix(x, knots)
    previous = math.inf
    for step in range(settings.max_newton_iterations):
        grad, hessian = _gradient_hessian(phi, dx, w)
        grad_k = basis.T @ grad
        neg_hessian_k = -(basis.T @ hessian @ basis).toarray()
        delta_k = _solve(neg_hessian_k, grad_k)
        decrement = float(grad_k @ delta_k)
        stalled = decrement <= FULL_STEP_DECREMENT and decrement >= 0.5 * previous
        if decrement <= NEWTON_DECREMENT_TOL or stalled:
            return phi, None, step
        previous = decrement

        delta = basis @ delta_k
        t_max, binding = _feasible_step(phi[knots], delta[knots], x[knots])
        t = min(1.0, t_max)
        start = _objective(phi, dx, w)
        shortened = False
        # Full Newton steps once the decrement reaches rounding level.
        while (
            decrement > FULL_STEP_DECREMENT
            and _objective(phi + t * delta, dx, w) < start + ARMIJO * t * decrement
        ):
            t *= 0.5
            shortened = True
            if t < MIN_STEP:
                # Numerically at the optimum of this active set.
                return phi, None, step
        phi = phi + t * delta
        if t_max < 1.0 and not shortened:
            return phi, knots[1:-1][binding], step + 1

    raise ConvergenceException(
        f"Newton iterations did not converge on {len(knots)} knots",
        FitDiagnostics(
            iterations=0,
            final_gap=math.inf,
            log_likelihood=_objective(phi, dx, w),
            active_knots=len(knots),
            newton_steps=settings.max_newton_iterations,
            converged=False,
        ),
    )


def _directional_derivatives(phi: Array, dx: Array, w: Array) -> Array:
    """
    Derivative of L at phi in the concave direction min(x - x_i, 0), for
    every point x_i. This is the integral from x_1 to x_i of the difference
    between the fitted and the empirical distribution function.
    """
    a, b = phi[:-1], phi[1:]
    mass = dx * exp_moment(0, 0, a, b)
    fitted_cdf = np.concatenate([[0.0], np.cumsum(mass)])
    fitted_area = fitted_cdf[:-1] * dx + dx**2 * exp_moment(1, 0, a, b)
    empirical_area = np.cumsum(w)[:-1] * dx
    return np.concatenate([[0.0], np.cumsum(fitted_area - empirical_area)])


def _build_fit(
    phi: Array,
    knots: NDArray[np.int64],
    data: SampleData,
    settings: SolverSettings,
) -> LogConcaveFit:
    x = data.points
    dx = np.diff(x)
    x_k = x[knots]
    knot_slopes = np.diff(phi[knots]) / np.diff(x_k)
    worst = float(np.min(knot_slopes[:-1] - knot_slopes[1:], initial=0.0))
    if worst < -settings.concavity_slack:
        logger.warning("Concavity violated by %.3e at a knot, clamping slopes", -worst)
    knot_slopes = np.minimum.accumulate(knot_slopes)
    steps = np.concatenate([[0.0], np.cumsum(knot_slopes * np.diff(x_k))])
    knot_values = phi[knots[0]] + steps
    seg = np.searchsorted(knots, np.arange(len(x) - 1), side="right") - 1
    seg = np.clip(seg, 0, len(knots) - 2)
    slopes = knot_slopes[seg]
    values = np.empty_like(x)
    values[:-1] = knot_values[seg] + slopes * (x[:-1] - x_k[seg])
    values[-1] = knot_values[-1]

    mass = dx * exp_moment(0, 0, values[:-1], values[1:])
    total = float(mass.sum())
    values = values - math.log(total)
    mass = mass / total
    cum_mass = np.concatenate([[0.0], np.cumsum(mass)])
    cum_mass[-1] = 1.0

    return LogConcaveFit(
        points=x.copy(),
        phi=values,
        slopes=slopes,
        segment_mass=mass,
        cum_mass=cum_mass,
        knots=x_k.copy(),
        raw_n=data.raw_n,
        tolerance=settings.tolerance,
        log_likelihood=float(data.weights @ values),
    )


def fit_logconcave(
    data: SampleData,
    tol: Optional[float] = None,
    settings: Optional[SolverSettings] = None,
) -> Tuple[LogConcaveFit, FitDiagnostics]:
    """
    Computes the log-concave maximum likelihood estimator for `data`.

    `tol` overrides the tolerance of `settings`, which default to the
    `solver` section of the configuration. Raises ConvergenceException if
    no certified optimum is found within `settings.max_iterations` active
    set changes.
    """
    settings = settings or default_config().solver
    if tol is not None:
        settings = replace(settings, tolerance=tol)
    if not settings.tolerance > 0:
        raise ValueError(f"Tolerance must be positive, got {settings.tolerance}")

    x, w = data.points, data.weights
    m = len(x)
    dx = np.diff(x)
    knots = np.array([0, m - 1], dtype=np.int64)
    phi = np.full(m, -math.log(x[-1] - x[0]))
    newton_steps = 0
    gap = math.inf

    for iteration in range(1, settings.max_iterations + 1):
        phi, dropped, steps = _optimize_on_knots(phi, knots, x, dx, w, settings)
        newton_steps += steps
        if dropped is not None:
            knots = np.setdiff1d(knots, dropped)
            phi = _interpolation_matrix(x, knots) @ phi[knots]
            logger.debug("iteration %d: dropped knots %s", iteration, dropped.tolist())
            continue

        derivatives = _directional_derivatives(phi, dx, w)
        derivatives[knots] = -math.inf
        candidate = int(np.argmax(derivatives))
        gap = max(float(derivatives[candidate]), 0.0)
        logger.debug(
            "iteration %d: %d knots, max directional derivative %.3e",
            iteration,
            len(knots),
            gap,
        )
        if gap <= settings.tolerance:
            fit = _build_fit(phi, knots, data, settings)
            return fit, FitDiagnostics(
                iterations=iteration,
                final_gap=gap,
                log_likelihood=fit.log_likelihood,
                active_knots=len(knots),
                newton_steps=newton_steps,
            )
        knots = np.sort(np.append(knots, candidate))

    diagnostics = FitDiagnostics(
        iterations=settings.max_iterations,
        final_gap=gap,
        log_likelihood=_objective(phi, dx, w),
        active_knots=len(knots),
        newton_steps=newton_steps,
        converged=False,
    )
    raise ConvergenceException(
        f"No optimum within {settings.max_iterations} iterations "
        f"(directional derivative {gap:.3e} > {settings.tolerance:.1e})",
        diagnostics,
    )


def log_likelihood(fit: LogConcaveFit, data: SampleData) -> float:
    return float(data.weights @ fit.log_density(data.points))


def gaussian_log_likelihood(data: SampleData) -> float:
    """
    Weighted log-likelihood of the Gaussian maximum likelihood fit.
    """
    mu = float(data.weights @ data.points)
    sd = math.sqrt(float(data.weights @ (data.points - mu) ** 2))
    return float(data.weights @ stats.norm.logpdf(data.points, loc=mu, scale=sd))


def uniform_log_likelihood(data: SampleData) -> float:
    return -math.log(data.points[-1] - data.points[0])


def fit_to_dict(fit: LogConcaveFit) -> Mapping[str, Any]:
    return {
        "points": fit.points.tolist(),
        "knots": fit.knots.tolist(),
        "phi": fit.phi.tolist(),
        "slopes": fit.slopes.tolist(),
        "segment_mass": fit.segment_mass.tolist(),
        "cum_mass": fit.cum_mass.tolist(),
        "raw_n": fit.raw_n,
        "tolerance": fit.tolerance,
        "log_likelihood": fit.log_likelihood,
    }


def fit_from_dict(content: Mapping[str, Any]) -> LogConcaveFit:
    try:
        return LogConcaveFit(
            points=np.asarray(content["points"], dtype=np.float64),
            phi=np.asarray(content["phi"], dtype=np.float64),
            slopes=np.asarray(content["slopes"], dtype=np.float64),
            segment_mass=np.asarray(content["segment_mass"], dtype=np.float64),
            cum_mass=np.asarray(content["cum_mass"], dtype=np.float64),
            knots=np.asarray(content["knots"], dtype=np.float64),
            raw_n=int(content["raw_n"]),
            tolerance=float(content["tolerance"]),
            log_likelihood=float(content["log_likelihood"]),
        )
    except KeyError as e:
        raise ValueError(f"Fit document is missing {e}") from e


def dump_fit(
    fit: LogConcaveFit, stream: IO[str], diagnostics: Optional[FitDiagnostics] = None
) -> None:
    """
    Writes the fit as JSON. Floats use Python's shortest round-trip repr,
    so loading the document gives back bit-identical arrays.
    """
    content = dict(fit_to_dict(fit))
    if diagnostics is not None:
        content["diagnostics"] = asdict(diagnostics)
    json.dump(content, stream, indent=2)
    stream.write("\n")


def load_fit(stream: IO[str]) -> LogConcaveFit:
    return fit_from_dict(json.load(stream))
