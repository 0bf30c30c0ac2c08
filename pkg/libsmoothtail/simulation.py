"""
Monte Carlo comparison of smoothed and empirical estimators.

Three experiments are supported:

* quantile_re: order statistics X_(i) against smoothed order statistics
  F^{-1}(i / n) of GPD(gamma, 1) samples, both compared to the true
  quantile at i / n.
* gpd_setting1: tail index estimators on GPD(gamma, sigma) samples, with
  the log-concave density fitted on the full sample.
* beta_setting2: tail index estimators on Beta(theta1, theta2) samples.
  Only the m = ceil(sharpen_fraction * n) largest observations are used,
  both for the fit and for the empirical source, and m takes the place of
  n in every estimator formula.

Replicate j of parameter index p draws from RngState(seed).spawn(p, j), so
tables do not depend on the number of worker threads.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from typing import (
    IO,
    Any,
    Callable,
    Dict,
    Iterable,
    List,
    Mapping,
    MutableMapping,
    Optional,
    Sequence,
    Tuple,
)

import jsonschema
import numpy as np
from numpy.typing import NDArray
from referencing import Registry, Resource

from libsmoothtail.config import SolverSettings, default_config
from libsmoothtail.distributions import (
    BetaParams,
    GpdParams,
    RngState,
    beta_sample,
    beta_tail_index,
    gpd_quantile,
    gpd_sample,
)
from libsmoothtail.estimators import (
    EmpiricalQuantiles,
    EstimatorKind,
    InvalidEndpointException,
    QuantileSource,
    SmoothedQuantiles,
    hill_series,
    valid_k_range,
)
from libsmoothtail.logcon import (
    ConvergenceException,
    DegenerateSampleException,
    LogConcaveFit,
    fit_logconcave,
    prepare_sample,
)
from libsmoothtail.smoothdist import SmoothCdf, sharpen

logger = logging.getLogger(__name__)

MANIFEST_SCHEMA = "manifest.schema.json"
SCHEMAS_DIR = "schemas"

# Estimator column of the quantile experiment.
QUANTILE_ESTIMATOR = "quantile"

EFFICIENCY_CSV_COLUMNS = (
    "setting",
    "param",
    "estimator",
    "k",
    "bias_emp",
    "var_emp",
    "mse_emp",
    "bias_smooth",
    "var_smooth",
    "mse_smooth",
    "rho",
    "defined_emp",
    "defined_smooth",
)

SETTING1_GAMMA_RANGE = (-1.0, -0.05)
QUANTILE_GAMMA_RANGE = (-1.0, 0.0)
MIN_WORKING_SAMPLE = 8


class Setting(Enum):
    QUANTILE_RE = "quantile_re"
    GPD_SETTING1 = "gpd_setting1"
    BETA_SETTING2 = "beta_setting2"


class ManifestValidationException(Exception):
    def __init__(self, errors: Sequence[str]) -> None:
        super().__init__("Invalid manifest:\n" + "\n".join(f"  {e}" for e in errors))
        self.errors = list(errors)


@dataclass(frozen=True)
class SettingSpec:
    setting: Setting
    n: int
    replicates: int
    seed: Optional[int] = None
    gammas: Tuple[float, ...] = ()
    theta2s: Tuple[float, ...] = ()
    sigma: float = 1.0
    theta1: float = 0.5
    sharpen_fraction: float = 0.5
    estimators: Tuple[EstimatorKind, ...] = tuple(EstimatorKind)
    truncate: bool = False
    # Use the empirical source in place of the smoothed one.
    alias_sources: bool = False
    k_range: Optional[Tuple[int, int]] = None

    def __post_init__(self) -> None:
        errors = validate_spec(self)
        if errors:
            raise ManifestValidationException(errors)

    @property
    def params(self) -> Tuple[float, ...]:
        if self.setting is Setting.BETA_SETTING2:
            return self.theta2s
        return self.gammas

    @property
    def working_size(self) -> int:
        if self.setting is Setting.BETA_SETTING2:
            return math.ceil(self.sharpen_fraction * self.n)
        return self.n


def validate_spec(spec: SettingSpec) -> List[str]:
    """
    Semantic checks on top of the manifest schema. Returns every problem
    found rather than stopping at the first.
    """
    errors = []
    if spec.n < 8:
        errors.append(f"n: must be at least 8, got {spec.n}")
    if spec.replicates < 1:
        errors.append(f"replicates: must be at least 1, got {spec.replicates}")
    if spec.seed is not None and not 0 <= spec.seed < 2**64:
        errors.append(f"seed: must be a 64 bit unsigned integer, got {spec.seed}")
    if not spec.sigma > 0:
        errors.append(f"sigma: must be positive, got {spec.sigma}")
    if not spec.estimators:
        errors.append("estimators: at least one estimator is required")

    if spec.setting is Setting.BETA_SETTING2:
        if not spec.theta2s:
            errors.append("theta2s: at least one value is required")
        errors.extend(
            f"theta2s[{i}]: must be positive, got {t}"
            for i, t in enumerate(spec.theta2s)
            if not t > 0
        )
        if not spec.theta1 > 0:
            errors.append(f"theta1: must be positive, got {spec.theta1}")
        if not 0 < spec.sharpen_fraction <= 1:
            errors.append(
                f"sharpen_fraction: must lie in (0, 1], got {spec.sharpen_fraction}"
            )
        elif spec.n >= 8 and spec.working_size < MIN_WORKING_SAMPLE:
            errors.append(
                f"sharpen_fraction: keeps {spec.working_size} observations, "
                f"at least {MIN_WORKING_SAMPLE} are needed"
            )
    else:
        lo, hi = (
            SETTING1_GAMMA_RANGE
            if spec.setting is Setting.GPD_SETTING1
            else QUANTILE_GAMMA_RANGE
        )
        if not spec.gammas:
            errors.append("gammas: at least one value is required")
        errors.extend(
            f"gammas[{i}]: must lie in [{lo}, {hi}], got {g}"
            for i, g in enumerate(spec.gammas)
            if not lo <= g <= hi
        )

    if spec.k_range is not None:
        k_lo, k_hi = spec.k_range
        if k_lo > k_hi:
            errors.append(f"k_range: lower bound {k_lo} exceeds upper bound {k_hi}")
    return errors


def _schema_registry() -> Registry:
    def retrieve_ref(ref: str) -> Resource[Mapping[str, Any]]:
        contents = json.loads(_schema_file(ref).read_text())
        return Resource.from_contents(contents)

    # library bug, typing of this argument is wrong
    registry: Registry = Registry(retrieve=retrieve_ref)  # type: ignore
    return registry


def _schema_file(name: str) -> Any:
    return resources.files("libsmoothtail") / SCHEMAS_DIR / name


def manifest_schema() -> Mapping[str, Any]:
    return json.loads(_schema_file(MANIFEST_SCHEMA).read_text())


def spec_from_manifest(
    content: Any, default_replicates: Optional[int] = None
) -> SettingSpec:
    """
    Validates a manifest document and builds its SettingSpec. Every schema
    violation is reported at once. Without a `replicates` entry the
    configured default is used.
    """
    validator = jsonschema.Draft202012Validator(
        manifest_schema(), registry=_schema_registry()
    )
    errors = [
        f"{'/'.join(str(p) for p in e.absolute_path) or '<manifest>'}: {e.message}"
        for e in sorted(
            validator.iter_errors(content), key=lambda e: [str(p) for p in e.path]
        )
    ]
    if errors:
        raise ManifestValidationException(errors)

    if default_replicates is None:
        default_replicates = default_config().simulation.default_replicates
    k_range = content.get("k_range")
    return SettingSpec(
        setting=Setting(content["setting"]),
        n=int(content["n"]),
        replicates=int(content.get("replicates", default_replicates)),
        seed=None if content.get("seed") is None else int(content["seed"]),
        gammas=tuple(float(g) for g in content.get("gammas", ())),
        theta2s=tuple(float(t) for t in content.get("theta2s", ())),
        sigma=float(content.get("sigma", 1.0)),
        theta1=float(content.get("theta1", 0.5)),
        sharpen_fraction=float(content.get("sharpen_fraction", 0.5)),
        estimators=tuple(
            EstimatorKind(e)
            for e in content.get("estimators", [k.value for k in EstimatorKind])
        ),
        truncate=bool(content.get("truncate", False)),
        alias_sources=bool(content.get("alias_sources", False)),
        k_range=None if k_range is None else (int(k_range[0]), int(k_range[1])),
    )


def load_manifest(
    stream: IO[str], default_replicates: Optional[int] = None
) -> SettingSpec:
    try:
        content = json.load(stream)
    except json.JSONDecodeError as e:
        raise ManifestValidationException([f"<manifest>: not valid JSON ({e})"]) from e
    return spec_from_manifest(content, default_replicates)


def spec_to_manifest(spec: SettingSpec) -> Dict[str, Any]:
    content: Dict[str, Any] = {
        "setting": spec.setting.value,
        "n": spec.n,
        "replicates": spec.replicates,
        "sigma": spec.sigma,
        "theta1": spec.theta1,
        "sharpen_fraction": spec.sharpen_fraction,
        "estimators": [e.value for e in spec.estimators],
        "truncate": spec.truncate,
        "alias_sources": spec.alias_sources,
    }
    if spec.seed is not None:
        content["seed"] = spec.seed
    if spec.gammas:
        content["gammas"] = list(spec.gammas)
    if spec.theta2s:
        content["theta2s"] = list(spec.theta2s)
    if spec.k_range is not None:
        content["k_range"] = list(spec.k_range)
    return content


@dataclass(frozen=True)
class CellStats:
    bias_emp: float
    var_emp: float
    mse_emp: float
    bias_smooth: float
    var_smooth: float
    mse_smooth: float
    rho: float
    defined_emp: int
    defined_smooth: int


@dataclass(frozen=True)
class EfficiencyRow:
    setting: Setting
    param: float
    estimator: str
    k: int
    stats: CellStats


@dataclass
class EfficiencyTable:
    spec: SettingSpec
    rows: List[EfficiencyRow] = field(default_factory=list)
    fit_failures: int = 0

    @property
    def undefined_emp(self) -> int:
        return sum(self.spec.replicates - r.stats.defined_emp for r in self.rows)

    @property
    def undefined_smooth(self) -> int:
        return sum(self.spec.replicates - r.stats.defined_smooth for r in self.rows)

    def select(
        self, estimator: str, param: Optional[float] = None
    ) -> List[EfficiencyRow]:
        return [
            r
            for r in self.rows
            if r.estimator == estimator and (param is None or r.param == param)
        ]


def _moments(values: NDArray[np.float64], target: float) -> Tuple[float, float, float]:
    if len(values) < 2:
        bias = float(values.mean() - target) if len(values) else math.nan
        return bias, math.nan, math.nan
    mean = float(np.mean(values))
    bias = mean - target
    var = float(np.sum((values - mean) ** 2) / (len(values) - 1))
    return bias, var, bias**2 + var


def aggregate_cell(
    emp: Sequence[Optional[float]],
    smooth: Sequence[Optional[float]],
    target: float,
) -> CellStats:
    """
    Bias, variance (divisor M' - 1) and mse of both sources over the M'
    replicates where both estimates are defined, and rho = mse_smooth /
    mse_emp.
    """
    paired = [(e, s) for e, s in zip(emp, smooth) if e is not None and s is not None]
    emp_values = np.array([e for e, _ in paired], dtype=np.float64)
    smooth_values = np.array([s for _, s in paired], dtype=np.float64)
    bias_emp, var_emp, mse_emp = _moments(emp_values, target)
    bias_smooth, var_smooth, mse_smooth = _moments(smooth_values, target)

    if math.isnan(mse_emp) or math.isnan(mse_smooth):
        rho = math.nan
    elif mse_emp > 0:
        rho = mse_smooth / mse_emp
    else:
        rho = 1.0 if mse_smooth == 0 else math.inf
    return CellStats(
        bias_emp=bias_emp,
        var_emp=var_emp,
        mse_emp=mse_emp,
        bias_smooth=bias_smooth,
        var_smooth=var_smooth,
        mse_smooth=mse_smooth,
        rho=rho,
        defined_emp=sum(e is not None for e in emp),
        defined_smooth=sum(s is not None for s in smooth),
    )


# (estimator, k) -> (empirical value, smoothed value)
CellValues = Dict[Tuple[str, int], Tuple[Optional[float], Optional[float]]]


@dataclass(frozen=True)
class ReplicateResult:
    values: CellValues
    fit_failed: bool = False


def _try_fit(
    sample: NDArray[np.float64], settings: Optional[SolverSettings]
) -> Optional[LogConcaveFit]:
    try:
        fit, _ = fit_logconcave(prepare_sample(sample), settings=settings)
        return fit
    except (ConvergenceException, DegenerateSampleException) as e:
        logger.warning("Log-concave fit failed, smoothed estimates undefined: %s", e)
        return None


def _quantile_replicate(
    spec: SettingSpec,
    gamma: float,
    rng: RngState,
    settings: Optional[SolverSettings] = None,
) -> ReplicateResult:
    sample = np.sort(gpd_sample(GpdParams(gamma, 1.0), spec.n, rng))
    ks = range(1, spec.n)
    fit = None if spec.alias_sources else _try_fit(sample, settings)
    if spec.alias_sources:
        smoothed: Sequence[Optional[float]] = sample[: spec.n - 1].tolist()
    elif fit is None:
        smoothed = [None] * len(ks)
    else:
        smoothed = sharpen(SmoothCdf(fit), spec.n)[: spec.n - 1].tolist()

    values: CellValues = {
        (QUANTILE_ESTIMATOR, k): (float(sample[k - 1]), smoothed[k - 1]) for k in ks
    }
    return ReplicateResult(values, fit_failed=fit is None and not spec.alias_sources)


def _series_values(
    spec: SettingSpec,
    source: QuantileSource,
    kind: EstimatorKind,
    omega: float,
) -> Dict[int, Optional[float]]:
    try:
        series = hill_series(
            source, kind, omega=omega, truncate=spec.truncate, k_range=spec.k_range
        )
    except InvalidEndpointException as e:
        logger.warning("%s undefined for this replicate: %s", kind.value, e)
        return {}
    return dict(zip(series.ks, series.values))


def _tail_replicate(
    spec: SettingSpec,
    working: NDArray[np.float64],
    omega: float,
    settings: Optional[SolverSettings],
) -> ReplicateResult:
    m = len(working)
    empirical = EmpiricalQuantiles(working)
    smoothed: Optional[QuantileSource] = empirical
    fit_failed = False
    if not spec.alias_sources:
        fit = _try_fit(working, settings)
        fit_failed = fit is None
        smoothed = None if fit is None else SmoothedQuantiles(SmoothCdf(fit), m)

    values: CellValues = {}
    for kind in spec.estimators:
        emp = _series_values(spec, empirical, kind, omega)
        smooth = {} if smoothed is None else _series_values(spec, smoothed, kind, omega)
        for k in _cell_ks(spec, kind):
            values[(kind.value, k)] = (emp.get(k), smooth.get(k))
    return ReplicateResult(values, fit_failed=fit_failed)


def _setting1_replicate(
    spec: SettingSpec,
    gamma: float,
    rng: RngState,
    settings: Optional[SolverSettings] = None,
) -> ReplicateResult:
    params = GpdParams(gamma, spec.sigma)
    sample = gpd_sample(params, spec.n, rng)
    return _tail_replicate(spec, sample, params.upper_endpoint, settings)


def _setting2_replicate(
    spec: SettingSpec,
    theta2: float,
    rng: RngState,
    settings: Optional[SolverSettings] = None,
) -> ReplicateResult:
    sample = np.sort(beta_sample(BetaParams(spec.theta1, theta2), spec.n, rng))
    return _tail_replicate(spec, sample[-spec.working_size :], 1.0, settings)


def _cell_ks(spec: SettingSpec, kind: EstimatorKind) -> range:
    ks = valid_k_range(kind, spec.working_size)
    if spec.k_range is None:
        return ks
    lo, hi = spec.k_range
    return range(max(lo, ks.start), min(hi + 1, ks.stop))


def _cell_keys(spec: SettingSpec) -> List[Tuple[str, int]]:
    if spec.setting is Setting.QUANTILE_RE:
        return [(QUANTILE_ESTIMATOR, k) for k in range(1, spec.n)]
    return [(kind.value, k) for kind in spec.estimators for k in _cell_ks(spec, kind)]


def _target(spec: SettingSpec, param: float, key: Tuple[str, int]) -> float:
    if spec.setting is Setting.QUANTILE_RE:
        return float(gpd_quantile(GpdParams(param, 1.0), key[1] / spec.n))
    if spec.setting is Setting.BETA_SETTING2:
        return beta_tail_index(BetaParams(spec.theta1, param))
    return param


Replicate = Callable[
    [SettingSpec, float, RngState, Optional[SolverSettings]], ReplicateResult
]

_REPLICATES: Mapping[Setting, Replicate] = {
    Setting.QUANTILE_RE: _quantile_replicate,
    Setting.GPD_SETTING1: _setting1_replicate,
    Setting.BETA_SETTING2: _setting2_replicate,
}


def _run(
    spec: SettingSpec,
    setting: Setting,
    threads: int,
    settings: Optional[SolverSettings],
) -> EfficiencyTable:
    if spec.setting is not setting:
        raise ValueError(f"Expected a {setting.value} spec, got {spec.setting.value}")
    if spec.seed is None:
        raise ManifestValidationException(
            ["seed: a seed is required to run an experiment"]
        )
    if threads < 1:
        raise ValueError(f"threads must be at least 1, got {threads}")

    replicate = _REPLICATES[setting]
    root = RngState(spec.seed)
    table = EfficiencyTable(spec)
    keys = _cell_keys(spec)

    for p, param in enumerate(spec.params):

        def work(j: int, p: int = p, param: float = param) -> ReplicateResult:
            return replicate(spec, param, root.spawn(p, j), settings)

        jobs = range(spec.replicates)
        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as executor:
                results = list(executor.map(work, jobs))
        else:
            results = [work(j) for j in jobs]

        cells: MutableMapping[Tuple[str, int], List[Tuple[Optional[float], ...]]]
        cells = defaultdict(list)
        for result in results:
            for key in keys:
                cells[key].append(result.values.get(key, (None, None)))
        table.fit_failures += sum(r.fit_failed for r in results)

        for key in keys:
            emp = [v[0] for v in cells[key]]
            smooth = [v[1] for v in cells[key]]
            stats = aggregate_cell(emp, smooth, _target(spec, param, key))
            table.rows.append(EfficiencyRow(setting, param, key[0], key[1], stats))
        logger.info(
            "%s param=%s: %d replicates, %d cells",
            setting.value,
            param,
            len(results),
            len(keys),
        )

    if table.fit_failures:
        logger.warning("%d log-concave fits failed", table.fit_failures)
    return table


def quantile_re_experiment(
    spec: SettingSpec, threads: int = 1, settings: Optional[SolverSettings] = None
) -> EfficiencyTable:
    return _run(spec, Setting.QUANTILE_RE, threads, settings)


def setting1_experiment(
    spec: SettingSpec, threads: int = 1, settings: Optional[SolverSettings] = None
) -> EfficiencyTable:
    return _run(spec, Setting.GPD_SETTING1, threads, settings)


def setting2_experiment(
    spec: SettingSpec, threads: int = 1, settings: Optional[SolverSettings] = None
) -> EfficiencyTable:
    return _run(spec, Setting.BETA_SETTING2, threads, settings)


def run_experiment(
    spec: SettingSpec, threads: int = 1, settings: Optional[SolverSettings] = None
) -> EfficiencyTable:
    """
    Runs the experiment named by `spec.setting`. Log-concave fits use
    `settings`, or the `solver` section of the default configuration.
    """
    return _run(spec, spec.setting, threads, settings)


def _format(value: float) -> str:
    return repr(float(value))


def efficiency_rows(table: EfficiencyTable) -> Iterable[Sequence[str]]:
    for row in table.rows:
        s = row.stats
        yield (
            row.setting.value,
            _format(row.param),
            row.estimator,
            str(row.k),
            _format(s.bias_emp),
            _format(s.var_emp),
            _format(s.mse_emp),
            _format(s.bias_smooth),
            _format(s.var_smooth),
            _format(s.mse_smooth),
            _format(s.rho),
            str(s.defined_emp),
            str(s.defined_smooth),
        )


def write_efficiency_csv(table: EfficiencyTable, stream: IO[str]) -> None:
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(EFFICIENCY_CSV_COLUMNS)
    writer.writerows(efficiency_rows(table))


def run_metadata(table: EfficiencyTable, wall_time: float) -> Dict[str, Any]:
    spec = table.spec
    return {
        "setting": spec.setting.value,
        "seed": spec.seed,
        "n": spec.n,
        "working_size": spec.working_size,
        "replicates": spec.replicates,
        "params": list(spec.params),
        "wall_time_seconds": wall_time,
        "fit_failures": table.fit_failures,
        "undefined_emp": table.undefined_emp,
        "undefined_smooth": table.undefined_smooth,
        "manifest": spec_to_manifest(spec),
    }
