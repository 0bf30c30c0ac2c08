import io
import json
import math
import statistics
from dataclasses import replace

import numpy as np
import pytest

from libsmoothtail.config import SolverSettings
from libsmoothtail.estimators import EstimatorKind
from libsmoothtail.simulation import (
    EFFICIENCY_CSV_COLUMNS,
    QUANTILE_ESTIMATOR,
    ManifestValidationException,
    Setting,
    SettingSpec,
    aggregate_cell,
    load_manifest,
    quantile_re_experiment,
    run_experiment,
    run_metadata,
    setting1_experiment,
    setting2_experiment,
    spec_from_manifest,
    spec_to_manifest,
    write_efficiency_csv,
)


def _csv(table) -> str:
    buffer = io.StringIO()
    write_efficiency_csv(table, buffer)
    return buffer.getvalue()


def test_aggregate_constant_estimator() -> None:
    stats = aggregate_cell([2.5] * 6, [2.5] * 6, target=2.5)

    assert stats.bias_emp == 0.0 and stats.var_emp == 0.0 and stats.mse_emp == 0.0
    assert stats.bias_smooth == 0.0 and stats.var_smooth == 0.0
    assert stats.rho == 1.0
    assert stats.defined_emp == stats.defined_smooth == 6


def test_aggregate_mse_identity() -> None:
    emp = [0.1, -0.4, 0.3, 0.9, -1.2, 0.05]
    smooth = [0.0, -0.1, 0.2, 0.3, -0.3, 0.1]
    stats = aggregate_cell(emp, smooth, target=0.2)

    assert stats.var_emp == pytest.approx(statistics.variance(emp), rel=1e-12)
    assert stats.bias_emp == pytest.approx(statistics.mean(emp) - 0.2, abs=1e-15)
    for bias, var, mse in (
        (stats.bias_emp, stats.var_emp, stats.mse_emp),
        (stats.bias_smooth, stats.var_smooth, stats.mse_smooth),
    ):
        assert var >= 0
        assert mse == pytest.approx(bias**2 + var, abs=1e-12)
    assert stats.rho == pytest.approx(stats.mse_smooth / stats.mse_emp)


def test_aggregate_excludes_pairs() -> None:
    stats = aggregate_cell([1.0, None, 3.0, 5.0], [1.0, 2.0, None, 4.0], target=0.0)

    assert stats.defined_emp == 3
    assert stats.defined_smooth == 3
    # only replicates 0 and 3 are paired
    assert stats.bias_emp == pytest.approx(3.0)
    assert stats.bias_smooth == pytest.approx(2.5)


def test_aggregate_single_replicate() -> None:
    stats = aggregate_cell([1.0], [2.0], target=0.0)

    assert stats.bias_emp == 1.0
    assert math.isnan(stats.var_emp)
    assert math.isnan(stats.mse_smooth)
    assert math.isnan(stats.rho)


def test_aggregate_perfect_empirical() -> None:
    stats = aggregate_cell([1.0, 1.0], [1.0, 2.0], target=1.0)
    assert stats.rho == math.inf


def test_manifest_reports_every_error() -> None:
    with pytest.raises(ManifestValidationException) as e:
        spec_from_manifest(
            {"setting": "setting3", "n": 4, "replicates": 0, "colour": "blue"}
        )

    assert len(e.value.errors) == 4
    assert any(err.startswith("n:") for err in e.value.errors)
    assert any(err.startswith("replicates:") for err in e.value.errors)


def test_manifest_missing_required() -> None:
    with pytest.raises(ManifestValidationException) as e:
        spec_from_manifest({})
    assert len(e.value.errors) == 2


def test_manifest_refs_are_resolved() -> None:
    with pytest.raises(ManifestValidationException) as e:
        spec_from_manifest(
            {"setting": "gpd_setting1", "n": 16, "seed": -1, "estimators": ["hill"]}
        )
    assert len(e.value.errors) == 2


def test_invalid_json_manifest() -> None:
    with pytest.raises(ManifestValidationException):
        load_manifest(io.StringIO("{"))


@pytest.mark.parametrize(
    "changes, error",
    [
        pytest.param({"gammas": (0.1,)}, "gammas[0]", id="gamma above range"),
        pytest.param({"gammas": ()}, "gammas", id="no gamma"),
        pytest.param({"k_range": (10, 5)}, "k_range", id="reversed k range"),
        pytest.param({"n": 7}, "n", id="small n"),
    ],
)
def test_semantic_validation(changes: dict, error: str) -> None:
    spec = dict(setting=Setting.GPD_SETTING1, n=16, replicates=2, gammas=(-0.5,))
    spec.update(changes)
    with pytest.raises(ManifestValidationException) as e:
        SettingSpec(**spec)  # type: ignore[arg-type]
    assert e.value.errors[0].startswith(error)


def test_setting2_validation() -> None:
    with pytest.raises(ManifestValidationException) as e:
        SettingSpec(
            setting=Setting.BETA_SETTING2,
            n=12,
            replicates=1,
            theta2s=(3.0,),
            theta1=0.0,
            sharpen_fraction=0.5,
        )
    assert len(e.value.errors) == 2


def test_manifest_round_trip() -> None:
    spec = SettingSpec(
        setting=Setting.BETA_SETTING2,
        n=128,
        replicates=300,
        seed=2**64 - 1,
        theta2s=(1.0, 4 / 3, 3.0),
        estimators=(EstimatorKind.PICKANDS, EstimatorKind.MVUE),
        truncate=True,
        k_range=(8, 60),
    )
    assert spec_from_manifest(spec_to_manifest(spec)) == spec
    assert spec.working_size == 64
    assert spec.params == (1.0, 4 / 3, 3.0)


def test_replicates_default_from_config(config_file: str) -> None:
    spec = spec_from_manifest({"setting": "quantile_re", "n": 8, "gammas": [-0.5]})
    assert spec.replicates == 10
    assert spec.seed is None


def test_seed_is_required() -> None:
    spec = SettingSpec(
        setting=Setting.QUANTILE_RE, n=8, replicates=1, gammas=(-0.5,)
    )
    with pytest.raises(ManifestValidationException):
        run_experiment(spec)


def test_wrong_setting() -> None:
    spec = SettingSpec(
        setting=Setting.QUANTILE_RE, n=8, replicates=1, seed=1, gammas=(-0.5,)
    )
    with pytest.raises(ValueError):
        setting1_experiment(spec)


def test_quantile_experiment_layout() -> None:
    spec = SettingSpec(
        setting=Setting.QUANTILE_RE,
        n=10,
        replicates=4,
        seed=5,
        gammas=(-1.0, 0.0),
    )
    table = quantile_re_experiment(spec)

    assert len(table.rows) == 2 * 9
    assert [r.k for r in table.select(QUANTILE_ESTIMATOR, -1.0)] == list(range(1, 10))
    assert table.fit_failures == 0
    assert table.undefined_emp == 0 and table.undefined_smooth == 0
    for row in table.rows:
        assert row.stats.var_emp >= 0 and row.stats.var_smooth >= 0
        assert row.stats.rho > 0


def test_aliased_sources_have_unit_efficiency() -> None:
    for spec in (
        SettingSpec(
            setting=Setting.QUANTILE_RE,
            n=12,
            replicates=5,
            seed=3,
            gammas=(-0.5,),
            alias_sources=True,
        ),
        SettingSpec(
            setting=Setting.GPD_SETTING1,
            n=16,
            replicates=5,
            seed=3,
            gammas=(-0.5,),
            alias_sources=True,
        ),
    ):
        table = run_experiment(spec)
        rhos = [r.stats.rho for r in table.rows if not math.isnan(r.stats.rho)]
        assert rhos
        assert all(rho == 1.0 for rho in rhos)


@pytest.fixture
def setting1_spec() -> SettingSpec:
    return SettingSpec(
        setting=Setting.GPD_SETTING1,
        n=16,
        replicates=6,
        seed=42,
        gammas=(-0.75, -0.25),
        estimators=(EstimatorKind.PICKANDS, EstimatorKind.FALK, EstimatorKind.MVUE),
    )


def test_setting1_layout(setting1_spec: SettingSpec) -> None:
    table = setting1_experiment(setting1_spec)

    assert [r.k for r in table.select("pickands", -0.75)] == list(range(4, 17))
    assert [r.k for r in table.select("falk", -0.75)] == list(range(3, 16))
    assert [r.k for r in table.select("mvue", -0.25)] == list(range(2, 16))
    for row in table.rows:
        assert row.stats.defined_emp <= setting1_spec.replicates
        assert row.stats.defined_smooth <= setting1_spec.replicates


def test_determinism(setting1_spec: SettingSpec) -> None:
    first = _csv(setting1_experiment(setting1_spec))

    assert _csv(setting1_experiment(setting1_spec)) == first
    assert _csv(setting1_experiment(setting1_spec, threads=8)) == first
    assert _csv(setting1_experiment(replace(setting1_spec, seed=43))) != first


def test_experiment_uses_solver_settings() -> None:
    spec = SettingSpec(
        setting=Setting.GPD_SETTING1,
        n=64,
        replicates=3,
        seed=5,
        gammas=(-0.5,),
        estimators=(EstimatorKind.PICKANDS,),
    )
    starved = SolverSettings(tolerance=1e-300, max_iterations=1)

    assert run_experiment(spec).fit_failures == 0
    table = run_experiment(spec, settings=starved)
    assert table.fit_failures == 3
    assert all(r.stats.defined_smooth == 0 for r in table.rows)


def test_single_replicate_has_undefined_variance() -> None:
    spec = SettingSpec(
        setting=Setting.GPD_SETTING1,
        n=16,
        replicates=1,
        seed=9,
        gammas=(-0.5,),
        estimators=(EstimatorKind.FALK,),
    )
    table = setting1_experiment(spec)

    for row in table.rows:
        assert math.isnan(row.stats.var_emp) and math.isnan(row.stats.var_smooth)
    assert ",nan," in _csv(table)


def test_setting2_uses_working_sample() -> None:
    spec = SettingSpec(
        setting=Setting.BETA_SETTING2,
        n=32,
        replicates=3,
        seed=11,
        theta2s=(3.0,),
        estimators=(EstimatorKind.PICKANDS, EstimatorKind.MVUE),
        k_range=(4, 10),
    )
    table = setting2_experiment(spec)

    assert [r.k for r in table.select("pickands")] == list(range(4, 11))
    assert [r.k for r in table.select("mvue")] == list(range(4, 11))
    assert all(r.param == 3.0 for r in table.rows)


def test_efficiency_csv_and_metadata(setting1_spec: SettingSpec) -> None:
    table = setting1_experiment(setting1_spec)
    lines = _csv(table).splitlines()

    assert lines[0] == ",".join(EFFICIENCY_CSV_COLUMNS)
    assert len(lines) == len(table.rows) + 1
    assert lines[1].startswith("gpd_setting1,-0.75,pickands,4,")

    metadata = run_metadata(table, wall_time=1.5)
    assert metadata["seed"] == 42
    assert metadata["replicates"] == 6
    assert metadata["params"] == [-0.75, -0.25]
    assert metadata["manifest"] == spec_to_manifest(setting1_spec)
    json.dumps(metadata)


def _share(values) -> float:
    return float(np.mean(values))


@pytest.mark.slow
@pytest.mark.parametrize("gamma", [-1.0, -0.5, 0.0])
def test_quantile_efficiency(gamma: float) -> None:
    spec = SettingSpec(
        setting=Setting.QUANTILE_RE, n=32, replicates=300, seed=2024, gammas=(gamma,)
    )
    table = quantile_re_experiment(spec, threads=4)
    rhos = [r.stats.rho for r in table.rows if r.k >= 2]

    assert np.mean(rhos) < 1
    assert _share([rho < 1 for rho in rhos]) >= 0.7


@pytest.mark.slow
def test_setting1_efficiency() -> None:
    spec = SettingSpec(
        setting=Setting.GPD_SETTING1,
        n=64,
        replicates=300,
        seed=2024,
        gammas=(-0.5,),
        estimators=(EstimatorKind.PICKANDS, EstimatorKind.FALK),
        k_range=(8, 60),
    )
    table = setting1_experiment(spec, threads=4)
    pickands = table.select("pickands")
    falk = table.select("falk")

    assert _share([r.stats.mse_smooth < r.stats.mse_emp for r in pickands]) >= 0.8
    assert np.mean([r.stats.rho for r in falk]) < 1


@pytest.mark.slow
def test_setting2_efficiency() -> None:
    spec = SettingSpec(
        setting=Setting.BETA_SETTING2,
        n=128,
        replicates=300,
        seed=2024,
        theta1=0.5,
        theta2s=(3.0,),
        estimators=(EstimatorKind.PICKANDS, EstimatorKind.MVUE),
    )
    table = setting2_experiment(spec, threads=4)
    pickands = table.select("pickands")
    mvue = table.select("mvue")

    assert _share([r.stats.var_smooth < r.stats.var_emp for r in pickands]) >= 0.8
    assert 0.8 <= float(np.median([r.stats.rho for r in mvue])) <= 1.25
