import json
from pathlib import Path
from typing import Any, Mapping

import pytest
from click.testing import CliRunner

from libsmoothtail.simulation import EFFICIENCY_CSV_COLUMNS
from smooth_tail.cli import main

MANIFEST = {
    "setting": "gpd_setting1",
    "n": 16,
    "replicates": 4,
    "seed": 7,
    "gammas": [-0.5],
    "estimators": ["pickands", "falk"],
}


def _manifest(tmp_path: Path, content: Mapping[str, Any], name: str = "m.json") -> str:
    path = tmp_path / name
    path.write_text(json.dumps(content))
    return str(path)


def _simulate(runner: CliRunner, *args: str) -> str:
    result = runner.invoke(main, ["-q", "simulate", *args])
    assert result.exit_code == 0, result.output
    return result.output


def test_simulate_is_deterministic(runner: CliRunner, tmp_path: Path) -> None:
    manifest = _manifest(tmp_path, MANIFEST)

    first = _simulate(runner, manifest)
    assert _simulate(runner, manifest) == first
    assert _simulate(runner, manifest, "--threads", "1") == first
    assert _simulate(runner, manifest, "--threads", "8") == first

    lines = first.splitlines()
    assert lines[0] == ",".join(EFFICIENCY_CSV_COLUMNS)
    # pickands k = 4..16, falk k = 3..15
    assert len(lines) == 1 + 13 + 13


def test_seed_override(runner: CliRunner, tmp_path: Path) -> None:
    without_seed = {k: v for k, v in MANIFEST.items() if k != "seed"}
    manifest = _manifest(tmp_path, without_seed)

    assert runner.invoke(main, ["simulate", manifest]).exit_code == 1
    seeded = _simulate(runner, manifest, "--seed", "7")
    assert seeded == _simulate(runner, _manifest(tmp_path, MANIFEST, "seeded.json"))
    assert _simulate(runner, manifest, "--seed", "8") != seeded


def test_metadata(runner: CliRunner, tmp_path: Path) -> None:
    manifest = _manifest(tmp_path, MANIFEST)
    metadata = tmp_path / "run.json"
    output = tmp_path / "table.csv"

    _simulate(runner, manifest, "-o", str(output), "--metadata", str(metadata))

    content = json.loads(metadata.read_text())
    assert content["seed"] == 7
    assert content["replicates"] == 4
    assert content["fit_failures"] == 0
    assert content["wall_time_seconds"] >= 0
    assert content["manifest"]["setting"] == "gpd_setting1"
    assert output.read_text().startswith("setting,param,estimator,k,")


def test_summary_table(runner: CliRunner, tmp_path: Path) -> None:
    result = runner.invoke(
        main,
        ["simulate", _manifest(tmp_path, MANIFEST), "-o", str(tmp_path / "out.csv")],
    )

    assert result.exit_code == 0, result.output
    assert "mean rho" in result.output
    assert "Running gpd_setting1: n=16, M=4" in result.output


@pytest.mark.parametrize(
    "changes",
    [
        pytest.param({"replicates": 0}, id="no replicates"),
        pytest.param({"n": 4}, id="small n"),
        pytest.param({"gammas": [0.5]}, id="gamma out of range"),
        pytest.param({"setting": "setting3"}, id="unknown setting"),
    ],
)
def test_invalid_manifest(
    runner: CliRunner, tmp_path: Path, changes: Mapping[str, Any]
) -> None:
    manifest = _manifest(tmp_path, {**MANIFEST, **changes})

    result = runner.invoke(main, ["simulate", manifest])

    assert result.exit_code == 1
    assert "Invalid manifest" in result.output


def test_manifest_not_json(runner: CliRunner, tmp_path: Path) -> None:
    path = tmp_path / "m.json"
    path.write_text("setting: gpd_setting1")
    assert runner.invoke(main, ["simulate", str(path)]).exit_code == 1


def test_quantile_manifest(runner: CliRunner, tmp_path: Path) -> None:
    manifest = _manifest(
        tmp_path,
        {
            "setting": "quantile_re",
            "n": 32,
            "replicates": 3,
            "seed": 1,
            "gammas": [-1, -0.75, -0.5, -0.25, 0],
        },
    )

    rows = [line.split(",") for line in _simulate(runner, manifest).splitlines()[1:]]

    assert len(rows) == 5 * 31
    gammas = (-1, -0.75, -0.5, -0.25, 0)
    assert {(r[1], r[3]) for r in rows} == {
        (repr(float(g)), str(k)) for g in gammas for k in range(1, 32)
    }
    assert all(r[2] == "quantile" for r in rows)


def test_thread_count_does_not_change_output_files(
    runner: CliRunner, tmp_path: Path
) -> None:
    manifest = _manifest(tmp_path, MANIFEST)
    single = tmp_path / "single.csv"
    pooled = tmp_path / "pooled.csv"

    _simulate(runner, manifest, "--threads", "1", "-o", str(single))
    _simulate(runner, manifest, "--threads", "8", "-o", str(pooled))

    assert single.read_bytes() == pooled.read_bytes()


def test_solver_settings_from_config_file(runner: CliRunner, tmp_path: Path) -> None:
    config = tmp_path / "configuration.yaml"
    config.write_text("solver:\n  tolerance: 1.0e-300\n  max_iterations: 1\n")
    manifest = _manifest(tmp_path, {**MANIFEST, "n": 64, "replicates": 3})
    metadata = tmp_path / "run.json"

    result = runner.invoke(
        main,
        [
            "-q",
            "--config",
            str(config),
            "simulate",
            manifest,
            "--metadata",
            str(metadata),
            "-o",
            str(tmp_path / "table.csv"),
        ],
    )

    assert result.exit_code == 0, result.output
    assert json.loads(metadata.read_text())["fit_failures"] == 3
