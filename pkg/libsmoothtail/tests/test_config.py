import os
import tempfile
from unittest import mock

from libsmoothtail.config import (
    CONFIG_FILE_ENV,
    Config,
    SimulationSettings,
    SmoothDistSettings,
    SolverSettings,
    default_config,
    default_config_path,
)


def test_packaged_defaults() -> None:
    with mock.patch.dict(os.environ, {}, clear=True):
        conf = Config()

    assert conf.path == str(default_config_path())
    assert conf.solver == SolverSettings(
        tolerance=1e-8,
        max_iterations=500,
        max_newton_iterations=100,
        concavity_slack=1e-12,
    )
    assert conf.smoothdist == SmoothDistSettings(refine_points=100)
    assert conf.simulation == SimulationSettings(default_replicates=300, threads=1)


def test_config_from_env(config_file: str) -> None:
    conf = Config()

    assert conf.path == config_file
    assert conf.solver.tolerance == 1e-9
    assert conf.solver.max_iterations == 300
    # Missing keys fall back to defaults
    assert conf.solver.max_newton_iterations == 100
    assert conf.smoothdist.refine_points == 20
    assert conf.simulation == SimulationSettings(default_replicates=10, threads=2)


def test_explicit_path_wins(config_file: str) -> None:
    with tempfile.NamedTemporaryFile("w", suffix=".yaml") as f:
        f.write("solver:\n  tolerance: 1.0e-6\n")
        f.flush()
        conf = Config(f.name)

    assert conf.solver.tolerance == 1e-6
    assert conf.smoothdist == SmoothDistSettings()


def test_empty_file() -> None:
    with tempfile.NamedTemporaryFile("w", suffix=".yaml") as f:
        conf = Config(f.name)

    assert conf.solver == SolverSettings()


def test_default_config_is_cached(config_file: str) -> None:
    assert default_config() is default_config()
    assert os.environ[CONFIG_FILE_ENV] == config_file
    assert default_config().solver.tolerance == 1e-9
