from __future__ import annotations

import os
from dataclasses import dataclass
from functools import cache
from importlib import resources
from pathlib import Path
from typing import Any, Mapping, Optional

from yaml import SafeLoader, load

CONFIG_FILE_ENV = "SMOOTH_TAIL_CONFIG_FILE"
DEFAULT_CONFIG = "configuration.yaml"


@dataclass(frozen=True)
class SolverSettings:
    """
    Tolerances of the log-concave MLE active set solver.
    """

    # Maximum allowed directional derivative of the log-likelihood
    # functional in any single-knot concave direction.
    tolerance: float = 1e-8
    # Outer iterations, i.e. active set changes.
    max_iterations: int = 500
    # Newton steps allowed per active set.
    max_newton_iterations: int = 100
    concavity_slack: float = 1e-12

    @classmethod
    def from_conf(cls, conf: Mapping[str, Any]) -> SolverSettings:
        return SolverSettings(
            tolerance=float(conf.get("tolerance", cls.tolerance)),
            max_iterations=int(conf.get("max_iterations", cls.max_iterations)),
            max_newton_iterations=int(
                conf.get("max_newton_iterations", cls.max_newton_iterations)
            ),
            concavity_slack=float(conf.get("concavity_slack", cls.concavity_slack)),
        )


@dataclass(frozen=True)
class SmoothDistSettings:
    # Extra evaluation points per segment in the sup distance diagnostic.
    refine_points: int = 100

    @classmethod
    def from_conf(cls, conf: Mapping[str, Any]) -> SmoothDistSettings:
        return SmoothDistSettings(
            refine_points=int(conf.get("refine_points", cls.refine_points)),
        )


@dataclass(frozen=True)
class SimulationSettings:
    default_replicates: int = 300
    threads: int = 1

    @classmethod
    def from_conf(cls, conf: Mapping[str, Any]) -> SimulationSettings:
        return SimulationSettings(
            default_replicates=int(
                conf.get("default_replicates", cls.default_replicates)
            ),
            threads=int(conf.get("threads", cls.threads)),
        )


def default_config_path() -> Path:
    return Path(str(resources.files("libsmoothtail") / DEFAULT_CONFIG))


class Config:
    def __init__(self, config_file_name: Optional[str] = None) -> None:
        config_file_name = (
            config_file_name
            or os.environ.get(CONFIG_FILE_ENV)
            or str(default_config_path())
        )

        with open(config_file_name) as file:
            configuration = load(file, Loader=SafeLoader) or {}

        assert isinstance(
            configuration, Mapping
        ), f"{config_file_name} must contain a mapping at the top level"

        self.path = config_file_name
        self.solver = SolverSettings.from_conf(configuration.get("solver") or {})
        self.smoothdist = SmoothDistSettings.from_conf(
            configuration.get("smoothdist") or {}
        )
        self.simulation = SimulationSettings.from_conf(
            configuration.get("simulation") or {}
        )


@cache
def default_config() -> Config:
    """
    Configuration from the default location, loaded once per process.
    """
    return Config()
