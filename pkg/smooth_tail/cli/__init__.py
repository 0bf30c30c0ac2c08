import logging
import os
import socket
from dataclasses import dataclass, replace
from importlib import import_module
from pkgutil import walk_packages
from typing import List, Optional, Tuple

import click
import sentry_sdk
import yaml

from libsmoothtail.config import CONFIG_FILE_ENV, Config, SolverSettings
from libsmoothtail.estimators import (
    EmpiricalQuantiles,
    QuantileSource,
    SmoothedQuantiles,
)
from libsmoothtail.logcon import (
    ConvergenceException,
    DegenerateSampleException,
    FitDiagnostics,
    LogConcaveFit,
    SampleData,
    fit_logconcave,
    prepare_sample,
)
from libsmoothtail.smoothdist import SmoothCdf
from libsmoothtail.utils import read_numbers

SENTRY_DSN_ENV = "SMOOTH_TAIL_SENTRY_DSN"
SOURCE_CHOICES = ("empirical", "smoothed", "both")


class ValidationFailure(click.ClickException):
    exit_code = 1


class NumericalFailure(click.ClickException):
    exit_code = 2


class SmoothTailGroup(click.Group):
    """
    Reports usage errors with exit code 1; exit code 2 is reserved for
    numerical failures.
    """

    def make_context(self, info_name, args, parent=None, **extra):
        try:
            return super().make_context(info_name, args, parent=parent, **extra)
        except click.UsageError as e:
            e.exit_code = 1
            raise

    def invoke(self, ctx):
        try:
            return super().invoke(ctx)
        except click.UsageError as e:
            e.exit_code = 1
            raise


@dataclass(frozen=True)
class CliContext:
    config: Config
    quiet_mode: bool

    def solver_settings(
        self,
        tolerance: Optional[float] = None,
        max_iterations: Optional[int] = None,
    ) -> SolverSettings:
        settings = self.config.solver
        if tolerance is not None:
            settings = replace(settings, tolerance=tolerance)
        if max_iterations is not None:
            settings = replace(settings, max_iterations=max_iterations)
        return settings

    def info(self, msg: str) -> None:
        if not self.quiet_mode:
            click.echo(msg, err=True)


def load_sample(path: str) -> SampleData:
    try:
        with click.open_file(path) as f:
            values = read_numbers(f)
    except OSError as e:
        raise ValidationFailure(f"Cannot read {path}: {e}")
    except ValueError as e:
        raise ValidationFailure(f"{path}: {e}")
    if not values:
        raise ValidationFailure(f"{path} does not contain any number")
    try:
        return prepare_sample(values)
    except DegenerateSampleException as e:
        raise ValidationFailure(f"{path}: {e}")


def fit_sample(
    data: SampleData, settings: SolverSettings
) -> Tuple[LogConcaveFit, FitDiagnostics]:
    try:
        return fit_logconcave(data, settings=settings)
    except ConvergenceException as e:
        d = e.diagnostics
        raise NumericalFailure(
            f"{e}\niterations={d.iterations}, final_gap={d.final_gap!r}, "
            f"active_knots={d.active_knots}, log_likelihood={d.log_likelihood!r}"
        )


def build_sources(
    data: SampleData, source: str, settings: SolverSettings
) -> List[QuantileSource]:
    sources: List[QuantileSource] = []
    if source in ("empirical", "both"):
        sources.append(EmpiricalQuantiles(data.raw_values))
    if source in ("smoothed", "both"):
        fit, _ = fit_sample(data, settings)
        sources.append(SmoothedQuantiles(SmoothCdf(fit), data.raw_n))
    return sources


@click.group(cls=SmoothTailGroup)
@click.option(
    "--config",
    "config_file",
    type=click.Path(dir_okay=False, exists=True),
    help="Configuration file. Defaults to the packaged configuration.yaml.",
    envvar=CONFIG_FILE_ENV,
)
@click.option(
    "-q",
    "--quiet",
    is_flag=True,
    help="Do not output informational messages",
    envvar="SMOOTH_TAIL_QUIET",
)
@click.option(
    "-v",
    "--verbose",
    is_flag=True,
    help="Log solver progress.",
)
@click.option(
    "-s",
    "--no-sentry",
    is_flag=True,
    envvar="SMOOTH_TAIL_NO_SENTRY",
    help="Disables sending errors/transactions to Sentry when running",
)
@click.pass_context
def main(ctx, *, config_file, quiet, verbose, no_sentry):
    """
    Smooth tail index estimation.

    Fits log-concave densities, reads quantiles from the smooth
    distribution function, computes Pickands, Falk and MVUE tail index
    estimates and runs Monte Carlo efficiency experiments.
    """
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )

    dsn = os.environ.get(SENTRY_DSN_ENV)
    if dsn and not no_sentry:
        sentry_sdk.init(
            dsn=dsn,
            traces_sample_rate=1.0,
            environment=socket.gethostname(),
        )

    try:
        config = Config(config_file)
    except (OSError, yaml.YAMLError, AssertionError, ValueError) as e:
        raise ValidationFailure(f"Invalid configuration: {e}")

    ctx.obj = CliContext(config=config, quiet_mode=quiet)

    transaction = ctx.with_resource(
        sentry_sdk.start_transaction(op="function", name="main()")
    )
    transaction.set_tag(key="subcommand", value=ctx.invoked_subcommand)


for loader, module_name, is_pkg in walk_packages(__path__, __name__ + "."):
    module = import_module(module_name)
    for attr in getattr(module, "__all__", []):
        cmd = getattr(module, attr)
        if isinstance(cmd, click.Command):
            main.add_command(cmd)
