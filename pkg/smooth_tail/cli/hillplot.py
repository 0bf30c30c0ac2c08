from typing import Optional, Tuple

import click

from libsmoothtail.estimators import (
    EstimatorKind,
    InvalidEndpointException,
    hill_series,
    write_hill_csv,
)
from smooth_tail.cli import (
    SOURCE_CHOICES,
    CliContext,
    ValidationFailure,
    build_sources,
    load_sample,
)

__all__ = ("hillplot",)


def parse_k_range(ctx, param, value: Optional[str]) -> Optional[Tuple[int, int]]:
    if value is None:
        return None
    try:
        lo, hi = (int(v) for v in value.split(":"))
    except ValueError:
        raise click.BadParameter("expected LO:HI, for example 10:20")
    if lo > hi:
        raise click.BadParameter(f"{lo} is larger than {hi}")
    return lo, hi


@click.command()
@click.argument(
    "input_path",
    metavar="INPUT",
    type=click.Path(exists=True, dir_okay=False, allow_dash=True),
)
@click.option(
    "--estimator",
    type=click.Choice([k.value for k in EstimatorKind]),
    required=True,
)
@click.option("--source", type=click.Choice(SOURCE_CHOICES), default="both")
@click.option("--omega", type=float, help="Known upper endpoint, required for mvue.")
@click.option(
    "--k-range",
    callback=parse_k_range,
    help="Restrict k to LO:HI, both included.",
)
@click.option("--truncate", is_flag=True, help="Clamp estimates to [-1, 0].")
@click.option("-o", "--output", type=click.File("w"), default="-")
@click.pass_obj
def hillplot(
    obj: CliContext, input_path, estimator, source, omega, k_range, truncate, output
):
    """
    Estimates for every valid k, written as plot-ready CSV.

    Undefined estimates are kept as rows with defined=false.
    """
    kind = EstimatorKind(estimator)
    if kind is EstimatorKind.MVUE and omega is None:
        raise click.UsageError("--omega is required for the mvue estimator")

    data = load_sample(input_path)
    try:
        series = [
            hill_series(h, kind, omega=omega, truncate=truncate, k_range=k_range)
            for h in build_sources(data, source, obj.solver_settings())
        ]
    except InvalidEndpointException as e:
        raise ValidationFailure(str(e))

    for s in series:
        obj.info(f"{s.source.value}: {s.defined_count}/{len(s.ks)} estimates defined")
    write_hill_csv(series, output)
