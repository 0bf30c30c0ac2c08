import click

from libsmoothtail.estimators import (
    EstimatorKind,
    InvalidEndpointException,
    hill_series,
    valid_k_range,
    write_hill_csv,
)
from smooth_tail.cli import (
    SOURCE_CHOICES,
    CliContext,
    ValidationFailure,
    build_sources,
    load_sample,
)

__all__ = ("estimate",)


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
@click.option(
    "--k", "k", type=int, required=True, help="Number of upper order statistics."
)
@click.option("--omega", type=float, help="Known upper endpoint, required for mvue.")
@click.option("--truncate", is_flag=True, help="Clamp estimates to [-1, 0].")
@click.option("-o", "--output", type=click.File("w"), default="-")
@click.pass_obj
def estimate(obj: CliContext, input_path, estimator, source, k, omega, truncate, output):
    """
    Tail index estimate at a single k, as rows of the Hill series CSV.
    """
    kind = EstimatorKind(estimator)
    if kind is EstimatorKind.MVUE and omega is None:
        raise click.UsageError("--omega is required for the mvue estimator")

    data = load_sample(input_path)
    valid = valid_k_range(kind, data.raw_n)
    if k not in valid:
        raise click.BadParameter(
            f"{k} is outside {valid.start}..{valid.stop - 1} for n={data.raw_n}",
            param_hint="--k",
        )

    try:
        series = [
            hill_series(h, kind, omega=omega, truncate=truncate, k_range=(k, k))
            for h in build_sources(data, source, obj.solver_settings())
        ]
    except InvalidEndpointException as e:
        raise ValidationFailure(str(e))
    write_hill_csv(series, output)
