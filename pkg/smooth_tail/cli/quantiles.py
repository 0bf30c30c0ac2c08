import csv
import json
from typing import List

import click
import numpy as np

from libsmoothtail.distributions import DistributionDomainException
from libsmoothtail.logcon import load_fit
from libsmoothtail.smoothdist import SmoothCdf, cdf_inverse
from smooth_tail.cli import ValidationFailure

__all__ = ("quantiles",)


def _parse_levels(levels: str) -> List[float]:
    try:
        return [float(v) for v in levels.split(",") if v.strip()]
    except ValueError as e:
        raise click.BadParameter(str(e), param_hint="--levels")


@click.command()
@click.argument("fit_file", metavar="FIT_JSON", type=click.File("r"))
@click.option("--levels", help="Comma separated levels in [0, 1].")
@click.option(
    "--grid",
    type=click.IntRange(min=1),
    help="Use the N + 1 levels 0, 1/N, ..., 1.",
)
@click.option("-o", "--output", type=click.File("w"), default="-")
def quantiles(fit_file, levels, grid, output):
    """
    Quantiles of the smooth distribution function stored in FIT_JSON.
    """
    if (levels is None) == (grid is None):
        raise click.UsageError("Exactly one of --levels and --grid is required")

    values = _parse_levels(levels) if levels is not None else np.arange(grid + 1) / grid
    try:
        cdf = SmoothCdf(load_fit(fit_file))
    except (ValueError, json.JSONDecodeError) as e:
        raise ValidationFailure(f"Invalid fit document: {e}")

    try:
        result = np.atleast_1d(cdf_inverse(cdf, np.asarray(values, dtype=np.float64)))
    except DistributionDomainException as e:
        raise ValidationFailure(str(e))

    writer = csv.writer(output, lineterminator="\n")
    writer.writerow(("level", "quantile"))
    for level, value in zip(values, result):
        writer.writerow((repr(float(level)), repr(float(value))))
