import click

from libsmoothtail.logcon import dump_fit
from libsmoothtail.smoothdist import SmoothCdf, sup_distance
from smooth_tail.cli import CliContext, fit_sample, load_sample

__all__ = ("fit",)


@click.command()
@click.argument(
    "input_path",
    metavar="INPUT",
    type=click.Path(exists=True, dir_okay=False, allow_dash=True),
)
@click.option(
    "-o",
    "--output",
    type=click.File("w"),
    default="-",
    help="Where to write the fit JSON. Defaults to stdout.",
)
@click.option(
    "--tolerance",
    type=click.FloatRange(min=0, min_open=True),
    help="Maximum directional derivative accepted as optimal.",
)
@click.option("--max-iterations", type=click.IntRange(min=1))
@click.pass_obj
def fit(obj: CliContext, input_path, output, tolerance, max_iterations):
    """
    Fits the log-concave maximum likelihood density to the numbers in INPUT.
    """
    data = load_sample(input_path)
    fitted, diagnostics = fit_sample(
        data, obj.solver_settings(tolerance, max_iterations)
    )
    dump_fit(fitted, output, diagnostics)
    distance = sup_distance(
        SmoothCdf(fitted), data, obj.config.smoothdist.refine_points
    )
    obj.info(
        f"n={data.raw_n}, knots={len(fitted.knots)}, "
        f"log_likelihood={fitted.log_likelihood!r}, "
        f"final_gap={diagnostics.final_gap!r}, sup_distance={distance!r}"
    )
