import json
import math
import time
from collections import defaultdict
from dataclasses import replace
from typing import Dict, List, Tuple

import click
from tabulate import tabulate

from libsmoothtail.simulation import (
    EfficiencyTable,
    ManifestValidationException,
    load_manifest,
    run_experiment,
    run_metadata,
    write_efficiency_csv,
)
from smooth_tail.cli import CliContext, ValidationFailure

__all__ = ("simulate",)


def summarize(table: EfficiencyTable) -> str:
    """
    Mean rho over k and the share of k where smoothing wins, per parameter
    and estimator.
    """
    cells: Dict[Tuple[float, str], List[float]] = defaultdict(list)
    for row in table.rows:
        cells[(row.param, row.estimator)].append(row.stats.rho)

    rows = []
    for (param, estimator), rhos in cells.items():
        finite = [r for r in rhos if math.isfinite(r)]
        mean_rho = sum(finite) / len(finite) if finite else math.nan
        wins = sum(r < 1 for r in finite)
        rows.append((param, estimator, len(rhos), mean_rho, f"{wins}/{len(rhos)}"))
    return tabulate(
        rows,
        headers=("param", "estimator", "cells", "mean rho", "rho < 1"),
        floatfmt=".4f",
    )


@click.command()
@click.argument("manifest", type=click.File("r"))
@click.option(
    "--seed",
    type=click.IntRange(min=0, max=2**64 - 1),
    help="Overrides the manifest seed.",
)
@click.option(
    "--threads",
    type=click.IntRange(min=1),
    help="Worker threads for replicates. Output does not depend on it.",
)
@click.option(
    "-o",
    "--output",
    type=click.File("w"),
    default="-",
    help="Where to write the efficiency table CSV. Defaults to stdout.",
)
@click.option(
    "--metadata",
    type=click.File("w"),
    help="Where to write the run metadata JSON.",
)
@click.pass_obj
def simulate(obj: CliContext, manifest, seed, threads, output, metadata):
    """
    Runs the Monte Carlo experiment described by MANIFEST.
    """
    try:
        spec = load_manifest(manifest, obj.config.simulation.default_replicates)
        if seed is not None:
            spec = replace(spec, seed=seed)
    except ManifestValidationException as e:
        raise ValidationFailure(str(e))
    if spec.seed is None:
        raise ValidationFailure("A seed is required, in the manifest or with --seed")

    threads = threads or obj.config.simulation.threads
    obj.info(
        f"Running {spec.setting.value}: n={spec.n}, M={spec.replicates}, "
        f"{len(spec.params)} parameter value(s), {threads} thread(s)"
    )
    start = time.monotonic()
    table = run_experiment(spec, threads=threads, settings=obj.solver_settings())
    wall_time = time.monotonic() - start

    write_efficiency_csv(table, output)
    if metadata is not None:
        json.dump(run_metadata(table, wall_time), metadata, indent=2)
        metadata.write("\n")

    obj.info(f"\n{summarize(table)}\n")
    if table.fit_failures:
        obj.info(f"{table.fit_failures} log-concave fit(s) failed")
