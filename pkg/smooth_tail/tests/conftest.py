import os
from pathlib import Path
from typing import Iterator, Sequence
from unittest import mock

import pytest
from click.testing import CliRunner

from libsmoothtail.config import default_config
from libsmoothtail.distributions import GpdParams, RngState, gpd_sample
from smooth_tail.cli import SENTRY_DSN_ENV


def write_numbers(path: Path, values: Sequence[float]) -> str:
    path.write_text("".join(f"{float(v)!r}\n" for v in values))
    return str(path)


@pytest.fixture(autouse=True)
def isolated_environment() -> Iterator[None]:
    default_config.cache_clear()
    with mock.patch.dict(os.environ):
        os.environ.pop(SENTRY_DSN_ENV, None)
        yield
    default_config.cache_clear()


@pytest.fixture
def runner() -> CliRunner:
    return CliRunner()


@pytest.fixture
def gpd_file(tmp_path: Path) -> str:
    """
    A seeded GPD(-0.75, 1) sample of size 64, one value per line.
    """
    return write_numbers(
        tmp_path / "gpd.txt", gpd_sample(GpdParams(-0.75), 64, RngState(2024))
    )
