import math
from typing import IO, Iterable, List, Union

import numpy as np
from numpy.typing import ArrayLike, NDArray

FloatOrArray = Union[float, NDArray[np.float64]]


def unwrap(value: NDArray[np.float64], like: ArrayLike) -> FloatOrArray:
    """
    Returns a plain float when `like` was a scalar.
    """
    if np.ndim(like) == 0:
        return float(value)
    return value


def parse_numbers(lines: Iterable[str]) -> List[float]:
    """
    Parses newline delimited decimal numbers, or a single column CSV.

    The first non empty line is treated as a header if it does not parse
    as a number. Any other unparsable line is an error. For CSV input only
    the first column is read.
    """
    values: List[float] = []
    seen_first = False
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line:
            continue
        cell = line.split(",")[0].strip().strip('"')
        try:
            value = float(cell)
        except ValueError:
            if not seen_first:
                seen_first = True
                continue
            raise ValueError(f"Line {lineno}: {cell!r} is not a number")
        seen_first = True
        if not math.isfinite(value):
            raise ValueError(f"Line {lineno}: {cell!r} is not finite")
        values.append(value)
    return values


def read_numbers(stream: IO[str]) -> List[float]:
    return parse_numbers(stream)
