import hashlib
import logging
import os
import pickle
import re
import sys
import tempfile
from ast import literal_eval
from datetime import datetime
from operator import eq, ge, gt, le, lt, ne
from pathlib import Path
from typing import Any, Callable, Dict, Optional, Tuple, Union

import numpy as np
from numpy.typing import ArrayLike, NDArray
from pandas import Timestamp, to_datetime

from tissuekinetics.errors import InvalidGrid

PACKAGE_LOGGER = "tissuekinetics"

_op_lookup: Dict[str, Callable] = {
    ">": gt,
    "<": lt,
    ">=": ge,
    "<=": le,
    "==": eq,
    "!=": ne,
}

_level_dict: dict = {
    "notset": logging.NOTSET,
    "debug": logging.DEBUG,
    "info": logging.INFO,
    "warning": logging.WARNING,
    "error": logging.ERROR,
    "critical": logging.CRITICAL,
}

_LOG_FORMAT = "%(asctime)s - %(levelname)s : %(name)s : %(message)s"


class TKLogger:
    """
    A class for core logging of the toolkit.

    ...

    Attributes
    ----------
    logger : logging.Logger
        package logger ("tissuekinetics"); module loggers propagate into it
    handler : Optional[logging.FileHandler]
        file oriented logging handler, absent when no filepath is given

    """

    def __init__(
        self,
        filename: str,
        filepath: Optional[Union[str, Path]] = None,
        level: str = "warning",
    ) -> None:
        """Init for Logger object.

        Parameters
        ----------
        filename : str
            name of logging file
        filepath : Optional[str | Path]
            directory of the logging file; console only when None
        level : str
            set max debugging level. defaults to "warning"

        """

        log_level = self._return_level(level)
        logging.basicConfig(level=log_level, format=_LOG_FORMAT)

        self.logger = logging.getLogger(PACKAGE_LOGGER)
        self.logger.setLevel(log_level)
        self.logger.handlers.clear()
        self.handler = None
        if filepath is not None:
            self.handler = logging.FileHandler(
                self._define_filepath(filename, filepath), mode="a"
            )
            self.handler.setFormatter(logging.Formatter(_LOG_FORMAT))
            self.logger.addHandler(self.handler)

    def _return_level(self, level: str):
        try:
            return _level_dict[level.lower()]
        except Exception as _:
            raise KeyError(
                "Valid inputs for 'level' - notset,debug,info,warning,error,critical !"
            )

    def _define_filepath(self, filename: str, filepath: Union[str, Path]) -> str:
        filename = f"{filename}" if filename.endswith(".log") else f"{filename}.log"
        filepath = Path(filepath)
        filepath.mkdir(parents=True, exist_ok=True)
        return str(filepath / filename)

    @property
    def append(self):
        """Return logging.Logger object

        Examples
        --------

        myLogger.append.error(...)
        myLogger.append.debug(...)

        """

        return self.logger


def _resolve_type(val: str) -> Any:
    """Typecasting string to its literal type.

    Parameters
    ----------
    val : str
        input value

    Returns
    -------
    Any
        Any literal type.

    """

    for fn in [literal_eval, to_datetime]:
        try:
            return fn(val)
        except Exception as _:
            continue
    return val


def resolve_search(val: Any) -> Tuple[Callable, Any]:
    """Given string search expression of format "<comparison operator><value>", converts into tuple of comparison method + literal value.

    Parameters
    ----------
    val : Any
        formatted filter expression

    Returns
    -------
    Tuple[Callable, Any]
        tuple of comparison operator (e.g. >) and literal value

    Examples
    --------
    ">=5.46" --> (>= , 5.46) (callable,float)
    "==verify" --> (== , "verify")

    """

    cmp, val = re.findall(r"""(?P<cmp>[<>=!]+)'?(?P<value>.*)'?""", val)[0]
    return _op_lookup[cmp], _resolve_type(val)


def _convert_vals(val: Any) -> Union[Tuple, Any]:
    """Convert literals to types with a stable pickled form.

    Parameters
    ----------
    val : Any
        Any literal type.

    Returns
    -------
    Union[Tuple, Any]
        Tuple of converted values or single converted value.

    """

    if isinstance(val, tuple | list):
        return tuple(map(_convert_vals, val))
    elif isinstance(val, str | int | float):
        return val
    elif isinstance(val, Timestamp | datetime):
        return val.isoformat(timespec="microseconds")
    elif val is None:
        return "None"
    else:
        return sys.getsizeof(val)


def produce_hash(val: Tuple | Any) -> int:
    """Converts value into tuple of native, immutable types.
       Pickles tuple and returns 64 bit integer.

    Parameters
    ----------
    val : Tuple | Any
        Tuple of any literal(s) or single literal.

    Returns
    -------
    int
        64 bit Integer

    """
    val = val if isinstance(val, tuple) else (val,)
    return int.from_bytes(
        hashlib.blake2b(
            pickle.dumps(_convert_vals(val), protocol=5), digest_size=8
        ).digest(),
        "big",
        signed=True,
    )


def parse_grid_spec(spec: str) -> NDArray[np.float64]:
    """Parse a time grid specification.

    Parameters
    ----------
    spec : str
        ``log:start,end,count`` for a geometric grid or ``list:t1,t2,...``

    Returns
    -------
    NDArray
        strictly increasing, positive times (min)

    Raises
    ------
    InvalidGrid
        unknown kind, unparsable numbers, or a grid failing validation

    Examples
    --------
    >>> parse_grid_spec("log:0.25,60,16")
    >>> parse_grid_spec("list:1,2,5,10")

    """

    kind, _, body = spec.partition(":")
    try:
        numbers = [float(token) for token in body.split(",") if token.strip()]
    except ValueError:
        raise InvalidGrid(f"Grid spec '{spec}' contains a non-numeric entry !")

    if kind == "log":
        if len(numbers) != 3:
            raise InvalidGrid(f"Grid spec '{spec}' must be 'log:start,end,count' !")
        start, end, count = numbers
        if start <= 0 or end <= start or count < 2 or count != int(count):
            raise InvalidGrid(
                f"Grid spec '{spec}' needs 0 < start < end and an integer count >= 2 !"
            )
        grid = np.geomspace(start, end, int(count))
    elif kind == "list":
        grid = np.asarray(numbers, dtype=float)
    else:
        raise InvalidGrid(f"Unknown grid kind '{kind}' - use 'log' or 'list' !")

    return validate_grid(grid)


def validate_grid(grid: ArrayLike) -> NDArray[np.float64]:
    """Return ``grid`` as a float array after checking it is positive and strictly increasing."""

    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size == 0:
        raise InvalidGrid("Time grid must be a non-empty 1-d sequence !")
    if not np.all(np.isfinite(grid)):
        raise InvalidGrid("Time grid contains non-finite values !")
    if np.any(grid <= 0):
        raise InvalidGrid(f"Time grid must be positive, got min={grid.min()} !")
    if np.any(np.diff(grid) <= 0):
        raise InvalidGrid("Time grid must be strictly increasing !")
    return grid


def relative_deviation(a: ArrayLike, b: ArrayLike, floor: float = 1e-300) -> NDArray:
    """Elementwise |a - b| / max(|a|, |b|, floor)."""

    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def atomic_write(path: Union[str, Path], text: str) -> Path:
    """Write ``text`` to ``path`` through a temporary file in the same directory."""

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as stream:
            stream.write(text)
        os.replace(tmp_name, path)
    except Exception:
        Path(tmp_name).unlink(missing_ok=True)
        raise
    return path
