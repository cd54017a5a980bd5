"""File formats: configuration JSON, TAC / whole-blood CSV, reports and fit logs.

Floats go to CSV with 17 significant digits and to JSON through ``repr``, so
everything written here reads back bit-identical. All writers are atomic.
"""

from __future__ import annotations

import dataclasses
import json
import math
from functools import lru_cache
from importlib.resources import files
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

import jsonschema
import numpy as np
import pandas as pd
from numpy.typing import NDArray

from tissuekinetics.errors import InvalidParameter, SchemaViolation
from tissuekinetics.model_core import Configuration, KineticParams, PolyexpInput, TacTable
from tissuekinetics.polyexp import AttenuationBiexp, ExpPolySum, ExpPolyTerm
from tissuekinetics.utils import atomic_write

FLOAT_FORMAT = "%.17g"
TAC_COLUMNS = ("region_id", "time_min", "value")
CWB_COLUMNS = ("time_min", "cwb")

PathLike = Union[str, Path]


@lru_cache(maxsize=None)
def configuration_schema() -> Dict[str, Any]:
    schema = files("tissuekinetics").joinpath("schemas", "configuration.schema.json")
    return json.loads(schema.read_text(encoding="utf-8"))


def _read_json(path: PathLike) -> Any:
    try:
        with open(Path(path), "r", encoding="utf-8") as stream:
            return json.load(stream)
    except json.JSONDecodeError as err:
        raise SchemaViolation(f"'{path}' is not valid JSON : {err}")


def configuration_from_dict(data: Dict[str, Any], source: str = "<dict>") -> Configuration:
    """Validate against the schema plus the semantic rules, then build.

    Raises
    ------
    SchemaViolation
        schema mismatch, duplicate region ids, zero amplitudes or
        repeated exponents

    """

    validator = jsonschema.Draft202012Validator(configuration_schema())
    errors = sorted(validator.iter_errors(data), key=lambda err: list(err.absolute_path))
    if errors:
        first = errors[0]
        location = "/".join(str(part) for part in first.absolute_path) or "<root>"
        raise SchemaViolation(f"{source}: {location} - {first.message}")

    ids = [region["id"] for region in data["regions"]]
    duplicated = sorted({rid for rid in ids if ids.count(rid) > 1})
    if duplicated:
        raise SchemaViolation(f"{source}: duplicated region id(s) - {', '.join(duplicated)}")

    terms = data["input"]["terms"]
    lambdas = [term["lambda"] for term in terms]
    mus = [term["mu"] for term in terms]

    try:
        regions = tuple(
            (region["id"], KineticParams(region["K1"], region["k2"], region["k3"], region["k4"]))
            for region in data["regions"]
        )
        return Configuration(regions, PolyexpInput.from_arrays(lambdas, mus))
    except InvalidParameter as err:
        raise SchemaViolation(f"{source}: {err}")


def configuration_to_dict(config: Configuration) -> Dict[str, Any]:
    return {
        "regions": [
            {"id": rid, "K1": params.K1, "k2": params.k2, "k3": params.k3, "k4": params.k4}
            for rid, params in config.regions
        ],
        "input": {
            "terms": [{"lambda": lam, "mu": mu} for lam, mu in config.input.terms],
        },
    }


def load_configuration(path: PathLike) -> Configuration:
    return configuration_from_dict(_read_json(path), source=str(path))


def dump_configuration(config: Configuration, path: PathLike) -> Path:
    return write_json(configuration_to_dict(config), path)


def write_frame(frame: pd.DataFrame, path: PathLike) -> Path:
    return atomic_write(path, frame.to_csv(index=False, float_format=FLOAT_FORMAT))


def _read_csv(path: PathLike, columns: Tuple[str, ...]) -> pd.DataFrame:
    frame = pd.read_csv(Path(path), dtype={"region_id": str})
    missing = [column for column in columns if column not in frame.columns]
    if missing:
        raise SchemaViolation(f"'{path}' lacks column(s) - {', '.join(missing)}")
    return frame


def cwb_sidecar(path: PathLike) -> Path:
    """``tacs.csv`` -> ``tacs.cwb.csv``."""
    path = Path(path)
    return path.with_name(f"{path.stem}.cwb.csv")


def read_cwb(path: PathLike) -> Tuple[NDArray[np.float64], NDArray[np.float64]]:
    frame = _read_csv(path, CWB_COLUMNS)
    return frame["time_min"].to_numpy(dtype=float), frame["cwb"].to_numpy(dtype=float)


def write_tacs(tacs: TacTable, path: PathLike) -> Path:
    """Long-format CSV; whole-blood samples, when present, go to the sidecar file."""

    path = write_frame(tacs.to_frame(), path)
    wb = tacs.wb_frame()
    if wb is not None:
        write_frame(wb, cwb_sidecar(path))
    return path


def read_tacs(path: PathLike, cwb_path: Optional[PathLike] = None) -> TacTable:
    """Inverse of ``write_tacs``; picks up the sidecar unless ``cwb_path`` is given."""

    frame = _read_csv(path, TAC_COLUMNS)
    if cwb_path is None and cwb_sidecar(path).exists():
        cwb_path = cwb_sidecar(path)
    wb_frame = None if cwb_path is None else _read_csv(cwb_path, CWB_COLUMNS)
    try:
        return TacTable.from_frame(frame, wb_frame)
    except InvalidParameter as err:
        raise SchemaViolation(f"'{path}': {err}")


def expsum_to_dict(sum_: ExpPolySum) -> Dict[str, Any]:
    return {
        "terms": [
            {"exponent": term.exponent, "coeffs": list(term.coeffs)} for term in sum_.terms
        ]
    }


def expsum_from_dict(data: Dict[str, Any]) -> ExpPolySum:
    try:
        return ExpPolySum(
            tuple(ExpPolyTerm(term["exponent"], tuple(term["coeffs"])) for term in data["terms"])
        )
    except (KeyError, TypeError) as err:
        raise SchemaViolation(f"Malformed exponential sum : {err}")


def to_jsonable(obj: Any) -> Any:
    """Plain JSON values in dataclass field order; non-finite floats become null."""

    if isinstance(obj, Configuration):
        return configuration_to_dict(obj)
    if isinstance(obj, ExpPolySum):
        return expsum_to_dict(obj)
    if isinstance(obj, AttenuationBiexp):
        return {"a": obj.a, "b": obj.b, "c": obj.c}
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {f.name: to_jsonable(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, dict):
        return {str(key): to_jsonable(value) for key, value in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(value) for value in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        value = float(obj)
        return value if math.isfinite(value) else None
    if isinstance(obj, Path):
        return str(obj)
    return obj


def dumps(obj: Any) -> str:
    return json.dumps(to_jsonable(obj), indent=2, allow_nan=False) + "\n"


def write_json(obj: Any, path: PathLike) -> Path:
    return atomic_write(path, dumps(obj))


def read_json(path: PathLike) -> Any:
    return _read_json(path)


def fit_result_to_dict(result) -> Dict[str, Any]:
    """FitResult without its trace (the trace is written as a CSV fit log)."""

    data = to_jsonable(result)
    data.pop("trace", None)
    return data


def read_fit_configuration(path: PathLike) -> Configuration:
    """Configuration stored under "config" in a fit result JSON."""

    data = _read_json(path)
    if "config" not in data:
        raise SchemaViolation(f"'{path}' has no 'config' entry")
    return configuration_from_dict(data["config"], source=f"{path}#config")
