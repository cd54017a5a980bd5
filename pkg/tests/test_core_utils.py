from __future__ import annotations

import logging
import sys
from datetime import datetime
from operator import eq, ge, gt, le, lt, ne
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from tissuekinetics.errors import InvalidGrid
from tissuekinetics.utils import (
    PACKAGE_LOGGER,
    TKLogger,
    _convert_vals,
    _resolve_type,
    atomic_write,
    parse_grid_spec,
    produce_hash,
    relative_deviation,
    resolve_search,
    validate_grid,
)

from .util import Case

resolve_type_test_cases = [
    Case("5", 5),
    Case("5.46", 5.46),
    Case("1e-10", 1e-10),
    Case("True", True),
    Case("fit", "fit"),
    Case("oracle-compare", "oracle-compare"),
    Case("2020-05-01", pd.to_datetime("2020-05-01")),
    Case("2020-05-01 04:03:01", pd.to_datetime("2020-05-01 04:03:01")),
]


class TestResolveType:
    @pytest.mark.parametrize("test_case", resolve_type_test_cases, ids=lambda tc: tc.id)
    def test_output(self, test_case):
        assert _resolve_type(test_case.val) == test_case.expected_result


resolve_search_test_cases = [
    Case(">5", (gt, 5)),
    Case(">5.46", (gt, 5.46)),
    Case(">2020-05-01 04:03:01", (gt, pd.to_datetime("2020-05-01 04:03:01"))),
    Case(">=5", (ge, 5)),
    Case(">=1e-10", (ge, 1e-10)),
    Case("==fit", (eq, "fit")),
    Case("==True", (eq, True)),
    Case("<5.46", (lt, 5.46)),
    Case("<=5", (le, 5)),
    Case("<=2020-05-01 04:03:01", (le, pd.to_datetime("2020-05-01 04:03:01"))),
    Case("!=verify", (ne, "verify")),
    Case("!=0", (ne, 0)),
]


class TestResolveSearch:
    @pytest.mark.parametrize(
        "test_case", resolve_search_test_cases, ids=lambda tc: tc.id
    )
    def test_output(self, test_case):
        assert resolve_search(test_case.val) == test_case.expected_result


resolve_convert_val_cases = [
    Case(
        datetime(2025, 1, 1, 4, 4, 4),
        "{}".format(datetime(2025, 1, 1, 4, 4, 4).isoformat(timespec="microseconds")),
    ),
    Case(5, 5),
    Case(7.46, 7.46),
    Case(None, "None"),
    Case(("fit", 5, 7.46), ("fit", 5, 7.46)),
    Case(["fit", None], ("fit", "None")),
    Case(
        pd.DataFrame([[1, 2]], columns=["a", "b"]),
        (sys.getsizeof(pd.DataFrame([[1, 2]], columns=["a", "b"]))),
    ),
]


class TestConvertVals:
    @pytest.mark.parametrize("test_case", resolve_convert_val_cases, ids=lambda tc: tc.id)
    def test_output(self, test_case):
        assert _convert_vals(test_case.val) == test_case.expected_result


class TestProduceHash:
    def test_stable(self):
        stamp = pd.to_datetime("2026-01-01 10:00:00")
        assert produce_hash(("fit", stamp, 7)) == produce_hash(("fit", stamp, 7))

    def test_scalar_wrapped(self):
        assert produce_hash("verify") == produce_hash(("verify",))

    def test_distinct(self):
        assert produce_hash(("fit", 1)) != produce_hash(("fit", 2))

    def test_signed_64_bit(self):
        value = produce_hash("anything")
        assert -(2**63) <= value < 2**63


grid_spec_test_cases = [
    Case("list:1,2,5,10", np.array([1.0, 2.0, 5.0, 10.0])),
    Case("list:0.5", np.array([0.5])),
    Case("log:1,100,3", np.array([1.0, 10.0, 100.0])),
]


class TestParseGridSpec:
    @pytest.mark.parametrize("test_case", grid_spec_test_cases, ids=lambda tc: tc.id)
    def test_output(self, test_case):
        np.testing.assert_allclose(parse_grid_spec(test_case.val), test_case.expected_result, rtol=1e-14)

    @pytest.mark.parametrize(
        "spec",
        [
            "lin:1,2,3",
            "log:1,100",
            "log:0,100,5",
            "log:10,1,5",
            "log:1,10,2.5",
            "list:1,a,3",
            "list:",
            "list:2,1",
            "list:0,1",
            "list:1,1,2",
        ],
    )
    def test_invalid(self, spec):
        with pytest.raises(InvalidGrid):
            parse_grid_spec(spec)

    def test_invalid_grid_is_value_error(self):
        with pytest.raises(ValueError):
            validate_grid([1.0, np.nan])


class TestRelativeDeviation:
    def test_symmetric(self):
        assert relative_deviation(1.0, 1.1) == relative_deviation(1.1, 1.0)

    def test_zero_pair(self):
        assert relative_deviation(0.0, 0.0) == 0.0

    def test_value(self):
        assert relative_deviation(2.0, 1.0) == pytest.approx(0.5)


class TestAtomicWrite:
    def test_write_and_overwrite(self, tmp_path):
        target = tmp_path / "nested" / "out.txt"
        atomic_write(target, "first")
        atomic_write(target, "second")
        assert target.read_text() == "second"
        assert sorted(p.name for p in target.parent.iterdir()) == ["out.txt"]


class TestLogger:
    def test_invalid_args(self):
        with pytest.raises(KeyError):
            TKLogger("some_log_file", None, "invalid")

    def test_console_only(self):
        logger = TKLogger("some_log_file")
        assert logger.handler is None
        assert logger.append is logging.getLogger(PACKAGE_LOGGER)

    def test_filename_format(self, tmp_path):
        logger = TKLogger("some_log_file", tmp_path / "logs")
        assert Path(logger.handler.baseFilename).name == "some_log_file.log"
        assert Path(logger.handler.baseFilename).parent == tmp_path / "logs"

    def test_existing_suffix_kept(self, tmp_path):
        logger = TKLogger("run.log", tmp_path)
        assert Path(logger.handler.baseFilename).name == "run.log"

    def test_module_loggers_reach_file(self, tmp_path):
        logger = TKLogger("modules", tmp_path, "info")
        logging.getLogger("tissuekinetics.estimation").info("module message")
        logger.handler.flush()
        assert "module message" in (tmp_path / "modules.log").read_text()

    def test_level_applied(self):
        logger = TKLogger("levels", None, "debug")
        assert logger.append.level == logging.DEBUG
