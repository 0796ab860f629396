import json

import numpy as np
import pytest

import reports
from errors import IoError
from schemas import Report


def make_report(**overrides) -> Report:
    values = dict(
        tool_version="0.1.0",
        command="lowerbound",
        config={"command": "lowerbound", "f": "f.cfg", "json": None, "csv": None, "record": False},
        results={"rows": [{"tau": 100.0, "w": 20.0, "lambda0": 100.0, "C": 4.0}]},
        violations=[],
        exit_code=0,
        timings={"total_s": 0.5},
    )
    values.update(overrides)
    return Report(**values)


def test_non_finite_floats_become_strings():
    data = {"a": float("inf"), "b": [np.float64("nan"), -np.inf], "c": np.array([1, 2]), "d": np.bool_(True)}
    assert reports.to_jsonable(data) == {"a": "inf", "b": ["nan", "-inf"], "c": [1, 2], "d": True}
    assert reports.canonical_json({"b": 1, "a": 2}) == '{"a":2,"b":1}'


def test_hash_ignores_timings_and_output_paths():
    base = reports.determinism_hash(make_report())
    slower = make_report(timings={"total_s": 9.0})
    routed = make_report(config={"command": "lowerbound", "f": "f.cfg", "json": "out.json", "csv": "out.csv", "record": True})
    assert reports.determinism_hash(slower) == base
    assert reports.determinism_hash(routed) == base
    changed = make_report(results={"rows": [{"tau": 100.0, "w": 20.0, "lambda0": 100.0, "C": 4.000001}]})
    assert reports.determinism_hash(changed) != base


def test_render_json_is_sorted_and_strict():
    text = reports.render_json(make_report(results={"value": float("nan")}))
    data = json.loads(text)
    assert data["results"]["value"] == "nan"
    assert data["schema_version"] == "1.0"
    assert text.endswith("\n")


def test_csv_rows(tmp_path):
    path = tmp_path / "series.csv"
    rows = [{"tau": 10.0, "w": 0.1, "lambda0": 1 / 3, "C": None}, {"tau": 100.0, "w": 20.0, "lambda0": 100.0, "C": 4.0}]
    assert reports.emit_csv(rows, reports.LOWERBOUND_COLUMNS, str(path)) == 2
    lines = path.read_bytes().decode("utf-8").split("\n")
    assert lines[0] == "tau,w,lambda0,C"
    assert lines[1] == "10,0.10000000000000001,0.33333333333333331,"
    assert lines[3] == ""


def test_empty_series_is_refused(tmp_path):
    with pytest.raises(IoError):
        reports.emit_csv([], reports.LOWERBOUND_COLUMNS, str(tmp_path / "empty.csv"))


def test_unwritable_destination(tmp_path):
    with pytest.raises(IoError):
        reports.emit_json(make_report(), str(tmp_path / "missing" / "report.json"))


def test_series_rows_for_classify():
    results = {"forms": {"max-min": {"scales": [{"k": 2, "c": -1.0}]}, "sum-product": {"scales": [{"k": 2, "c": -2.0}]}}}
    rows = reports.series_rows(results, "classify")
    assert [(row["form"], row["c"]) for row in rows] == [("max-min", -1.0), ("sum-product", -2.0)]
    assert reports.series_rows({}, "parametrix") == []
    assert "parametrix" not in reports.CSV_COLUMNS
