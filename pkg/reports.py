import csv
import hashlib
import json
import logging
import math
from typing import Any, Dict, Iterable, List, Mapping, Sequence

import numpy as np

from errors import IoError
from schemas import Report

logger = logging.getLogger(__name__)

SHARPNESS_COLUMNS = ("eta", "lambda0", "mass_fraction", "log_hoshiro_ratio")
LOWERBOUND_COLUMNS = ("tau", "w", "lambda0", "C")
KOIKE_COLUMNS = ("k", "t", "mu", "argmax", "log_p", "c")
BUMP_COLUMNS = ("seed", "width", "ratio")
HASH_EXCLUDED = ("timings", "determinism_hash")
# output destinations do not change what a run computes
OUTPUT_KEYS = ("json", "csv", "record")


def to_jsonable(value: Any) -> Any:
    """Plain JSON types; non-finite floats become the strings 'inf', '-inf', 'nan'"""
    if isinstance(value, Mapping):
        return {str(k): to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return [to_jsonable(v) for v in value.tolist()]
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if math.isnan(value):
            return "nan"
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return value
    return value


def canonical_json(data: Any) -> str:
    return json.dumps(to_jsonable(data), sort_keys=True, separators=(",", ":"), allow_nan=False)


def determinism_hash(report: Report) -> str:
    """sha256 of the canonical report without its timing block and output paths"""
    body = {k: v for k, v in report.dict().items() if k not in HASH_EXCLUDED}
    body["config"] = {k: v for k, v in body["config"].items() if k not in OUTPUT_KEYS}
    return hashlib.sha256(canonical_json(body).encode("utf-8")).hexdigest()


def render_json(report: Report) -> str:
    return json.dumps(to_jsonable(report.dict()), sort_keys=True, indent=2, allow_nan=False) + "\n"


def emit_json(report: Report, path: str) -> None:
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(render_json(report))
    except OSError as e:
        raise IoError(f"Cannot write report to '{path}': {e.strerror}")
    logger.info(f"Report written to {path}")


def _cell(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".17g")
    return str(value)


def emit_csv(rows: Sequence[Mapping[str, Any]], columns: Iterable[str], path: str) -> int:
    """Header plus one line per row, 17 significant digits, LF endings; returns the data row count"""
    columns: List[str] = list(columns)
    if not rows:
        raise IoError(f"Refusing to write an empty series to '{path}'")
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(columns)
            for row in rows:
                writer.writerow([_cell(row.get(c)) for c in columns])
    except OSError as e:
        raise IoError(f"Cannot write series to '{path}': {e.strerror}")
    logger.info(f"{len(rows)} rows written to {path}")
    return len(rows)


def series_rows(results: Dict[str, Any], command: str) -> List[Dict[str, Any]]:
    """Rows of the tabular part of a report, if the command has one"""
    if command == "sharpness":
        return list(results["sharpness"]["rows"])
    if command == "lowerbound":
        return list(results["rows"])
    if command == "inequality-suite":
        return list(results["suite"]["hardy"])
    if command == "koike-scan":
        return list(results["decay"]["scales"])
    if command == "classify":
        forms = results["forms"]
        return [dict(scale, form=name) for name, rep in forms.items() for scale in rep["scales"]]
    return []


CSV_COLUMNS = {
    "sharpness": SHARPNESS_COLUMNS,
    "lowerbound": LOWERBOUND_COLUMNS,
    "inequality-suite": BUMP_COLUMNS,
    "koike-scan": KOIKE_COLUMNS,
    "classify": ("form",) + KOIKE_COLUMNS,
}
