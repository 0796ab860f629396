import configparser
import json
import logging
import os
import re
from typing import Any, Dict, List, Optional

import numpy as np
from dotenv import load_dotenv

from errors import ConfigError, IoError
from koike import DegeneracyFamily
from matrixcheck import GrushinMatrix, MatrixFunction, SosDecomposition
from profiles import Profile

load_dotenv()

logger = logging.getLogger(__name__)

# Allowed file types
ALLOWED_EXTENSIONS = {".cfg", ".ini", ".conf", ".json"}

MAX_CONFIG_BYTES = int(os.getenv("DEGENLAB_MAX_CONFIG_BYTES", str(1024 * 1024)))

ROOT_SECTION = "run"
SWEEP_RE = re.compile(r"^\s*([^:]+):([^:]+):(\d+)\s*(log|lin)?\s*$")
ENTRY_RE = re.compile(r"^(a|at0|Q)\[(\d+)\]\[(\d+)\]$")
VECTOR_RE = re.compile(r"^X\[(\d+)\]\[(\d+)\]$")


def validate_file_type(path: str) -> str:
    """Validate the extension and return it"""
    ext = os.path.splitext(path)[1].lower()
    if ext not in ALLOWED_EXTENSIONS:
        raise ConfigError(f"File type not allowed: '{path}'. Supported types: {', '.join(sorted(ALLOWED_EXTENSIONS))}")
    return ext


def validate_file_size(content: bytes, path: str) -> int:
    size = len(content)
    if size > MAX_CONFIG_BYTES:
        raise ConfigError(f"File '{path}' too large. Maximum size: {MAX_CONFIG_BYTES} bytes")
    return size


def _split_statements(text: str) -> str:
    """Break 'a = 1; b = "x;y"' into lines at semicolons outside quotes"""
    out: List[str] = []
    for line in text.splitlines():
        if line.lstrip().startswith("#"):
            out.append(line)
            continue
        current, quote = [], None
        for ch in line:
            if quote:
                if ch == quote:
                    quote = None
            elif ch in "\"'":
                quote = ch
            elif ch == ";":
                out.append("".join(current))
                current = []
                continue
            current.append(ch)
        out.append("".join(current))
    return "\n".join(s.strip() for s in out)


def _value(raw: str) -> Any:
    raw = raw.strip()
    try:
        return json.loads(raw)
    except ValueError:
        if len(raw) >= 2 and raw[0] == raw[-1] == "'":
            return raw[1:-1]
        return raw


def parse_config_text(text: str, ext: str = ".cfg", source: str = "<string>") -> Dict[str, Dict[str, Any]]:
    """Sections of key/value pairs; keys before any section header land in [run]"""
    if ext == ".json":
        try:
            data = json.loads(text)
        except ValueError as e:
            raise ConfigError(f"Invalid JSON in '{source}': {e}")
        if not isinstance(data, dict):
            raise ConfigError(f"'{source}' must hold a JSON object")
        flat = {k: v for k, v in data.items() if not isinstance(v, dict)}
        sections = {k: dict(v) for k, v in data.items() if isinstance(v, dict)}
        if flat:
            sections.setdefault(ROOT_SECTION, {}).update(flat)
        return sections

    body = _split_statements(text)
    if not re.match(r"^\s*(#.*\n|\s*\n)*\s*\[", body):
        body = f"[{ROOT_SECTION}]\n" + body
    parser = configparser.ConfigParser(interpolation=None, delimiters=("=",), comment_prefixes=("#",), strict=True)
    parser.optionxform = str
    try:
        parser.read_string(body, source=source)
    except configparser.Error as e:
        raise ConfigError(f"Cannot parse '{source}': {e}")
    return {name: {k: _value(v) for k, v in parser.items(name)} for name in parser.sections()}


def read_config_file(path: str) -> Dict[str, Dict[str, Any]]:
    ext = validate_file_type(path)
    try:
        with open(path, "rb") as fh:
            content = fh.read()
    except OSError as e:
        raise IoError(f"Cannot read '{path}': {e.strerror}")
    validate_file_size(content, path)
    try:
        text = content.decode("utf-8")
    except UnicodeDecodeError:
        raise ConfigError(f"File '{path}' is not UTF-8 encoded")
    logger.info(f"Loaded {len(content)} bytes from {path}")
    return parse_config_text(text, ext, path)


def _section(sections: Dict[str, Dict[str, Any]], name: str, source: str) -> Dict[str, Any]:
    if name in sections:
        return sections[name]
    if len(sections) == 1:
        return next(iter(sections.values()))
    raise ConfigError(f"'{source}' has no [{name}] section", key=name)


def _require(values: Dict[str, Any], key: str, source: str) -> Any:
    if key not in values:
        raise ConfigError(f"'{source}' is missing '{key}'", key=key)
    return values[key]


PROFILE_KEYS = {"name", "m", "R", "expr", "at0", "elliptical"}


def profile_from_values(values: Dict[str, Any], source: str, m: Optional[int] = None, name: Optional[str] = None) -> Profile:
    unknown = set(values) - PROFILE_KEYS
    if unknown:
        raise ConfigError(f"Unknown profile key in '{source}'", key=sorted(unknown)[0])
    expr_text = _require(values, "expr", source)
    at0 = values.get("at0")
    return Profile.from_text(
        str(expr_text),
        int(values.get("m", m or 1)),
        float(values.get("R", 1.0)),
        None if at0 is None else float(at0),
        str(values.get("name", name or "profile")),
        bool(values.get("elliptical", False)),
    )


def load_profile(path: str) -> Profile:
    """Profile declaration: name, m, R, expr, at0, elliptical"""
    sections = read_config_file(path)
    values = _section(sections, "profile", path) if "profile" in sections else _section(sections, ROOT_SECTION, path)
    return profile_from_values(values, path, name=os.path.splitext(os.path.basename(path))[0])


def load_family(path: str) -> DegeneracyFamily:
    """[family] m, p, n (R); one [lambdaK] section per degeneracy, K = m+1..p"""
    sections = read_config_file(path)
    head = _section(sections, "family", path) if "family" in sections else sections.get(ROOT_SECTION, {})
    m = int(_require(head, "m", path))
    p = int(_require(head, "p", path))
    n = int(head.get("n", p))
    R = head.get("R")
    profiles = []
    for k in range(m + 1, p + 1):
        key = f"lambda{k}"
        if key not in sections:
            raise ConfigError(f"'{path}' is missing the [{key}] section", key=key)
        values = dict(sections[key])
        if R is not None:
            values.setdefault("R", R)
        profiles.append(profile_from_values(values, path, m=m, name=key))
    return DegeneracyFamily(m, p, n, tuple(profiles), bool(head.get("extend_last", True)))


def _entries(values: Dict[str, Any], prefix: str) -> Dict[tuple, Any]:
    out = {}
    for key, value in values.items():
        match = ENTRY_RE.match(key)
        if match and match.group(1) == prefix:
            k, j = int(match.group(2)), int(match.group(3))
            out[(min(k, j), max(k, j))] = value
    return out


def load_matrix(path: str, name: str = "A") -> GrushinMatrix:
    """[matrix] n, m, p and entries a[k][j] = "expr" (k <= j), optional at0[k][j]"""
    sections = read_config_file(path)
    values = _section(sections, "matrix", path)
    n = int(_require(values, "n", path))
    m = int(values.get("m", 1))
    p = int(values.get("p", n))
    for key in values:
        if key not in ("n", "m", "p", "name") and not ENTRY_RE.match(key):
            raise ConfigError(f"Unknown matrix key in '{path}'", key=key)
    upper = {kj: str(v) for kj, v in _entries(values, "a").items()}
    at0 = {kj: float(v) for kj, v in _entries(values, "at0").items()}
    return GrushinMatrix.build(n, m, p, upper, str(values.get("name", name)), at0)


def load_sos(path: str, n: int) -> SosDecomposition:
    """[sos] X[k][i] = ["c1", ..., "cn"] for k = 1..p-1, optional Q[k][j] entries of the lower block"""
    sections = read_config_file(path)
    values = _section(sections, "sos", path)
    groups: Dict[int, Dict[int, List[str]]] = {}
    for key, value in values.items():
        match = VECTOR_RE.match(key)
        if match:
            if not isinstance(value, list):
                raise ConfigError(f"Vector {key} in '{path}' must be a JSON list", key=key)
            groups.setdefault(int(match.group(1)), {})[int(match.group(2))] = [str(c) for c in value]
        elif not ENTRY_RE.match(key):
            raise ConfigError(f"Unknown decomposition key in '{path}'", key=key)
    if sorted(groups) != list(range(1, len(groups) + 1)):
        raise ConfigError(f"Vector groups in '{path}' must be numbered 1..p-1, got {sorted(groups)}")
    ordered = [[groups[k][i] for i in sorted(groups[k])] for k in sorted(groups)]
    Q = None
    q_entries = _entries(values, "Q")
    if q_entries:
        size = max(j for _, j in q_entries)
        Q = MatrixFunction.from_upper(size, n, {kj: str(v) for kj, v in q_entries.items()}, "Q")
    return SosDecomposition.from_text(ordered, n, Q)


def load_run_file(path: str) -> Dict[str, Any]:
    """Run keys from the [run] section (or the file root)"""
    sections = read_config_file(path)
    return dict(_section(sections, ROOT_SECTION, path))


def parse_sweep(text: str) -> np.ndarray:
    """'start:stop:count[log|lin]', e.g. '10:1e4:12log'"""
    match = SWEEP_RE.match(str(text))
    if not match:
        raise ConfigError(f"Invalid sweep '{text}'; expected start:stop:count[log|lin]")
    try:
        start, stop = float(match.group(1)), float(match.group(2))
    except ValueError:
        raise ConfigError(f"Invalid sweep bounds in '{text}'")
    count = int(match.group(3))
    if count < 1 or start <= 0 or stop < start:
        raise ConfigError(f"Sweep '{text}' needs 0 < start <= stop and count >= 1")
    if count == 1:
        return np.array([start])
    if (match.group(4) or "log") == "log":
        return np.logspace(np.log10(start), np.log10(stop), count)
    return np.linspace(start, stop, count)


def parse_params(text: str) -> Dict[str, Any]:
    """'eps=0.25,delta=0.05' into a dict of parsed values"""
    out = {}
    for item in filter(None, (part.strip() for part in text.split(","))):
        if "=" not in item:
            raise ConfigError(f"Parameter '{item}' is not of the form key=value", key=item)
        key, raw = item.split("=", 1)
        out[key.strip()] = _value(raw)
    return out
