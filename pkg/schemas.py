from datetime import datetime
from typing import Any, Dict, List, Literal, Optional

from pydantic import BaseModel, Extra, Field, root_validator, validator

SCHEMA_VERSION = "1.0"

Verdict = Literal["Holds", "Fails", "Inconclusive"]
Command = Literal[
    "classify",
    "koike-scan",
    "matrix-check",
    "sos-verify",
    "parametrix",
    "sharpness",
    "inequality-suite",
    "lowerbound",
]


# Profiles

class MonotoneResult(BaseModel):
    holds: bool
    inner: Optional[List[float]] = None
    outer: Optional[List[float]] = None
    inner_value: Optional[float] = None
    outer_value: Optional[float] = None


class EllipticalResult(BaseModel):
    holds: bool
    point: Optional[List[float]] = None
    value: Optional[float] = None


# Koike functional

class KoikeScale(BaseModel):
    k: int
    t: float
    mu: float
    argmax: float
    log_p: float
    c: float
    clamped: bool = False


class KoikeReport(BaseModel):
    form: str
    scales: List[KoikeScale]
    slope: Optional[float] = None
    verdict: Verdict
    eps_cls: float
    holds_slope: float = -0.2
    fails_slope: float = 0.05
    fit_window: int = 6
    clamp_events: int = 0
    resolution_exhausted: bool = False
    iff_applies: bool = False
    conclusion: str = ""


# Matrix checks

class Witness(BaseModel):
    point: List[float]
    direction: Optional[List[float]] = None
    value: Optional[float] = None
    note: str = ""


class ComparabilityResult(BaseModel):
    comparable: bool
    beta: Optional[float] = None
    alpha: Optional[float] = None
    witness: Optional[Witness] = None


class SubordinateResult(BaseModel):
    C: float
    per_axis: List[float]
    argmax: Optional[Witness] = None


class QuasiconformalResult(BaseModel):
    holds: bool
    ratio: float
    cap: float
    violation: Optional[Witness] = None


class EstimateParams(BaseModel):
    """Exponents of the differential estimates: 1/4 <= eps < 1, 0 < delta < delta2 < 1/2"""

    eps: float = 0.25
    delta: float = 0.05
    delta2: float = 0.1

    @validator("eps")
    def eps_range(cls, v):
        if not 0.25 <= v < 1:
            raise ValueError("eps must lie in [1/4, 1)")
        return v

    @validator("delta2")
    def deltas_ordered(cls, v, values):
        delta = values.get("delta")
        if delta is not None and not 0 < delta < v < 0.5:
            raise ValueError("need 0 < delta < delta2 < 1/2")
        return v

    @property
    def delta_prime(self) -> float:
        return 2 * self.delta * (1 + self.delta) / (2 + self.delta)


class EstimateRow(BaseModel):
    entry: str
    kind: Literal["diagonal", "off-diagonal-inner", "off-diagonal-outer", "seminorm"]
    mu: List[int]
    exponent: float
    constant: float
    trend_slope: Optional[float] = None
    flagged: bool
    witness: Optional[List[float]] = None


class DifferentialEstimatesReport(BaseModel):
    eps: float
    delta: float
    delta2: float
    delta_prime: float
    cap: float
    rows: List[EstimateRow]
    flagged: bool


class SandwichRow(BaseModel):
    k: int
    c: float
    C: float
    holds: bool
    witness: Optional[Witness] = None


class HolderRow(BaseModel):
    k: int
    i: int
    component: int
    seminorm: float
    flagged: bool


class SosReport(BaseModel):
    residual: float
    residual_ok: bool
    sandwich: List[SandwichRow]
    q_comparability: Optional[ComparabilityResult] = None
    holder: List[HolderRow]
    passes: bool


# Symbol calculus

class OrderEstimate(BaseModel):
    slope: float
    intercept: float
    log_flag: bool
    nominal: Optional[float] = None
    consistent: Optional[bool] = None


class ParametrixReport(BaseModel):
    symbol: str
    order: int
    terms: List[Dict[str, str]]
    residual_slope: float
    b1_consistency: float
    lattice: Dict[str, Any]


# Spectral engine

class SeriesRow(BaseModel):
    eta: float
    lambda0: float
    mass_fraction: float
    log_hoshiro_ratio: Optional[float] = None
    iterations: int
    residual: float
    b_n: Optional[float] = None


class SharpnessReport(BaseModel):
    rows: List[SeriesRow]
    C1: Optional[float] = None
    q: Optional[float] = None
    q_max: float = 2.4
    elliptic_guard: bool = False
    k: int
    delta: float
    hoshiro_exponent: Optional[float] = None
    contradiction: bool
    decay: Optional[KoikeReport] = None
    conclusion: str = ""


class LowerBoundRow(BaseModel):
    tau: float
    w: float
    lambda0: float
    C: float


# Inequalities

class BumpRatio(BaseModel):
    seed: int
    center: List[float]
    width: float
    ratio: float


class SufficRow(BaseModel):
    tau: float
    delta_direct: float
    delta_split: float
    r: Optional[float] = None
    seed: Optional[int] = None


class SufficReport(BaseModel):
    rows: List[SufficRow]
    monotone: bool
    note: str = ""


class MalgrangeResult(BaseModel):
    C: float
    skipped: int = 0
    argmax: Optional[List[float]] = None


class BoundAuxRow(BaseModel):
    tau: float
    s: Optional[float] = None
    C: Optional[float] = None
    note: str = ""


class InequalitySuiteReport(BaseModel):
    seed: int
    bumps: int
    hardy: List[BumpRatio]
    hardy_max: float
    hardy_violations: List[int]
    bound_aux: List[BoundAuxRow]
    suffic: SufficReport
    malgrange: MalgrangeResult


# Front end

class RunConfig(BaseModel):
    """Every key an experiment may set; unknown keys are rejected"""

    command: Command
    family: Optional[str] = None
    form: Literal["sum-product", "max-min", "both"] = "both"
    f: Optional[str] = None
    h: Optional[str] = None
    matrix: Optional[str] = None
    against: Optional[str] = None
    candidate: Optional[str] = None
    symbol: Optional[str] = None
    order: int = 2
    eps: float = 0.25
    delta: float = 0.05
    delta2: float = 0.1
    cap: Optional[float] = None
    require_diag_comparability: bool = False
    etas: str = "10:1e4:12log"
    taus: str = "10:1e4:4log"
    k: int = 3
    hoshiro_delta: float = 0.1
    q_max: float = 2.4
    a: float = 1.0
    grid_n: int = 2001
    bumps: int = 500
    seed: Optional[int] = None
    threads: int = 1
    json_path: Optional[str] = Field(None, alias="json")
    csv_path: Optional[str] = Field(None, alias="csv")
    record: bool = False

    class Config:
        extra = Extra.forbid
        allow_population_by_field_name = True

    @validator("grid_n")
    def grid_has_nodes(cls, v):
        if v < 16:
            raise ValueError("grid_n must be at least 16")
        return v

    @validator("order")
    def order_supported(cls, v):
        if not 0 <= v <= 2:
            raise ValueError("order must be 0, 1 or 2")
        return v

    @validator("threads")
    def threads_positive(cls, v):
        if v < 1:
            raise ValueError("threads must be at least 1")
        return v

    @root_validator(skip_on_failure=True)
    def inputs_present(cls, values):
        required = {
            "classify": ("family",),
            "koike-scan": ("f", "h"),
            "matrix-check": ("matrix",),
            "sos-verify": ("matrix", "candidate"),
            "parametrix": ("symbol",),
            "sharpness": ("f", "h"),
            "inequality-suite": ("family", "seed"),
            "lowerbound": ("f",),
        }[values["command"]]
        missing = [key for key in required if values.get(key) is None]
        if missing:
            raise ValueError(f"command '{values['command']}' requires: {', '.join(missing)}")
        return values


class Report(BaseModel):
    tool_version: str
    schema_version: str = SCHEMA_VERSION
    command: str
    config: Dict[str, Any]
    results: Dict[str, Any]
    violations: List[str]
    exit_code: int
    determinism_hash: str = ""
    timings: Dict[str, float] = {}


class RunSummary(BaseModel):
    id: int
    command: str
    config_hash: str
    determinism_hash: str
    exit_code: int
    violation_count: int
    created_at: datetime

    class Config:
        orm_mode = True
