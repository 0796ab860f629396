import logging
import re
import time
from typing import Any, Callable, Dict, List, Tuple

import inequal
import koike
import matrixcheck
import spectral
import symcalc
from config_loader import load_family, load_matrix, load_profile, load_sos, parse_sweep
from errors import ConfigError
from profiles import Grid
from reports import determinism_hash
from schemas import EstimateParams, ParametrixReport, Report, RunConfig

logger = logging.getLogger(__name__)

TOOL_VERSION = "0.1.0"
EXIT_OK = 0
EXIT_VIOLATION = 2
RESIDUAL_SLACK = 0.3

Outcome = Tuple[Dict[str, Any], List[str]]


def _matrix_grid(m: int, config: RunConfig) -> Grid:
    if m > 2:
        raise ConfigError(f"Matrix checks sample grids in m <= 2, got m={m}", key="matrix")
    return Grid(m, config.a, min(config.grid_n, 401) if m == 1 else min(config.grid_n, 41), ball=True)


def run_classify(config: RunConfig) -> Outcome:
    fam = load_family(config.family)
    forms = koike.FORMS if config.form == "both" else (config.form,)
    reports = {form: koike.classify(fam, form) for form in forms}
    violations = [f"{form}: criterion fails" for form, rep in reports.items() if rep.verdict == "Fails"]
    results = {
        "forms": {form: rep.dict() for form, rep in reports.items()},
        "strongly_monotone": koike.strongly_monotone(fam),
    }
    return results, violations


def run_koike_scan(config: RunConfig) -> Outcome:
    f, h = load_profile(config.f), load_profile(config.h)
    return {"decay": koike.decay_scan(f, h).dict()}, []


def run_matrix_check(config: RunConfig) -> Outcome:
    A = load_matrix(config.matrix)
    grid = _matrix_grid(A.m, config)
    cap = config.cap if config.cap is not None else matrixcheck.ESTIMATE_CAP
    params = EstimateParams(eps=config.eps, delta=config.delta, delta2=config.delta2)
    violations = []
    results: Dict[str, Any] = {}

    results["subordinate"] = matrixcheck.check_subordinate(A, grid).dict()
    quasi = matrixcheck.check_quasiconformal(A.lower_block(), grid, cap)
    results["quasiconformal"] = quasi.dict()
    if not quasi.holds:
        violations.append("lower block is not quasiconformal")
    estimates = matrixcheck.check_differential_estimates(A, params, grid, cap)
    results["differential_estimates"] = estimates.dict()
    if estimates.flagged:
        flagged = sorted({row.entry for row in estimates.rows if row.flagged})
        violations.append(f"differential estimates flagged for {', '.join(flagged)}")
    if config.require_diag_comparability:
        diag = matrixcheck.diag_comparability(A, grid)
        results["diag_comparability"] = diag.dict()
        if not diag.comparable:
            violations.append("matrix is not comparable to its diagonal")
    if config.against:
        B = load_matrix(config.against, "B")
        comp = matrixcheck.comparability(A, B, grid)
        results["comparability"] = comp.dict()
        if not comp.comparable:
            violations.append("matrices are not comparable")
    return results, violations


def run_sos_verify(config: RunConfig) -> Outcome:
    A = load_matrix(config.matrix)
    cand = load_sos(config.candidate, A.n)
    report = matrixcheck.verify_sos(A, cand, _matrix_grid(A.m, config), config.delta)
    return {"sos": report.dict()}, ([] if report.passes else ["decomposition does not verify"])


def _phase_dimension(text: str) -> int:
    indices = [int(i) for i in re.findall(r"\bx(?:i)?(\d+)\b", text)]
    return max(indices, default=1)


def run_parametrix(config: RunConfig) -> Outcome:
    a = symcalc.SymbolExpr.from_text(config.symbol, _phase_dimension(config.symbol))
    lattice = symcalc.SymbolLattice(a.n)
    chain = symcalc.parametrix(a, config.order, lattice)
    slope = symcalc.residual_order(a, chain, lattice)
    report = ParametrixReport(
        symbol=config.symbol,
        order=config.order,
        terms=[b.text() for b in chain.terms],
        residual_slope=slope,
        b1_consistency=symcalc.b1_consistency(a, chain, lattice),
        lattice=lattice.describe(),
    )
    expected = -(config.order + 1) + RESIDUAL_SLACK
    violations = [] if slope <= expected else [f"residual slope {slope:.3f} above {expected:.2f}"]
    return {"parametrix": report.dict()}, violations


def run_sharpness(config: RunConfig) -> Outcome:
    f, h = load_profile(config.f), load_profile(config.h)
    report = spectral.lambda0_scan(
        f, h, config.a, parse_sweep(config.etas).tolist(), config.grid_n,
        k=config.k, delta=config.hoshiro_delta, threads=config.threads, q_max=config.q_max,
    )
    violations = []
    if report.q is not None and report.q > config.q_max:
        violations.append(f"growth exponent q={report.q:.3f} exceeds {config.q_max:g}")
    return {"sharpness": report.dict()}, violations


def run_inequality_suite(config: RunConfig) -> Outcome:
    fam = load_family(config.family)
    N = config.grid_n if fam.m == 1 else min(config.grid_n, 129)
    report = inequal.run_suite(fam, config.bumps, config.seed, N, parse_sweep(config.taus).tolist())
    violations = [f"Hardy claim ratio above tolerance for seed {s}" for s in report.hardy_violations]
    return {"suite": report.dict()}, violations


def run_lowerbound(config: RunConfig) -> Outcome:
    f = load_profile(config.f)
    rows = spectral.lowerbound_check(f, parse_sweep(config.taus).tolist(), config.a, config.grid_n)
    return {"rows": [row.dict() for row in rows]}, []


COMMANDS: Dict[str, Callable[[RunConfig], Outcome]] = {
    "classify": run_classify,
    "koike-scan": run_koike_scan,
    "matrix-check": run_matrix_check,
    "sos-verify": run_sos_verify,
    "parametrix": run_parametrix,
    "sharpness": run_sharpness,
    "inequality-suite": run_inequality_suite,
    "lowerbound": run_lowerbound,
}


def run(config: RunConfig) -> Report:
    """Dispatch one experiment; exit code 0 when every check passes, 2 on violations"""
    started = time.perf_counter()
    logger.info(f"Running {config.command}")
    results, violations = COMMANDS[config.command](config)
    elapsed = time.perf_counter() - started
    report = Report(
        tool_version=TOOL_VERSION,
        command=config.command,
        config=config.dict(by_alias=True),
        results=results,
        violations=violations,
        exit_code=EXIT_VIOLATION if violations else EXIT_OK,
        timings={"total_s": elapsed},
    )
    report.determinism_hash = determinism_hash(report)
    for violation in violations:
        logger.warning(f"{config.command}: {violation}")
    return report
