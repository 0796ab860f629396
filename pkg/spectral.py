import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, List, Optional, Sequence

import numpy as np
import scipy.sparse as sp
from dotenv import load_dotenv
from scipy.linalg import cho_solve_banded, cholesky_banded
from scipy.sparse.linalg import LinearOperator, cg

import expr as ex
from errors import ConfigError, LabError, NotConverged
from koike import decay_scan, w_of_tau
from profiles import Grid, Profile, check_strong_monotone, radial_envelopes
from schemas import LowerBoundRow, SeriesRow, SharpnessReport

load_dotenv()

logger = logging.getLogger(__name__)

THREADS = int(os.getenv("DEGENLAB_THREADS", "1"))
RAYLEIGH_RTOL = 1e-12
RESIDUAL_RTOL = 1e-8
MAX_ITER = 100_000
DENOMINATOR_FLOOR = 1e-300
ELLIPTIC_FLOOR = 1e-6
CG_RTOL = 1e-13
SHIFT_MARGIN = 1e-9
Q_MAX = float(os.getenv("DEGENLAB_Q_MAX", "2.4"))


@dataclass
class EigenProblem:
    """K v = lambda M v with K = -Laplacian (Dirichlet on |x| = a) + diag(f^2 eta^2), M = diag(h^2)"""

    grid: Grid
    f: Profile
    h: Profile
    eta: float
    points: np.ndarray
    K: sp.csr_matrix
    mass: np.ndarray
    coupling: Optional[np.ndarray] = None

    @property
    def m(self) -> int:
        return self.grid.m

    @property
    def a(self) -> float:
        return self.grid.a

    @property
    def cell(self) -> float:
        return self.grid.spacing ** self.m

    @cached_property
    def radii(self) -> np.ndarray:
        return np.linalg.norm(self.points, axis=1)


@dataclass
class EigenResult:
    lambda0: float
    v: np.ndarray
    iterations: int
    residual: float
    problem: EigenProblem

    @property
    def norm(self) -> float:
        return float(self.problem.cell * np.sum(self.v ** 2))


def _laplacian_1d(n: int, spacing: float) -> sp.csr_matrix:
    return sp.diags([-np.ones(n - 1), 2 * np.ones(n), -np.ones(n - 1)], [-1, 0, 1], format="csr") / spacing ** 2


def assemble(f: Profile, h: Profile, a: float, eta: float, N: int = 2001, m: Optional[int] = None) -> EigenProblem:
    """3-point (m=1) or 5-point (m=2) Dirichlet Laplacian on the nodes strictly inside B(0, a)"""
    m = m or f.m
    if f.m != m or h.m != m:
        raise ValueError(f"Profiles must live on R^{m}")
    if eta < 0:
        raise ValueError(f"eta must be nonnegative, got {eta}")
    grid = Grid(m, a, N, ball=(m == 2))
    inner_axis = grid.axis[1:-1]
    L1 = _laplacian_1d(len(inner_axis), grid.spacing)
    if m == 1:
        points = inner_axis[:, None]
        L = L1
    else:
        eye = sp.identity(len(inner_axis), format="csr")
        L = (sp.kron(L1, eye) + sp.kron(eye, L1)).tocsr()
        mesh = np.meshgrid(inner_axis, inner_axis, indexing="ij")
        points = np.stack([c.ravel() for c in mesh], axis=1)
        keep = np.linalg.norm(points, axis=1) < a * (1 - 1e-12)
        points = points[keep]
        L = L[keep][:, keep]
    coupling = f.values(points) ** 2 * eta ** 2
    mass = h.values(points) ** 2
    K = (L + sp.diags(coupling)).tocsr()
    return EigenProblem(grid, f, h, eta, points, K, mass, coupling)


def _banded_solver(K: sp.csr_matrix) -> Callable[[np.ndarray], np.ndarray]:
    ab = np.zeros((2, K.shape[0]))
    ab[0, 1:] = K.diagonal(1)
    ab[1, :] = K.diagonal()
    factor = cholesky_banded(ab)
    return lambda b: cho_solve_banded((factor, False), b)


def _cg_solver(K: sp.csr_matrix) -> Callable[[np.ndarray], np.ndarray]:
    inv_diag = 1.0 / K.diagonal()
    precond = LinearOperator(K.shape, matvec=lambda x: inv_diag * x)
    state = {"x0": None}

    def solve(b: np.ndarray) -> np.ndarray:
        x, info = cg(K, b, x0=state["x0"], rtol=CG_RTOL, atol=0.0, maxiter=10 * K.shape[0], M=precond)
        if info > 0:
            logger.warning(f"cg stopped after {info} iterations without reaching rtol={CG_RTOL:g}")
        state["x0"] = x
        return x

    return solve


def rayleigh(prob: EigenProblem, v: np.ndarray) -> Optional[float]:
    """<Kv, v> / <Mv, v>; None when the mass denominator is below the floor"""
    denominator = float(np.dot(prob.mass * v, v))
    if denominator < DENOMINATOR_FLOOR:
        return None
    return float(np.dot(prob.K @ v, v)) / denominator


def spectral_shift(prob: EigenProblem) -> float:
    """
    Lower bound for lambda0 from the potential alone: min of eta^2 f^2 / h^2 over nodes with h > 0,
    shrunk by SHIFT_MARGIN so K - sigma M stays positive definite.
    """
    if prob.coupling is None:
        return 0.0
    positive = prob.mass > 0
    sigma = float(np.min(prob.coupling[positive] / prob.mass[positive])) * (1 - SHIFT_MARGIN)
    return sigma if np.isfinite(sigma) and sigma > 0 else 0.0


def smallest_eigen(prob: EigenProblem, max_iter: int = MAX_ITER) -> EigenResult:
    """
    Shifted inverse power iteration on (K - sigma M)^-1 M with sigma from spectral_shift.
    M is only applied forward so zero masses are safe. lambda0 = sigma + Rayleigh quotient of
    the shifted form, so the eta^2 offset never enters the convergence ratio.
    """
    if not np.any(prob.mass > 0):
        raise ValueError("Mass form vanishes identically")
    sigma = spectral_shift(prob)
    shifted = (prob.K - sp.diags(sigma * prob.mass)).tocsr() if sigma > 0 else prob.K
    if sigma > 0:
        logger.debug(f"eta={prob.eta:g}: shift sigma={sigma:.12g}")
    solve = _banded_solver(shifted) if prob.m == 1 else _cg_solver(shifted)
    v = np.ones(len(prob.points))
    v /= np.sqrt(prob.cell * np.sum(v ** 2))
    previous = None
    best = None
    for iteration in range(1, max_iter + 1):
        w = solve(prob.mass * v)
        scale = np.sqrt(prob.cell * np.sum(w ** 2))
        if not scale > 0:
            raise NotConverged(iteration, best)
        v = w / scale
        denominator = float(np.dot(prob.mass * v, v))
        if denominator < DENOMINATOR_FLOOR:
            logger.warning(f"Rayleigh denominator below {DENOMINATOR_FLOOR:g} at iteration {iteration}")
            continue
        Sv = shifted @ v
        offset = float(np.dot(Sv, v)) / denominator
        value = sigma + offset
        Kv = Sv + sigma * prob.mass * v
        residual = float(np.linalg.norm(Sv - offset * prob.mass * v))
        best = EigenResult(value, v, iteration, residual, prob)
        if (
            previous is not None
            and abs(value - previous) < RAYLEIGH_RTOL * abs(value)
            and residual <= RESIDUAL_RTOL * np.linalg.norm(Kv)
        ):
            logger.info(f"eta={prob.eta:g}: lambda0={value:.12g} after {iteration} iterations")
            return best
        previous = value
    raise NotConverged(max_iter, best)


def mass_fraction(res: EigenResult, inner_radius_ratio: float = 0.5) -> float:
    """Share of the unit L2 mass of v0 inside |x| <= ratio * a"""
    inside = res.problem.radii <= inner_radius_ratio * res.problem.a * (1 + 1e-12)
    weights = res.v ** 2
    return float(np.sum(weights[inside]) / np.sum(weights))


def _is_elliptic(prob: EigenProblem) -> bool:
    return bool(np.min(prob.f.values(prob.points)) > ELLIPTIC_FLOOR)


def _b_values(f: Profile, etas: Sequence[float], a: float, N: int) -> List[Optional[float]]:
    """b_n = f^-1(1/eta_n) along the radius, for strongly monotone f"""
    grid = Grid(f.m, a, N if f.m == 1 else min(N, 129), ball=True)
    try:
        if not check_strong_monotone(f, grid).holds:
            return [None] * len(etas)
        env = radial_envelopes(f, grid)
    except LabError as e:
        logger.warning(f"b_n not reported: {e.detail}")
        return [None] * len(etas)
    out = []
    for eta in etas:
        target = 1.0 / eta
        if env.f0[0] <= target <= env.f0[-1]:
            out.append(float(np.interp(target, env.f0, env.radii)))
        else:
            out.append(None)
    return out


def hoshiro_log_ratio(eta: float, lambda0: float, mass_half: float, k: int, delta: float) -> float:
    """
    log of ||d_y^k u||^2 over (B/2) x [-pi, pi] x [-delta/2, delta/2] divided by ||u||^2 over
    B x [-pi, pi] x [-delta, delta] for u = exp(i y eta + sqrt(lambda0) t) v0(x):
    eta^(2k) mass_half / (2 cosh(sqrt(lambda0) delta)).
    """
    z = np.sqrt(lambda0) * delta
    return float(2 * k * np.log(eta) + np.log(mass_half) - np.logaddexp(z, -z))


def hoshiro_ratio(
    rows: Sequence[SeriesRow],
    k: int,
    delta: float,
    C1: Optional[float],
    elliptic: bool = False,
    q: Optional[float] = None,
    q_max: float = Q_MAX,
):
    """
    Fill per-row log ratios and return (exponent, contradiction). A contradiction needs the
    (ln eta)^2 law: a fitted growth exponent q <= q_max, a positive exponent and k > sqrt(C1) delta.
    """
    for row in rows:
        row.log_hoshiro_ratio = hoshiro_log_ratio(row.eta, row.lambda0, row.mass_fraction, k, delta)
    if len(rows) < 2:
        return None, False
    log_eta = np.log([row.eta for row in rows])
    exponent = float(np.polyfit(log_eta, [row.log_hoshiro_ratio for row in rows], 1)[0])
    contradiction = (
        not elliptic
        and q is not None
        and q <= q_max
        and C1 is not None
        and exponent > 0
        and k > np.sqrt(max(C1, 0.0)) * delta
    )
    return exponent, bool(contradiction)


def lambda0_scan(
    f: Profile,
    h: Profile,
    a: float,
    etas: Sequence[float],
    N: int = 2001,
    k: int = 3,
    delta: float = 0.1,
    threads: int = THREADS,
    q_max: float = Q_MAX,
) -> SharpnessReport:
    """lambda0(a, eta) over the sweep, the (ln eta)^2 fit, mass concentration and the Hoshiro ratios"""
    etas = [float(eta) for eta in etas]
    if any(b <= a_ for a_, b in zip(etas, etas[1:])):
        raise ConfigError("etas must be strictly increasing", key="etas")
    if etas and etas[0] < np.e:
        raise ConfigError(f"etas must be at least e, got {etas[0]:g}", key="etas")

    def solve(eta: float) -> SeriesRow:
        res = smallest_eigen(assemble(f, h, a, eta, N))
        return SeriesRow(
            eta=eta,
            lambda0=res.lambda0,
            mass_fraction=mass_fraction(res, 0.5),
            iterations=res.iterations,
            residual=res.residual,
        )

    with ThreadPoolExecutor(max_workers=max(threads, 1)) as pool:
        rows = list(pool.map(solve, etas))

    elliptic = _is_elliptic(assemble(f, h, a, 0.0, min(N, 257)))
    C1 = q = None
    if elliptic:
        logger.info("f is bounded below on the grid; growth exponent not fitted")
    elif len(rows) >= 3:
        log_eta = np.log(etas)
        lam = np.array([row.lambda0 for row in rows])
        C1 = float(np.polyfit(log_eta ** 2, lam, 1)[0])
        q = float(np.polyfit(np.log(log_eta), np.log(lam), 1)[0])

    for row, b in zip(rows, _b_values(f, etas, a, N)):
        row.b_n = b
    exponent, contradiction = hoshiro_ratio(rows, k, delta, C1, elliptic, q, q_max)
    if q is not None and q > q_max:
        logger.warning(f"Growth exponent q={q:.3f} exceeds {q_max:g}; the (ln eta)^2 law is not established and no contradiction is claimed")

    decay = None
    try:
        decay = decay_scan(f, h)
    except LabError as e:
        logger.warning(f"Decay diagnostic unavailable: {e.detail}")

    return SharpnessReport(
        rows=rows, C1=C1, q=q, q_max=q_max, elliptic_guard=elliptic, k=k, delta=delta,
        hoshiro_exponent=exponent, contradiction=contradiction, decay=decay,
        conclusion=_conclusion(elliptic, q, q_max, contradiction),
    )


def _conclusion(elliptic: bool, q: Optional[float], q_max: float, contradiction: bool) -> str:
    if elliptic:
        return "elliptic guard: no degeneracy to test"
    if q is None:
        return "inconclusive: too few etas for a growth fit"
    if q > q_max:
        return "inconclusive: lambda0 grows faster than (ln eta)^2"
    return "contradiction" if contradiction else "no contradiction"


def lowerbound_check(f: Profile, taus: Sequence[float], a: float = 1.0, N: int = 2001) -> List[LowerBoundRow]:
    """Empirical C with lambda0(a, tau) >= w(tau)^2 / C for the h = 1 problem"""
    one = Profile(ex.ONE, f.m, f.R, name="1")
    grid = Grid(f.m, a, N if f.m == 1 else min(N, 129), ball=True)
    envelope = radial_envelopes(f, grid)
    rows = []
    for tau in taus:
        res = smallest_eigen(assemble(f, one, a, float(tau), N))
        w = w_of_tau(f, float(tau), grid, envelope)
        rows.append(LowerBoundRow(tau=float(tau), w=w, lambda0=res.lambda0, C=w ** 2 / res.lambda0))
        logger.info(f"tau={tau:g}: w={w:.6g} lambda0={res.lambda0:.6g}")
    return rows
