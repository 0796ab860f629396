import itertools
import logging
import os
from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from dotenv import load_dotenv
from scipy.linalg import eigh, eigvalsh

import expr as ex
from errors import DimensionMismatch, DomainError, NotPSD, RangeMismatch
from profiles import Grid, Profile, holder_seminorm
from schemas import (
    ComparabilityResult,
    DifferentialEstimatesReport,
    EstimateParams,
    EstimateRow,
    HolderRow,
    QuasiconformalResult,
    SandwichRow,
    SosReport,
    SubordinateResult,
    Witness,
)

load_dotenv()

logger = logging.getLogger(__name__)

ESTIMATE_CAP = float(os.getenv("DEGENLAB_ESTIMATE_CAP", "1e3"))
RANGE_FLOOR = 1e-12
RANGE_TOL = 1e-8
PSD_TOL = 1e-10
TREND_SLOPE = -0.05
RESIDUAL_TOL = 1e-10

Sample = Union[Grid, np.ndarray]


@dataclass(frozen=True)
class MatrixFunction:
    """Symmetric matrix of expressions in x1..x_dim; entries stored in full"""

    entries: Tuple[Tuple[ex.Expr, ...], ...]
    dim: int
    name: str = "A"
    at0: Tuple[Tuple[int, int, float], ...] = ()

    def __post_init__(self):
        size = len(self.entries)
        if any(len(row) != size for row in self.entries):
            raise DimensionMismatch(f"Matrix '{self.name}' is not square")
        for k in range(size):
            for j in range(k):
                if self.entries[k][j] != self.entries[j][k]:
                    raise DimensionMismatch(f"Matrix '{self.name}' is not symmetric at ({j + 1}, {k + 1})")

    @classmethod
    def from_upper(
        cls,
        size: int,
        dim: int,
        upper: Mapping[Tuple[int, int], Union[str, ex.Expr]],
        name: str = "A",
        at0: Optional[Mapping[Tuple[int, int], float]] = None,
    ) -> "MatrixFunction":
        """Build from 1-based (k, j) keys with k <= j; missing entries are zero"""
        varset = ex.VarSet.spatial_dims(dim)
        rows = [[ex.ZERO] * size for _ in range(size)]
        for (k, j), value in upper.items():
            if not (1 <= k <= size and 1 <= j <= size):
                raise DimensionMismatch(f"Entry a[{k}][{j}] is outside a {size}x{size} matrix")
            node = ex.parse(value, varset) if isinstance(value, str) else value
            rows[k - 1][j - 1] = node
            rows[j - 1][k - 1] = node
        fixed = tuple(sorted((min(k, j), max(k, j), float(v)) for (k, j), v in (at0 or {}).items()))
        return cls(tuple(tuple(row) for row in rows), dim, name, fixed)

    @property
    def size(self) -> int:
        return len(self.entries)

    @property
    def varset(self) -> ex.VarSet:
        return ex.VarSet.spatial_dims(self.dim)

    def origin_value(self, k: int, j: int) -> Optional[float]:
        lo, hi = min(k, j), max(k, j)
        for a, b, value in self.at0:
            if (a, b) == (lo, hi):
                return value
        return None

    def entry_values(self, k: int, j: int, points: np.ndarray) -> np.ndarray:
        """Values of the 1-based entry (k, j) at the rows of points"""
        node = self.entries[k - 1][j - 1]
        fixed = self.origin_value(k, j)
        origin = np.all(points == 0.0, axis=1) if fixed is not None else np.zeros(len(points), dtype=bool)
        out = np.empty(len(points))
        out[origin] = fixed if fixed is not None else 0.0
        if np.any(~origin):
            env = {name: points[~origin, i] for i, name in enumerate(self.varset.names)}
            out[~origin] = ex.evaluate_array(node, env)
        return out

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=float).reshape(-1, self.dim)
        out = np.empty((len(points), self.size, self.size))
        for k in range(self.size):
            for j in range(k, self.size):
                values = self.entry_values(k + 1, j + 1, points)
                out[:, k, j] = values
                out[:, j, k] = values
        return out

    def derivative(self, axis: int) -> "MatrixFunction":
        """Entrywise d/dx_axis (1-based axis)"""
        var = f"x{axis}"
        rows = tuple(tuple(ex.differentiate(e, var, self.varset) for e in row) for row in self.entries)
        return MatrixFunction(rows, self.dim, f"d{self.name}/d{var}")

    def block(self, start: int) -> "MatrixFunction":
        """Lower-right block from the 1-based index start"""
        rows = tuple(row[start - 1:] for row in self.entries[start - 1:])
        fixed = tuple((k - start + 1, j - start + 1, v) for k, j, v in self.at0 if k >= start and j >= start)
        return MatrixFunction(rows, self.dim, f"{self.name}[{start}:]", fixed)

    def diagonal_part(self) -> "MatrixFunction":
        rows = tuple(tuple(e if k == j else ex.ZERO for j, e in enumerate(row)) for k, row in enumerate(self.entries))
        fixed = tuple((k, j, v) for k, j, v in self.at0 if k == j)
        return MatrixFunction(rows, self.dim, f"diag({self.name})", fixed)


@dataclass(frozen=True)
class GrushinMatrix(MatrixFunction):
    """n x n matrix function of Grushin type m: identity-like block on x~ = (x1..xm), degeneracies from m+1"""

    m: int = 1
    p: int = 2

    def __post_init__(self):
        super().__post_init__()
        if not 1 <= self.m < self.p <= self.size:
            raise DimensionMismatch(f"Need 1 <= m < p <= n, got m={self.m}, p={self.p}, n={self.size}")

    @property
    def n(self) -> int:
        return self.size

    @classmethod
    def build(
        cls,
        n: int,
        m: int,
        p: int,
        upper: Mapping[Tuple[int, int], Union[str, ex.Expr]],
        name: str = "A",
        at0: Optional[Mapping[Tuple[int, int], float]] = None,
    ) -> "GrushinMatrix":
        base = MatrixFunction.from_upper(n, n, upper, name, at0)
        return cls(base.entries, n, name, base.at0, m, p)

    def lower_block(self) -> MatrixFunction:
        """Q_p, the block on indices p..n"""
        return self.block(self.p)


@dataclass(frozen=True)
class SosDecomposition:
    """Vectors X_{k,i} grouped by k = 1..p-1, plus the optional block Q_p on indices p..n"""

    groups: Tuple[Tuple[Tuple[ex.Expr, ...], ...], ...]
    Q: Optional[MatrixFunction] = None

    @property
    def p(self) -> int:
        return len(self.groups) + 1

    @classmethod
    def from_text(cls, groups: Sequence[Sequence[Sequence[str]]], n: int, Q: Optional[MatrixFunction] = None) -> "SosDecomposition":
        varset = ex.VarSet.spatial_dims(n)
        parsed = tuple(tuple(tuple(ex.parse(c, varset) for c in vec) for vec in group) for group in groups)
        return cls(parsed, Q)


def sample_points(dim: int, sample: Sample, exclude_origin_ball: bool = False) -> np.ndarray:
    """Sample nodes padded with zeros to dim coordinates"""
    if isinstance(sample, Grid):
        nodes = sample.nodes
        if exclude_origin_ball:
            nodes = nodes[sample.radii >= sample.spacing * (1 - 1e-9)]
        if nodes.shape[1] > dim:
            raise DimensionMismatch(f"Grid of dimension {nodes.shape[1]} cannot sample a function of {dim} variables")
        return np.hstack([nodes, np.zeros((len(nodes), dim - nodes.shape[1]))])
    points = np.asarray(sample, dtype=float).reshape(-1, dim)
    if exclude_origin_ball:
        points = points[np.linalg.norm(points, axis=1) > 0]
    return points


def _floor(*mats: np.ndarray) -> float:
    return RANGE_FLOOR * max([float(np.trace(M)) for M in mats] + [np.finfo(float).tiny])


def _generalized_bounds(A: np.ndarray, B: np.ndarray, floor: float):
    """
    Extreme generalized eigenvalues of (A, B) on B's range. Returns (lo, hi, leak) where leak is
    a direction in B's null space on which the A-form exceeds floor, or None.
    """
    w, V = eigh(B)
    keep = w > floor
    null = V[:, ~keep]
    if null.shape[1]:
        An = null.T @ A @ null
        wa, va = eigh(An)
        if wa[-1] > floor:
            return None, None, null @ va[:, -1]
    if not np.any(keep):
        return None, None, None
    Vr = V[:, keep]
    Ar = Vr.T @ A @ Vr
    Br = np.diag(w[keep])
    values = eigh((Ar + Ar.T) / 2, Br, eigvals_only=True)
    return float(values[0]), float(values[-1]), None


def _check_psd(name: str, M: np.ndarray, point: np.ndarray) -> None:
    lowest = float(eigvalsh(M)[0])
    if lowest < -PSD_TOL:
        raise NotPSD(name, point.tolist(), lowest)


def comparability(A: MatrixFunction, B: MatrixFunction, sample: Sample) -> ComparabilityResult:
    """Best (beta, alpha) with beta B <= A <= alpha B over the sample"""
    if A.size != B.size:
        raise DimensionMismatch(f"Cannot compare {A.size}x{A.size} with {B.size}x{B.size}")
    points = sample_points(max(A.dim, B.dim), sample)
    As, Bs = A.evaluate(points[:, :A.dim]), B.evaluate(points[:, :B.dim])
    beta, alpha = np.inf, -np.inf
    for x, Ax, Bx in zip(points, As, Bs):
        _check_psd(B.name, Bx, x)
        lo, hi, leak = _generalized_bounds(Ax, Bx, _floor(Ax, Bx))
        if leak is not None:
            value = float(leak @ Ax @ leak)
            logger.info(f"{A.name} is not dominated by {B.name} at x={x.tolist()}")
            return ComparabilityResult(
                comparable=False,
                witness=Witness(point=x.tolist(), direction=leak.tolist(), value=value, note=f"{B.name} degenerates where {A.name} does not"),
            )
        if lo is None:
            continue
        beta, alpha = min(beta, lo), max(alpha, hi)
    if not np.isfinite(beta):
        return ComparabilityResult(comparable=True, beta=None, alpha=None)
    return ComparabilityResult(comparable=beta > 0, beta=beta, alpha=alpha)


def diag_comparability(A: MatrixFunction, sample: Sample) -> ComparabilityResult:
    """A against its own diagonal part"""
    return comparability(A, A.diagonal_part(), sample)


def check_subordinate(A: MatrixFunction, sample: Sample) -> SubordinateResult:
    """Smallest C with (dA/dx_k)^T (dA/dx_k) <= C A at every sample, for every k"""
    points = sample_points(A.dim, sample, exclude_origin_ball=True)
    As = A.evaluate(points)
    per_axis = []
    best, best_witness = 0.0, None
    for axis in range(1, A.dim + 1):
        dA = A.derivative(axis)
        Ss = dA.evaluate(points)
        axis_max = 0.0
        for x, Ax, Sx in zip(points, As, Ss):
            M = Sx.T @ Sx
            lo, hi, leak = _generalized_bounds(M, Ax, _floor(Ax, M))
            if leak is not None:
                raise RangeMismatch(x.tolist(), leak.tolist(), axis)
            if hi is not None and hi > axis_max:
                axis_max = hi
                if hi > best:
                    best, best_witness = hi, Witness(point=x.tolist(), value=hi, note=f"axis {axis}")
        per_axis.append(axis_max)
    return SubordinateResult(C=best, per_axis=per_axis, argmax=best_witness)


def check_quasiconformal(Q: MatrixFunction, sample: Sample, cap: float = ESTIMATE_CAP) -> QuasiconformalResult:
    """Eigenvalues nonnegative and mutually comparable: max over samples of largest/smallest"""
    points = sample_points(Q.dim, sample)
    eig = np.array([eigvalsh(M) for M in Q.evaluate(points)])
    floor = RANGE_FLOOR * max(float(eig[:, -1].max()), np.finfo(float).tiny)
    lowest = int(np.argmin(eig[:, 0]))
    if eig[lowest, 0] < -PSD_TOL:
        return QuasiconformalResult(
            holds=False, ratio=np.inf, cap=cap,
            violation=Witness(point=points[lowest].tolist(), value=float(eig[lowest, 0]), note="negative eigenvalue"),
        )
    active = eig[:, -1] > floor
    if not np.any(active):
        return QuasiconformalResult(holds=True, ratio=1.0, cap=cap)
    with np.errstate(divide="ignore"):
        ratios = np.where(eig[:, 0] > 0, eig[:, -1] / np.where(eig[:, 0] > 0, eig[:, 0], 1.0), np.inf)
    ratios = np.where(active, ratios, 0.0)
    worst = int(np.argmax(ratios))
    ratio = float(ratios[worst])
    if ratio > cap:
        return QuasiconformalResult(
            holds=False, ratio=ratio, cap=cap,
            violation=Witness(point=points[worst].tolist(), value=ratio, note="eigenvalue ratio exceeds cap"),
        )
    return QuasiconformalResult(holds=True, ratio=ratio, cap=cap)


def multi_indices(dims: int, order: int) -> List[Tuple[int, ...]]:
    return [mu for mu in itertools.product(range(order + 1), repeat=dims) if sum(mu) == order]


def _entry_profile(A: MatrixFunction, k: int, j: int, m: int, radius: float) -> Profile:
    """Entry (k, j) restricted to x~ = (x1..xm) with the remaining variables at 0"""
    rest = {f"x{i}": 0.0 for i in range(m + 1, A.dim + 1)}
    node = ex.substitute(A.entries[k - 1][j - 1], rest)
    return Profile(node, m, radius, A.origin_value(k, j), f"{A.name}[{k}][{j}]")


def _estimate_row(entry: str, kind: str, mu, lhs, rhs, exponent, radii, near, cap, points) -> EstimateRow:
    lhs = np.abs(lhs)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(rhs > 0, lhs / np.where(rhs > 0, rhs, 1.0), np.where(lhs > 0, np.inf, 0.0))
    worst = int(np.argmax(ratio))
    constant = float(ratio[worst])
    trend = None
    usable = near & np.isfinite(ratio) & (ratio > 0)
    if np.count_nonzero(usable) >= 3:
        trend = float(np.polyfit(np.log(radii[usable]), np.log(ratio[usable]), 1)[0])
    flagged = constant > cap or (trend is not None and trend < TREND_SLOPE)
    return EstimateRow(
        entry=entry, kind=kind, mu=list(mu), exponent=exponent, constant=constant,
        trend_slope=trend, flagged=flagged, witness=points[worst].tolist() if constant > 0 else None,
    )


def check_differential_estimates(
    A: GrushinMatrix,
    params: EstimateParams,
    sample: Grid,
    cap: float = ESTIMATE_CAP,
) -> DifferentialEstimatesReport:
    """
    Empirical constants for |D^mu a_kk| <= C a_kk^([1 - |mu| eps]_+ + delta') and the two
    off-diagonal regimes, derivatives in x~ taken symbolically; Holder rows at |mu| = 4.
    """
    eps, delta, delta2, dprime = params.eps, params.delta, params.delta2, params.delta_prime
    dims = sample.m
    points = sample_points(A.dim, sample, exclude_origin_ball=True)
    radii = np.linalg.norm(points[:, :dims], axis=1)
    near = radii <= 0.1 * sample.a
    diag = np.array([A.entry_values(s, s, points) for s in range(1, A.n + 1)])
    radius = sample.a * 1.1
    window = 0.1 * sample.a
    origin = np.zeros(dims)
    rows = []

    def seminorm_rows(k: int, j: int) -> None:
        prof = _entry_profile(A, k, j, dims, radius)
        for mu in multi_indices(dims, 4):
            try:
                value = holder_seminorm(prof, mu, 2 * delta, origin, window)
            except DomainError as e:
                logger.warning(f"Seminorm of a[{k}][{j}] at the origin not evaluable: {e.detail}")
                value = np.nan
            rows.append(EstimateRow(
                entry=f"a[{k}][{j}]", kind="seminorm", mu=list(mu), exponent=2 * delta,
                constant=value, flagged=bool(value > cap), witness=origin.tolist(),
            ))

    for k in range(1, A.p):
        node = A.entries[k - 1][k - 1]
        for order in range(1, 5):
            exponent = max(1 - order * eps, 0.0) + dprime
            rhs = np.power(diag[k - 1], exponent)
            for mu in multi_indices(dims, order):
                d = ex.derivative(node, {f"x{i + 1}": c for i, c in enumerate(mu)})
                lhs = ex.evaluate_array(d, {f"x{i + 1}": points[:, i] for i in range(A.dim)})
                rows.append(_estimate_row(f"a[{k}][{k}]", "diagonal", mu, lhs, rhs, exponent, radii, near, cap, points))
        seminorm_rows(k, k)

    for k in range(1, A.p):
        for j in range(k + 1, A.n + 1):
            node = A.entries[k - 1][j - 1]
            if node == ex.ZERO:
                continue
            inner = j <= A.p - 1
            kind = "off-diagonal-inner" if inner else "off-diagonal-outer"
            floor_entry = diag[: (j if inner else k)].min(axis=0)
            for order in range(0, 5):
                exponent = max(0.5 + (2 - order) * eps, 0.0) + delta2
                rhs = np.power(floor_entry, exponent)
                for mu in multi_indices(dims, order):
                    d = ex.derivative(node, {f"x{i + 1}": c for i, c in enumerate(mu)})
                    lhs = ex.evaluate_array(d, {f"x{i + 1}": points[:, i] for i in range(A.dim)})
                    rows.append(_estimate_row(f"a[{k}][{j}]", kind, mu, lhs, rhs, exponent, radii, near, cap, points))
            seminorm_rows(k, j)

    flagged = any(row.flagged for row in rows)
    if flagged:
        logger.info(f"Differential estimates flagged for {A.name}: {sorted({r.entry for r in rows if r.flagged})}")
    return DifferentialEstimatesReport(
        eps=eps, delta=delta, delta2=delta2, delta_prime=dprime, cap=cap, rows=rows, flagged=flagged,
    )


def _sos_parts(A: MatrixFunction, cand: SosDecomposition, points: np.ndarray):
    n = A.size
    env = {f"x{i + 1}": points[:, i] for i in range(A.dim)}
    Z = []
    for group in cand.groups:
        Zk = np.zeros((len(points), n, n))
        for vec in group:
            if len(vec) != n:
                raise DimensionMismatch(f"Vector of length {len(vec)} in a decomposition of an {n}x{n} matrix")
            X = np.stack([ex.evaluate_array(c, env) for c in vec], axis=1)
            Zk += X[:, :, None] * X[:, None, :]
        Z.append(Zk)
    Ap = np.zeros((len(points), n, n))
    if cand.Q is not None:
        if cand.Q.size != n - cand.p + 1:
            raise DimensionMismatch(f"Q_p must be {n - cand.p + 1}x{n - cand.p + 1} for p={cand.p}, got {cand.Q.size}")
        Ap[:, cand.p - 1:, cand.p - 1:] = cand.Q.evaluate(points[:, :cand.Q.dim])
    return Z, Ap


def sos_residual(A: MatrixFunction, cand: SosDecomposition, sample: Sample) -> float:
    points = sample_points(A.dim, sample)
    Z, Ap = _sos_parts(A, cand, points)
    return float(np.max(np.abs(A.evaluate(points) - sum(Z) - Ap)))


def verify_sos(A: MatrixFunction, cand: SosDecomposition, sample: Grid, delta: float = 0.05, cap: float = ESTIMATE_CAP) -> SosReport:
    """Residual, subunit sandwich per k, Q_p ~ a_pp I and C^{2,delta} of every X component"""
    n = A.size
    if cand.p > n + 1:
        raise DimensionMismatch(f"{len(cand.groups)} vector groups exceed n={n}")
    points = sample_points(A.dim, sample, exclude_origin_ball=True)
    Z, Ap = _sos_parts(A, cand, points)
    values = A.evaluate(points)
    residual = float(np.max(np.abs(values - sum(Z) - Ap)))
    scale = 1 + float(np.max(np.abs(values)))
    diag = np.stack([values[:, s, s] for s in range(n)], axis=1)

    sandwich = []
    for k, Zk in enumerate(Z, start=1):
        c_best, C_best = np.inf, 0.0
        witness = None
        for x, Zx, d in zip(points, Zk, diag):
            middle = Zx.copy()
            middle[k:, k:] += np.diag(d[k:])
            upper = np.diag(np.where(np.arange(n) >= k - 1, d, 0.0))
            floor = _floor(middle, upper)
            if d[k - 1] > floor:
                e = np.zeros(n)
                e[k - 1] = 1.0
                solved = np.linalg.pinv(middle, rcond=RANGE_FLOOR, hermitian=True) @ e
                outside = float(np.linalg.norm(middle @ solved - e))
                if outside > RANGE_TOL:
                    # no c > 0 with c a_kk e_k e_k^T <= middle at this point
                    c_best = 0.0
                    if witness is None:
                        witness = Witness(point=x.tolist(), direction=e.tolist(), value=outside, note=f"e_{k} is outside the range of Z_{k} + diag(a_jj, j > {k})")
                else:
                    weight = float(e @ solved)
                    c_best = min(c_best, 1.0 / (d[k - 1] * weight) if weight > 0 else 0.0)
            _, hi, leak = _generalized_bounds(middle, upper, floor)
            C_best = max(C_best, np.inf if leak is not None else (hi or 0.0))
        c_best = 0.0 if not np.isfinite(c_best) else c_best
        sandwich.append(SandwichRow(k=k, c=c_best, C=C_best, holds=bool(c_best > RANGE_FLOOR and np.isfinite(C_best)), witness=witness))

    q_result = None
    if cand.Q is not None and cand.Q.size > 0:
        app = A.entries[cand.p - 1][cand.p - 1]
        scalar = MatrixFunction.from_upper(cand.Q.size, cand.Q.dim, {(i, i): app for i in range(1, cand.Q.size + 1)}, f"a_{cand.p}{cand.p} I")
        q_result = comparability(cand.Q, scalar, sample_points(A.dim, sample, exclude_origin_ball=True)[:, :cand.Q.dim])

    holder = []
    dims = sample.m
    origin = np.zeros(dims)
    rest = {f"x{i}": 0.0 for i in range(dims + 1, A.dim + 1)}
    for k, group in enumerate(cand.groups, start=1):
        for i, vec in enumerate(group, start=1):
            for comp, node in enumerate(vec, start=1):
                prof = Profile(ex.substitute(node, rest), dims, sample.a * 1.1, None, f"X[{k}][{i}][{comp}]")
                value = max(holder_seminorm(prof, mu, delta, origin, 0.1 * sample.a) for mu in multi_indices(dims, 2))
                holder.append(HolderRow(k=k, i=i, component=comp, seminorm=value, flagged=bool(value > cap)))

    residual_ok = residual <= RESIDUAL_TOL * scale
    passes = (
        residual_ok
        and all(row.holds for row in sandwich)
        and (q_result is None or q_result.comparable)
        and not any(row.flagged for row in holder)
    )
    return SosReport(residual=residual, residual_ok=residual_ok, sandwich=sandwich, q_comparability=q_result, holder=holder, passes=passes)
