import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

import expr as ex
from errors import NotElliptic, NotHomogeneous, PsiNegative
from matrixcheck import MatrixFunction, multi_indices
from schemas import OrderEstimate

logger = logging.getLogger(__name__)

LATTICE_RADII = 24
LATTICE_DIRECTIONS = 8
LATTICE_SPATIAL = 16
LOG_FLAG_RATIO = 0.1
ORDER_SLACK = 0.05
ELLIPTIC_FLOOR = 1e-12
HOMOGENEITY_TOL = 1e-9
WEIGHT_FREEZE = math.e


@dataclass(frozen=True)
class SymbolExpr:
    """Real symbol a(x, xi) on R^n x R^n with advisory order metadata"""

    expr: ex.Expr
    n: int = 1
    order: Optional[float] = None
    rho: float = 1.0
    eta: float = 0.0
    log_power: Optional[int] = None
    name: str = "a"
    note: str = ""
    log_expr: Optional[ex.Expr] = field(default=None, compare=False)

    @classmethod
    def from_text(cls, text: str, n: int = 1, order: Optional[float] = None, name: str = "a") -> "SymbolExpr":
        return cls(ex.parse(text, ex.VarSet.phase_space(n)), n, order, name=name)

    @property
    def varset(self) -> ex.VarSet:
        return ex.VarSet.phase_space(self.n)

    def __str__(self) -> str:
        return ex.to_text(self.expr)


@dataclass(frozen=True)
class ComplexSymbol:
    """re + i im, both real expressions"""

    re: ex.Expr
    im: ex.Expr = ex.ZERO

    def __add__(self, other: "ComplexSymbol") -> "ComplexSymbol":
        return ComplexSymbol(ex.add(self.re, other.re), ex.add(self.im, other.im))

    def __sub__(self, other: "ComplexSymbol") -> "ComplexSymbol":
        return ComplexSymbol(ex.sub(self.re, other.re), ex.sub(self.im, other.im))

    def scale(self, factor: ex.Expr) -> "ComplexSymbol":
        return ComplexSymbol(ex.mul(factor, self.re), ex.mul(factor, self.im))

    def times_i(self, power: int) -> "ComplexSymbol":
        """Multiply by i**power (power may be negative)"""
        power %= 4
        if power == 0:
            return self
        if power == 1:
            return ComplexSymbol(ex.neg(self.im), self.re)
        if power == 2:
            return ComplexSymbol(ex.neg(self.re), ex.neg(self.im))
        return ComplexSymbol(self.im, ex.neg(self.re))

    def derivative(self, orders: Dict[str, int]) -> "ComplexSymbol":
        return ComplexSymbol(ex.derivative(self.re, orders), ex.derivative(self.im, orders))

    @property
    def is_zero(self) -> bool:
        return self.re == ex.ZERO and self.im == ex.ZERO

    def evaluate(self, env) -> np.ndarray:
        return ex.evaluate_array(self.re, env) + 1j * ex.evaluate_array(self.im, env)

    def text(self) -> Dict[str, str]:
        return {"re": ex.to_text(self.re), "im": ex.to_text(self.im)}


@dataclass(frozen=True)
class SymbolLattice:
    """Log-spaced |xi| in [10, 1e4] x fixed unit directions x spatial samples in [-1, 1]^n"""

    n: int = 1
    xi_min: float = 10.0
    xi_max: float = 1e4

    @cached_property
    def radii(self) -> np.ndarray:
        return np.logspace(np.log10(self.xi_min), np.log10(self.xi_max), LATTICE_RADII)

    @cached_property
    def directions(self) -> np.ndarray:
        if self.n == 1:
            return np.array([[-1.0], [1.0]])
        if self.n == 2:
            theta = 2 * np.pi * np.arange(LATTICE_DIRECTIONS) / LATTICE_DIRECTIONS + np.pi / LATTICE_DIRECTIONS
            return np.stack([np.cos(theta), np.sin(theta)], axis=1)
        return np.vstack([np.eye(self.n), -np.eye(self.n)])

    @cached_property
    def spatial(self) -> np.ndarray:
        if self.n == 1:
            return np.linspace(-1.0, 1.0, LATTICE_SPATIAL)[:, None]
        return np.random.default_rng(0).uniform(-1.0, 1.0, (LATTICE_SPATIAL, self.n))

    @property
    def shape(self) -> Tuple[int, int, int]:
        return len(self.radii), len(self.directions), len(self.spatial)

    @cached_property
    def points(self) -> Tuple[np.ndarray, np.ndarray]:
        """(x, xi) arrays of shape (K*D*S, n), radius-major"""
        K, D, S = self.shape
        xi = self.radii[:, None, None, None] * self.directions[None, :, None, :]
        xi = np.broadcast_to(xi, (K, D, S, self.n)).reshape(-1, self.n)
        x = np.broadcast_to(self.spatial[None, None, :, :], (K, D, S, self.n)).reshape(-1, self.n)
        return x, xi

    def env(self) -> Dict[str, np.ndarray]:
        x, xi = self.points
        out = {f"x{i + 1}": x[:, i] for i in range(self.n)}
        out.update({f"xi{i + 1}": xi[:, i] for i in range(self.n)})
        return out

    @cached_property
    def bracket(self) -> np.ndarray:
        """<xi> per radius"""
        return np.sqrt(1.0 + self.radii ** 2)

    def describe(self) -> Dict[str, object]:
        K, D, S = self.shape
        return {"xi_min": self.xi_min, "xi_max": self.xi_max, "radii": K, "directions": D, "spatial": S}


def _per_radius_max(values: np.ndarray, lattice: SymbolLattice) -> np.ndarray:
    return np.abs(values).reshape(len(lattice.radii), -1).max(axis=1)


def _fit(log_bracket: np.ndarray, y: np.ndarray) -> Tuple[float, float, float]:
    coeffs, residuals, *_ = np.polyfit(log_bracket, y, 1, full=True)
    rss = float(residuals[0]) if len(residuals) else 0.0
    return float(coeffs[0]), float(coeffs[1]), rss


def decay_slope(values: np.ndarray, lattice: SymbolLattice) -> Tuple[float, float]:
    """Log-log slope of max |values| per radius against <xi>; (-inf, -inf) when identically zero"""
    peak = _per_radius_max(values, lattice)
    keep = peak > 0
    if np.count_nonzero(keep) < 2:
        return -math.inf, -math.inf
    slope, intercept, _ = _fit(np.log(lattice.bracket[keep]), np.log(peak[keep]))
    return slope, intercept


def estimate_order(
    a: SymbolExpr,
    alpha: Sequence[int] = (),
    beta: Sequence[int] = (),
    lattice: Optional[SymbolLattice] = None,
) -> OrderEstimate:
    """
    Least-squares slope of log sup|d_x^alpha d_xi^beta a| against log<xi>, derivatives symbolic.
    A log-divided fit is compared with the pure power fit; a much better log fit raises log_flag.
    """
    alpha = tuple(alpha) or (0,) * a.n
    beta = tuple(beta) or (0,) * a.n
    if sum(alpha) + sum(beta) > 3:
        raise ValueError(f"|alpha| + |beta| must be at most 3, got {sum(alpha) + sum(beta)}")
    lattice = lattice or SymbolLattice(a.n)
    orders = {f"x{i + 1}": k for i, k in enumerate(alpha) if k}
    orders.update({f"xi{i + 1}": k for i, k in enumerate(beta) if k})
    d = ex.derivative(a.expr, orders, a.varset)
    peak = _per_radius_max(ex.evaluate_array(d, lattice.env()), lattice)
    keep = peak > 0
    nominal = None
    if a.order is not None:
        nominal = a.order - a.rho * sum(beta) + a.eta * sum(alpha)
    if np.count_nonzero(keep) < 3:
        return OrderEstimate(slope=-math.inf, intercept=-math.inf, log_flag=False, nominal=nominal, consistent=True if nominal is not None else None)

    L = np.log(lattice.bracket[keep])
    y = np.log(peak[keep])
    slope, _, rss_pure = _fit(L, y)
    log_slope, _, rss_log = _fit(L, y - np.log(L))
    log_flag = rss_log < LOG_FLAG_RATIO * rss_pure
    if log_flag:
        slope = log_slope
        intercept = float(np.max(y - np.log(L) - slope * L))
    else:
        intercept = float(np.max(y - slope * L))
    consistent = None if nominal is None else bool(slope <= nominal + ORDER_SLACK)
    return OrderEstimate(slope=slope, intercept=intercept, log_flag=log_flag, nominal=nominal, consistent=consistent)


def _xi(i: int) -> str:
    return f"xi{i + 1}"


def _x(i: int) -> str:
    return f"x{i + 1}"


def _check_elliptic(a: SymbolExpr, lattice: SymbolLattice) -> None:
    order = a.order if a.order is not None else estimate_order(a, lattice=lattice).slope
    _, xi = lattice.points
    values = np.abs(ex.evaluate_array(a.expr, lattice.env()))
    ratio = values / np.linalg.norm(xi, axis=1) ** order
    worst = int(np.argmin(ratio))
    if not ratio[worst] > ELLIPTIC_FLOOR:
        x, _ = lattice.points
        raise NotElliptic({"x": x[worst].tolist(), "xi": xi[worst].tolist()}, float(ratio[worst]))


@dataclass(frozen=True)
class ParametrixChain:
    symbol: SymbolExpr
    terms: Tuple[ComplexSymbol, ...]

    @property
    def order(self) -> int:
        return len(self.terms) - 1

    @cached_property
    def total(self) -> ComplexSymbol:
        acc = ComplexSymbol(ex.ZERO)
        for b in self.terms:
            acc = acc + b
        return acc


def _factorial(alpha: Sequence[int]) -> float:
    return float(np.prod([math.factorial(k) for k in alpha]))


def parametrix(a: SymbolExpr, M: int = 2, lattice: Optional[SymbolLattice] = None) -> ParametrixChain:
    """b0 = 1/a, b_j = -b0 sum_{1<=|alpha|<=j} (1/alpha!) d_xi^alpha a D_x^alpha b_{j-|alpha|}, D_x = (1/i) d_x"""
    if not 0 <= M <= 2:
        raise ValueError(f"Parametrix order must be 0, 1 or 2, got {M}")
    lattice = lattice or SymbolLattice(a.n)
    _check_elliptic(a, lattice)
    b0 = ex.div(ex.ONE, a.expr)
    terms = [ComplexSymbol(b0)]
    for j in range(1, M + 1):
        acc = ComplexSymbol(ex.ZERO)
        for ell in range(1, j + 1):
            for alpha in multi_indices(a.n, ell):
                da = ex.derivative(a.expr, {_xi(i): k for i, k in enumerate(alpha) if k})
                db = terms[j - ell].derivative({_x(i): k for i, k in enumerate(alpha) if k})
                if da == ex.ZERO or db.is_zero:
                    continue
                acc = acc + db.scale(ex.div(da, ex.const(_factorial(alpha)))).times_i(-ell)
        terms.append(acc.scale(ex.neg(b0)))
        logger.info(f"parametrix term b{j} built for {a.name}")
    return ParametrixChain(a, tuple(terms))


def displayed_b1(a: SymbolExpr) -> ComplexSymbol:
    """-(1/i) b0 grad_xi a . grad_x b0, written out directly"""
    b0 = ex.div(ex.ONE, a.expr)
    dot = ex.total(
        ex.mul(ex.differentiate(a.expr, _xi(i)), ex.differentiate(b0, _x(i)))
        for i in range(a.n)
    )
    # -(1/i) = i
    return ComplexSymbol(ex.ZERO, ex.mul(b0, dot))


def b1_consistency(a: SymbolExpr, chain: ParametrixChain, lattice: Optional[SymbolLattice] = None) -> float:
    if chain.order < 1:
        return 0.0
    env = (lattice or SymbolLattice(a.n)).env()
    return float(np.max(np.abs(chain.terms[1].evaluate(env) - displayed_b1(a).evaluate(env))))


def residual_symbol(a: SymbolExpr, chain: ParametrixChain) -> ComplexSymbol:
    """
    sum_{|alpha| <= M+1} (1/(i^|alpha| alpha!)) d_xi^alpha a d_x^alpha (b0 + ... + bM) - 1,
    with a b0 - 1 = 0 taken structurally.
    """
    M = chain.order
    rest = ComplexSymbol(ex.ZERO)
    for b in chain.terms[1:]:
        rest = rest + b
    acc = ComplexSymbol(ex.ZERO) if rest.is_zero else rest.scale(a.expr)
    for ell in range(1, M + 2):
        for alpha in multi_indices(a.n, ell):
            da = ex.derivative(a.expr, {_xi(i): k for i, k in enumerate(alpha) if k})
            if da == ex.ZERO:
                continue
            db = chain.total.derivative({_x(i): k for i, k in enumerate(alpha) if k})
            if db.is_zero:
                continue
            acc = acc + db.scale(ex.div(da, ex.const(_factorial(alpha)))).times_i(-ell)
    return acc


def residual_order(a: SymbolExpr, chain: ParametrixChain, lattice: Optional[SymbolLattice] = None) -> float:
    """Decay slope of |r_M| in <xi>; -inf when r_M vanishes identically"""
    lattice = lattice or SymbolLattice(a.n)
    r = residual_symbol(a, chain)
    if r.is_zero:
        return -math.inf
    slope, _ = decay_slope(r.evaluate(lattice.env()), lattice)
    return slope


def poisson_bracket(f: SymbolExpr, g: SymbolExpr) -> SymbolExpr:
    """{f, g} = sum_i (d_xi_i f d_x_i g - d_x_i f d_xi_i g)"""
    if f.n != g.n:
        raise ValueError(f"Symbols live on different phase spaces (n={f.n} and n={g.n})")
    terms = [
        ex.sub(
            ex.mul(ex.differentiate(f.expr, _xi(i)), ex.differentiate(g.expr, _x(i))),
            ex.mul(ex.differentiate(f.expr, _x(i)), ex.differentiate(g.expr, _xi(i))),
        )
        for i in range(f.n)
    ]
    order = f.order + g.order - 1 if f.order is not None and g.order is not None else None
    return SymbolExpr(ex.total(terms), f.n, order, name=f"{{{f.name}, {g.name}}}")


def _xi_norm(n: int) -> ex.Expr:
    return ex.Norm(tuple(_xi(i) for i in range(n)))


def weight_symbol(gamma: float, N0: float, psi: SymbolExpr, lattice: Optional[SymbolLattice] = None) -> SymbolExpr:
    """
    lambda(x, xi) = |xi|^gamma exp(-N0 log|xi| psi(x, xi)) for |xi| >= e; below e, |xi| is frozen at e.
    psi must be nonnegative and homogeneous of degree 0 in xi.
    """
    lattice = lattice or SymbolLattice(psi.n)
    env = lattice.env()
    values = ex.evaluate_array(psi.expr, env)
    worst = int(np.argmin(values))
    if values[worst] < 0:
        x, xi = lattice.points
        raise PsiNegative({"x": x[worst].tolist(), "xi": xi[worst].tolist()}, float(values[worst]))
    for t in (0.5, 7.0):
        scaled = dict(env)
        scaled.update({_xi(i): t * env[_xi(i)] for i in range(psi.n)})
        drift = np.abs(ex.evaluate_array(psi.expr, scaled) - values)
        bad = int(np.argmax(drift))
        if drift[bad] > HOMOGENEITY_TOL * (1 + abs(values[bad])):
            x, xi = lattice.points
            raise NotHomogeneous({"x": x[bad].tolist(), "xi": xi[bad].tolist()}, float(drift[bad]))

    log_xi = ex.func("log", ex.nary("max", (_xi_norm(psi.n), ex.const(WEIGHT_FREEZE))))
    log_lam = ex.mul(ex.sub(ex.const(gamma), ex.mul(ex.const(N0), psi.expr)), log_xi)
    return SymbolExpr(
        ex.func("exp", log_lam),
        psi.n,
        order=gamma,
        name="lambda",
        note=f"|xi| frozen at e={WEIGHT_FREEZE:.6f} below e",
        log_expr=log_lam,
    )


def log_weight_bracket(weight: SymbolExpr, sigma: SymbolExpr) -> SymbolExpr:
    """{log lambda, sigma}, using the structural log of a weight symbol"""
    log_expr = weight.log_expr if weight.log_expr is not None else ex.func("log", weight.expr)
    return poisson_bracket(SymbolExpr(log_expr, weight.n, 0.0, name=f"log {weight.name}"), sigma)


def psi_template(rho: float, m: int, n: Optional[int] = None) -> SymbolExpr:
    """1 on |x~| <= 2 rho, 0 on |x~| >= 3 rho, quintic smoothstep in between; x~ = (x1..xm)"""
    if rho <= 0:
        raise ValueError(f"rho must be positive, got {rho}")
    n = n or m
    r = ex.Norm(tuple(_x(i) for i in range(m)))
    t = ex.nary("min", (ex.func("pos", ex.div(ex.sub(r, ex.const(2 * rho)), ex.const(rho))), ex.ONE))
    # 1 - t^3 (10 - 15 t + 6 t^2)
    smooth = ex.mul(ex.power(t, 3), ex.add(ex.sub(ex.const(10.0), ex.mul(ex.const(15.0), t)), ex.mul(ex.const(6.0), ex.power(t, 2))))
    return SymbolExpr(ex.sub(ex.ONE, smooth), n, 0.0, name=f"psi[{rho:g}]")


@dataclass(frozen=True)
class CorrectionSymbol:
    """Matrix symbol R_ij = -i s sum_k d_k q_ij xi_k xi_i / <xi>^2 on the phase space of dimension n"""

    entries: Tuple[Tuple[ComplexSymbol, ...], ...]
    slopes: Tuple[MatrixFunction, ...]
    n: int

    def evaluate(self, env) -> np.ndarray:
        size = len(self.entries)
        first = self.entries[0][0].evaluate(env)
        out = np.empty(first.shape + (size, size), dtype=complex)
        for i, row in enumerate(self.entries):
            for j, entry in enumerate(row):
                out[..., i, j] = entry.evaluate(env)
        return out

    @property
    def is_zero(self) -> bool:
        return all(entry.is_zero for row in self.entries for entry in row)


def _bracket_sq(n: int) -> ex.Expr:
    return ex.total([ex.ONE] + [ex.power(ex.Var(_xi(i)), 2) for i in range(n)])


def theta(k: int, i: int, n: int) -> ex.Expr:
    """Order-zero multiplier xi_k xi_i / <xi>^2 (0-based k, i)"""
    return ex.div(ex.mul(ex.Var(_xi(k)), ex.Var(_xi(i))), _bracket_sq(n))


def multiplier_bound(n: int, lattice: Optional[SymbolLattice] = None) -> float:
    """max over k, i and the lattice of |xi_k xi_i| / <xi>^2"""
    env = (lattice or SymbolLattice(n)).env()
    return max(float(np.max(np.abs(ex.evaluate_array(theta(k, i, n), env)))) for k in range(n) for i in range(n))


def r1_symbol(Q: MatrixFunction, s: float = 1.0) -> CorrectionSymbol:
    """Correction from conjugating Q by Lambda_s, assembled from S_k = d_k Q and theta_k"""
    n = max(Q.dim, Q.size)
    slopes = tuple(Q.derivative(k + 1) for k in range(Q.dim))
    rows = []
    for i in range(Q.size):
        row = []
        for j in range(Q.size):
            real = ex.total(ex.mul(S.entries[i][j], theta(k, i, n)) for k, S in enumerate(slopes))
            # -i s real
            row.append(ComplexSymbol(ex.ZERO, ex.mul(ex.const(-s), real)))
        rows.append(tuple(row))
    return CorrectionSymbol(tuple(rows), slopes, n)
