import itertools
import logging
from dataclasses import dataclass
from functools import cached_property
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy.integrate import trapezoid

import expr as ex
from errors import DomainError, EmptyShell, GridError, NotElliptic, StepTooLarge, UnknownVariable
from schemas import EllipticalResult, MonotoneResult

logger = logging.getLogger(__name__)

MIN_NODES = 16
HOLDER_LEVELS = 7
HOLDER_POINTS = 9

# central stencils (offset, weight) per derivative order, second order accurate
STENCILS = {
    0: ((0, 1.0),),
    1: ((-1, -0.5), (1, 0.5)),
    2: ((-1, 1.0), (0, -2.0), (1, 1.0)),
    3: ((-2, -0.5), (-1, 1.0), (1, -1.0), (2, 0.5)),
    4: ((-2, 1.0), (-1, -4.0), (0, 6.0), (1, -4.0), (2, 1.0)),
}


@dataclass(frozen=True)
class Profile:
    """A scalar field on R^m given by an expression in x1..xm, continued by at0 at the origin"""

    expr: ex.Expr
    m: int
    R: float = 1.0
    at0: Optional[float] = None
    name: str = "profile"
    elliptical: bool = False

    def __post_init__(self):
        allowed = set(self.varset.names)
        for name in ex.variables(self.expr):
            if name not in allowed:
                raise UnknownVariable(name)
        if self.R <= 0:
            raise GridError(f"Profile '{self.name}' needs a positive support radius, got {self.R}")
        if self.elliptical:
            result = check_elliptical(self, Grid(self.m, self.R, 257 if self.m == 1 else 65, ball=True))
            if not result.holds:
                raise NotElliptic(
                    result.point,
                    result.value,
                    f"Profile '{self.name}' is declared elliptical but has value {result.value:g} at {result.point}",
                )

    @classmethod
    def from_text(cls, text: str, m: int, R: float = 1.0, at0: Optional[float] = None, name: str = "profile", elliptical: bool = False) -> "Profile":
        return cls(ex.parse(text, ex.VarSet.spatial_dims(m)), m, R, at0, name, elliptical)

    @property
    def varset(self) -> ex.VarSet:
        return ex.VarSet.spatial_dims(self.m)

    def env(self, points: np.ndarray) -> dict:
        points = np.asarray(points, dtype=float).reshape(-1, self.m)
        return {name: points[:, i] for i, name in enumerate(self.varset.names)}

    def _split_origin(self, points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        points = np.asarray(points, dtype=float).reshape(-1, self.m)
        origin = np.all(points == 0.0, axis=1) if self.at0 is not None else np.zeros(len(points), dtype=bool)
        return points, origin

    def values(self, points: np.ndarray) -> np.ndarray:
        points, origin = self._split_origin(points)
        out = np.empty(len(points))
        if np.any(origin):
            out[origin] = self.at0
        if np.any(~origin):
            out[~origin] = ex.evaluate_array(self.expr, self.env(points[~origin]))
        return out

    def log_values(self, points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """log of the profile, computed structurally; second array flags clamped entries"""
        points, origin = self._split_origin(points)
        logs = np.empty(len(points))
        clamped = np.zeros(len(points), dtype=bool)
        if np.any(origin):
            if self.at0 > 0:
                logs[origin] = np.log(self.at0)
            else:
                logs[origin] = ex.LOG_TINY
                clamped[origin] = True
        if np.any(~origin):
            logs[~origin], clamped[~origin] = ex.log_evaluate(self.expr, self.env(points[~origin]))
        return logs, clamped

    def __call__(self, x: Sequence[float]) -> float:
        return float(self.values(np.atleast_2d(np.asarray(x, dtype=float)))[0])

    def sphere_points(self, rho: float, angles: int = 64) -> np.ndarray:
        if self.m == 1:
            return np.array([[-rho], [rho]])
        theta = 2 * np.pi * np.arange(angles) / angles
        circle = np.stack([np.cos(theta), np.sin(theta)], axis=1)
        if self.m == 2:
            return rho * circle
        # higher m: axis directions plus the first-plane circle
        axes = np.vstack([np.eye(self.m), -np.eye(self.m)])
        plane = np.zeros((angles, self.m))
        plane[:, :2] = circle
        return rho * np.vstack([axes, plane])

    def sphere_max(self, rho: float) -> float:
        if rho == 0:
            return float(self.values(np.zeros((1, self.m)))[0])
        return float(np.max(self.values(self.sphere_points(rho))))


def origin_value(p: Profile) -> Optional[float]:
    """Value at x = 0 from at0 or direct evaluation; None where undefined"""
    if p.at0 is not None:
        return float(p.at0)
    try:
        return float(p.values(np.zeros((1, p.m)))[0])
    except DomainError:
        return None


def combine(op: str, profiles: Sequence[Profile], name: Optional[str] = None) -> Profile:
    """Pointwise sum, product, max or min of profiles on the same R^m"""
    first = profiles[0]
    exprs = [p.expr for p in profiles]
    if op == "sum":
        combined = ex.total(exprs)
    elif op == "product":
        combined = ex.product(exprs)
    elif op in ("max", "min"):
        combined = ex.nary(op, exprs)
    else:
        raise ValueError(f"Unknown combination '{op}'")
    origin = [origin_value(p) for p in profiles]
    at0 = None
    if all(value is not None for value in origin):
        at0 = float({"sum": np.sum, "product": np.prod, "max": np.max, "min": np.min}[op](origin))
    return Profile(combined, first.m, min(p.R for p in profiles), at0, name or f"{op}({', '.join(p.name for p in profiles)})")


def sqrt_profile(p: Profile) -> Profile:
    at0 = float(np.sqrt(p.at0)) if p.at0 is not None else None
    return Profile(ex.func("sqrt", p.expr), p.m, p.R, at0, f"sqrt({p.name})", p.elliptical)


def scaled(p: Profile, c: float) -> Profile:
    at0 = c * p.at0 if p.at0 is not None else None
    return Profile(ex.mul(ex.const(c), p.expr), p.m, p.R, at0, f"{c!r}*{p.name}", p.elliptical)


@dataclass(frozen=True)
class Grid:
    """Uniform tensor grid on [-a, a]^m, optionally restricted to the ball B(0, a)"""

    m: int
    a: float
    N: int
    ball: bool = False

    def __post_init__(self):
        if self.m not in (1, 2):
            raise GridError(f"Grids support m in {{1, 2}}, got {self.m}")
        if self.N < MIN_NODES:
            raise GridError(f"Grid needs at least {MIN_NODES} nodes per axis, got {self.N}")
        if self.a <= 0:
            raise GridError(f"Grid radius must be positive, got {self.a}")

    @property
    def spacing(self) -> float:
        return 2 * self.a / (self.N - 1)

    @cached_property
    def axis(self) -> np.ndarray:
        axis = np.linspace(-self.a, self.a, self.N)
        # exact antisymmetry keeps |x| identical for mirrored nodes
        return (axis - axis[::-1]) / 2

    @cached_property
    def full_nodes(self) -> np.ndarray:
        mesh = np.meshgrid(*([self.axis] * self.m), indexing="ij")
        return np.stack([c.ravel() for c in mesh], axis=1)

    @cached_property
    def mask(self) -> np.ndarray:
        if not self.ball or self.m == 1:
            return np.ones(len(self.full_nodes), dtype=bool)
        return np.linalg.norm(self.full_nodes, axis=1) <= self.a * (1 + 1e-12)

    @cached_property
    def nodes(self) -> np.ndarray:
        return self.full_nodes[self.mask]

    @cached_property
    def radii(self) -> np.ndarray:
        return np.linalg.norm(self.nodes, axis=1)

    def integrate(self, values: np.ndarray) -> float:
        """Trapezoid rule over the tensor grid; nodes outside the ball count as zero"""
        full = np.zeros(len(self.full_nodes))
        full[self.mask] = values
        full = full.reshape((self.N,) * self.m)
        for _ in range(self.m):
            full = trapezoid(full, dx=self.spacing, axis=0)
        return float(full)


@dataclass(frozen=True)
class RadialEnvelope:
    radii: np.ndarray
    f0: np.ndarray
    gstar: np.ndarray

    def f0_at(self, s: np.ndarray) -> np.ndarray:
        """Piecewise-linear f0 on [radii[0], radii[-1]], constant beyond the ends"""
        return np.interp(s, self.radii, self.f0)


def fd_derivative_many(p: Profile, mu: Sequence[int], points: np.ndarray) -> np.ndarray:
    """Central-difference D^mu p at each row of points (tensor-product stencils)"""
    points = np.asarray(points, dtype=float).reshape(-1, p.m)
    mu = tuple(int(k) for k in mu)
    if len(mu) != p.m or any(k < 0 or k > 4 for k in mu) or sum(mu) > 4:
        raise ValueError(f"Multi-index {mu} is not valid for m={p.m} with |mu| <= 4")
    order = sum(mu)
    if order == 0:
        return p.values(points)
    norms = np.linalg.norm(points, axis=1)
    h = np.maximum(1e-2 * norms, 2.5e-3) if order >= 3 else np.maximum(1e-3 * norms, 1e-4)
    reach = np.array([max((abs(off) for off, _ in STENCILS[k]), default=0) for k in mu])
    extent = np.abs(points) + reach[None, :] * h[:, None]
    outside = np.any(extent > p.R * (1 + 1e-12), axis=1)
    if np.any(outside):
        i = int(np.argmax(outside))
        raise StepTooLarge(points[i].tolist(), float(h[i]), p.R)
    result = np.zeros(len(points))
    for combo in itertools.product(*(STENCILS[k] for k in mu)):
        offsets = np.array([off for off, _ in combo], dtype=float)
        weight = float(np.prod([w for _, w in combo]))
        result += weight * p.values(points + offsets[None, :] * h[:, None])
    return result / h ** order


def fd_derivative(p: Profile, mu: Sequence[int], x: Sequence[float]) -> float:
    return float(fd_derivative_many(p, mu, np.atleast_2d(np.asarray(x, dtype=float)))[0])


def _window_points(x: np.ndarray, w: float) -> np.ndarray:
    offsets = np.linspace(-w, w, HOLDER_POINTS)
    mesh = np.meshgrid(*([offsets] * len(x)), indexing="ij")
    return x[None, :] + np.stack([c.ravel() for c in mesh], axis=1)


def holder_seminorm(p: Profile, alpha: Sequence[int], delta: float, x: Sequence[float], window: float) -> float:
    """
    Lower-bound estimate of limsup_{y,z->x} |D^a p(y) - D^a p(z)| / |y - z|^delta
    from all pairs in windows window*2^-k, k = 0..6; reports the two smallest windows.
    """
    if not 0 < delta <= 1:
        raise ValueError(f"delta must lie in (0, 1], got {delta}")
    if window <= 0:
        raise ValueError(f"window must be positive, got {window}")
    x = np.asarray(x, dtype=float).reshape(p.m)
    per_level = []
    for k in range(HOLDER_LEVELS):
        pts = _window_points(x, window * 2.0 ** -k)
        values = fd_derivative_many(p, alpha, pts)
        i, j = np.triu_indices(len(pts), k=1)
        dist = np.linalg.norm(pts[i] - pts[j], axis=1)
        per_level.append(float(np.max(np.abs(values[i] - values[j]) / dist ** delta)))
    return max(per_level[-2:])


def radial_envelopes(p: Profile, grid: Grid) -> RadialEnvelope:
    """Min-envelope f0(rho) = min_{|x| >= rho} p and shell max g*(rho) on the grid radii"""
    nodes = grid.nodes
    radii = grid.radii
    inside = (radii <= grid.a * (1 + 1e-12)) & (radii > 0)
    nodes, radii = nodes[inside], radii[inside]
    values = p.values(nodes)

    if grid.m == 1:
        positive = radii > 0
        shell_radii, shell_index = np.unique(radii[positive], return_inverse=True)
        shell_values = values[positive]
    else:
        # shells of width spacing centred on k*spacing
        delta = grid.spacing
        index = np.rint(radii / delta).astype(int)
        positive = index >= 1
        occupied = np.unique(index[positive])
        expected = np.arange(1, occupied.max() + 1)
        missing = np.setdiff1d(expected, occupied)
        for k in missing:
            near = np.abs(radii - k * delta) <= delta
            if not np.any(near):
                raise EmptyShell(float(k * delta))
            logger.warning(f"Empty shell at radius {k * delta:g} on '{p.name}', widened to 2*spacing")
        shell_radii = expected * delta
        shell_index = index[positive] - 1
        shell_values = values[positive]

    count = len(shell_radii)
    shell_min = np.full(count, np.inf)
    shell_max = np.full(count, -np.inf)
    np.minimum.at(shell_min, shell_index, shell_values)
    np.maximum.at(shell_max, shell_index, shell_values)
    if grid.m == 2:
        # widened shells borrow their neighbours' nodes
        for k in np.flatnonzero(~np.isfinite(shell_max)):
            near = np.abs(radii - shell_radii[k]) <= grid.spacing
            shell_min[k] = values[near].min()
            shell_max[k] = values[near].max()

    f0 = np.minimum.accumulate(shell_min[::-1])[::-1]
    assert np.all(np.diff(f0) >= 0), "min-envelope must be nondecreasing"
    return RadialEnvelope(radii=shell_radii, f0=f0, gstar=shell_max)


def check_strong_monotone(p: Profile, grid: Grid) -> MonotoneResult:
    """p(z) <= p(x) + tol for every node pair with |z| <= |x|"""
    keep = np.flatnonzero(grid.radii > 0) if origin_value(p) is None else np.arange(len(grid.radii))
    order = keep[np.lexsort((keep, grid.radii[keep]))]
    radii = grid.radii[order]
    nodes = grid.nodes[order]
    values = p.values(nodes)
    tol = 1e-12 * (1 + float(np.max(np.abs(values))))
    starts = np.flatnonzero(np.r_[True, np.diff(radii) > 0])
    ends = np.r_[starts[1:], len(radii)]
    running_max = -np.inf
    running_arg = -1
    for start, end in zip(starts, ends):
        group = values[start:end]
        g_arg = start + int(np.argmax(group))
        if group[g_arg - start] > running_max:
            running_max, running_arg = float(group[g_arg - start]), g_arg
        low = start + int(np.argmin(group))
        if running_max > values[low] + tol:
            return MonotoneResult(
                holds=False,
                inner=nodes[running_arg].tolist(),
                outer=nodes[low].tolist(),
                inner_value=float(values[running_arg]),
                outer_value=float(values[low]),
            )
    return MonotoneResult(holds=True)


def check_elliptical(p: Profile, grid: Grid) -> EllipticalResult:
    """p > 0 at every node with |x| >= spacing; reports the violation nearest the origin"""
    radii = grid.radii
    candidates = radii >= grid.spacing * (1 - 1e-9)
    values = p.values(grid.nodes[candidates])
    bad = values <= 0
    if not np.any(bad):
        return EllipticalResult(holds=True)
    bad_radii = radii[candidates][bad]
    first = int(np.argmin(bad_radii))
    return EllipticalResult(
        holds=False,
        point=grid.nodes[candidates][bad][first].tolist(),
        value=float(values[bad][first]),
    )
