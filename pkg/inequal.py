import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

import expr as ex
from errors import DegenerateMin, LabError
from koike import DegeneracyFamily, mu, r_of_tau
from profiles import Grid, Profile, radial_envelopes, sqrt_profile
from schemas import (
    BoundAuxRow,
    BumpRatio,
    InequalitySuiteReport,
    MalgrangeResult,
    SufficReport,
    SufficRow,
)

logger = logging.getLogger(__name__)

BUMP_KINDS = ("random", "smooth", "tent")
TRIG_TERMS = 2
HARDY_TOLERANCE = 1.05
MONOTONE_SLACK = 0.10
MALGRANGE_FLOOR = 1e-30
DEFAULT_TAUS = (10.0, 1e2, 1e3, 1e4)


@dataclass(frozen=True)
class BumpFunction:
    """
    amplitude * prod_i w(s_i) T_i(s_i), s = (x - center) / width, with w(s) = (1 - s^2)^2
    (C^1 at |s| = 1) or the tent 1 - |s|; T_i is a seeded trigonometric polynomial for kind 'random'.
    """

    center: Tuple[float, ...]
    width: float
    amplitude: float = 1.0
    kind: str = "smooth"
    seed: Optional[int] = None
    coefficients: Optional[np.ndarray] = field(default=None, compare=False)

    def __post_init__(self):
        if self.kind not in BUMP_KINDS:
            raise ValueError(f"Unknown bump kind '{self.kind}'")
        if self.width <= 0:
            raise ValueError(f"Bump width must be positive, got {self.width}")

    @property
    def m(self) -> int:
        return len(self.center)

    @property
    def support_radius(self) -> float:
        """Radius of the smallest origin-centred ball holding the support"""
        return float(np.linalg.norm(self.center) + self.width * np.sqrt(self.m))

    @classmethod
    def centered(cls, width: float, m: int = 1, kind: str = "smooth", amplitude: float = 1.0) -> "BumpFunction":
        return cls(tuple([0.0] * m), width, amplitude, kind)

    @classmethod
    def random(cls, seed: int, m: int, R: float) -> "BumpFunction":
        rng = np.random.default_rng(seed)
        center = rng.uniform(-0.5 * R, 0.5 * R, m)
        widest = (0.95 * R - np.linalg.norm(center)) / np.sqrt(m)
        width = rng.uniform(0.05 * R, widest)
        coefficients = rng.standard_normal((m, TRIG_TERMS, 2))
        return cls(tuple(center.tolist()), float(width), 1.0, "random", seed, coefficients)

    def _axis_factors(self, s: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Per-axis factor and its derivative in s, both shaped like s"""
        inside = np.abs(s) < 1
        if self.kind == "tent":
            w = np.where(inside, 1 - np.abs(s), 0.0)
            dw = np.where(inside, -np.sign(s), 0.0)
        else:
            w = np.where(inside, (1 - s ** 2) ** 2, 0.0)
            dw = np.where(inside, -4 * s * (1 - s ** 2), 0.0)
        if self.kind != "random" or self.coefficients is None:
            return w, dw
        T = np.ones_like(s)
        dT = np.zeros_like(s)
        for j in range(1, TRIG_TERMS + 1):
            a = self.coefficients[:, j - 1, 0][None, :]
            b = self.coefficients[:, j - 1, 1][None, :]
            T += 0.5 * (a * np.cos(j * np.pi * s) + b * np.sin(j * np.pi * s)) / j
            dT += 0.5 * np.pi * (-a * np.sin(j * np.pi * s) + b * np.cos(j * np.pi * s))
        return w * T, dw * T + w * dT

    def realize(self, points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """(values, exact gradients) at the rows of points"""
        points = np.asarray(points, dtype=float).reshape(-1, self.m)
        s = (points - np.asarray(self.center)[None, :]) / self.width
        F, dF = self._axis_factors(s)
        values = self.amplitude * np.prod(F, axis=1)
        grads = np.empty_like(points)
        for i in range(self.m):
            others = np.prod(np.delete(F, i, axis=1), axis=1) if self.m > 1 else 1.0
            grads[:, i] = self.amplitude * dF[:, i] / self.width * others
        return values, grads


def bump_batch(seed: int, count: int, m: int, R: float = 1.0) -> List[BumpFunction]:
    """Bumps seeded seed, seed + 1, ...; each one is replayable from its own seed"""
    return [BumpFunction.random(seed + i, m, R) for i in range(count)]


@dataclass
class Realized:
    bump: BumpFunction
    values: np.ndarray
    grads: np.ndarray

    @classmethod
    def on(cls, bump: BumpFunction, grid: Grid) -> "Realized":
        values, grads = bump.realize(grid.nodes)
        return cls(bump, values, grads)

    def grad_sq(self) -> np.ndarray:
        return np.sum(self.grads ** 2, axis=1)


def _realize(phi, grid: Grid) -> Realized:
    return phi if isinstance(phi, Realized) else Realized.on(phi, grid)


def check_bound_aux(f: Profile, phi, tau: float, s: float, axis: int, grid: Grid) -> float:
    """
    ||phi||^2 / ((1/(tau^2 m_s^2) + s^2)(||d_l phi||^2 + tau^2 ||f phi||^2)), m_s = min_{|x| >= s} f;
    the batch maximum estimates C_l.
    """
    bump = _realize(phi, grid)
    lhs = grid.integrate(bump.values ** 2)
    if lhs == 0:
        return 0.0
    radii = grid.radii
    outer = (radii >= s * (1 - 1e-12)) & (radii <= grid.a * (1 + 1e-12))
    floor = float(np.min(f.values(grid.nodes[outer])))
    with np.errstate(over="ignore"):
        inverse = 1.0 / (tau ** 2 * floor ** 2) if floor > 0 else np.inf
    if not np.isfinite(inverse):
        raise DegenerateMin(s)
    fv = f.values(grid.nodes)
    energy = grid.integrate(bump.grads[:, axis] ** 2) + tau ** 2 * grid.integrate(fv ** 2 * bump.values ** 2)
    return float(lhs / ((inverse + s ** 2) * energy))


def check_hardy_claim(lam_sum: Profile, phi, r: float, grid: Grid, lam_values: Optional[np.ndarray] = None) -> float:
    """int_{|x|<=r} Lambda phi^2 / (4 mu(r, sqrt(Lambda))^2 int |grad phi|^2)"""
    bump = _realize(phi, grid)
    inside = grid.radii <= r * (1 + 1e-12)
    values = lam_values if lam_values is not None else lam_sum.values(grid.nodes)
    lhs = grid.integrate(np.where(inside, values * bump.values ** 2, 0.0))
    if lhs == 0:
        return 0.0
    mu_value, _ = mu(min(r, lam_sum.R), sqrt_profile(lam_sum))
    bound = 4 * mu_value ** 2 * grid.integrate(bump.grad_sq())
    return float(lhs / bound) if bound > 0 else np.inf


def chi(t: np.ndarray) -> np.ndarray:
    """1 on t <= 1, 0 on t >= 2, quintic smoothstep in between"""
    u = np.clip(np.asarray(t, dtype=float) - 1.0, 0.0, 1.0)
    return 1.0 - u ** 3 * (10 - 15 * u + 6 * u ** 2)


def chi_prime(t: np.ndarray) -> np.ndarray:
    u = np.asarray(t, dtype=float) - 1.0
    inside = (u > 0) & (u < 1)
    return np.where(inside, -30 * u ** 2 * (1 - u) ** 2, 0.0)


@dataclass
class FamilyFields:
    """Lambda_sum and Lambda_product sampled once on a grid"""

    fam: DegeneracyFamily
    grid: Grid
    lam_sum: np.ndarray = field(init=False)
    lam_product: np.ndarray = field(init=False)

    def __post_init__(self):
        self.lam_sum = self.fam.lam_sum.values(self.grid.nodes)
        self.lam_product = self.fam.lam_product.values(self.grid.nodes)

    def product_gradient(self, mask: np.ndarray) -> np.ndarray:
        """Symbolic grad Lambda_product on the masked nodes, zero elsewhere"""
        out = np.zeros((len(self.grid.nodes), self.grid.m))
        if np.any(mask):
            prof = self.fam.lam_product
            env = prof.env(self.grid.nodes[mask])
            for i, d in enumerate(ex.gradient(prof.expr, prof.varset.names, prof.varset)):
                out[mask, i] = ex.evaluate_array(d, env)
        return out


def check_suffic(fam: DegeneracyFamily, phi, tau: float, grid: Grid, fields: Optional[FamilyFields] = None) -> SufficRow:
    """
    delta(tau) = (log tau)^2 ||sqrt(Lambda_sum) phi||^2 / (||grad phi||^2 + tau^2 ||sqrt(Lambda_product) phi||^2)
    measured directly and through the cutoff split nu = chi(tau Lambda_product).
    """
    if tau < np.e:
        raise ValueError(f"tau must be at least e, got {tau}")
    bump = _realize(phi, grid)
    seed = bump.bump.seed
    fields = fields or FamilyFields(fam, grid)
    ls, lp = fields.lam_sum, fields.lam_product
    phi2 = bump.values ** 2
    if not np.any(phi2 > 0):
        return SufficRow(tau=tau, delta_direct=np.nan, delta_split=np.nan, seed=seed)

    L2 = np.log(tau) ** 2
    denominator = grid.integrate(bump.grad_sq()) + tau ** 2 * grid.integrate(lp * phi2)
    direct = L2 * grid.integrate(ls * phi2) / denominator

    t = tau * lp
    support = bump.values != 0
    in_set = t > 1
    outer_nodes = support & in_set
    ls_max = float(ls[outer_nodes].max()) if np.any(outer_nodes) else 0.0
    outer = L2 * ls_max * tau * grid.integrate(np.where(in_set, lp * phi2, 0.0))

    near = support & (t <= 2)
    r = float(grid.radii[near].max()) if np.any(near) else 0.0
    inner = 0.0
    if r > 0:
        nu = chi(t)
        slope = chi_prime(t)
        grad_lp = fields.product_gradient(slope != 0)
        cut_grad = nu[:, None] * bump.grads + (bump.values * slope * tau)[:, None] * grad_lp
        mu_value, _ = mu(min(r, fam.lam_sum.R), sqrt_profile(fam.lam_sum))
        inner = L2 * 4 * mu_value ** 2 * grid.integrate(np.sum(cut_grad ** 2, axis=1))
    split = 2 * (outer + inner) / denominator
    return SufficRow(tau=tau, delta_direct=float(direct), delta_split=float(split), r=r, seed=seed)


def suffic_sweep(fam: DegeneracyFamily, bumps: Sequence, taus: Sequence[float], grid: Grid) -> SufficReport:
    """Worst bump per tau; flags a rise of more than 10% between consecutive taus"""
    fields = FamilyFields(fam, grid)
    realized = [_realize(b, grid) for b in bumps]
    rows = []
    for tau in taus:
        per_bump = [check_suffic(fam, b, float(tau), grid, fields) for b in realized]
        finite = [row for row in per_bump if np.isfinite(row.delta_direct)]
        if not finite:
            rows.append(SufficRow(tau=float(tau), delta_direct=np.nan, delta_split=np.nan))
            continue
        worst = max(finite, key=lambda row: row.delta_direct)
        rows.append(worst)
        logger.info(f"tau={tau:g}: worst delta={worst.delta_direct:.4e} (seed {worst.seed})")
    values = [row.delta_direct for row in rows]
    monotone = all(b <= a * (1 + MONOTONE_SLACK) for a, b in zip(values, values[1:]) if np.isfinite(a) and np.isfinite(b))
    note = "" if monotone else "delta(tau) rose by more than 10% across the sweep"
    if note:
        logger.warning(note)
    return SufficReport(rows=rows, monotone=monotone, note=note)


def check_malgrange(f: Profile, grid: Grid) -> MalgrangeResult:
    """sup |grad f|^2 / f over the nodes, exact gradient; nodes with f < 1e-30 are skipped"""
    values = f.values(grid.nodes)
    keep = values >= MALGRANGE_FLOOR
    skipped = int(np.count_nonzero(~keep))
    if skipped:
        logger.info(f"Malgrange check on '{f.name}' skipped {skipped} nodes below {MALGRANGE_FLOOR:g}")
    if not np.any(keep):
        return MalgrangeResult(C=0.0, skipped=skipped)
    env = f.env(grid.nodes[keep])
    grad_sq = sum(ex.evaluate_array(d, env) ** 2 for d in ex.gradient(f.expr, f.varset.names, f.varset))
    ratio = np.asarray(grad_sq, dtype=float) / values[keep]
    best = int(np.argmax(ratio))
    return MalgrangeResult(C=float(ratio[best]), skipped=skipped, argmax=grid.nodes[keep][best].tolist())


def run_suite(
    fam: DegeneracyFamily,
    bumps: int = 500,
    seed: int = 0,
    N: Optional[int] = None,
    taus: Sequence[float] = DEFAULT_TAUS,
) -> InequalitySuiteReport:
    """Hardy claim, bound_aux constants, the delta(tau) sweep and Malgrange on Lambda_product"""
    m, R = fam.m, fam.R
    N = N or (4001 if m == 1 else 129)
    grid = Grid(m, R, N, ball=True)
    batch = [Realized.on(b, grid) for b in bump_batch(seed, bumps, m, R)]
    logger.info(f"Realized {len(batch)} bumps from seed {seed} on {N} nodes per axis")

    lam_sum_values = fam.lam_sum.values(grid.nodes)
    hardy = [
        BumpRatio(
            seed=b.bump.seed,
            center=list(b.bump.center),
            width=b.bump.width,
            ratio=check_hardy_claim(fam.lam_sum, b, min(b.bump.support_radius, R), grid, lam_sum_values),
        )
        for b in batch
    ]
    violations = [row.seed for row in hardy if row.ratio > HARDY_TOLERANCE]

    f = sqrt_profile(fam.lam_product)
    bound_aux = []
    try:
        envelope = radial_envelopes(f, grid)
    except LabError as e:
        logger.warning(f"bound_aux skipped: {e.detail}")
        envelope = None
    for tau in taus:
        if envelope is None:
            bound_aux.append(BoundAuxRow(tau=float(tau), note="envelope unavailable"))
            continue
        try:
            s = r_of_tau(f, float(tau), grid, envelope)
            C = max(check_bound_aux(f, b, float(tau), s, 0, grid) for b in batch)
            bound_aux.append(BoundAuxRow(tau=float(tau), s=s, C=C))
        except LabError as e:
            logger.warning(f"bound_aux at tau={tau:g}: {e.detail}")
            bound_aux.append(BoundAuxRow(tau=float(tau), note=e.detail))

    return InequalitySuiteReport(
        seed=seed,
        bumps=bumps,
        hardy=hardy,
        hardy_max=max((row.ratio for row in hardy), default=0.0),
        hardy_violations=violations,
        bound_aux=bound_aux,
        suffic=suffic_sweep(fam, batch, taus, grid),
        malgrange=check_malgrange(fam.lam_product, grid),
    )
