import logging
import os
from dataclasses import dataclass, field
from functools import cached_property
from typing import List, Optional, Sequence, Tuple

import numpy as np
from dotenv import load_dotenv
from scipy.optimize import bisect, minimize_scalar

from errors import DomainError, FamilyError, NoCrossing
from profiles import Grid, Profile, RadialEnvelope, check_elliptical, check_strong_monotone, combine, radial_envelopes, sqrt_profile
from schemas import KoikeReport, KoikeScale

load_dotenv()

logger = logging.getLogger(__name__)

EPS_CLS = float(os.getenv("DEGENLAB_EPS_CLS", "1e-2"))
HOLDS_SLOPE = -0.2
FAILS_SLOPE = 0.05
FIT_WINDOW = 6
FINEST = 3
SCALES = range(2, 41)
MU_SAMPLES = 257
FORMS = ("sum-product", "max-min")


@dataclass(frozen=True)
class DegeneracyFamily:
    """Degeneracies lambda_{m+1..p} on R^m of a diagonal Grushin matrix; lambda_p repeats up to n"""

    m: int
    p: int
    n: int
    profiles: Tuple[Profile, ...]
    extend_last: bool = True
    validate: bool = field(default=True, compare=False)

    def __post_init__(self):
        if not 1 <= self.m < self.p <= self.n:
            raise FamilyError(f"Need 1 <= m < p <= n, got m={self.m}, p={self.p}, n={self.n}")
        if len(self.profiles) != self.p - self.m:
            raise FamilyError(f"Expected {self.p - self.m} profiles (lambda_{self.m + 1}..lambda_{self.p}), got {len(self.profiles)}")
        for prof in self.profiles:
            if prof.m != self.m:
                raise FamilyError(f"Profile '{prof.name}' lives on R^{prof.m}, family needs R^{self.m}")
        if self.validate:
            self._validate()

    @property
    def R(self) -> float:
        return min(prof.R for prof in self.profiles)

    @cached_property
    def check_grid(self) -> Grid:
        return Grid(self.m, self.R, 257 if self.m == 1 else 65, ball=True)

    def _validate(self) -> None:
        grid = self.check_grid
        for prof in self.profiles:
            result = check_elliptical(prof, grid)
            if not result.holds:
                raise FamilyError(f"Profile '{prof.name}' is not elliptical: value {result.value:g} at {result.point}")
            values = prof.values(grid.nodes[grid.radii > 0])
            top = float(np.max(values))
            if np.min(values) < 0 or top > 1 + 1e-12:
                raise FamilyError(
                    f"Profile '{prof.name}' must satisfy 0 <= lambda <= 1 on the grid (max {top:g})",
                    hint=f"divide '{prof.name}' by {top:g}",
                )

    @cached_property
    def lam_sum(self) -> Profile:
        return combine("sum", self.profiles, "Lambda_sum")

    @cached_property
    def lam_product(self) -> Profile:
        return combine("product", self.profiles, "Lambda_product")

    @cached_property
    def lam_max(self) -> Profile:
        return combine("max", self.profiles, "lambda_max")

    @cached_property
    def lam_min(self) -> Profile:
        return combine("min", self.profiles, "lambda_min")

    def diagonal(self) -> List[Profile]:
        """lambda_{m+1}, ..., lambda_n with lambda_p extended over p..n"""
        tail = [self.profiles[-1]] * (self.n - self.p) if self.extend_last else []
        return list(self.profiles) + tail


def mu(t: float, g: Profile) -> Tuple[float, float]:
    """Koike functional max_{|z| <= t} g(z)(t - |z|) and the smallest maximising radius"""
    if t <= 0:
        raise ValueError(f"t must be positive, got {t}")
    if t > g.R * (1 + 1e-12):
        raise ValueError(f"t={t:g} exceeds the support radius {g.R:g} of '{g.name}'")
    rho = np.linspace(0.0, t, MU_SAMPLES)
    gstar = _sphere_max_many(g, rho)
    values = gstar * (t - rho)
    best = int(np.argmax(values))
    value, argmax = float(values[best]), float(rho[best])

    lo, hi = rho[max(best - 1, 0)], rho[min(best + 1, len(rho) - 1)]
    if hi > lo:
        refined = minimize_scalar(
            lambda r: -g.sphere_max(r) * (t - r),
            bounds=(lo, hi),
            method="bounded",
            options={"xatol": 1e-12 * max(t, 1e-300)},
        )
        if refined.success and -refined.fun > value:
            value, argmax = float(-refined.fun), float(refined.x)
    return value, argmax


def _sphere_max_many(g: Profile, rho: np.ndarray) -> np.ndarray:
    positive = rho > 0
    out = np.empty(len(rho))
    if np.any(~positive):
        out[~positive] = g.sphere_max(0.0)
    if np.any(positive):
        directions = g.sphere_points(1.0)
        points = (rho[positive][:, None, None] * directions[None, :, :]).reshape(-1, g.m)
        out[positive] = g.values(points).reshape(int(positive.sum()), len(directions)).max(axis=1)
    return out


def aggregates(fam: DegeneracyFamily, x: Sequence[float]) -> Tuple[float, float, float, float]:
    """(Lambda_sum, Lambda_product, lambda_max, lambda_min) at x"""
    point = np.atleast_2d(np.asarray(x, dtype=float))
    values = np.array([prof.values(point)[0] for prof in fam.profiles])
    return float(values.sum()), float(values.prod()), float(values.max()), float(values.min())


def _log_p(fam: DegeneracyFamily, form: str, points: np.ndarray) -> Tuple[float, bool]:
    logs, clamps = zip(*(prof.log_values(points) for prof in fam.profiles))
    logs = np.vstack(logs)
    combined = logs.sum(axis=0) if form == "sum-product" else logs.min(axis=0)
    return float(combined.min()), bool(np.any(np.vstack(clamps)))


def decide(ks: Sequence[int], cs: Sequence[float], eps: float = EPS_CLS) -> Tuple[str, Optional[float]]:
    """Finite decision rule for c_k -> 0 from the tail of the sequence"""
    ks = np.asarray(ks, dtype=float)
    cs = np.abs(np.asarray(cs, dtype=float))
    if len(cs) < FIT_WINDOW:
        return "Inconclusive", None
    finest = cs[-FINEST:]
    nonzero = cs > 0
    slope = None
    if np.count_nonzero(nonzero) >= FIT_WINDOW:
        tail_k = ks[nonzero][-FIT_WINDOW:]
        tail_c = cs[nonzero][-FIT_WINDOW:]
        slope = float(np.polyfit(tail_k, np.log(tail_c), 1)[0])
    if (slope is not None and slope < HOLDS_SLOPE) or np.all(finest < eps):
        return "Holds", slope
    if slope is not None and abs(slope) < FAILS_SLOPE and cs[-1] > eps:
        return "Fails", slope
    return "Inconclusive", slope


def _scan(g: Profile, log_p_fn, R: float, form: str, eps: float) -> KoikeReport:
    scales = []
    exhausted = False
    for k in SCALES:
        t = R * 2.0 ** -k
        try:
            mu_value, argmax = mu(t, g)
            log_p, clamped = log_p_fn(g.sphere_points(t))
        except DomainError as e:
            logger.warning(f"Scale k={k} (t={t:g}) not evaluable for {form}: {e.detail}")
            exhausted = True
            break
        scales.append(KoikeScale(k=k, t=t, mu=mu_value, argmax=argmax, log_p=log_p, c=mu_value * log_p, clamped=clamped))
        logger.info(f"{form} k={k} t={t:.3e} mu={mu_value:.6e} lnP={log_p:.6e}")
    verdict, slope = decide([s.k for s in scales], [s.c for s in scales], eps)
    return KoikeReport(
        form=form,
        scales=scales,
        slope=slope,
        verdict=verdict,
        eps_cls=eps,
        holds_slope=HOLDS_SLOPE,
        fails_slope=FAILS_SLOPE,
        fit_window=FIT_WINDOW,
        clamp_events=sum(s.clamped for s in scales),
        resolution_exhausted=exhausted,
    )


def strongly_monotone(fam: DegeneracyFamily) -> bool:
    return all(check_strong_monotone(prof, fam.check_grid).holds for prof in fam.profiles)


def classify(fam: DegeneracyFamily, form: str, eps: float = EPS_CLS) -> KoikeReport:
    """
    c_k = mu(t_k, sqrt(G)) * ln P(t_k) on t_k = R 2^-k with G, P = (Lambda_sum, Lambda_product)
    or (lambda_max, lambda_min); ln P is the worst value on the sphere |x| = t_k.
    """
    if form not in FORMS:
        raise ValueError(f"Unknown criterion form '{form}'")
    g = sqrt_profile(fam.lam_sum if form == "sum-product" else fam.lam_max)
    report = _scan(g, lambda pts: _log_p(fam, form, pts), fam.R, form, eps)
    report.iff_applies = strongly_monotone(fam)
    report.conclusion = _conclusion(report.verdict, report.iff_applies)
    return report


def _conclusion(verdict: str, iff_applies: bool) -> str:
    if verdict == "Inconclusive":
        return "inconclusive at resolution"
    if iff_applies:
        return "operator is hypoelliptic" if verdict == "Holds" else "operator is not hypoelliptic"
    return "criterion holds" if verdict == "Holds" else "criterion fails"


def decay_scan(f: Profile, h: Profile, eps: float = EPS_CLS) -> KoikeReport:
    """
    mu(|x|, h) * ln f(x) along the scales. A non-vanishing limit (verdict Fails) is the
    regime where the spectral counterexample applies.
    """
    def log_f(pts: np.ndarray) -> Tuple[float, bool]:
        logs, clamped = f.log_values(pts)
        return float(logs.min()), bool(np.any(clamped))

    report = _scan(h, log_f, min(f.R, h.R), "decay", eps)
    report.conclusion = {
        "Holds": "decay quantity vanishes",
        "Fails": "decay quantity does not vanish",
        "Inconclusive": "inconclusive at resolution",
    }[report.verdict]
    return report


def w_of_tau(f: Profile, tau: float, grid: Grid, envelope: Optional[RadialEnvelope] = None) -> float:
    """w(tau) = inf_s (1/s + tau f0(s)) over the sampled radii, refined locally"""
    env = envelope or radial_envelopes(f, grid)
    values = 1.0 / env.radii + tau * env.f0
    best = int(np.argmin(values))
    value = float(values[best])
    lo, hi = env.radii[max(best - 1, 0)], env.radii[min(best + 1, len(env.radii) - 1)]
    if hi > lo:
        refined = minimize_scalar(lambda s: 1.0 / s + tau * env.f0_at(s), bounds=(lo, hi), method="bounded")
        if refined.success:
            value = min(value, float(refined.fun))
    return value


def r_of_tau(f: Profile, tau: float, grid: Grid, envelope: Optional[RadialEnvelope] = None) -> float:
    """The crossing 1/r = tau f0(r); below the first radius f0 is held at its first value"""
    env = envelope or radial_envelopes(f, grid)
    s0, s_max = float(env.radii[0]), float(env.radii[-1])

    def gap(s: float) -> float:
        return 1.0 / s - tau * float(env.f0_at(s))

    if gap(s_max) > 0:
        raise NoCrossing(tau, s_max)
    if gap(s0) <= 0:
        if env.f0[0] <= 0:
            raise NoCrossing(tau, s0)
        r = 1.0 / (tau * float(env.f0[0]))
        logger.warning(f"Crossing for tau={tau:g} lies below the first radius {s0:g}; extrapolated r={r:.3e} from f0 held constant")
        return r
    return float(bisect(gap, s0, s_max, xtol=1e-14, rtol=1e-15, maxiter=200))
