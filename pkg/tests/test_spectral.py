import math

import numpy as np
import pytest

import spectral
from errors import ConfigError
from profiles import Profile
from spectral import assemble, hoshiro_log_ratio, lambda0_scan, lowerbound_check, mass_fraction, smallest_eigen

ONE = Profile.from_text("1", 1)


def test_dirichlet_interval_ground_state():
    res = smallest_eigen(assemble(ONE, ONE, 1.0, 0.0, 2001))
    assert res.lambda0 == pytest.approx(math.pi ** 2 / 4, rel=5e-3)
    assert res.norm == pytest.approx(1.0)
    assert mass_fraction(res, 0.5) == pytest.approx(0.5 + 1 / math.pi, abs=2e-3)


def test_constant_coupling_shifts_the_spectrum():
    base = smallest_eigen(assemble(ONE, ONE, 1.0, 0.0, 2001)).lambda0
    shifted = smallest_eigen(assemble(ONE, ONE, 1.0, 10.0, 2001)).lambda0
    assert shifted - base == pytest.approx(100.0, rel=1e-6)


def test_disc_ground_state():
    one = Profile.from_text("1", 2)
    prob = assemble(one, one, 1.0, 0.0, 41)
    assert np.all(prob.radii < 1.0)
    # first zero of J0, squared
    assert smallest_eigen(prob).lambda0 == pytest.approx(5.7832, rel=0.1)


def test_rayleigh_and_mass_guards():
    prob = assemble(ONE, ONE, 1.0, 0.0, 201)
    assert spectral.rayleigh(prob, np.zeros(len(prob.points))) is None
    with pytest.raises(ValueError):
        smallest_eigen(assemble(ONE, Profile.from_text("0", 1), 1.0, 0.0, 201))
    with pytest.raises(ValueError):
        assemble(ONE, ONE, 1.0, -1.0, 201)


def test_hoshiro_log_ratio_closed_form():
    assert hoshiro_log_ratio(math.e, 0.0, 1.0, 1, 0.1) == pytest.approx(2.0 - math.log(2.0))
    big = hoshiro_log_ratio(10.0, 1e6, 0.5, 3, 1.0)
    assert big == pytest.approx(6 * math.log(10.0) + math.log(0.5) - 1000.0)


def test_sweep_must_increase_from_e():
    with pytest.raises(ConfigError):
        lambda0_scan(ONE, ONE, 1.0, [100.0, 10.0], N=201)
    with pytest.raises(ConfigError):
        lambda0_scan(ONE, ONE, 1.0, [1.0, 10.0], N=201)


def test_sharpness_sweep_for_the_flat_profile():
    f = Profile.from_text("exp(-1/abs(x1))", 1, at0=0.0)
    etas = np.logspace(1, 4, 12)
    report = lambda0_scan(f, ONE, 1.0, etas, N=2001, threads=2)
    assert [row.eta for row in report.rows] == pytest.approx(list(etas))
    assert not report.elliptic_guard
    assert 2.0 < report.q <= 2.4
    assert report.q_max == 2.4
    assert report.C1 > 0
    assert report.hoshiro_exponent > 0
    assert report.contradiction
    assert report.conclusion == "contradiction"
    assert report.rows[0].b_n == pytest.approx(1 / math.log(10.0), rel=1e-2)
    lam = [row.lambda0 for row in report.rows]
    assert all(b > a for a, b in zip(lam, lam[1:]))
    assert report.rows[-1].mass_fraction > report.rows[0].mass_fraction


def test_flat_profile_concentrates_its_mass():
    f = Profile.from_text("exp(-1/abs(x1))", 1, at0=0.0)
    res = smallest_eigen(assemble(f, ONE, 1.0, 1e3, 2001))
    assert mass_fraction(res, 0.5) >= 0.99


def test_sweep_without_a_log_squared_law_claims_nothing():
    f = Profile.from_text("exp(-1/abs(x1)^0.5)", 1, at0=0.0)
    report = lambda0_scan(f, ONE, 1.0, np.logspace(1, 4, 12), N=2001, threads=2)
    assert report.q > report.q_max
    assert not report.contradiction
    assert report.conclusion.startswith("inconclusive")


def test_large_eta_converges_when_the_mass_follows_the_potential():
    f = Profile.from_text("exp(-1/abs(x1))", 1, at0=0.0)
    etas = np.logspace(1, 4, 12)
    report = lambda0_scan(f, f, 1.0, etas, N=2001, threads=2)
    offsets = np.array([row.lambda0 - row.eta ** 2 for row in report.rows])
    # K - eta^2 M is the bare Laplacian here, so lambda0 - eta^2 does not depend on eta
    assert offsets.min() > 0
    assert offsets.max() - offsets.min() <= 1e-3 * offsets.mean()
    assert all(row.iterations < 10_000 for row in report.rows)
    assert not report.contradiction


def test_shift_matches_the_potential_bound():
    prob = assemble(ONE, ONE, 1.0, 1e4, 201)
    assert spectral.spectral_shift(prob) == pytest.approx(1e8, rel=1e-8)
    assert spectral.spectral_shift(prob) < 1e8
    f = Profile.from_text("abs(x1)", 1)
    assert spectral.spectral_shift(assemble(f, ONE, 1.0, 10.0, 201)) == 0.0


def test_elliptic_guard_skips_the_fit():
    report = lambda0_scan(ONE, ONE, 1.0, [10.0, 100.0, 1000.0], N=201)
    assert report.elliptic_guard
    assert report.q is None
    assert report.C1 is None
    assert not report.contradiction
    for row in report.rows:
        assert row.lambda0 - row.eta ** 2 == pytest.approx(math.pi ** 2 / 4, rel=1e-3)


def test_lowerbound_for_the_linear_profile():
    rows = lowerbound_check(Profile.from_text("abs(x1)", 1), [100.0])
    assert rows[0].w == pytest.approx(20.0, rel=1e-3)
    # harmonic oscillator: lambda0 = tau
    assert rows[0].lambda0 == pytest.approx(100.0, rel=1e-3)
    assert rows[0].C == pytest.approx(4.0, rel=2e-3)
