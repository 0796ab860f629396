import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import koike
from errors import FamilyError, NoCrossing
from koike import DegeneracyFamily, classify, decay_scan, decide, mu, r_of_tau, w_of_tau
from profiles import Grid, Profile
from tests.conftest import ks_family


def test_mu_of_the_absolute_value():
    value, argmax = mu(1.0, Profile.from_text("abs(x1)", 1))
    assert value == pytest.approx(0.25, abs=1e-6)
    assert argmax == pytest.approx(0.5, abs=1e-4)


@settings(deadline=None, max_examples=20)
@given(st.floats(min_value=1e-3, max_value=1.0), st.floats(min_value=0.01, max_value=10.0))
def test_mu_of_a_constant_is_linear(t, c):
    value, argmax = mu(t, Profile.from_text(repr(c), 1))
    assert value == pytest.approx(c * t, rel=1e-12)
    assert argmax == 0.0


def test_mu_rejects_radii_outside_the_support():
    with pytest.raises(ValueError):
        mu(2.0, Profile.from_text("1", 1, R=1.0))
    with pytest.raises(ValueError):
        mu(0.0, Profile.from_text("1", 1))


def test_family_validation():
    with pytest.raises(FamilyError):
        DegeneracyFamily(1, 1, 2, ())
    with pytest.raises(FamilyError) as info:
        DegeneracyFamily(1, 2, 2, (Profile.from_text("2 + x1^2", 1),))
    assert "divide" in info.value.hint
    with pytest.raises(FamilyError):
        DegeneracyFamily(1, 2, 2, (Profile.from_text("pos(abs(x1) - 0.5)", 1),))


def test_aggregates_and_diagonal(fails_family):
    total, product, top, bottom = koike.aggregates(fails_family, [0.5])
    flat = np.exp(-4.0)
    assert (total, product, top, bottom) == pytest.approx((1 + flat, flat, 1.0, flat))
    assert len(fails_family.diagonal()) == 2
    wide = DegeneracyFamily(1, 3, 5, fails_family.profiles)
    assert [p.name for p in wide.diagonal()] == ["lambda2", "lambda3", "lambda3", "lambda3"]


def test_fails_at_the_threshold(fails_family):
    report = classify(fails_family, "sum-product")
    assert report.verdict == "Fails"
    assert all(s.c == pytest.approx(-2.0, abs=1e-6) for s in report.scales)
    assert report.iff_applies
    assert report.conclusion == "operator is not hypoelliptic"


def test_holds_below_the_threshold(holds_family):
    report = classify(holds_family, "sum-product")
    assert report.verdict == "Holds"
    for s in report.scales:
        assert s.c == pytest.approx(-2.0 * s.t ** 0.5, abs=1e-6)
    assert report.conclusion == "operator is hypoelliptic"


def test_max_min_form_agrees_on_the_reference_family(fails_family, holds_family):
    assert classify(fails_family, "max-min").verdict == "Fails"
    assert classify(holds_family, "max-min").verdict == "Holds"


def test_decide_rule():
    ks = list(range(2, 14))
    assert decide(ks, [2.0] * len(ks))[0] == "Fails"
    assert decide(ks, [2.0 ** -k for k in ks])[0] == "Holds"
    assert decide(ks[:4], [2.0] * 4)[0] == "Inconclusive"
    assert decide(ks, [0.0] * len(ks))[0] == "Holds"


def test_decay_scan_separates_the_regimes():
    h = Profile.from_text("1", 1)
    fails = decay_scan(Profile.from_text("exp(-1/abs(x1))", 1, at0=0.0), h)
    assert fails.verdict == "Fails"
    assert fails.scales[-1].c == pytest.approx(-1.0, abs=1e-9)
    holds = decay_scan(Profile.from_text("exp(-1/abs(x1)^0.5)", 1, at0=0.0), h)
    assert holds.verdict == "Holds"


def test_non_monotone_family_reports_criterion_only():
    wobble = Profile.from_text("exp(-2/abs(x1)) * (1.5 + cos(30 * x1)) / 2.5", 1, at0=0.0)
    fam = DegeneracyFamily(1, 3, 3, (Profile.from_text("1", 1), wobble))
    report = classify(fam, "sum-product")
    assert not report.iff_applies
    assert report.conclusion in ("criterion holds", "criterion fails", "inconclusive at resolution")


def test_w_and_r_of_tau_for_a_linear_profile():
    grid = Grid(1, 1.0, 4001)
    f = Profile.from_text("abs(x1)", 1)
    # inf_s 1/s + tau s = 2 sqrt(tau) at s = 1/sqrt(tau)
    assert w_of_tau(f, 100.0, grid) == pytest.approx(20.0, rel=1e-4)
    assert r_of_tau(f, 100.0, grid) == pytest.approx(0.1, rel=1e-3)


def test_r_of_tau_below_the_first_radius_warns(caplog):
    grid = Grid(1, 1.0, 401)
    f = Profile.from_text("abs(x1)", 1)
    s0 = float(grid.radii[grid.radii > 0].min())
    with caplog.at_level(logging.WARNING, logger="koike"):
        r = r_of_tau(f, 1e6, grid)
    assert r == pytest.approx(1.0 / (1e6 * s0), rel=1e-9)
    assert r < s0
    assert "extrapolated" in caplog.text


def test_r_of_tau_without_crossing():
    grid = Grid(1, 1.0, 401)
    with pytest.raises(NoCrossing):
        r_of_tau(Profile.from_text("abs(x1)", 1), 0.5, grid)


def test_family_from_conftest_is_not_validated_when_asked():
    fam = ks_family(1.0, validate=False)
    assert fam.R == 1.0
    assert fam.check_grid.N == 257
