import numpy as np
import pytest

from errors import DomainError, GridError, NotElliptic, StepTooLarge, UnknownVariable
from profiles import (
    Grid,
    Profile,
    check_elliptical,
    check_strong_monotone,
    combine,
    fd_derivative,
    holder_seminorm,
    origin_value,
    radial_envelopes,
    sqrt_profile,
)


def test_profile_rejects_foreign_variables():
    with pytest.raises(UnknownVariable):
        Profile.from_text("x2", 1)


def test_at0_continues_the_profile_at_the_origin():
    f = Profile.from_text("exp(-1/abs(x1))", 1, at0=0.0)
    assert f([0.0]) == 0.0
    assert f([0.5]) == pytest.approx(np.exp(-2.0))
    bare = Profile.from_text("exp(-1/abs(x1))", 1)
    with pytest.raises(DomainError):
        bare([0.0])
    assert origin_value(bare) is None


def test_log_values_stay_finite_where_values_underflow():
    f = Profile.from_text("exp(-1/abs(x1))", 1, at0=0.0)
    logs, clamped = f.log_values(np.array([[1e-4], [0.0]]))
    assert logs[0] == pytest.approx(-1e4)
    assert clamped.tolist() == [False, True]


def test_combine_carries_origin_values():
    one = Profile.from_text("1", 1)
    flat = Profile.from_text("exp(-2/abs(x1))", 1, at0=0.0)
    total = combine("sum", [one, flat])
    assert total.at0 == 1.0
    assert combine("product", [one, flat]).at0 == 0.0
    assert combine("max", [one, flat])([0.3]) == 1.0
    assert sqrt_profile(Profile.from_text("x1^2", 1, at0=4.0)).at0 == 2.0


def test_grid_validation_and_nodes():
    with pytest.raises(GridError):
        Grid(3, 1.0, 32)
    with pytest.raises(GridError):
        Grid(1, 1.0, 8)
    grid = Grid(2, 1.0, 33, ball=True)
    assert np.all(grid.radii <= 1.0 + 1e-12)
    assert Grid(1, 1.0, 401).axis[200] == 0.0


def test_trapezoid_integration():
    line = Grid(1, 1.0, 2001)
    assert line.integrate(line.nodes[:, 0] ** 2) == pytest.approx(2.0 / 3.0, rel=1e-5)
    disc = Grid(2, 1.0, 401, ball=True)
    assert disc.integrate(np.ones(len(disc.nodes))) == pytest.approx(np.pi, rel=2e-2)


def test_central_differences_of_a_polynomial():
    p = Profile.from_text("x1^4", 1, R=2.0)
    assert fd_derivative(p, [1], [0.5]) == pytest.approx(0.5, rel=1e-4)
    assert fd_derivative(p, [2], [0.5]) == pytest.approx(3.0, rel=1e-4)
    assert fd_derivative(p, [4], [0.5]) == pytest.approx(24.0, rel=1e-3)
    q = Profile.from_text("x1^2 * x2", 2, R=2.0)
    assert fd_derivative(q, [2, 1], [0.3, 0.4]) == pytest.approx(2.0, rel=1e-4)


def test_stencil_leaving_the_support():
    p = Profile.from_text("x1^2", 1, R=1.0)
    with pytest.raises(StepTooLarge):
        fd_derivative(p, [4], [0.999])


def test_holder_seminorm_of_smooth_and_kinked_profiles():
    smooth = Profile.from_text("x1^2", 1, R=2.0)
    assert holder_seminorm(smooth, [1], 1.0, [0.0], 0.1) == pytest.approx(2.0, rel=1e-3)
    kink = Profile.from_text("abs(x1)", 1, R=2.0)
    # |x| has no derivative at 0: the quotients blow up as the windows shrink
    assert holder_seminorm(kink, [1], 1.0, [0.0], 0.1) > 100


def test_radial_envelope_is_monotone_min(line_grid):
    bumpy = Profile.from_text("x1^2 * (1 + 0.5 * sin(20 * x1))", 1)
    env = radial_envelopes(bumpy, line_grid)
    assert np.all(np.diff(env.f0) >= 0)
    assert np.all(env.f0 <= env.gstar + 1e-15)
    assert env.radii[0] > 0


def test_strong_monotonicity(line_grid):
    assert check_strong_monotone(Profile.from_text("x1^2", 1), line_grid).holds
    result = check_strong_monotone(Profile.from_text("x1^2 * (1.1 + cos(12 * x1))", 1), line_grid)
    assert not result.holds
    assert result.inner_value > result.outer_value


def test_elliptical_check_reports_first_zero(line_grid):
    assert check_elliptical(Profile.from_text("exp(-1/abs(x1))", 1, at0=0.0), line_grid).holds
    result = check_elliptical(Profile.from_text("pos(abs(x1) - 0.5)", 1), line_grid)
    assert not result.holds
    assert abs(result.point[0]) == pytest.approx(line_grid.spacing)


def test_declared_elliptical_profiles_are_validated():
    assert Profile.from_text("exp(-1/abs(x1))", 1, at0=0.0, elliptical=True).elliptical
    assert sqrt_profile(Profile.from_text("1 + x1^2", 1, elliptical=True)).elliptical
    with pytest.raises(NotElliptic) as info:
        Profile.from_text("pos(abs(x1) - 0.5)", 1, elliptical=True)
    assert info.value.value == 0.0
    with pytest.raises(NotElliptic):
        Profile.from_text("pos(x1)", 2, elliptical=True)
