import math

import numpy as np
import pytest

import expr as ex
import symcalc as sc
from errors import NotElliptic, NotHomogeneous, PsiNegative
from matrixcheck import MatrixFunction
from symcalc import SymbolExpr


def at(x, xi):
    return {"x1": np.array([x]), "xi1": np.array([xi])}


@pytest.fixture
def variable_coefficient():
    return SymbolExpr.from_text("(1 + x1^2) * xi1^2", 1, order=2)


def test_order_of_a_second_order_symbol(variable_coefficient):
    estimate = sc.estimate_order(variable_coefficient)
    assert estimate.slope == pytest.approx(2.0, abs=0.02)
    assert not estimate.log_flag
    assert estimate.consistent
    first = sc.estimate_order(variable_coefficient, beta=(1,))
    assert first.slope == pytest.approx(1.0, abs=0.02)
    assert first.nominal == 1.0


def test_order_detects_logarithmic_factors():
    estimate = sc.estimate_order(SymbolExpr.from_text("xi1^2 * log(1 + xi1^2)", 1))
    assert estimate.log_flag
    assert estimate.slope == pytest.approx(2.0, abs=0.05)


def test_order_rejects_high_derivatives(variable_coefficient):
    with pytest.raises(ValueError):
        sc.estimate_order(variable_coefficient, alpha=(2,), beta=(2,))


def test_first_correction_matches_the_written_out_term(variable_coefficient):
    chain = sc.parametrix(variable_coefficient, 2)
    assert chain.order == 2
    value = chain.terms[1].evaluate(at(1.0, 2.0))[0]
    assert value == pytest.approx(-0.125j)
    assert sc.b1_consistency(variable_coefficient, chain) < 1e-12


def test_residual_decays_one_order_per_term(variable_coefficient):
    assert sc.residual_order(variable_coefficient, sc.parametrix(variable_coefficient, 0)) <= -0.7
    assert sc.residual_order(variable_coefficient, sc.parametrix(variable_coefficient, 2)) <= -2.7


def test_constant_coefficients_invert_exactly():
    a = SymbolExpr.from_text("1 + xi1^2", 1)
    chain = sc.parametrix(a, 2)
    assert all(term.is_zero for term in chain.terms[1:])
    assert sc.residual_order(a, chain) == -math.inf


def test_parametrix_needs_an_elliptic_symbol():
    with pytest.raises(NotElliptic):
        sc.parametrix(SymbolExpr.from_text("pos(x1) * xi1^2", 1))
    with pytest.raises(ValueError):
        sc.parametrix(SymbolExpr.from_text("1 + xi1^2", 1), 3)


def test_poisson_bracket_of_coordinates():
    xi = SymbolExpr.from_text("xi1", 1, order=1)
    x = SymbolExpr.from_text("x1", 1, order=0)
    bracket = sc.poisson_bracket(xi, x)
    assert ex.evaluate(bracket.expr, {"x1": 0.3, "xi1": 4.0}) == 1.0
    assert bracket.order == 0
    with pytest.raises(ValueError):
        sc.poisson_bracket(xi, SymbolExpr.from_text("x2", 2))


def test_psi_template_profile():
    psi = sc.psi_template(0.1, 1)
    values = [ex.evaluate(psi.expr, {"x1": x}) for x in (0.1, 0.25, 0.35)]
    assert values == pytest.approx([1.0, 0.5, 0.0])
    with pytest.raises(ValueError):
        sc.psi_template(0.0, 1)


def test_weight_symbol_values():
    weight = sc.weight_symbol(1.0, 2.0, sc.psi_template(0.1, 1))
    assert weight.order == 1.0
    assert ex.evaluate_array(weight.expr, at(0.0, 10.0))[0] == pytest.approx(0.1)
    assert ex.evaluate_array(weight.expr, at(0.5, 10.0))[0] == pytest.approx(10.0)
    # frozen at |xi| = e
    assert ex.evaluate_array(weight.expr, at(0.5, 1.0))[0] == pytest.approx(math.e)


def test_weight_symbol_rejects_bad_psi():
    with pytest.raises(PsiNegative):
        sc.weight_symbol(1.0, 2.0, SymbolExpr.from_text("x1 - 2", 1))
    with pytest.raises(NotHomogeneous):
        sc.weight_symbol(1.0, 2.0, SymbolExpr.from_text("xi1^2 / (1 + xi1^2)", 1))


def test_log_weight_bracket_with_the_momentum():
    weight = sc.weight_symbol(1.0, 2.0, SymbolExpr.from_text("x1^2", 1))
    bracket = sc.log_weight_bracket(weight, SymbolExpr.from_text("xi1", 1, order=1))
    # -d_x log lambda = N0 psi'(x) log|xi|
    assert ex.evaluate_array(bracket.expr, at(0.5, 10.0))[0] == pytest.approx(2.0 * 1.0 * math.log(10.0))


def test_multiplier_bound_is_at_most_one():
    assert 0.99 < sc.multiplier_bound(1) <= 1.0
    assert sc.multiplier_bound(2) <= 1.0


def test_correction_symbol():
    Q = MatrixFunction.from_upper(1, 1, {(1, 1): "1 + x1^2"}, "Q")
    R = sc.r1_symbol(Q, s=1.0)
    value = R.evaluate(at(0.5, 10.0))[0, 0, 0]
    assert value == pytest.approx(-1j * 1.0 * 100.0 / 101.0)
    assert not R.is_zero
    assert sc.r1_symbol(MatrixFunction.from_upper(1, 1, {(1, 1): "2"}, "Q")).is_zero
