import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import expr as ex
from errors import ArityError, DomainError, ExpressionSyntaxError, UnboundVariable, UnknownVariable, VarSetError

X2 = ex.VarSet.spatial_dims(2)


def random_tree(rng: np.random.Generator, depth: int) -> ex.Expr:
    """Unfolded trees over x1, x2 using every node type the printer knows"""
    if depth == 0 or rng.random() < 0.2:
        choice = rng.integers(3)
        if choice == 0:
            return ex.Const(float(np.round(rng.uniform(-5, 5), 3)))
        return ex.Var(f"x{choice}")
    kind = rng.integers(6)
    if kind == 0:
        return ex.Unary(str(rng.choice(ex.UNARY_FUNCS)), random_tree(rng, depth - 1))
    if kind == 1:
        exponent = ex.Const(float(rng.choice([2.0, 3.0, -1.0, 0.5])))
        return ex.Binary("^", random_tree(rng, depth - 1), exponent)
    if kind == 2:
        return ex.NAry(str(rng.choice(ex.NARY_FUNCS)), (random_tree(rng, depth - 1), random_tree(rng, depth - 1)))
    if kind == 3:
        return ex.Norm(("x1", "x2"))
    return ex.Binary(str(rng.choice(list("+-*/"))), random_tree(rng, depth - 1), random_tree(rng, depth - 1))


def smooth_tree(rng: np.random.Generator, depth: int) -> ex.Expr:
    """Kink-free, bounded trees on [-1, 1]^2 for derivative checks"""
    if depth == 0 or rng.random() < 0.25:
        if rng.random() < 0.3:
            return ex.Const(float(np.round(rng.uniform(-2, 2), 2)))
        return ex.Var(f"x{rng.integers(1, 3)}")
    kind = rng.integers(5)
    if kind == 0:
        return ex.Unary(str(rng.choice(["sin", "cos", "exp"])), ex.mul(ex.Const(0.5), smooth_tree(rng, depth - 1)))
    if kind == 1:
        return ex.Binary("^", smooth_tree(rng, depth - 1), ex.Const(float(rng.choice([2.0, 3.0]))))
    if kind == 2:
        return ex.Binary("/", smooth_tree(rng, depth - 1), ex.add(ex.Const(2.0), ex.Unary("sin", smooth_tree(rng, depth - 1))))
    return ex.Binary(str(rng.choice(list("+-*"))), smooth_tree(rng, depth - 1), smooth_tree(rng, depth - 1))


def test_print_parse_round_trip_on_generated_trees():
    rng = np.random.default_rng(7)
    for _ in range(500):
        tree = random_tree(rng, 4)
        assert ex.parse(ex.to_text(tree), X2) == tree


def test_symbolic_derivative_matches_central_differences():
    rng = np.random.default_rng(11)
    h = 1e-5
    for _ in range(100):
        tree = smooth_tree(rng, 3)
        point = {"x1": float(rng.uniform(-1, 1)), "x2": float(rng.uniform(-1, 1))}
        for var in ("x1", "x2"):
            exact = ex.evaluate(ex.differentiate(tree, var), point)
            up = dict(point, **{var: point[var] + h})
            down = dict(point, **{var: point[var] - h})
            approx = (ex.evaluate(tree, up) - ex.evaluate(tree, down)) / (2 * h)
            scale = max(1.0, abs(exact), abs(ex.evaluate(tree, point)))
            assert abs(exact - approx) <= 1e-6 * scale


def test_precedence_and_right_associative_power():
    e = ex.parse("2 * x1 ^ 2 ^ 0.5 + 1", X2)
    assert ex.evaluate(e, {"x1": 3.0, "x2": 0.0}) == pytest.approx(2 * 3.0 ** (2 ** 0.5) + 1)
    assert ex.evaluate(ex.parse("-x1^2", X2), {"x1": 3.0, "x2": 0.0}) == -9.0
    assert ex.evaluate(ex.parse("x1 ^ -2", X2), {"x1": 2.0, "x2": 0.0}) == 0.25


def test_functions_and_named_constants():
    point = {"x1": 3.0, "x2": -4.0}
    assert ex.evaluate(ex.parse("norm(x1, x2)", X2), point) == 5.0
    assert ex.evaluate(ex.parse("max(x1, x2, 1)", X2), point) == 3.0
    assert ex.evaluate(ex.parse("pos(x2) + sign(x2)", X2), point) == -1.0
    assert ex.evaluate(ex.parse("cos(pi)", X2), point) == pytest.approx(-1.0)


@pytest.mark.parametrize(
    "text, error",
    [
        ("x1 +", ExpressionSyntaxError),
        ("", ExpressionSyntaxError),
        ("x1 ^ x2", ExpressionSyntaxError),
        ("foo(x1)", ExpressionSyntaxError),
        ("(x1", ExpressionSyntaxError),
        ("x1 $ 2", ExpressionSyntaxError),
        ("y + 1", UnknownVariable),
        ("exp(x1, x2)", ArityError),
        ("min(x1)", ArityError),
    ],
)
def test_parse_errors(text, error):
    with pytest.raises(error):
        ex.parse(text, X2)


def test_syntax_error_reports_position():
    with pytest.raises(ExpressionSyntaxError) as info:
        ex.parse("x1 + * 2", X2)
    assert info.value.position == 5


def test_domain_and_binding_errors():
    with pytest.raises(DomainError):
        ex.evaluate(ex.parse("log(x1)", X2), {"x1": 0.0, "x2": 1.0})
    with pytest.raises(DomainError):
        ex.evaluate(ex.parse("1 / x1", X2), {"x1": 0.0, "x2": 1.0})
    with pytest.raises(DomainError):
        ex.evaluate(ex.parse("x1 ^ 0.5", X2), {"x1": -1.0, "x2": 1.0})
    with pytest.raises(UnboundVariable):
        ex.evaluate(ex.parse("x1 + x2", X2), {"x1": 1.0})


def test_varset_rejects_duplicates_and_reserved_names():
    with pytest.raises(VarSetError):
        ex.VarSet(spatial=("x1",), frequency=("x1",))
    with pytest.raises(VarSetError):
        ex.VarSet(spatial=("exp",))


def test_phase_space_names():
    assert ex.VarSet.phase_space(2).names == ("x1", "x2", "xi1", "xi2")


def test_derivatives_fold_to_zero_and_mixed_orders():
    xi = ex.VarSet.phase_space(1)
    a = ex.parse("(1 + x1^2) * xi1^2", xi)
    assert ex.derivative(a, {"xi1": 3}) == ex.ZERO
    assert ex.evaluate(ex.derivative(a, {"x1": 1, "xi1": 1}), {"x1": 0.5, "xi1": 3.0}) == pytest.approx(2 * 0.5 * 2 * 3.0)
    assert ex.evaluate(ex.derivative(ex.parse("x1^4", X2), {"x1": 2}), {"x1": 1.0, "x2": 0.0}) == pytest.approx(12.0)
    assert ex.gradient(ex.parse("x2", X2), ["x1", "x2"]) == [ex.ZERO, ex.ONE]


def test_differentiation_rejects_undeclared_variables():
    e = ex.parse("x1^2", ex.VarSet.spatial_dims(1))
    with pytest.raises(UnknownVariable):
        ex.differentiate(e, "z", ex.VarSet.spatial_dims(1))
    with pytest.raises(UnknownVariable):
        ex.derivative(e, {"x2": 1}, ex.VarSet.spatial_dims(1))
    assert ex.differentiate(e, "x2", X2) == ex.ZERO
    assert ex.gradient(e, ["x1", "x2"], X2)[1] == ex.ZERO


def test_evaluate_array_broadcasts_constants():
    values = ex.evaluate_array(ex.parse("3", X2), {"x1": np.zeros(4), "x2": np.zeros(4)})
    assert values.shape == (4,)
    assert np.all(values == 3.0)


def test_log_evaluate_keeps_flat_exponentials_finite():
    e = ex.parse("exp(-1/x1^2) * x1^2", X2)
    x = np.array([1e-3, -0.5])
    logs, clamped = ex.log_evaluate(e, {"x1": x, "x2": np.zeros(2)})
    expected = -1.0 / x ** 2 + 2 * np.log(np.abs(x))
    assert np.allclose(logs, expected)
    assert not clamped.any()


def test_log_evaluate_clamps_vanishing_factors():
    logs, clamped = ex.log_evaluate(ex.parse("x1 * 2", X2), {"x1": np.array([0.0, 1.0]), "x2": np.zeros(2)})
    assert clamped.tolist() == [True, False]
    assert logs[0] == pytest.approx(ex.LOG_TINY + math.log(2.0))
    assert logs[1] == pytest.approx(math.log(2.0))


def test_substitute_numbers_and_norms():
    e = ex.parse("x1 * norm(x1, x2)", X2)
    fixed = ex.substitute(e, {"x2": 0})
    assert ex.evaluate(fixed, {"x1": -2.0}) == pytest.approx(-4.0)
    assert ex.variables(fixed) == frozenset({"x1"})


@settings(deadline=None, max_examples=50)
@given(st.floats(min_value=-3, max_value=3), st.floats(min_value=-3, max_value=3))
def test_folding_constructors_agree_with_raw_nodes(a, b):
    point = {"x1": a, "x2": b}
    x1, x2 = ex.Var("x1"), ex.Var("x2")
    for folded, raw in [
        (ex.add(x1, ex.ZERO), x1),
        (ex.mul(ex.ONE, x2), x2),
        (ex.sub(ex.ZERO, x1), ex.Unary("neg", x1)),
        (ex.power(x1, 1), x1),
        (ex.mul(x1, x2), ex.Binary("*", x1, x2)),
    ]:
        assert ex.evaluate(folded, point) == pytest.approx(ex.evaluate(raw, point))
