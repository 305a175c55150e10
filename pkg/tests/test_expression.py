import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from closedgeo.errors import ExpressionError
from closedgeo.expression import (
    compile_expression,
    coordinate_env,
    differentiate,
    evaluate,
    parse_expression,
    to_text,
)


def ev(text, **env):
    return evaluate(parse_expression(text, variables=tuple(env) or None), env)


def test_constant_sum():
    tree = parse_expression("1 + 0")
    for x in (np.zeros(2), np.array([3.0, -7.0])):
        assert evaluate(tree, coordinate_env(x)) == 1.0


def test_sine_quarter():
    assert ev("sin(2*pi*x1)", x1=0.25) == pytest.approx(1.0, abs=1e-15)


def test_exponential_of_product():
    val = ev("exp(2*0.1*sin(2*pi*x1)*sin(2*pi*x2))", x1=0.25, x2=0.25)
    assert val == pytest.approx(math.exp(0.2), rel=1e-15)
    assert val == pytest.approx(1.2214027581, abs=1e-10)


@pytest.mark.parametrize(
    "text, expected",
    [
        ("8 - 3 - 2", 3.0),
        ("8 / 4 / 2", 1.0),
        ("2 * 3 ^ 2", 18.0),
        ("1 + 2 * 3", 7.0),
        ("(1 + 2) * 3", 9.0),
        ("-2 ^ 2", -4.0),
        ("2 ^ -1", 0.5),
        ("cos(pi)", -1.0),
    ],
)
def test_precedence_and_associativity(text, expected):
    assert ev(text, x1=0.0) == pytest.approx(expected, abs=1e-15)


@pytest.mark.parametrize("text", ["1 +", "sin 2", "(1 + 2", "3 $ 4", "2 ^ 1.5", ""])
def test_syntax_errors_carry_position(text):
    with pytest.raises(ExpressionError) as info:
        parse_expression(text)
    assert info.value.position is not None


def test_unknown_identifier():
    with pytest.raises(ExpressionError, match="y"):
        parse_expression("x1 + y")
    with pytest.raises(ExpressionError):
        parse_expression("tan(x1)")


def test_matches_hand_coded_formula(rng):
    tree = parse_expression("exp(2*0.1*sin(2*pi*x1)*sin(2*pi*x2)) + x1^2/(1 + x2^2)")
    fn = compile_expression(tree, ("x1", "x2"))
    for x1, x2 in rng.uniform(-3, 3, size=(100, 2)):
        want = math.exp(0.2 * math.sin(2 * math.pi * x1) * math.sin(2 * math.pi * x2)) + x1**2 / (1 + x2**2)
        assert evaluate(tree, {"x1": x1, "x2": x2}) == pytest.approx(want, rel=1e-12)
        assert fn(x1, x2) == pytest.approx(want, rel=1e-12)


def test_vectorized_evaluation(rng):
    pts = rng.normal(size=(7, 2))
    tree = parse_expression("x1*cos(x2)")
    assert np.allclose(evaluate(tree, coordinate_env(pts)), pts[:, 0] * np.cos(pts[:, 1]), rtol=0, atol=1e-15)


def test_derivative_against_central_difference(rng):
    text = "exp(0.3*sin(2*pi*x1)*cos(x2)) + x1^3*x2 - 1/(2 + x2^2)"
    tree = parse_expression(text)
    h = 1e-6
    for x in rng.uniform(-1, 1, size=(20, 2)):
        for i, name in enumerate(("x1", "x2")):
            d = evaluate(differentiate(tree, name), coordinate_env(x))
            e = np.eye(2)[i] * h
            fd = (evaluate(tree, coordinate_env(x + e)) - evaluate(tree, coordinate_env(x - e))) / (2 * h)
            assert d == pytest.approx(fd, abs=1e-7)


# random well-formed source text
_atoms = st.one_of(
    st.sampled_from(["x1", "x2", "pi"]),
    st.integers(0, 99).map(str),
    st.floats(0.0, 100.0, allow_nan=False).map(lambda v: f"{v:.6g}".replace("e+", "e").replace("inf", "1")),
)


def _combine(children):
    binop = st.tuples(children, st.sampled_from(["+", "-", "*", "/"]), children).map(lambda t: f"{t[0]} {t[1]} {t[2]}")
    call = st.tuples(st.sampled_from(["sin", "cos", "exp"]), children).map(lambda t: f"{t[0]}({t[1]})")
    power = st.tuples(children, st.integers(-3, 3)).map(lambda t: f"({t[0]})^{t[1]}")
    paren = children.map(lambda s: f"({s})")
    neg = children.map(lambda s: f"-{s}")
    return st.one_of(binop, call, power, paren, neg)


expressions = st.recursive(_atoms, _combine, max_leaves=12)


@settings(max_examples=200, deadline=None)
@given(expressions)
def test_print_reparse_identical(text):
    tree = parse_expression(text)
    assert parse_expression(to_text(tree)) == tree


@settings(max_examples=100, deadline=None)
@given(expressions, st.floats(-2, 2), st.floats(-2, 2))
def test_evaluation_is_deterministic(text, a, b):
    tree = parse_expression(text)
    env = {"x1": np.float64(a), "x2": np.float64(b)}
    with np.errstate(all="ignore"):
        first = evaluate(tree, env)
        second = evaluate(parse_expression(to_text(tree)), env)
    assert np.array_equal(np.asarray(first), np.asarray(second), equal_nan=True)
