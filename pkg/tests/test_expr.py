import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from kinkopt import expr as ex


def val(text, x1=0.0, x2=0.0, **kw):
    return float(ex.evaluate(ex.parse_expr(text), {"x1": x1, "x2": x2, **kw}))


@pytest.mark.parametrize("text, point, expected", [
    ("2+3*4", (0.7, -1.2), 14.0),
    ("x1^2 + sin(x2)", (0.0, 0.0), 0.0),
    ("abs(x1 - 1)", (3.0, 0.0), 2.0),
    ("exp(0*x1)", (5.0, -3.0), 1.0),
    ("(1-x1^2)*(1-x2^2)", (0.0, 0.0), 1.0),
])
def test_parse_examples(text, point, expected):
    assert ex.eval_field(ex.parse_expr(text), point) == pytest.approx(expected)


def test_precedence_and_associativity():
    assert val("2^3^2") == 512.0           # right associative
    assert val("-2^2") == -4.0             # ^ binds tighter than unary minus
    assert val("8/4/2") == 1.0             # left associative
    assert val("10-4-3") == 3.0
    assert val("2*-3") == -6.0
    assert val("2^-1") == 0.5
    assert val("max(1, 5, 3) - min(4, 2)") == 3.0
    assert val("1.5e2 + .5") == 150.5
    assert val("pi") == pytest.approx(math.pi)


def test_syntax_errors_carry_offset_and_expected():
    with pytest.raises(ex.ParseError) as info:
        ex.parse_expr("1 + * 2")
    assert info.value.offset == 4
    assert "NUMBER" in info.value.expected
    with pytest.raises(ex.ParseError):
        ex.parse_expr("--x1")
    with pytest.raises(ex.ParseError):
        ex.parse_expr("sin(x1")
    with pytest.raises(ex.ParseError):
        ex.parse_expr("")
    with pytest.raises(ex.ParseError):
        ex.parse_expr("x1 $ 2")


def test_min_max_need_two_arguments():
    with pytest.raises(ex.ParseError):
        ex.parse_expr("min(x1)")


def test_unknown_identifier():
    with pytest.raises(ex.UnknownIdentifierError):
        ex.parse_expr("tan(x1)")
    with pytest.raises(ex.UnknownIdentifierError):
        ex.parse_expr("z + 1")


@pytest.mark.parametrize("text", ["1/(x1)", "sqrt(x1 - 1)", "log(x1)", "exp(1000) * x2 + exp(1000)"])
def test_domain_errors(text):
    with pytest.raises(ex.DomainError):
        ex.eval_field(ex.parse_expr(text), (0.0, 0.0))


def test_derivative_examples():
    d = ex.differentiate(ex.parse_expr("x1*x2"), "x1")
    pts = np.random.default_rng(0).normal(size=(20, 2))
    assert np.allclose(ex.evaluate(d, {"x1": pts[:, 0], "x2": pts[:, 1]}), pts[:, 1])
    lap = ex.laplacian(ex.parse_expr("x1^2 + x2^2"))
    assert np.allclose(ex.evaluate(lap, {"x1": pts[:, 0], "x2": pts[:, 1]}), 4.0)
    assert ex.eval_field(ex.differentiate(ex.parse_expr("sin(x1)"), "x1"), (0.0, 0.0)) == 1.0


def test_abs_min_max_kink_convention():
    d = ex.differentiate(ex.parse_expr("abs(x1)"), "x1")
    assert ex.eval_field(d, (0.0, 0.0)) == 0.0
    assert ex.eval_field(d, (-2.0, 0.0)) == -1.0
    dm = ex.differentiate(ex.parse_expr("max(x1, x2)"), "x1")
    assert ex.eval_field(dm, (1.0, 0.0)) == 1.0
    assert ex.eval_field(dm, (0.0, 1.0)) == 0.0


def test_diffexpr_grad_and_lap_shapes():
    f = ex.field("x1^2*x2 + exp(x2)")
    x = np.linspace(0, 1, 7).reshape(7, 1) * np.ones((1, 3))
    assert f(x, x).shape == (7, 3)
    assert f.grad(x, x).shape == (7, 3, 2)
    assert np.allclose(f.lap(x, x), 2 * x + np.exp(x))


def test_evaluation_is_deterministic_and_pure():
    e = ex.parse_expr("sin(x1)*exp(x2)/(1+x1^2)")
    before = ex.to_string(e)
    a = ex.eval_field(e, (0.3, 0.7))
    b = ex.eval_field(e, (0.3, 0.7))
    assert a == b
    assert ex.to_string(e) == before


# ----------------------------------------------------------- properties

LEAVES = st.one_of(
    st.sampled_from(["x1", "x2", "y", "pi"]),
    st.floats(min_value=0, max_value=1e3, allow_nan=False).map(repr),
    st.integers(min_value=0, max_value=99).map(str),
)


def _compose(children):
    binop = st.tuples(children, st.sampled_from(["+", "-", "*", "/", "^"]), children).map(
        lambda t: f"({t[0]} {t[1]} {t[2]})")
    unary = children.map(lambda c: f"(-{c})")
    call1 = st.tuples(st.sampled_from(["sin", "cos", "exp", "sqrt", "abs", "log", "sign"]),
                      children).map(lambda t: f"{t[0]}({t[1]})")
    calln = st.tuples(st.sampled_from(["min", "max"]), st.lists(children, min_size=2, max_size=3)).map(
        lambda t: f"{t[0]}({', '.join(t[1])})")
    return st.one_of(binop, unary, call1, calln)


EXPRESSIONS = st.recursive(LEAVES, _compose, max_leaves=12)


@given(EXPRESSIONS)
def test_round_trip(text):
    e = ex.parse_expr(text)
    assert ex.parse_expr(ex.to_string(e)) == e


def test_round_trip_fixed_corpus():
    corpus = [
        "1", "x1", "-x1", "x1+x2", "x1-x2-y", "x1*x2/y", "x1^x2^2", "-x1^2", "2*-x1",
        "sin(x1)", "cos(x2)^2", "exp(-x1)", "sqrt(abs(x1))", "min(x1,x2)", "max(x1,x2,y)",
        "(1-x1^2)*(1-x2^2)", "0.5*(y-1.5*sin(pi*x1)*sin(pi*x2))^2", "abs(y-0.5)", "y^2",
        "1e-3*x1", "3.25E+2", ".5", "x1/(1+x2^2)", "sign(x1-x2)", "log(1+x1^2)",
        "((x1))", "-(x1+x2)", "x1^-1", "2^-x2", "pi*x1", "sin(pi*x1)*sin(pi*x2)",
        "exp(-10*((x1-0.3)^2+(x2-0.4)^2))", "x2+0.5-0.5*x1^2", "0.9*(1-x1^2)*(1-x2^2)",
        "max(0, x1) - min(0, x2)", "abs(abs(x1)-1)", "x1*x1*x1", "x1+x1+x1+x1", "(x1+x2)^(1/2)",
        "y*exp(y)", "cos(sin(cos(x1)))", "1/(1+exp(-x1))", "x1^2+x2^2", "x1-0.2",
        "0.1-y", "y-0.1", "2*x1*x2-x1^2", "-(-(-x1))^2", "min(x1, 1)", "max(1,2,3,4,5)",
        "sqrt(x1^2+x2^2+1)",
    ]
    assert len(corpus) >= 50
    for text in corpus:
        e = ex.parse_expr(text)
        assert ex.parse_expr(ex.to_string(e)) == e, text


SMOOTH = st.sampled_from([
    "x1*x2", "sin(x1)*cos(x2)", "exp(x1-x2)", "(1-x1^2)*(1-x2^2)", "x1^3 - 2*x1*x2^2",
    "sqrt(1+x1^2+x2^2)", "x1/(2+x2)", "log(2+x1*x2)", "cos(pi*x1)*x2^2", "exp(-x1^2)*sin(3*x2)",
    "abs(x1-3)*x2", "max(x1, x2+5)", "x1^x2",
])


@given(SMOOTH, st.integers(min_value=0, max_value=2**31))
def test_symbolic_gradient_matches_central_differences(text, seed):
    f = ex.field(text)
    rng = np.random.default_rng(seed)
    p = rng.uniform(0.2, 1.0, size=(100, 2))
    h = 1e-5
    g = f.grad(p[:, 0], p[:, 1])
    fd1 = (f(p[:, 0] + h, p[:, 1]) - f(p[:, 0] - h, p[:, 1])) / (2 * h)
    fd2 = (f(p[:, 0], p[:, 1] + h) - f(p[:, 0], p[:, 1] - h)) / (2 * h)
    scale = np.maximum(1.0, np.abs(g))
    assert np.all(np.abs(g[:, 0] - fd1) <= 1e-6 * scale[:, 0])
    assert np.all(np.abs(g[:, 1] - fd2) <= 1e-6 * scale[:, 1])


def test_derivative_in_state_variable():
    d = ex.differentiate(ex.parse_expr("0.5*(y-x1)^2"), "y")
    assert ex.evaluate(d, {"x1": 1.0, "x2": 0.0, "y": 3.0}) == pytest.approx(2.0)
    with pytest.raises(ex.ExprError):
        ex.differentiate(ex.parse_expr("x1"), "z")


def test_substitute_and_free_variables():
    e = ex.substitute(ex.parse_expr("y^2 + x1"), {"y": ex.parse_expr("sin(x2)")})
    assert ex.free_variables(e) == {"x1", "x2"}
    assert ex.free_variables(ex.parse_expr("pi*x1")) == {"x1"}
