import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from idg.expr import (
    ArityError, Binary, Const, DomainError, ExprMatrix, ExprSyntaxError, NonDifferentiableError,
    UnknownIdentifierError, Unary, Var, compile_exprs, depends_on, diff, evaluate, jacobian,
    max_var_index, parse, to_text,
)


@pytest.mark.parametrize("src, x, expected", [
    ("1 + 2*3", [0.0], 7.0),
    ("2^3^2", [0.0], 512.0),  # right associative
    ("-x1^2", [3.0], -9.0),  # power binds tighter than unary minus
    ("x1**2", [3.0], 9.0),
    ("(x1 - x2)/2", [5.0, 1.0], 2.0),
    ("sin(4*x1^2) + 2", [0.0], 2.0),
    ("sqrt(abs(x1))", [-4.0], 2.0),
    ("exp(0) + tan(0) + cos(0)", [0.0], 2.0),
    ("1e-3*x1", [2.0], 0.002),
    ("-2*x1 + x2", [1.0, 3.0], 1.0),
])
def test_parse_and_evaluate(src, x, expected):
    assert evaluate(parse(src), x) == pytest.approx(expected, rel=1e-15)


@pytest.mark.parametrize("src, err, offset", [
    ("1 +", ExprSyntaxError, 3),
    ("(x1", ExprSyntaxError, 3),
    ("x1 x2", ExprSyntaxError, 3),
    ("y + 1", UnknownIdentifierError, 0),
    ("2*foo(x1)", UnknownIdentifierError, 2),
    ("x0", UnknownIdentifierError, 0),
])
def test_parse_errors_carry_offset(src, err, offset):
    with pytest.raises(err) as info:
        parse(src)
    assert info.value.offset == offset


def test_arity_error():
    with pytest.raises(ArityError):
        parse("sin(x1, x2)")


@pytest.mark.parametrize("src, x", [("1/x1", [0.0]), ("sqrt(x1)", [-1.0]), ("x1^0.5", [-2.0]), ("x1^-1", [0.0])])
def test_domain_errors(src, x):
    with pytest.raises(DomainError):
        evaluate(parse(src), x)
    with pytest.raises(DomainError):
        compile_exprs([parse(src)])(np.array(x))


def test_abs_not_differentiable():
    with pytest.raises(NonDifferentiableError):
        diff(parse("abs(x1)"), 0)


def test_variable_exponent_not_differentiable():
    with pytest.raises(NonDifferentiableError):
        diff(parse("2^x1"), 0)


@pytest.mark.parametrize("src, index, expected_src", [
    ("x1^2", 0, "2*x1"),
    ("x1*x2", 1, "x1"),
    ("sin(4*x1^2) + 2", 0, "8*x1*cos(4*x1^2)"),
    ("cos(2*x1)", 0, "-2*sin(2*x1)"),
    ("exp(x1*x2)", 0, "x2*exp(x1*x2)"),
    ("x2^2", 0, "0"),
    ("x1/x2", 1, "-x1/x2^2"),
    ("sqrt(x1)", 0, "0.5/sqrt(x1)"),
    ("tan(x1)", 0, "1 + tan(x1)^2"),
])
def test_diff_against_hand_derivatives(src, index, expected_src):
    d, ref = diff(parse(src), index), parse(expected_src)
    for x in ([0.7, 1.3], [1.9, -0.4], [0.2, 2.5]):
        assert evaluate(d, x) == pytest.approx(evaluate(ref, x), rel=1e-12, abs=1e-14)


# random expression trees over x1, x2 built from smooth operations
_leaf = st.one_of(st.sampled_from([Var(0), Var(1)]),
                  st.floats(-3, 3, allow_nan=False).map(lambda v: Const(round(v, 3))))


def _grow(children):
    return st.one_of(
        st.tuples(st.sampled_from("+-*"), children, children).map(lambda t: Binary(t[0], t[1], t[2])),
        st.tuples(st.sampled_from(["sin", "cos", "neg"]), children).map(lambda t: Unary(t[0], t[1])),
        children.map(lambda c: Binary("^", c, Const(2.0))),
    )


exprs = st.recursive(_leaf, _grow, max_leaves=8)
points = st.lists(st.floats(-1.5, 1.5, allow_nan=False), min_size=2, max_size=2)


@settings(max_examples=150, deadline=None)
@given(exprs, points)
def test_print_parse_roundtrip(e, x):
    back = parse(to_text(e))
    assert evaluate(back, x) == pytest.approx(evaluate(e, x), rel=1e-12, abs=1e-12)


@settings(max_examples=150, deadline=None)
@given(exprs, points, st.sampled_from([0, 1]))
def test_diff_matches_central_difference(e, x, j):
    h = 1e-6
    xp, xm = list(x), list(x)
    xp[j] += h
    xm[j] -= h
    fd = (evaluate(e, xp) - evaluate(e, xm)) / (2 * h)
    g = evaluate(diff(e, j), x)
    assert abs(g - fd) <= 1e-5 * max(1.0, abs(g))


@settings(max_examples=100, deadline=None)
@given(st.lists(exprs, min_size=1, max_size=4))
def test_compiled_equals_interpreted(es):
    X = np.random.default_rng(0).uniform(-1, 1, size=(2, 7))
    out = compile_exprs(es)(X)
    assert out.shape == (len(es), 7)
    for k, e in enumerate(es):
        ref = np.broadcast_to(evaluate(e, list(X)), (7,))
        np.testing.assert_allclose(out[k], ref, rtol=1e-13, atol=1e-13)


def test_depends_and_max_index():
    e = parse("x1 + 0*x3")
    assert max_var_index(e) == 2
    assert depends_on(e, 0)
    assert not depends_on(e, 1)
    assert max_var_index(parse("3")) == -1


def test_evaluate_rejects_short_state():
    with pytest.raises(ValueError):
        evaluate(parse("x3"), [1.0, 2.0])


def test_matrix_and_jacobian():
    G = ExprMatrix.parse([["0"], ["cos(2*x1) + 2"]])
    assert G.shape == (2, 1)
    np.testing.assert_allclose(G.evaluate([0.0, 0.0])[:, 0], [0.0, 3.0])
    J = jacobian([parse("x1^2"), parse("x1*x2")], 2)
    np.testing.assert_allclose(J.evaluate([2.0, 3.0]), [[4.0, 0.0], [3.0, 2.0]])
    assert G.transpose().shape == (1, 2)
    assert ExprMatrix.parse(G.to_text()) == G
    with pytest.raises(AttributeError):
        G.shape = (1, 1)


def test_batched_evaluation_shape():
    M = ExprMatrix.parse([["x1", "1"], ["x2", "x1*x2"]])
    X = np.arange(10.0).reshape(2, 5)
    out = M.evaluate(X)
    assert out.shape == (2, 2, 5)
    np.testing.assert_allclose(out[0, 1], 1.0)
    np.testing.assert_allclose(out[1, 1], X[0] * X[1])


def test_nonfinite_constant_not_printable():
    with pytest.raises(Exception):
        to_text(Const(math.inf))
