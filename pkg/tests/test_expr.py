from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from artifact import expr as ex


def test_example_coefficients_evaluate_to_hand_values():
    gu = ex.parse("1-cos(2*v)+v*cos(2)")
    assert ex.evaluate(gu, v=1.0) == pytest.approx(1.0, abs=1e-15)
    lam = ex.parse("max(1-0.5*abs(v),0.2)")
    assert ex.evaluate(lam, v=1.0) == 0.5
    assert ex.evaluate(lam, v=3.0) == 0.2


def test_derivatives_match_hand_values():
    gu = ex.parse("1-cos(2*v)+v*cos(2)")
    d = ex.evaluate(ex.differentiate(gu, "v"), v=1.0)
    assert d == pytest.approx(2 * math.sin(2) + math.cos(2), rel=1e-14)
    lam = ex.parse("max(1-0.5*abs(v),0.2)")
    assert ex.evaluate(ex.differentiate(lam, "v"), v=1.0) == -0.5
    assert ex.evaluate(ex.differentiate(lam, "v"), v=-1.0) == 0.5
    assert ex.evaluate(ex.differentiate(lam, "v"), v=2.0) == 0.0


@pytest.mark.parametrize(
    "text, offset",
    [("1+*u", 2), ("sin(u", 5), ("foo(u)", 0), ("u + $", 4), ("min(u)", 0), ("", 0)],
)
def test_syntax_errors_report_byte_offset(text, offset):
    with pytest.raises(ex.ExprSyntaxError) as info:
        ex.parse(text)
    assert info.value.offset == offset
    assert f"at byte {offset}" in str(info.value)


def test_unknown_variable_is_rejected():
    with pytest.raises(ex.ExprSyntaxError):
        ex.parse("y + 1")


@pytest.mark.parametrize(
    "text, kwargs",
    [("1/u", {"u": 0.0}), ("log(u)", {"u": -1.0}), ("exp(u)", {"u": 1e4}), ("pow(u, 0.5)", {"u": -2.0})],
)
def test_domain_errors_raise(text, kwargs):
    with pytest.raises(ex.ExprEvalError):
        ex.evaluate(ex.parse(text), **kwargs)


def test_variables_and_precedence():
    ast = ex.parse("-x*2 + u/v - t")
    assert ex.variables(ast) == {"x", "u", "v", "t"}
    assert ex.evaluate(ex.parse("2+3*4"), 0) == 14.0
    assert ex.evaluate(ex.parse("-2*3"), 0) == -6.0
    assert ex.evaluate(ex.parse("(2+3)*4"), 0) == 20.0
    assert ex.evaluate(ex.parse("8/4/2"), 0) == 1.0
    assert ex.evaluate(ex.parse("1e-3*2"), 0) == 0.002


def test_numpy_form_agrees_with_scalar_evaluation():
    ast = ex.parse("max(1-0.5*abs(v),0.2) + sin(x)*u - pow(exp(t), 2)")
    f = ex.to_numpy(ast)
    xs = np.linspace(0, 1, 7)
    us = np.linspace(-2, 2, 7)
    out = f(xs, us, us[::-1], xs)
    ref = [ex.evaluate(ast, a, b, c, d) for a, b, c, d in zip(xs, us, us[::-1], xs)]
    np.testing.assert_allclose(out, ref, rtol=1e-14)


# -- property based ---------------------------------------------------------

_leaf = st.one_of(
    st.sampled_from(["x", "u", "v", "t"]),
    st.floats(min_value=0.1, max_value=3.0, allow_nan=False).map(lambda c: repr(round(c, 3))),
)


def _combine(children):
    binop = st.tuples(children, st.sampled_from(["+", "-", "*"]), children).map(lambda p: f"({p[0]} {p[1]} {p[2]})")
    unary = st.tuples(st.sampled_from(["sin", "cos", "abs", "-"]), children).map(
        lambda p: f"{p[0]}({p[1]})" if p[0] != "-" else f"(-{p[1]})"
    )
    binf = st.tuples(st.sampled_from(["min", "max"]), children, children).map(lambda p: f"{p[0]}({p[1]}, {p[2]})")
    return st.one_of(binop, unary, binf)


expressions = st.recursive(_leaf, _combine, max_leaves=8)
points = st.tuples(*(st.floats(min_value=-1.5, max_value=1.5) for _ in range(4)))


@settings(max_examples=150, deadline=None)
@given(expressions, points)
def test_print_parse_round_trip(text, point):
    ast = ex.parse(text)
    again = ex.parse(ex.to_string(ast))
    assert ex.evaluate(again, *point) == pytest.approx(ex.evaluate(ast, *point), rel=1e-12, abs=1e-12)
    assert ex.to_string(again) == ex.to_string(ast)


def _at_kink(node, point, eps=1e-9) -> bool:
    """True if some abs/sign argument is zero or some min/max is tied at ``point``."""
    if isinstance(node, ex.Call):
        vals = [ex.evaluate(a, *point) for a in node.args]
        if node.fn in ("abs", "sign") and abs(vals[0]) < eps:
            return True
        if node.fn in ("min", "max") and abs(vals[0] - vals[1]) < eps:
            return True
        return any(_at_kink(a, point, eps) for a in node.args)
    if isinstance(node, ex.BinOp):
        return _at_kink(node.left, point, eps) or _at_kink(node.right, point, eps)
    if isinstance(node, ex.Neg):
        return _at_kink(node.arg, point, eps)
    return False


@settings(max_examples=150, deadline=None)
@given(expressions, points, st.sampled_from(["x", "u", "v", "t"]))
def test_derivative_matches_central_difference(text, point, var):
    ast = ex.parse(text)
    if _at_kink(ast, point):
        # tie-breaking rules pick one branch, which need not match a smooth composite
        return
    d = ex.differentiate(ast, var)
    i = "xuvt".index(var)
    h = 1e-6
    hi = list(point)
    lo = list(point)
    hi[i] += h
    lo[i] -= h
    fd = (ex.evaluate(ast, *hi) - ex.evaluate(ast, *lo)) / (2 * h)
    exact = ex.evaluate(d, *point)
    # abs/min/max kinks make the difference quotient meaningless right at the kink
    second = (ex.evaluate(ast, *hi) - 2 * ex.evaluate(ast, *point) + ex.evaluate(ast, *lo)) / h**2
    if abs(second) * h > 1e-3:
        return
    assert exact == pytest.approx(fd, rel=1e-5, abs=1e-5)
