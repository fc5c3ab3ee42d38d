import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from blowup import expr as ex

NAMES = ("u", "v")


def test_precedence_and_unary_minus():
    e = ex.parse("-u^2 + 2*v/4 - t", NAMES)
    assert ex.evaluate(e, 1.5, [3.0, 2.0]) == pytest.approx(-9 + 1 - 1.5)


def test_unary_minus_binds_looser_than_power():
    assert ex.evaluate(ex.parse("-u^2", NAMES), 0, [3.0, 0]) == -9.0
    assert ex.evaluate(ex.parse("-2^2", NAMES), 0, [0, 0]) == -4.0


def test_power_does_not_chain():
    with pytest.raises(ex.ParseError):
        ex.parse("2^3^2", NAMES)


def test_examples_from_the_grammar():
    assert ex.evaluate(ex.parse("6*u^2 + t", NAMES), 0, [1.0, 0]) == 6.0
    e = ex.parse("-u1^3 - 2*u1*u2^2*sin(t)", ("u1", "u2"))
    assert ex.evaluate(e, math.pi / 2, [1.0, 1.0]) == pytest.approx(-3.0)


@pytest.mark.parametrize("src, value", [
    ("sin(t)", math.sin(0.3)), ("cos(u)", math.cos(1.0)), ("exp(v)", math.exp(2.0)),
    ("log(v)", math.log(2.0)), ("sqrt(v)", math.sqrt(2.0)), ("abs(-u)", 1.0), ("sign(-v)", -1.0),
])
def test_functions(src, value):
    assert ex.evaluate(ex.parse(src, NAMES), 0.3, [1.0, 2.0]) == pytest.approx(value)


def test_params_are_folded():
    e = ex.parse("u^(1-m) * beta", NAMES, {"m": -1, "beta": 3})
    assert ex.evaluate(e, 0, [2.0, 0]) == pytest.approx(12.0)


@pytest.mark.parametrize("src, offset", [("u + * v", 4), ("u + w", 4), ("sin(u", 5), ("u^v", 2), ("", 0)])
def test_parse_errors_report_offset(src, offset):
    with pytest.raises(ex.ParseError) as info:
        ex.parse(src, NAMES)
    assert info.value.offset == offset


def test_offset_is_in_bytes():
    with pytest.raises(ex.ParseError) as info:
        ex.parse("u + é", NAMES)
    assert info.value.offset == 4


@pytest.mark.parametrize("src, y", [("log(u)", [0.0, 1]), ("sqrt(u)", [-1.0, 1]), ("u^0.5", [-1.0, 1])])
def test_domain_errors(src, y):
    with pytest.raises(ex.DomainError):
        ex.evaluate(ex.parse(src, NAMES), 0, y)


def test_division_by_zero():
    with pytest.raises(ZeroDivisionError):
        ex.evaluate(ex.parse("1/u", NAMES), 0, [0.0, 1.0])


def test_vectorized_marks_domain_errors_as_nan():
    f = ex.compile_exprs([ex.parse("log(u)", NAMES), ex.parse("v", NAMES)], 2, vectorized=True)
    a, b = f(0.0, np.array([[1.0, -1.0], [5.0, 6.0]]))
    assert a[0] == 0.0 and math.isnan(a[1])
    assert list(b) == [5.0, 6.0]


def test_substitute():
    e = ex.parse("u*v", NAMES)
    s = ex.substitute(e, {1: ex.parse("2*t", NAMES)})
    assert ex.evaluate(s, 3.0, [0, 5.0]) == pytest.approx(30.0)


def test_variables():
    assert ex.variables(ex.parse("t*u + 1", NAMES)) == {0, 1}


# ---------------------------------------------------------------- properties

leaf = st.one_of(
    st.floats(-3, 3, allow_nan=False).map(lambda v: ex.Const(round(v, 3))),
    st.sampled_from([ex.time_var(), ex.state_var(0, "u"), ex.state_var(1, "v")]),
)


def _extend(children):
    return st.one_of(
        st.tuples(st.sampled_from("+-*"), children, children).map(lambda a: ex.BinOp(a[0], a[1], a[2])),
        st.tuples(children, st.integers(0, 4)).map(lambda a: ex.Pow(a[0], float(a[1]))),
        st.tuples(st.sampled_from(["sin", "cos", "exp"]), children).map(lambda a: ex.Call(a[0], a[1])),
        children.map(ex.Neg),
    )


trees = st.recursive(leaf, _extend, max_leaves=8)
points = st.tuples(*(st.floats(-1.5, 1.5, allow_nan=False) for _ in range(3)))


def _safe(e, t, x):
    try:
        v = ex.evaluate(e, t, x)
    except (ArithmeticError, OverflowError):
        return None
    return v if math.isfinite(v) and abs(v) < 1e8 else None


@settings(max_examples=200, deadline=None)
@given(trees, points)
def test_print_parse_round_trip(e, p):
    t, *x = p
    back = ex.parse(ex.to_string(e), NAMES)
    a, b = _safe(e, t, x), _safe(back, t, x)
    assume(a is not None)
    assert b == pytest.approx(a, rel=1e-12, abs=1e-12)


@settings(max_examples=200, deadline=None)
@given(trees, points, st.integers(0, 2))
def test_derivative_matches_finite_difference(e, p, var):
    t, *x = p
    pt = [t, *x]
    d = ex.diff(e, var)
    h = 1e-5
    up, dn = list(pt), list(pt)
    up[var] += h
    dn[var] -= h
    fu, fd, dv = _safe(e, up[0], up[1:]), _safe(e, dn[0], dn[1:]), _safe(d, t, x)
    assume(None not in (fu, fd, dv))
    fd_val = (fu - fd) / (2 * h)
    assert dv == pytest.approx(fd_val, rel=1e-4, abs=1e-4 * (1 + abs(fu)))


@settings(max_examples=100, deadline=None)
@given(trees, points)
def test_compiled_matches_interpreter(e, p):
    t, *x = p
    a = _safe(e, t, x)
    assume(a is not None)
    (b,) = ex.compile_exprs([e], 2)(t, x)
    assert b == pytest.approx(a, rel=1e-12, abs=1e-12)
