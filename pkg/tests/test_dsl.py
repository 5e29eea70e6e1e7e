"""Expression parsing and second-order jet evaluation.

The independent oracle for derivatives is second-order central finite
differencing of plain values; every jet path (AST walker, NumPy tape,
compiled tape) must agree with it and with each other.
"""

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nullflow import dsl
from nullflow.dsl import (DslDomainError, DslSyntaxError, Jet2, TapeBundle,
                          eval_jet2, parse)
from nullflow import _tape_py


def fd_jet(expr, x, h=1e-4):
    """Finite-difference oracle: value + central-difference grad/Hessian."""
    return eval_jet2(expr, x, mode="fd", fd_step=h)


# ---------------------------------------------------------------------------
# parsing


def test_parse_product_structure():
    e = parse("x0*x0", 1)
    assert e.root.kind == "mul"
    assert [c.kind for c in e.root.children] == ["var", "var"]


def test_parse_exp_power_structure():
    e = parse("exp(x0^2)", 1)
    assert e.root.kind == "call" and e.root.payload == "exp"
    assert e.root.children[0].kind == "pow"


def test_undeclared_variable_rejected():
    with pytest.raises(DslSyntaxError, match="undeclared variable 'x5'"):
        parse("x5", 4)


def test_unknown_identifier_rejected():
    with pytest.raises(DslSyntaxError, match="unknown identifier"):
        parse("foo + 1", 2)


def test_syntax_error_carries_position():
    with pytest.raises(DslSyntaxError) as err:
        parse("x0 + * 2", 1)
    assert "position 5" in str(err.value)


def test_empty_source_rejected():
    with pytest.raises(DslSyntaxError):
        parse("   ", 1)


def test_precedence_and_unary_minus():
    e = parse("-x0^2 + 2*3^2", 1)
    assert e.eval([2.0]) == pytest.approx(-4.0 + 18.0)


def test_pi_constant():
    assert parse("sin(pi/2)", 1).eval([0.0]) == pytest.approx(1.0)


# ---------------------------------------------------------------------------
# jets: spec examples


def test_square_jet():
    j = parse("x0*x0", 1).eval_jet2([3.0])
    assert j.value == 9.0
    assert j.grad[0] == 6.0
    assert j.hess[0, 0] == 2.0


def test_sin_jet_at_zero():
    j = parse("sin(x1)", 2).eval_jet2([0.3, 0.0])
    assert j.value == 0.0
    assert j.grad[1] == 1.0
    assert j.hess[1, 1] == 0.0


def test_exp_square_matches_finite_differences():
    e = parse("exp(x0^2)", 1)
    j = e.eval_jet2([0.5])
    f = fd_jet(e, [0.5])
    assert j.value == pytest.approx(f.value, rel=1e-12)
    assert j.grad[0] == pytest.approx(f.grad[0], rel=1e-6)
    assert j.hess[0, 0] == pytest.approx(f.hess[0, 0], rel=1e-6)


# ---------------------------------------------------------------------------
# jets: structured checks


def test_domain_error_names_subexpression():
    e = parse("1.0 + log(x0)", 1)
    with pytest.raises(DslDomainError, match="log"):
        e.eval_jet2([-2.0])


def test_division_by_zero_reported():
    e = parse("x1/x0", 2)
    with pytest.raises(DslDomainError, match="division"):
        e.eval_jet2([0.0, 1.0])


def test_fd_mode_respects_step():
    e = parse("x0^3", 1)
    coarse = eval_jet2(e, [1.0], mode="fd", fd_step=1e-2)
    fine = eval_jet2(e, [1.0], mode="fd", fd_step=1e-5)
    assert abs(fine.grad[0] - 3.0) < abs(coarse.grad[0] - 3.0) + 1e-12


def test_hessian_symmetric():
    e = parse("exp(x0*x1) * sin(x1 + x2^2)", 3)
    j = e.eval_jet2([0.3, -0.4, 0.8])
    assert np.allclose(j.hess, j.hess.T, atol=0)


def test_jet2_product_rule_exact():
    dim = 2
    a = parse("sin(x0)*x1", dim).eval_jet2([0.7, 1.3])
    b = parse("exp(x1) + x0", dim).eval_jet2([0.7, 1.3])
    prod = parse("(sin(x0)*x1)*(exp(x1) + x0)", dim).eval_jet2([0.7, 1.3])
    ab = a * b
    assert ab.value == pytest.approx(prod.value, rel=1e-14)
    assert np.allclose(ab.grad, prod.grad, rtol=1e-14)
    assert np.allclose(ab.hess, prod.hess, rtol=1e-13)


def test_jet2_scalar_mix():
    j = Jet2.variable(2.0, 0, 1)
    out = 3.0 * j - 1.0 + j / 2.0 + 2.0 / j
    assert out.value == pytest.approx(6.0 - 1.0 + 1.0 + 1.0)
    assert out.grad[0] == pytest.approx(3.0 + 0.5 - 0.5)


# ---------------------------------------------------------------------------
# tape backends


def _tape_eval_all(sources, dim, X):
    exprs = [parse(s, dim) for s in sources]
    t = TapeBundle.compile(exprs)
    res_active = t.eval_jets(X)
    res_py = _tape_py.eval_jets(t.ops, t.consts, t.outs,
                                np.ascontiguousarray(X))
    return t, res_active, res_py


def test_backends_agree():
    X = np.array([[0.5, 0.3], [1.2, -0.7], [2.0, 0.1]])
    _, (v1, g1, h1), (v2, g2, h2) = _tape_eval_all(
        ["exp(x0^2)*sin(x1) + x1/x0 - tanh(x0*x1)",
         "sqrt(x0) + x0^3 + x0^-2 + x0^0.5"], 2, X)
    assert np.allclose(v1, v2, rtol=1e-14, atol=1e-14)
    assert np.allclose(g1, g2, rtol=1e-13, atol=1e-13)
    assert np.allclose(h1, h2, rtol=1e-12, atol=1e-12)


def test_tape_matches_ast_walker():
    src = "exp(x0)*cos(x1) - x0^4/(1.0 + x1^2)"
    e = parse(src, 2)
    t = TapeBundle.compile([e])
    x = np.array([0.4, -1.1])
    v, g, h = t.eval_jets(x)
    j = e.eval_jet2(x)
    assert v[0] == pytest.approx(j.value, rel=1e-15)
    assert np.allclose(g[0], j.grad, rtol=1e-14)
    assert np.allclose(h[0], j.hess, rtol=1e-13)


def test_tape_quiet_nan_on_domain():
    t = TapeBundle.compile([parse("log(x0)", 1)])
    v = t.eval_values(np.array([[-1.0], [1.0]]))
    assert np.isnan(v[0, 0]) and v[1, 0] == 0.0


def test_general_power_via_exp_log():
    t = TapeBundle.compile([parse("x0^x1", 2)])
    v, g, h = t.eval_jets(np.array([1.7, 2.3]))
    assert v[0] == pytest.approx(1.7 ** 2.3, rel=1e-14)
    assert g[0, 0] == pytest.approx(2.3 * 1.7 ** 1.3, rel=1e-12)
    assert g[0, 1] == pytest.approx(math.log(1.7) * 1.7 ** 2.3, rel=1e-12)


# ---------------------------------------------------------------------------
# property tests


@st.composite
def expr_trees(draw, depth=0):
    """Random domain-safe expression sources over x0, x1."""
    if depth >= 3 or draw(st.booleans()):
        leaf = draw(st.sampled_from(
            ["x0", "x1", "0.5", "2.0", "1.25", "3.0"]))
        return leaf
    op = draw(st.sampled_from(["add", "sub", "mul", "sin", "cos", "tanh",
                               "exp_bounded", "log_safe", "sqrt_safe",
                               "pow_int"]))
    a = draw(expr_trees(depth=depth + 1))
    if op in ("add", "sub", "mul"):
        b = draw(expr_trees(depth=depth + 1))
        sym = {"add": "+", "sub": "-", "mul": "*"}[op]
        return f"({a} {sym} {b})"
    if op == "exp_bounded":
        return f"exp(tanh({a}))"
    if op == "log_safe":
        return f"log(1.5 + tanh({a}))"
    if op == "sqrt_safe":
        return f"sqrt(1.5 + tanh({a}))"
    if op == "pow_int":
        k = draw(st.sampled_from([2, 3]))
        return f"({a})^{k}"
    return f"{op}({a})"


@given(expr_trees(),
       st.floats(-1.5, 1.5).filter(lambda v: abs(v) > 1e-3),
       st.floats(-1.5, 1.5).filter(lambda v: abs(v) > 1e-3))
@settings(max_examples=120, deadline=None)
def test_jets_match_finite_differences(src, x0, x1):
    e = parse(src, 2)
    x = [x0, x1]
    j = e.eval_jet2(x)
    f = fd_jet(e, x, h=1e-4)
    scale = 1.0 + abs(j.value) + np.abs(j.grad).max() + np.abs(j.hess).max()
    assert np.all(np.abs(j.grad - f.grad) <= 1e-5 * scale)
    assert np.all(np.abs(j.hess - f.hess) <= 1e-4 * scale)


@given(expr_trees(),
       st.floats(-1.5, 1.5), st.floats(-1.5, 1.5))
@settings(max_examples=120, deadline=None)
def test_parse_print_roundtrip(src, x0, x1):
    e = parse(src, 2)
    e2 = parse(str(e), 2)
    v1 = e.eval([x0, x1])
    v2 = e2.eval([x0, x1])
    assert v1 == pytest.approx(v2, rel=1e-15, abs=1e-15)


@given(st.floats(-2, 2), st.floats(-2, 2), st.floats(-2, 2))
@settings(max_examples=60, deadline=None)
def test_jet_value_commutativity(a, b, c):
    dim = 1
    ja = Jet2.constant(a, dim)
    jb = Jet2.constant(b, dim)
    jc = Jet2.constant(c, dim)
    assert (ja + jb).value == (jb + ja).value
    assert (ja * jb).value == (jb * ja).value
    assert ((ja + jb) + jc).value == pytest.approx((ja + (jb + jc)).value,
                                                   rel=1e-12, abs=1e-12)
    assert ((ja * jb) * jc).value == pytest.approx((ja * (jb * jc)).value,
                                                   rel=1e-12, abs=1e-12)


def test_backend_name_reports():
    assert dsl.backend_name() in ("compiled", "python")
