"""Scalar expression DSL with exact first and second derivatives.

Metric components, weight functions and seed parametrizations are all plain
text expressions over chart variables ``x0 .. x{dim-1}``.  Parsing produces
an AST; evaluation propagates second-order forward jets (value, gradient,
Hessian), which is exactly the differentiation order needed for curvature.

Grammar (conventional precedence, ``^`` binds tightest and associates
right)::

    expr   := term (("+" | "-") term)*
    term   := unary (("*" | "/") unary)*
    unary  := "-" unary | power
    power  := atom ("^" unary)?
    atom   := NUMBER | "pi" | VAR | FUNC "(" expr ")" | "(" expr ")"
    VAR    := "x0" | "x1" | ... (bounded by the declared dimension)
    FUNC   := sin | cos | exp | log | sqrt | tanh

Hot paths do not walk the AST: expressions compile to a flat tape which is
evaluated over batches of points by a compiled kernel (``_tape_cy``) or by a
vectorized NumPy fallback (``_tape_py``), whichever import selects.
"""

from __future__ import annotations

import math
import os
import re
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "DslError",
    "DslSyntaxError",
    "DslDomainError",
    "Expression",
    "Jet2",
    "TapeBundle",
    "parse",
    "eval_jet2",
    "backend_name",
]


class DslError(ValueError):
    """Base class for expression errors."""


class DslSyntaxError(DslError):
    """Raised on malformed source or undeclared identifiers."""

    def __init__(self, message, source, pos):
        super().__init__(f"{message} at position {pos}: {source!r}")
        self.source = source
        self.pos = pos


class DslDomainError(DslError):
    """Raised when evaluation leaves a function's domain (log of a
    non-positive value, division by zero, ...)."""

    def __init__(self, message, source, span):
        snippet = source[span[0]:span[1]]
        super().__init__(f"{message} in subexpression {snippet!r} "
                         f"(cols {span[0]}..{span[1]} of {source!r})")
        self.source = source
        self.span = span


_FUNCTIONS = ("sin", "cos", "exp", "log", "sqrt", "tanh")

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>\d+\.\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?"
    r"|\d+(?:[eE][+-]?\d+)?)|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^()]))"
)


@dataclass(frozen=True)
class Node:
    """AST node.  ``payload`` holds the literal value for ``num``, the
    variable index for ``var`` and the function name for ``call``."""

    kind: str
    children: tuple = ()
    payload: object = None
    span: tuple = (0, 0)


def _tokenize(source):
    tokens = []
    pos = 0
    while pos < len(source):
        m = _TOKEN_RE.match(source, pos)
        if m is None or m.end() == pos:
            stripped = source[pos:].lstrip()
            if not stripped:
                break
            raise DslSyntaxError(f"unexpected character {stripped[0]!r}",
                                 source, len(source) - len(stripped))
        if m.group("num") is not None:
            tokens.append(("num", float(m.group("num")), m.start("num"), m.end("num")))
        elif m.group("name") is not None:
            tokens.append(("name", m.group("name"), m.start("name"), m.end("name")))
        else:
            tokens.append(("op", m.group("op"), m.start("op"), m.end("op")))
        pos = m.end()
    tokens.append(("end", None, len(source), len(source)))
    return tokens


class _Parser:
    def __init__(self, source, dim):
        self.source = source
        self.dim = dim
        self.tokens = _tokenize(source)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def next(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect_op(self, op):
        kind, val, start, _ = self.next()
        if kind != "op" or val != op:
            raise DslSyntaxError(f"expected {op!r}", self.source, start)

    def parse(self):
        node = self.expr()
        kind, _, start, _ = self.peek()
        if kind != "end":
            raise DslSyntaxError("trailing input", self.source, start)
        return node

    def expr(self):
        node = self.term()
        while True:
            kind, val, _, _ = self.peek()
            if kind == "op" and val in "+-":
                self.next()
                rhs = self.term()
                node = Node("add" if val == "+" else "sub", (node, rhs),
                            span=(node.span[0], rhs.span[1]))
            else:
                return node

    def term(self):
        node = self.unary()
        while True:
            kind, val, _, _ = self.peek()
            if kind == "op" and val in "*/":
                self.next()
                rhs = self.unary()
                node = Node("mul" if val == "*" else "div", (node, rhs),
                            span=(node.span[0], rhs.span[1]))
            else:
                return node

    def unary(self):
        kind, val, start, _ = self.peek()
        if kind == "op" and val == "-":
            self.next()
            inner = self.unary()
            return Node("neg", (inner,), span=(start, inner.span[1]))
        return self.power()

    def power(self):
        base = self.atom()
        kind, val, _, _ = self.peek()
        if kind == "op" and val == "^":
            self.next()
            exponent = self.unary()
            return Node("pow", (base, exponent),
                        span=(base.span[0], exponent.span[1]))
        return base

    def atom(self):
        kind, val, start, end = self.next()
        if kind == "num":
            return Node("num", payload=val, span=(start, end))
        if kind == "name":
            if val == "pi":
                return Node("num", payload=math.pi, span=(start, end))
            if val in _FUNCTIONS:
                self.expect_op("(")
                arg = self.expr()
                nxt = self.next()
                if nxt[0] != "op" or nxt[1] != ")":
                    raise DslSyntaxError("expected ')'", self.source, nxt[2])
                return Node("call", (arg,), payload=val, span=(start, nxt[3]))
            m = re.fullmatch(r"x(\d+)", val)
            if m:
                idx = int(m.group(1))
                if idx >= self.dim:
                    raise DslSyntaxError(
                        f"undeclared variable {val!r} (dimension is {self.dim})",
                        self.source, start)
                return Node("var", payload=idx, span=(start, end))
            raise DslSyntaxError(f"unknown identifier {val!r}", self.source, start)
        if kind == "op" and val == "(":
            node = self.expr()
            nxt = self.next()
            if nxt[0] != "op" or nxt[1] != ")":
                raise DslSyntaxError("expected ')'", self.source, nxt[2])
            return node
        raise DslSyntaxError("expected a value", self.source, start)


# ---------------------------------------------------------------------------
# Jet2: second-order forward-mode value


class Jet2:
    """Value together with gradient and (symmetric) Hessian w.r.t. the
    chart variables.  Arithmetic implements the exact product/chain rules;
    this is the scalar reference path, the batched kernels mirror it."""

    __slots__ = ("value", "grad", "hess")

    def __init__(self, value, grad, hess):
        self.value = float(value)
        self.grad = np.asarray(grad, dtype=float)
        self.hess = np.asarray(hess, dtype=float)

    @staticmethod
    def variable(value, index, dim):
        grad = np.zeros(dim)
        grad[index] = 1.0
        return Jet2(value, grad, np.zeros((dim, dim)))

    @staticmethod
    def constant(value, dim):
        return Jet2(value, np.zeros(dim), np.zeros((dim, dim)))

    def _lift(self, other):
        if isinstance(other, Jet2):
            return other
        return Jet2.constant(float(other), self.grad.shape[0])

    def __add__(self, other):
        o = self._lift(other)
        return Jet2(self.value + o.value, self.grad + o.grad, self.hess + o.hess)

    __radd__ = __add__

    def __sub__(self, other):
        o = self._lift(other)
        return Jet2(self.value - o.value, self.grad - o.grad, self.hess - o.hess)

    def __rsub__(self, other):
        return self._lift(other).__sub__(self)

    def __neg__(self):
        return Jet2(-self.value, -self.grad, -self.hess)

    def __mul__(self, other):
        o = self._lift(other)
        cross = np.outer(self.grad, o.grad)
        return Jet2(self.value * o.value,
                    self.grad * o.value + o.grad * self.value,
                    self.hess * o.value + o.hess * self.value + cross + cross.T)

    __rmul__ = __mul__

    def __truediv__(self, other):
        o = self._lift(other)
        if o.value == 0.0:
            raise ZeroDivisionError("division by zero")
        q = self.value / o.value
        qg = (self.grad - q * o.grad) / o.value
        cross = np.outer(qg, o.grad)
        qh = (self.hess - q * o.hess - cross - cross.T) / o.value
        return Jet2(q, qg, qh)

    def __rtruediv__(self, other):
        return self._lift(other).__truediv__(self)

    def __pow__(self, exponent):
        if isinstance(exponent, Jet2):
            if np.any(exponent.grad) or np.any(exponent.hess):
                return _jet_exp(_jet_log(self) * exponent)
            exponent = exponent.value
        c = float(exponent)
        if c == int(c):
            k = int(c)
            if k == 0:
                return Jet2.constant(1.0, self.grad.shape[0])
            if k == 1:
                return Jet2(self.value, self.grad.copy(), self.hess.copy())
            v = self.value
            return _apply_unary(self, v ** k, k * v ** (k - 1),
                                k * (k - 1) * v ** (k - 2))
        if self.value <= 0.0:
            raise ValueError("non-integer power of a non-positive base")
        v = self.value
        return _apply_unary(self, v ** c, c * v ** (c - 1.0),
                            c * (c - 1.0) * v ** (c - 2.0))


def _apply_unary(jet, f0, f1, f2):
    cross = np.outer(jet.grad, jet.grad)
    return Jet2(f0, f1 * jet.grad, f1 * jet.hess + f2 * cross)


def _jet_sin(j):
    return _apply_unary(j, math.sin(j.value), math.cos(j.value), -math.sin(j.value))


def _jet_cos(j):
    return _apply_unary(j, math.cos(j.value), -math.sin(j.value), -math.cos(j.value))


def _jet_exp(j):
    e = math.exp(j.value)
    return _apply_unary(j, e, e, e)


def _jet_log(j):
    if j.value <= 0.0:
        raise ValueError("log of a non-positive value")
    return _apply_unary(j, math.log(j.value), 1.0 / j.value, -1.0 / j.value ** 2)


def _jet_sqrt(j):
    if j.value < 0.0:
        raise ValueError("sqrt of a negative value")
    s = math.sqrt(j.value)
    return _apply_unary(j, s, 0.5 / s, -0.25 / (s * j.value))


def _jet_tanh(j):
    t = math.tanh(j.value)
    sech2 = 1.0 - t * t
    return _apply_unary(j, t, sech2, -2.0 * t * sech2)


_JET_FUNCS = {
    "sin": _jet_sin,
    "cos": _jet_cos,
    "exp": _jet_exp,
    "log": _jet_log,
    "sqrt": _jet_sqrt,
    "tanh": _jet_tanh,
}


# ---------------------------------------------------------------------------
# Expression object


@dataclass
class Expression:
    """Parsed expression.  Immutable after construction; safe to share
    across workers."""

    source: str
    dim: int
    root: Node = field(repr=False)

    def __str__(self):
        return _unparse(self.root)

    def eval(self, x):
        """Plain value at a point, via the AST (strict error reporting)."""
        return self._walk(self.root, np.asarray(x, dtype=float), jets=False)

    def eval_jet2(self, x):
        """Value, gradient and Hessian at ``x`` as a :class:`Jet2`."""
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dim,):
            raise DslError(f"point has shape {x.shape}, expected ({self.dim},)")
        return self._walk(self.root, x, jets=True)

    def _walk(self, node, x, jets):
        try:
            return self._walk_inner(node, x, jets)
        except DslDomainError:
            raise
        except (ValueError, ZeroDivisionError, OverflowError) as exc:
            raise DslDomainError(str(exc), self.source, node.span) from exc

    def _walk_inner(self, node, x, jets):
        kind = node.kind
        if kind == "num":
            return Jet2.constant(node.payload, self.dim) if jets else node.payload
        if kind == "var":
            return (Jet2.variable(x[node.payload], node.payload, self.dim)
                    if jets else x[node.payload])
        if kind == "neg":
            return -self._walk(node.children[0], x, jets)
        if kind == "call":
            arg = self._walk(node.children[0], x, jets)
            try:
                if jets:
                    return _JET_FUNCS[node.payload](arg)
                return getattr(math, node.payload)(arg)
            except (ValueError, ZeroDivisionError, OverflowError) as exc:
                raise DslDomainError(str(exc), self.source, node.span) from exc
        a = self._walk(node.children[0], x, jets)
        b = self._walk(node.children[1], x, jets)
        try:
            if kind == "add":
                return a + b
            if kind == "sub":
                return a - b
            if kind == "mul":
                return a * b
            if kind == "div":
                return a / b
            if kind == "pow":
                if not jets and isinstance(b, float) and b != int(b) and a <= 0:
                    raise ValueError("non-integer power of a non-positive base")
                return a ** b
        except (ValueError, ZeroDivisionError, OverflowError) as exc:
            raise DslDomainError(str(exc), self.source, node.span) from exc
        raise AssertionError(f"unhandled node kind {kind!r}")


def _unparse(node):
    kind = node.kind
    if kind == "num":
        return repr(node.payload)
    if kind == "var":
        return f"x{node.payload}"
    if kind == "neg":
        return f"(-{_unparse(node.children[0])})"
    if kind == "call":
        return f"{node.payload}({_unparse(node.children[0])})"
    sym = {"add": "+", "sub": "-", "mul": "*", "div": "/", "pow": "^"}[kind]
    return f"({_unparse(node.children[0])}{sym}{_unparse(node.children[1])})"


def parse(source, dim):
    """Parse ``source`` over variables ``x0 .. x{dim-1}``.

    Raises :class:`DslSyntaxError` with a position on malformed input or
    undeclared identifiers.
    """
    if not isinstance(source, str) or not source.strip():
        raise DslSyntaxError("empty expression", str(source), 0)
    root = _Parser(source, dim).parse()
    return Expression(source=source, dim=dim, root=root)


def eval_jet2(expression, x, mode="jet", fd_step=1e-4):
    """Evaluate value/gradient/Hessian of an :class:`Expression` at ``x``.

    ``mode="jet"`` (default) propagates exact forward jets.  ``mode="fd"``
    is the finite-difference cross-check path: value from direct
    evaluation, derivatives from central differences with step ``fd_step``.
    """
    if mode == "jet":
        return expression.eval_jet2(x)
    if mode != "fd":
        raise ValueError(f"unknown mode {mode!r}")
    x = np.asarray(x, dtype=float)
    d = expression.dim
    h = fd_step
    f0 = expression.eval(x)
    grad = np.zeros(d)
    hess = np.zeros((d, d))
    for i in range(d):
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        fp, fm = expression.eval(xp), expression.eval(xm)
        grad[i] = (fp - fm) / (2 * h)
        hess[i, i] = (fp - 2 * f0 + fm) / h ** 2
    for i in range(d):
        for j in range(i + 1, d):
            xpp, xpm, xmp, xmm = x.copy(), x.copy(), x.copy(), x.copy()
            xpp[[i, j]] += h
            xmm[[i, j]] -= h
            xpm[i] += h
            xpm[j] -= h
            xmp[i] -= h
            xmp[j] += h
            val = (expression.eval(xpp) - expression.eval(xpm)
                   - expression.eval(xmp) + expression.eval(xmm)) / (4 * h ** 2)
            hess[i, j] = hess[j, i] = val
    return Jet2(f0, grad, hess)


# ---------------------------------------------------------------------------
# Tape compilation (flat programs for the batched kernels)

OP_CONST = 0
OP_VAR = 1
OP_ADD = 2
OP_SUB = 3
OP_MUL = 4
OP_DIV = 5
OP_NEG = 6
OP_SIN = 7
OP_COS = 8
OP_EXP = 9
OP_LOG = 10
OP_SQRT = 11
OP_TANH = 12
OP_POWI = 13
OP_POWC = 14

_CALL_OPS = {"sin": OP_SIN, "cos": OP_COS, "exp": OP_EXP, "log": OP_LOG,
             "sqrt": OP_SQRT, "tanh": OP_TANH}


class _TapeBuilder:
    def __init__(self):
        self.ops = []
        self.consts = []

    def emit(self, opcode, a=0, b=0, cval=0.0):
        self.ops.append((opcode, len(self.ops), a, b))
        self.consts.append(cval)
        return len(self.ops) - 1

    def compile_node(self, node):
        kind = node.kind
        if kind == "num":
            return self.emit(OP_CONST, cval=node.payload)
        if kind == "var":
            return self.emit(OP_VAR, a=node.payload)
        if kind == "neg":
            return self.emit(OP_NEG, a=self.compile_node(node.children[0]))
        if kind == "call":
            return self.emit(_CALL_OPS[node.payload],
                             a=self.compile_node(node.children[0]))
        if kind == "pow":
            base, expo = node.children
            if expo.kind == "num" or (expo.kind == "neg"
                                      and expo.children[0].kind == "num"):
                c = expo.payload if expo.kind == "num" else -expo.children[0].payload
                a = self.compile_node(base)
                if c == int(c):
                    k = int(c)
                    if k == 0:
                        return self.emit(OP_CONST, cval=1.0)
                    if k == 1:
                        return a
                    return self.emit(OP_POWI, a=a, b=k)
                return self.emit(OP_POWC, a=a, cval=c)
            # general exponent: a^b = exp(b * log a)
            a = self.compile_node(base)
            b = self.compile_node(expo)
            la = self.emit(OP_LOG, a=a)
            prod = self.emit(OP_MUL, a=b, b=la)
            return self.emit(OP_EXP, a=prod)
        a = self.compile_node(node.children[0])
        b = self.compile_node(node.children[1])
        opcode = {"add": OP_ADD, "sub": OP_SUB, "mul": OP_MUL, "div": OP_DIV}[kind]
        return self.emit(opcode, a=a, b=b)


@dataclass
class TapeBundle:
    """Several expressions over a common chart, compiled to one flat tape.

    Evaluation is IEEE-quiet: out-of-domain inputs yield NaN/inf in the
    outputs rather than exceptions (the strict AST path reports domain
    errors with source spans).
    """

    dim: int
    ops: np.ndarray
    consts: np.ndarray
    outs: np.ndarray
    sources: tuple

    @staticmethod
    def compile(expressions):
        expressions = list(expressions)
        if not expressions:
            raise ValueError("no expressions to compile")
        dim = expressions[0].dim
        builder = _TapeBuilder()
        outs = []
        for e in expressions:
            if e.dim != dim:
                raise DslError("expressions in one bundle must share a dimension")
            outs.append(builder.compile_node(e.root))
        return TapeBundle(
            dim=dim,
            ops=np.asarray(builder.ops, dtype=np.int64),
            consts=np.asarray(builder.consts, dtype=np.float64),
            outs=np.asarray(outs, dtype=np.int64),
            sources=tuple(e.source for e in expressions),
        )

    @property
    def n_outputs(self):
        return len(self.outs)

    def eval_values(self, points):
        points = np.ascontiguousarray(points, dtype=np.float64)
        squeeze = points.ndim == 1
        if squeeze:
            points = points[None, :]
        out = _backend.eval_values(self.ops, self.consts, self.outs, points)
        return out[0] if squeeze else out

    def eval_jets(self, points):
        """Values, gradients and Hessians at a batch of points.

        Returns ``(val, grad, hess)`` with shapes ``(m, K)``, ``(m, K, d)``
        and ``(m, K, d, d)``.
        """
        points = np.ascontiguousarray(points, dtype=np.float64)
        squeeze = points.ndim == 1
        if squeeze:
            points = points[None, :]
        val, grad, hess = _backend.eval_jets(self.ops, self.consts, self.outs,
                                             points)
        if squeeze:
            return val[0], grad[0], hess[0]
        return val, grad, hess


from . import _tape_py

if os.environ.get("NULLFLOW_PURE_PYTHON"):
    _backend = _tape_py
else:
    try:
        from . import _tape_cy as _backend
    except ImportError:
        _backend = _tape_py


def backend_name():
    """Which tape kernel is active: ``"compiled"`` or ``"python"``."""
    return "compiled" if _backend.__name__.endswith("_tape_cy") else "python"
