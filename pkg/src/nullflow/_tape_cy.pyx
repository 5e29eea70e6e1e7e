# cython: boundscheck=False, wraparound=False, cdivision=True
# cython: initializedcheck=False, language_level=3
"""Compiled tape evaluator: the hot kernel behind every ODE right-hand side.

Mirrors ``_tape_py`` exactly (same opcodes, same IEEE-quiet semantics);
the two are cross-checked in the test suite and raced in
``benchmarks/bench_tape.py``.
"""

from libc.math cimport sin, cos, exp, log, sqrt, tanh, pow as cpow, NAN

import numpy as np

cdef enum:
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


cdef inline void _chain(double f0, double d1, double d2,
                        double* rv, double* rg, double* rh,
                        Py_ssize_t dst, Py_ssize_t a, Py_ssize_t d) noexcept nogil:
    cdef Py_ssize_t p, q
    cdef double ga
    rv[dst] = f0
    for p in range(d):
        rg[dst * d + p] = d1 * rg[a * d + p]
    for p in range(d):
        ga = rg[a * d + p]
        for q in range(d):
            rh[(dst * d + p) * d + q] = (d1 * rh[(a * d + p) * d + q]
                                         + d2 * ga * rg[a * d + q])


def eval_jets(const long long[:, ::1] ops, const double[::1] consts,
              const long long[::1] outs, const double[:, ::1] points):
    cdef Py_ssize_t n = ops.shape[0]
    cdef Py_ssize_t m = points.shape[0]
    cdef Py_ssize_t d = points.shape[1]
    cdef Py_ssize_t K = outs.shape[0]

    val_np = np.empty((m, K))
    grad_np = np.empty((m, K, d))
    hess_np = np.empty((m, K, d, d))
    cdef double[:, ::1] oval = val_np
    cdef double[:, :, ::1] ograd = grad_np
    cdef double[:, :, :, ::1] ohess = hess_np

    buf_v = np.empty(n)
    buf_g = np.empty(n * d)
    buf_h = np.empty(n * d * d)
    cdef double[::1] bv = buf_v
    cdef double[::1] bg = buf_g
    cdef double[::1] bh = buf_h
    cdef double* rv = &bv[0]
    cdef double* rg = &bg[0]
    cdef double* rh = &bh[0]

    cdef Py_ssize_t i, c, p, q, r, dst, a, b
    cdef long long op
    cdef double x, y, g1, g2, t, s, e, p2, cc
    cdef long long k

    with nogil:
        for i in range(m):
            for c in range(n):
                op = ops[c, 0]
                dst = <Py_ssize_t> ops[c, 1]
                a = <Py_ssize_t> ops[c, 2]
                b = <Py_ssize_t> ops[c, 3]
                if op == OP_CONST:
                    rv[dst] = consts[c]
                    for p in range(d):
                        rg[dst * d + p] = 0.0
                        for q in range(d):
                            rh[(dst * d + p) * d + q] = 0.0
                elif op == OP_VAR:
                    rv[dst] = points[i, a]
                    for p in range(d):
                        rg[dst * d + p] = 0.0
                        for q in range(d):
                            rh[(dst * d + p) * d + q] = 0.0
                    rg[dst * d + a] = 1.0
                elif op == OP_ADD:
                    rv[dst] = rv[a] + rv[b]
                    for p in range(d):
                        rg[dst * d + p] = rg[a * d + p] + rg[b * d + p]
                        for q in range(d):
                            rh[(dst * d + p) * d + q] = (rh[(a * d + p) * d + q]
                                                         + rh[(b * d + p) * d + q])
                elif op == OP_SUB:
                    rv[dst] = rv[a] - rv[b]
                    for p in range(d):
                        rg[dst * d + p] = rg[a * d + p] - rg[b * d + p]
                        for q in range(d):
                            rh[(dst * d + p) * d + q] = (rh[(a * d + p) * d + q]
                                                         - rh[(b * d + p) * d + q])
                elif op == OP_MUL:
                    x = rv[a]
                    y = rv[b]
                    rv[dst] = x * y
                    for p in range(d):
                        g1 = rg[a * d + p]
                        g2 = rg[b * d + p]
                        rg[dst * d + p] = g1 * y + g2 * x
                        for q in range(d):
                            rh[(dst * d + p) * d + q] = (
                                rh[(a * d + p) * d + q] * y
                                + rh[(b * d + p) * d + q] * x
                                + g1 * rg[b * d + q] + g2 * rg[a * d + q])
                elif op == OP_DIV:
                    y = rv[b]
                    x = rv[a] / y
                    rv[dst] = x
                    for p in range(d):
                        rg[dst * d + p] = (rg[a * d + p] - x * rg[b * d + p]) / y
                    for p in range(d):
                        g1 = rg[dst * d + p]
                        for q in range(d):
                            rh[(dst * d + p) * d + q] = (
                                rh[(a * d + p) * d + q]
                                - x * rh[(b * d + p) * d + q]
                                - g1 * rg[b * d + q]
                                - rg[dst * d + q] * rg[b * d + p]) / y
                elif op == OP_NEG:
                    rv[dst] = -rv[a]
                    for p in range(d):
                        rg[dst * d + p] = -rg[a * d + p]
                        for q in range(d):
                            rh[(dst * d + p) * d + q] = -rh[(a * d + p) * d + q]
                elif op == OP_SIN:
                    s = sin(rv[a])
                    _chain(s, cos(rv[a]), -s, rv, rg, rh, dst, a, d)
                elif op == OP_COS:
                    s = cos(rv[a])
                    _chain(s, -sin(rv[a]), -s, rv, rg, rh, dst, a, d)
                elif op == OP_EXP:
                    e = exp(rv[a])
                    _chain(e, e, e, rv, rg, rh, dst, a, d)
                elif op == OP_LOG:
                    x = rv[a]
                    if x > 0.0:
                        _chain(log(x), 1.0 / x, -1.0 / (x * x), rv, rg, rh, dst, a, d)
                    else:
                        _chain(NAN, NAN, NAN, rv, rg, rh, dst, a, d)
                elif op == OP_SQRT:
                    x = rv[a]
                    if x >= 0.0:
                        s = sqrt(x)
                        _chain(s, 0.5 / s, -0.25 / (s * x), rv, rg, rh, dst, a, d)
                    else:
                        _chain(NAN, NAN, NAN, rv, rg, rh, dst, a, d)
                elif op == OP_TANH:
                    t = tanh(rv[a])
                    s = 1.0 - t * t
                    _chain(t, s, -2.0 * t * s, rv, rg, rh, dst, a, d)
                elif op == OP_POWI:
                    k = ops[c, 3]
                    x = rv[a]
                    p2 = cpow(x, <double> (k - 2))
                    _chain(p2 * x * x, k * p2 * x, k * (k - 1) * p2,
                           rv, rg, rh, dst, a, d)
                elif op == OP_POWC:
                    cc = consts[c]
                    x = rv[a]
                    if x > 0.0:
                        p2 = cpow(x, cc - 2.0)
                        _chain(p2 * x * x, cc * p2 * x, cc * (cc - 1.0) * p2,
                               rv, rg, rh, dst, a, d)
                    else:
                        _chain(NAN, NAN, NAN, rv, rg, rh, dst, a, d)
            for r in range(K):
                a = <Py_ssize_t> outs[r]
                oval[i, r] = rv[a]
                for p in range(d):
                    ograd[i, r, p] = rg[a * d + p]
                    for q in range(d):
                        ohess[i, r, p, q] = rh[(a * d + p) * d + q]

    return val_np, grad_np, hess_np


def eval_values(const long long[:, ::1] ops, const double[::1] consts,
                const long long[::1] outs, const double[:, ::1] points):
    cdef Py_ssize_t n = ops.shape[0]
    cdef Py_ssize_t m = points.shape[0]
    cdef Py_ssize_t K = outs.shape[0]

    val_np = np.empty((m, K))
    cdef double[:, ::1] oval = val_np
    buf_v = np.empty(n)
    cdef double[::1] bv = buf_v
    cdef double* rv = &bv[0]

    cdef Py_ssize_t i, c, r, dst, a, b
    cdef long long op
    cdef double x

    with nogil:
        for i in range(m):
            for c in range(n):
                op = ops[c, 0]
                dst = <Py_ssize_t> ops[c, 1]
                a = <Py_ssize_t> ops[c, 2]
                b = <Py_ssize_t> ops[c, 3]
                if op == OP_CONST:
                    rv[dst] = consts[c]
                elif op == OP_VAR:
                    rv[dst] = points[i, a]
                elif op == OP_ADD:
                    rv[dst] = rv[a] + rv[b]
                elif op == OP_SUB:
                    rv[dst] = rv[a] - rv[b]
                elif op == OP_MUL:
                    rv[dst] = rv[a] * rv[b]
                elif op == OP_DIV:
                    rv[dst] = rv[a] / rv[b]
                elif op == OP_NEG:
                    rv[dst] = -rv[a]
                elif op == OP_SIN:
                    rv[dst] = sin(rv[a])
                elif op == OP_COS:
                    rv[dst] = cos(rv[a])
                elif op == OP_EXP:
                    rv[dst] = exp(rv[a])
                elif op == OP_LOG:
                    x = rv[a]
                    rv[dst] = log(x) if x > 0.0 else NAN
                elif op == OP_SQRT:
                    x = rv[a]
                    rv[dst] = sqrt(x) if x >= 0.0 else NAN
                elif op == OP_TANH:
                    rv[dst] = tanh(rv[a])
                elif op == OP_POWI:
                    rv[dst] = cpow(rv[a], <double> ops[c, 3])
                elif op == OP_POWC:
                    x = rv[a]
                    rv[dst] = cpow(x, consts[c]) if x > 0.0 else NAN
            for r in range(K):
                oval[i, r] = rv[<Py_ssize_t> outs[r]]

    return val_np
