"""Pure NumPy tape evaluator (fallback for the compiled kernel).

Registers hold whole batches, so the per-op Python overhead amortizes over
the batch dimension.  Semantics are IEEE-quiet, identical to ``_tape_cy``:
out-of-domain inputs propagate NaN/inf instead of raising.
"""

import numpy as np

from . import dsl as _d


def eval_jets(ops, consts, outs, points):
    m, dim = points.shape
    n = len(ops)
    val = np.empty((n, m))
    grad = np.empty((n, m, dim))
    hess = np.empty((n, m, dim, dim))

    def unary(dst, a, f0, d1, d2):
        # chain rule: (f∘u)' = f'·u', (f∘u)'' = f'·u'' + f''·u'⊗u'
        val[dst] = f0
        grad[dst] = d1[:, None] * grad[a]
        cross = grad[a][:, :, None] * grad[a][:, None, :]
        hess[dst] = d1[:, None, None] * hess[a] + d2[:, None, None] * cross

    with np.errstate(all="ignore"):
        for i in range(n):
            op, dst, a, b = ops[i]
            if op == _d.OP_CONST:
                val[dst] = consts[i]
                grad[dst] = 0.0
                hess[dst] = 0.0
            elif op == _d.OP_VAR:
                val[dst] = points[:, a]
                grad[dst] = 0.0
                grad[dst, :, a] = 1.0
                hess[dst] = 0.0
            elif op == _d.OP_ADD:
                val[dst] = val[a] + val[b]
                grad[dst] = grad[a] + grad[b]
                hess[dst] = hess[a] + hess[b]
            elif op == _d.OP_SUB:
                val[dst] = val[a] - val[b]
                grad[dst] = grad[a] - grad[b]
                hess[dst] = hess[a] - hess[b]
            elif op == _d.OP_MUL:
                val[dst] = val[a] * val[b]
                grad[dst] = grad[a] * val[b][:, None] + grad[b] * val[a][:, None]
                cross = grad[a][:, :, None] * grad[b][:, None, :]
                hess[dst] = (hess[a] * val[b][:, None, None]
                             + hess[b] * val[a][:, None, None]
                             + cross + np.swapaxes(cross, 1, 2))
            elif op == _d.OP_DIV:
                q = val[a] / val[b]
                qg = (grad[a] - q[:, None] * grad[b]) / val[b][:, None]
                cross = qg[:, :, None] * grad[b][:, None, :]
                val[dst] = q
                grad[dst] = qg
                hess[dst] = (hess[a] - q[:, None, None] * hess[b] - cross
                             - np.swapaxes(cross, 1, 2)) / val[b][:, None, None]
            elif op == _d.OP_NEG:
                val[dst] = -val[a]
                grad[dst] = -grad[a]
                hess[dst] = -hess[a]
            elif op == _d.OP_SIN:
                s, c = np.sin(val[a]), np.cos(val[a])
                unary(dst, a, s, c, -s)
            elif op == _d.OP_COS:
                s, c = np.sin(val[a]), np.cos(val[a])
                unary(dst, a, c, -s, -c)
            elif op == _d.OP_EXP:
                e = np.exp(val[a])
                unary(dst, a, e, e, e)
            elif op == _d.OP_LOG:
                x = np.where(val[a] > 0, val[a], np.nan)
                unary(dst, a, np.log(x), 1.0 / x, -1.0 / x ** 2)
            elif op == _d.OP_SQRT:
                x = np.where(val[a] >= 0, val[a], np.nan)
                s = np.sqrt(x)
                unary(dst, a, s, 0.5 / s, -0.25 / (s * x))
            elif op == _d.OP_TANH:
                t = np.tanh(val[a])
                sech2 = 1.0 - t * t
                unary(dst, a, t, sech2, -2.0 * t * sech2)
            elif op == _d.OP_POWI:
                k = int(b)
                x = val[a]
                p2 = x ** (k - 2)
                unary(dst, a, p2 * x * x, k * p2 * x,
                      k * (k - 1) * p2 * np.ones_like(x))
            elif op == _d.OP_POWC:
                c = consts[i]
                x = np.where(val[a] > 0, val[a], np.nan)
                p2 = x ** (c - 2.0)
                unary(dst, a, p2 * x * x, c * p2 * x, c * (c - 1.0) * p2)
            else:  # pragma: no cover
                raise AssertionError(f"bad opcode {op}")
    return (np.ascontiguousarray(val[outs].transpose(1, 0)),
            np.ascontiguousarray(grad[outs].transpose(1, 0, 2)),
            np.ascontiguousarray(hess[outs].transpose(1, 0, 2, 3)))


def eval_values(ops, consts, outs, points):
    m = points.shape[0]
    n = len(ops)
    val = np.empty((n, m))
    with np.errstate(all="ignore"):
        for i in range(n):
            op, dst, a, b = ops[i]
            if op == _d.OP_CONST:
                val[dst] = consts[i]
            elif op == _d.OP_VAR:
                val[dst] = points[:, a]
            elif op == _d.OP_ADD:
                val[dst] = val[a] + val[b]
            elif op == _d.OP_SUB:
                val[dst] = val[a] - val[b]
            elif op == _d.OP_MUL:
                val[dst] = val[a] * val[b]
            elif op == _d.OP_DIV:
                val[dst] = val[a] / val[b]
            elif op == _d.OP_NEG:
                val[dst] = -val[a]
            elif op == _d.OP_SIN:
                val[dst] = np.sin(val[a])
            elif op == _d.OP_COS:
                val[dst] = np.cos(val[a])
            elif op == _d.OP_EXP:
                val[dst] = np.exp(val[a])
            elif op == _d.OP_LOG:
                val[dst] = np.log(np.where(val[a] > 0, val[a], np.nan))
            elif op == _d.OP_SQRT:
                val[dst] = np.sqrt(np.where(val[a] >= 0, val[a], np.nan))
            elif op == _d.OP_TANH:
                val[dst] = np.tanh(val[a])
            elif op == _d.OP_POWI:
                val[dst] = val[a] ** int(b)
            elif op == _d.OP_POWC:
                val[dst] = np.where(val[a] > 0, val[a], np.nan) ** consts[i]
            else:  # pragma: no cover
                raise AssertionError(f"bad opcode {op}")
    return np.ascontiguousarray(val[outs].transpose(1, 0))
