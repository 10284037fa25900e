"""Row gather / scatter-add kernels used by the CPT trainers."""

import numba
import numpy as np


@numba.njit(cache=True)
def gather_rows_sum(table, rows):
    """out[n] = sum_v table[rows[n, v]] for a (R, C) table and (N, V) row indices."""
    n_samples, n_tables = rows.shape
    c = table.shape[1]
    out = np.zeros((n_samples, c))
    for n in range(n_samples):
        for v in range(n_tables):
            r = rows[n, v]
            for k in range(c):
                out[n, k] += table[r, k]
    return out


@numba.njit(cache=True)
def gather_rows(table, rows):
    """out[n, v] = table[rows[n, v]]."""
    n_samples, n_tables = rows.shape
    c = table.shape[1]
    out = np.empty((n_samples, n_tables, c))
    for n in range(n_samples):
        for v in range(n_tables):
            r = rows[n, v]
            for k in range(c):
                out[n, v, k] = table[r, k]
    return out


@numba.njit(cache=True)
def scatter_rows(rows, grad, n_rows):
    """Adjoint of :func:`gather_rows_sum`: out[rows[n, v]] += grad[n]."""
    n_samples, n_tables = rows.shape
    c = grad.shape[1]
    out = np.zeros((n_rows, c))
    for n in range(n_samples):
        for v in range(n_tables):
            r = rows[n, v]
            for k in range(c):
                out[r, k] += grad[n, k]
    return out


@numba.njit(cache=True)
def scatter_rows_weighted(rows, grad, weights, n_rows):
    """out[rows[n, v]] += weights[v] * grad[n]."""
    n_samples, n_tables = rows.shape
    c = grad.shape[1]
    out = np.zeros((n_rows, c))
    for n in range(n_samples):
        for v in range(n_tables):
            w = weights[v]
            if w == 0.0:
                continue
            r = rows[n, v]
            for k in range(c):
                out[r, k] += w * grad[n, k]
    return out


@numba.njit(cache=True)
def segment_shift(rho, seg_start, seg_len):
    """``rho`` minus its per-segment, per-column maximum."""
    out = np.empty_like(rho)
    c = rho.shape[1]
    m = np.empty(c)
    for s in range(seg_start.shape[0]):
        a = seg_start[s]
        b = a + seg_len[s]
        m[:] = rho[a]
        for r in range(a + 1, b):
            for k in range(c):
                if rho[r, k] > m[k]:
                    m[k] = rho[r, k]
        for r in range(a, b):
            for k in range(c):
                out[r, k] = rho[r, k] - m[k]
    return out


@numba.njit(cache=True)
def segment_normalize(shifted, e, seg_start, seg_len):
    """Given ``e = exp(shifted)``: in-place ``shifted -> log-softmax`` and ``e -> softmax``."""
    c = shifted.shape[1]
    acc = np.empty(c)
    inv = np.empty(c)
    for s in range(seg_start.shape[0]):
        a = seg_start[s]
        b = a + seg_len[s]
        acc[:] = 0.0
        for r in range(a, b):
            for k in range(c):
                acc[k] += e[r, k]
        for k in range(c):
            inv[k] = 1.0 / acc[k]
            acc[k] = np.log(acc[k])
        for r in range(a, b):
            for k in range(c):
                shifted[r, k] -= acc[k]
                e[r, k] *= inv[k]


def segment_log_softmax(rho, seg_start, seg_len):
    """Log-softmax and softmax over consecutive row segments, separately for every column."""
    theta = segment_shift(rho, seg_start, seg_len)
    probs = np.exp(theta)  # numpy's vectorized exp is much faster than a scalar loop
    segment_normalize(theta, probs, seg_start, seg_len)
    return theta, probs


@numba.njit(cache=True)
def segment_log_softmax_backward(probs, grad, seg_start, seg_len):
    out = np.empty_like(grad)
    c = probs.shape[1]
    tot = np.empty(c)
    for s in range(seg_start.shape[0]):
        a = seg_start[s]
        b = a + seg_len[s]
        tot[:] = 0.0
        for r in range(a, b):
            for k in range(c):
                tot[k] += grad[r, k]
        for r in range(a, b):
            for k in range(c):
                out[r, k] = grad[r, k] - probs[r, k] * tot[k]
    return out


# Moments of parameters whose gradient stays zero (unsampled bank tables) decay
# geometrically into subnormals, which are ~10x slower on x86; below this they are
# flushed to zero. The skipped step is < lr * 1e-192, under one ulp of any normal parameter.
_ADAM_TINY = 1e-200


@numba.njit(cache=True)
def adam_update(p, g, m, v, lr, beta1, beta2, c1, c2, eps):
    """In-place Adam update on flat arrays with bias corrections ``c1``/``c2``."""
    a = lr / c1
    for i in range(p.shape[0]):
        gi = g[i]
        mi = beta1 * m[i] + (1.0 - beta1) * gi
        vi = beta2 * v[i] + (1.0 - beta2) * gi * gi
        if abs(mi) < _ADAM_TINY:
            mi = 0.0
        if vi < _ADAM_TINY:
            vi = 0.0
        m[i] = mi
        v[i] = vi
        p[i] -= a * mi / (np.sqrt(vi / c2) + eps)


@numba.njit(cache=True)
def hybrid_loss_grad(joint, labels, lambda_hyb, gamma, eta):
    """Fused NLL + lambda * softplus margin loss over log-joints; returns (mean loss, d/djoint)."""
    n, c = joint.shape
    grad = np.zeros_like(joint)
    e = np.empty(c)
    total = 0.0
    for i in range(n):
        y = labels[i]
        total -= joint[i, y]
        grad[i, y] -= 1.0 / n
        if lambda_hyb > 0.0:
            m = -np.inf
            for k in range(c):
                if k != y and joint[i, k] > m:
                    m = joint[i, k]
            acc = 0.0
            for k in range(c):
                e[k] = 0.0 if k == y else np.exp(joint[i, k] - m)
                acc += e[k]
            lse = m + np.log(acc)
            z = eta * (gamma - (joint[i, y] - lse))
            # softplus(z) / eta and its sigmoid derivative, both overflow-safe
            if z > 0:
                sp = z + np.log1p(np.exp(-z))
            else:
                sp = np.log1p(np.exp(z))
            total += lambda_hyb * sp / eta
            s = 0.5 * (1.0 + np.tanh(0.5 * z))
            w = lambda_hyb * s / n
            grad[i, y] -= w
            w2 = w / acc
            for k in range(c):
                grad[i, k] += w2 * e[k]
    return total / n, grad
