"""Hot numeric kernels, each in a numba and a pure-numpy flavor.

These are the row-wise / element-wise inner loops the training path hits
thousands of times: stabilized (masked) row softmax and its gradient,
row layer normalization and its gradient, and the fused AdamW update.
Matrix products stay on numpy's BLAS in both backends.

The exported names (``softmax_rows``, ``softmax_rows_masked``,
``softmax_rows_grad``, ``layer_norm_rows``, ``layer_norm_rows_grad``,
``adamw_update``) are bound at import time according to
:mod:`hateprofiler.backend`. Shape and emptiness validation happens in the
callers; kernels assume well-formed contiguous inputs.
"""

import numpy as np

from .backend import USE_NUMBA

__all__ = [
    "softmax_rows",
    "softmax_rows_masked",
    "softmax_rows_grad",
    "layer_norm_rows",
    "layer_norm_rows_grad",
    "adamw_update",
]


# ---------------------------------------------------------------------------
# pure-numpy path
# ---------------------------------------------------------------------------

def _softmax_rows_np(x):
    m = np.max(x, axis=1, keepdims=True)
    e = np.exp(x - m)
    return e / np.sum(e, axis=1, keepdims=True)


def _softmax_rows_masked_np(x, mask):
    # -inf surrogate keeps masked slots exactly 0 after exp
    z = np.where(mask != 0, x, -np.inf)
    m = np.max(z, axis=1, keepdims=True)
    e = np.exp(z - m)
    return e / np.sum(e, axis=1, keepdims=True)


def _softmax_rows_grad_np(y, gy):
    dot = np.sum(gy * y, axis=1, keepdims=True)
    return y * (gy - dot)


def _layer_norm_rows_np(x, gain, bias, eps):
    mu = np.mean(x, axis=1, keepdims=True)
    var = np.mean((x - mu) ** 2, axis=1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = (x - mu) * rstd
    return xhat * gain + bias, mu[:, 0], rstd[:, 0]


def _layer_norm_rows_grad_np(x, gain, mu, rstd, gy):
    xhat = (x - mu[:, None]) * rstd[:, None]
    ggain = np.sum(gy * xhat, axis=0)
    gbias = np.sum(gy, axis=0)
    gxhat = gy * gain
    mean_g = np.mean(gxhat, axis=1, keepdims=True)
    mean_gx = np.mean(gxhat * xhat, axis=1, keepdims=True)
    gx = rstd[:, None] * (gxhat - mean_g - xhat * mean_gx)
    return gx, ggain, gbias


def _adamw_update_np(p, g, m, v, t, lr, beta1, beta2, eps, weight_decay):
    # decoupled decay shrinks the parameter before the moment-based step
    if weight_decay != 0.0:
        p *= 1.0 - lr * weight_decay
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * (g * g)
    mhat = m / (1.0 - beta1 ** t)
    vhat = v / (1.0 - beta2 ** t)
    p -= lr * mhat / (np.sqrt(vhat) + eps)


# ---------------------------------------------------------------------------
# numba path
# ---------------------------------------------------------------------------

if USE_NUMBA:
    from numba import njit

    @njit(cache=True)
    def _softmax_rows_nb(x):
        out = np.empty_like(x)
        for i in range(x.shape[0]):
            m = x[i, 0]
            for j in range(1, x.shape[1]):
                if x[i, j] > m:
                    m = x[i, j]
            s = 0.0
            for j in range(x.shape[1]):
                e = np.exp(x[i, j] - m)
                out[i, j] = e
                s += e
            for j in range(x.shape[1]):
                out[i, j] /= s
        return out

    @njit(cache=True)
    def _softmax_rows_masked_nb(x, mask):
        out = np.zeros_like(x)
        for i in range(x.shape[0]):
            m = -np.inf
            for j in range(x.shape[1]):
                if mask[i, j] != 0 and x[i, j] > m:
                    m = x[i, j]
            s = 0.0
            for j in range(x.shape[1]):
                if mask[i, j] != 0:
                    e = np.exp(x[i, j] - m)
                    out[i, j] = e
                    s += e
            for j in range(x.shape[1]):
                if mask[i, j] != 0:
                    out[i, j] /= s
        return out

    @njit(cache=True)
    def _softmax_rows_grad_nb(y, gy):
        gx = np.empty_like(y)
        for i in range(y.shape[0]):
            dot = 0.0
            for j in range(y.shape[1]):
                dot += gy[i, j] * y[i, j]
            for j in range(y.shape[1]):
                gx[i, j] = y[i, j] * (gy[i, j] - dot)
        return gx

    @njit(cache=True)
    def _layer_norm_rows_nb(x, gain, bias, eps):
        n, d = x.shape
        y = np.empty_like(x)
        mu = np.empty(n, dtype=x.dtype)
        rstd = np.empty(n, dtype=x.dtype)
        for i in range(n):
            s = 0.0
            for j in range(d):
                s += x[i, j]
            mean = s / d
            sq = 0.0
            for j in range(d):
                diff = x[i, j] - mean
                sq += diff * diff
            r = 1.0 / np.sqrt(sq / d + eps)
            mu[i] = mean
            rstd[i] = r
            for j in range(d):
                y[i, j] = (x[i, j] - mean) * r * gain[j] + bias[j]
        return y, mu, rstd

    @njit(cache=True)
    def _layer_norm_rows_grad_nb(x, gain, mu, rstd, gy):
        n, d = x.shape
        gx = np.empty_like(x)
        ggain = np.zeros(d, dtype=x.dtype)
        gbias = np.zeros(d, dtype=x.dtype)
        for i in range(n):
            mean_g = 0.0
            mean_gx = 0.0
            for j in range(d):
                xhat = (x[i, j] - mu[i]) * rstd[i]
                gxh = gy[i, j] * gain[j]
                ggain[j] += gy[i, j] * xhat
                gbias[j] += gy[i, j]
                mean_g += gxh
                mean_gx += gxh * xhat
            mean_g /= d
            mean_gx /= d
            for j in range(d):
                xhat = (x[i, j] - mu[i]) * rstd[i]
                gxh = gy[i, j] * gain[j]
                gx[i, j] = rstd[i] * (gxh - mean_g - xhat * mean_gx)
        return gx, ggain, gbias

    @njit(cache=True)
    def _adamw_update_nb(p, g, m, v, t, lr, beta1, beta2, eps, weight_decay):
        bc1 = 1.0 - beta1 ** t
        bc2 = 1.0 - beta2 ** t
        shrink = 1.0 - lr * weight_decay  # exactly 1.0 when decay is off
        for i in range(p.size):
            p[i] *= shrink
            m[i] = beta1 * m[i] + (1.0 - beta1) * g[i]
            v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i]
            p[i] -= lr * (m[i] / bc1) / (np.sqrt(v[i] / bc2) + eps)

    def _adamw_update_flat(p, g, m, v, t, lr, beta1, beta2, eps, weight_decay):
        _adamw_update_nb(p.ravel(), g.ravel(), m.ravel(), v.ravel(),
                         t, lr, beta1, beta2, eps, weight_decay)

    softmax_rows = _softmax_rows_nb
    softmax_rows_masked = _softmax_rows_masked_nb
    softmax_rows_grad = _softmax_rows_grad_nb
    layer_norm_rows = _layer_norm_rows_nb
    layer_norm_rows_grad = _layer_norm_rows_grad_nb
    adamw_update = _adamw_update_flat
else:
    softmax_rows = _softmax_rows_np
    softmax_rows_masked = _softmax_rows_masked_np
    softmax_rows_grad = _softmax_rows_grad_np
    layer_norm_rows = _layer_norm_rows_np
    layer_norm_rows_grad = _layer_norm_rows_grad_np
    adamw_update = _adamw_update_np
