"""Hot elementwise kernels: numba @njit implementations with numpy twins.

Every kernel takes and returns C-contiguous float64 arrays. The numba and
numpy paths compute the same expressions; they may differ in the last ulp
(different libm dispatch), so cross-backend comparisons are tolerance-based
while within-backend results are bitwise reproducible.

Shapes are normalized by the callers: softmax/rmsnorm see (rows, width),
rope sees (stacks, tokens, head_dim), adam sees flat parameter arrays.
"""

from __future__ import annotations

import math

import numpy as np

from .backend import HAVE_NUMBA

_SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)
_GELU_C = 0.044715


# ---------------------------------------------------------------------------
# numpy implementations

def _gelu_fwd_np(x):
    """Returns (gelu(x), tanh(inner)); the tanh is reused by the backward."""
    inner = _SQRT_2_OVER_PI * (x + _GELU_C * x * x * x)
    th = np.tanh(inner)
    return 0.5 * x * (1.0 + th), th


def _gelu_bwd_np(x, th, g):
    sech2 = 1.0 - th * th
    dinner = _SQRT_2_OVER_PI * (1.0 + 3.0 * _GELU_C * x * x)
    return g * (0.5 * (1.0 + th) + 0.5 * x * sech2 * dinner)


def _softmax_fwd_np(x):
    m = np.max(x, axis=1, keepdims=True)
    e = np.exp(x - m)
    return e / np.sum(e, axis=1, keepdims=True)


def _softmax_bwd_np(y, g):
    dot = np.sum(g * y, axis=1, keepdims=True)
    return y * (g - dot)


def _rmsnorm_fwd_np(x, gain, eps):
    inv = 1.0 / np.sqrt(np.mean(x * x, axis=1) + eps)
    y = x * inv[:, None] * gain[None, :]
    return y, inv


def _rmsnorm_bwd_np(x, gain, inv, g):
    n = x.shape[1]
    gg = g * gain[None, :]
    dot = np.sum(gg * x, axis=1)
    gx = gg * inv[:, None] - x * (inv**3 / n * dot)[:, None]
    ggain = np.sum(g * x * inv[:, None], axis=0)
    return gx, ggain


def _rope_fwd_np(x, cos, sin):
    half = x.shape[2] // 2
    x1 = x[:, :, :half]
    x2 = x[:, :, half:]
    y = np.empty_like(x)
    y[:, :, :half] = x1 * cos[None] - x2 * sin[None]
    y[:, :, half:] = x2 * cos[None] + x1 * sin[None]
    return y


def _rope_bwd_np(g, cos, sin):
    half = g.shape[2] // 2
    g1 = g[:, :, :half]
    g2 = g[:, :, half:]
    gx = np.empty_like(g)
    gx[:, :, :half] = g1 * cos[None] + g2 * sin[None]
    gx[:, :, half:] = g2 * cos[None] - g1 * sin[None]
    return gx


def _adam_step_np(p, g, m, v, lr, beta1, beta2, eps, weight_decay, bc1, bc2):
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * g * g
    if weight_decay != 0.0:
        p *= 1.0 - lr * weight_decay
    p -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)


# ---------------------------------------------------------------------------
# numba implementations

if HAVE_NUMBA:
    from numba import njit

    @njit(cache=True)
    def _gelu_fwd_flat_nb(x):
        out = np.empty_like(x)
        th = np.empty_like(x)
        for i in range(x.size):
            xi = x[i]
            inner = _SQRT_2_OVER_PI * (xi + _GELU_C * xi * xi * xi)
            t = math.tanh(inner)
            th[i] = t
            out[i] = 0.5 * xi * (1.0 + t)
        return out, th

    @njit(cache=True)
    def _gelu_bwd_flat_nb(x, th, g):
        out = np.empty_like(x)
        for i in range(x.size):
            xi = x[i]
            t = th[i]
            sech2 = 1.0 - t * t
            dinner = _SQRT_2_OVER_PI * (1.0 + 3.0 * _GELU_C * xi * xi)
            out[i] = g[i] * (0.5 * (1.0 + t) + 0.5 * xi * sech2 * dinner)
        return out

    def _gelu_fwd_nb(x):
        y, th = _gelu_fwd_flat_nb(x.reshape(-1))
        return y.reshape(x.shape), th

    def _gelu_bwd_nb(x, th, g):
        return _gelu_bwd_flat_nb(x.reshape(-1), th, g.reshape(-1)).reshape(x.shape)

    @njit(cache=True)
    def _softmax_fwd_nb(x):
        rows, width = x.shape
        y = np.empty_like(x)
        for r in range(rows):
            m = x[r, 0]
            for c in range(1, width):
                if x[r, c] > m:
                    m = x[r, c]
            s = 0.0
            for c in range(width):
                e = math.exp(x[r, c] - m)
                y[r, c] = e
                s += e
            for c in range(width):
                y[r, c] /= s
        return y

    @njit(cache=True)
    def _softmax_bwd_nb(y, g):
        rows, width = y.shape
        gx = np.empty_like(y)
        for r in range(rows):
            dot = 0.0
            for c in range(width):
                dot += g[r, c] * y[r, c]
            for c in range(width):
                gx[r, c] = y[r, c] * (g[r, c] - dot)
        return gx

    @njit(cache=True)
    def _rmsnorm_fwd_nb(x, gain, eps):
        rows, width = x.shape
        y = np.empty_like(x)
        inv = np.empty(rows, dtype=np.float64)
        for r in range(rows):
            ss = 0.0
            for c in range(width):
                ss += x[r, c] * x[r, c]
            iv = 1.0 / math.sqrt(ss / width + eps)
            inv[r] = iv
            for c in range(width):
                y[r, c] = x[r, c] * iv * gain[c]
        return y, inv

    @njit(cache=True)
    def _rmsnorm_bwd_nb(x, gain, inv, g):
        rows, width = x.shape
        gx = np.empty_like(x)
        ggain = np.zeros(width, dtype=np.float64)
        for r in range(rows):
            dot = 0.0
            for c in range(width):
                dot += g[r, c] * gain[c] * x[r, c]
            coef = inv[r] ** 3 / width * dot
            for c in range(width):
                gx[r, c] = g[r, c] * gain[c] * inv[r] - x[r, c] * coef
                ggain[c] += g[r, c] * x[r, c] * inv[r]
        return gx, ggain

    @njit(cache=True)
    def _rope_fwd_nb(x, cos, sin):
        stacks, tokens, dim = x.shape
        half = dim // 2
        y = np.empty_like(x)
        for s in range(stacks):
            for t in range(tokens):
                for c in range(half):
                    x1 = x[s, t, c]
                    x2 = x[s, t, c + half]
                    y[s, t, c] = x1 * cos[t, c] - x2 * sin[t, c]
                    y[s, t, c + half] = x2 * cos[t, c] + x1 * sin[t, c]
        return y

    @njit(cache=True)
    def _rope_bwd_nb(g, cos, sin):
        stacks, tokens, dim = g.shape
        half = dim // 2
        gx = np.empty_like(g)
        for s in range(stacks):
            for t in range(tokens):
                for c in range(half):
                    g1 = g[s, t, c]
                    g2 = g[s, t, c + half]
                    gx[s, t, c] = g1 * cos[t, c] + g2 * sin[t, c]
                    gx[s, t, c + half] = g2 * cos[t, c] - g1 * sin[t, c]
        return gx

    @njit(cache=True)
    def _adam_step_nb(p, g, m, v, lr, beta1, beta2, eps, weight_decay, bc1, bc2):
        decay = 1.0 - lr * weight_decay
        for i in range(p.size):
            gi = g[i]
            m[i] = beta1 * m[i] + (1.0 - beta1) * gi
            v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi
            if weight_decay != 0.0:
                p[i] *= decay
            p[i] -= lr * (m[i] / bc1) / (math.sqrt(v[i] / bc2) + eps)

    gelu_fwd = _gelu_fwd_nb
    gelu_bwd = _gelu_bwd_nb
    softmax_fwd = _softmax_fwd_nb
    softmax_bwd = _softmax_bwd_nb
    rmsnorm_fwd = _rmsnorm_fwd_nb
    rmsnorm_bwd = _rmsnorm_bwd_nb
    rope_fwd = _rope_fwd_nb
    rope_bwd = _rope_bwd_nb
    adam_step = _adam_step_nb
else:
    gelu_fwd = _gelu_fwd_np
    gelu_bwd = _gelu_bwd_np
    softmax_fwd = _softmax_fwd_np
    softmax_bwd = _softmax_bwd_np
    rmsnorm_fwd = _rmsnorm_fwd_np
    rmsnorm_bwd = _rmsnorm_bwd_np
    rope_fwd = _rope_fwd_np
    rope_bwd = _rope_bwd_np
    adam_step = _adam_step_np

NUMPY_KERNELS = {
    "gelu_fwd": _gelu_fwd_np,
    "gelu_bwd": _gelu_bwd_np,
    "softmax_fwd": _softmax_fwd_np,
    "softmax_bwd": _softmax_bwd_np,
    "rmsnorm_fwd": _rmsnorm_fwd_np,
    "rmsnorm_bwd": _rmsnorm_bwd_np,
    "rope_fwd": _rope_fwd_np,
    "rope_bwd": _rope_bwd_np,
    "adam_step": _adam_step_np,
}
