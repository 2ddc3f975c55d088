"""Row-wise numeric kernels used by the encoder forward and backward passes.

Each kernel has a numba ``@njit`` implementation and a vectorised numpy
implementation with the same signature.  The numba path is used when numba
imports cleanly and ``DOCREL_DISABLE_NUMBA`` is unset (or ``0``); set the
variable to ``1`` to force the numpy path, e.g. for debugging or on
platforms without an LLVM toolchain.

All kernels take arrays whose last axis is the reduction axis and return
freshly allocated arrays of the input dtype.
"""

import math
import os

import numpy as np
from scipy.special import erf as _erf

_SQRT_HALF = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def _numba_requested():
    flag = os.environ.get("DOCREL_DISABLE_NUMBA", "").strip().lower()
    return flag in ("", "0", "false", "no")


try:
    if not _numba_requested():
        raise ImportError("numba disabled by DOCREL_DISABLE_NUMBA")
    from numba import njit
    HAVE_NUMBA = True
except ImportError:
    HAVE_NUMBA = False


# --------------------------------------------------------------------------- #
# numpy reference path
# --------------------------------------------------------------------------- #
def np_softmax_rows(x):
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def np_masked_softmax(scores, key_valid):
    """Softmax over the last axis of (B, H, Lq, Lk) scores; invalid keys get exactly 0."""
    valid = key_valid[:, None, None, :]
    z = np.where(valid, scores, -np.inf)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.where(valid, np.exp(z), 0.0).astype(scores.dtype)
    return e / e.sum(axis=-1, keepdims=True)


def np_softmax_backward(probs, grad_out):
    inner = (grad_out * probs).sum(axis=-1, keepdims=True)
    return probs * (grad_out - inner)


def np_layer_norm_forward(x, gain, bias, eps):
    mean = x.mean(axis=-1, keepdims=True)
    centered = x - mean
    var = (centered * centered).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = centered * rstd
    return xhat * gain + bias, xhat, rstd.astype(x.dtype)


def np_layer_norm_backward(grad_out, xhat, rstd, gain):
    d = xhat.shape[-1]
    gxhat = grad_out * gain
    dx = (rstd / d) * (
        d * gxhat
        - gxhat.sum(axis=-1, keepdims=True)
        - xhat * (gxhat * xhat).sum(axis=-1, keepdims=True)
    )
    red = tuple(range(grad_out.ndim - 1))
    return dx, (grad_out * xhat).sum(axis=red), grad_out.sum(axis=red)


def np_gelu_forward(x):
    return (0.5 * x * (1.0 + _erf(x * _SQRT_HALF))).astype(x.dtype)


def np_gelu_backward(x, grad_out):
    cdf = 0.5 * (1.0 + _erf(x * _SQRT_HALF))
    pdf = np.exp(-0.5 * x * x) * _INV_SQRT_2PI
    return (grad_out * (cdf + x * pdf)).astype(x.dtype)


# --------------------------------------------------------------------------- #
# numba path
# --------------------------------------------------------------------------- #
if HAVE_NUMBA:

    @njit(cache=True)
    def _nb_softmax_2d(x):
        rows, cols = x.shape
        out = np.empty_like(x)
        for r in range(rows):
            m = x[r, 0]
            for c in range(1, cols):
                if x[r, c] > m:
                    m = x[r, c]
            s = 0.0
            for c in range(cols):
                e = math.exp(x[r, c] - m)
                out[r, c] = e
                s += e
            for c in range(cols):
                out[r, c] = out[r, c] / s
        return out

    @njit(cache=True)
    def _nb_masked_softmax(scores, key_valid):
        b_n, h_n, q_n, k_n = scores.shape
        out = np.zeros_like(scores)
        for b in range(b_n):
            for h in range(h_n):
                for q in range(q_n):
                    m = -np.inf
                    for k in range(k_n):
                        if key_valid[b, k] and scores[b, h, q, k] > m:
                            m = scores[b, h, q, k]
                    s = 0.0
                    for k in range(k_n):
                        if key_valid[b, k]:
                            e = math.exp(scores[b, h, q, k] - m)
                            out[b, h, q, k] = e
                            s += e
                    for k in range(k_n):
                        out[b, h, q, k] = out[b, h, q, k] / s
        return out

    @njit(cache=True)
    def _nb_softmax_backward_2d(probs, grad_out):
        rows, cols = probs.shape
        out = np.empty_like(probs)
        for r in range(rows):
            inner = 0.0
            for c in range(cols):
                inner += grad_out[r, c] * probs[r, c]
            for c in range(cols):
                out[r, c] = probs[r, c] * (grad_out[r, c] - inner)
        return out

    @njit(cache=True)
    def _nb_layer_norm_forward_2d(x, gain, bias, eps):
        rows, d = x.shape
        y = np.empty_like(x)
        xhat = np.empty_like(x)
        rstd = np.empty((rows, 1), dtype=x.dtype)
        for r in range(rows):
            mean = 0.0
            for c in range(d):
                mean += x[r, c]
            mean /= d
            var = 0.0
            for c in range(d):
                dev = x[r, c] - mean
                var += dev * dev
            var /= d
            inv = 1.0 / math.sqrt(var + eps)
            rstd[r, 0] = inv
            for c in range(d):
                xh = (x[r, c] - mean) * inv
                xhat[r, c] = xh
                y[r, c] = xh * gain[c] + bias[c]
        return y, xhat, rstd

    @njit(cache=True)
    def _nb_layer_norm_backward_2d(grad_out, xhat, rstd, gain):
        rows, d = grad_out.shape
        dx = np.empty_like(grad_out)
        dgain = np.zeros(d, dtype=grad_out.dtype)
        dbias = np.zeros(d, dtype=grad_out.dtype)
        for r in range(rows):
            s1 = 0.0
            s2 = 0.0
            for c in range(d):
                g = grad_out[r, c] * gain[c]
                s1 += g
                s2 += g * xhat[r, c]
                dgain[c] += grad_out[r, c] * xhat[r, c]
                dbias[c] += grad_out[r, c]
            scale = rstd[r, 0] / d
            for c in range(d):
                g = grad_out[r, c] * gain[c]
                dx[r, c] = scale * (d * g - s1 - xhat[r, c] * s2)
        return dx, dgain, dbias

    @njit(cache=True)
    def _nb_gelu_forward_1d(x):
        out = np.empty_like(x)
        for i in range(x.size):
            v = x[i]
            out[i] = 0.5 * v * (1.0 + math.erf(v * _SQRT_HALF))
        return out

    @njit(cache=True)
    def _nb_gelu_backward_1d(x, grad_out):
        out = np.empty_like(x)
        for i in range(x.size):
            v = x[i]
            cdf = 0.5 * (1.0 + math.erf(v * _SQRT_HALF))
            pdf = math.exp(-0.5 * v * v) * _INV_SQRT_2PI
            out[i] = grad_out[i] * (cdf + v * pdf)
        return out

    def nb_softmax_rows(x):
        flat = np.ascontiguousarray(x).reshape(-1, x.shape[-1])
        return _nb_softmax_2d(flat).reshape(x.shape)

    def nb_masked_softmax(scores, key_valid):
        return _nb_masked_softmax(
            np.ascontiguousarray(scores), np.ascontiguousarray(key_valid, dtype=np.bool_)
        )

    def nb_softmax_backward(probs, grad_out):
        shape = probs.shape
        p = np.ascontiguousarray(probs).reshape(-1, shape[-1])
        g = np.ascontiguousarray(grad_out, dtype=probs.dtype).reshape(-1, shape[-1])
        return _nb_softmax_backward_2d(p, g).reshape(shape)

    def nb_layer_norm_forward(x, gain, bias, eps):
        shape = x.shape
        y, xhat, rstd = _nb_layer_norm_forward_2d(
            np.ascontiguousarray(x).reshape(-1, shape[-1]),
            np.ascontiguousarray(gain, dtype=x.dtype),
            np.ascontiguousarray(bias, dtype=x.dtype),
            x.dtype.type(eps),
        )
        return y.reshape(shape), xhat.reshape(shape), rstd.reshape(shape[:-1] + (1,))

    def nb_layer_norm_backward(grad_out, xhat, rstd, gain):
        shape = grad_out.shape
        dx, dgain, dbias = _nb_layer_norm_backward_2d(
            np.ascontiguousarray(grad_out).reshape(-1, shape[-1]),
            np.ascontiguousarray(xhat).reshape(-1, shape[-1]),
            np.ascontiguousarray(rstd).reshape(-1, 1),
            np.ascontiguousarray(gain, dtype=grad_out.dtype),
        )
        return dx.reshape(shape), dgain, dbias

    def nb_gelu_forward(x):
        return _nb_gelu_forward_1d(np.ascontiguousarray(x).ravel()).reshape(x.shape)

    def nb_gelu_backward(x, grad_out):
        g = np.ascontiguousarray(grad_out, dtype=x.dtype).ravel()
        return _nb_gelu_backward_1d(np.ascontiguousarray(x).ravel(), g).reshape(x.shape)


NUMPY_KERNELS = {
    "softmax_rows": np_softmax_rows,
    "masked_softmax": np_masked_softmax,
    "softmax_backward": np_softmax_backward,
    "layer_norm_forward": np_layer_norm_forward,
    "layer_norm_backward": np_layer_norm_backward,
    "gelu_forward": np_gelu_forward,
    "gelu_backward": np_gelu_backward,
}

if HAVE_NUMBA:
    NUMBA_KERNELS = {
        "softmax_rows": nb_softmax_rows,
        "masked_softmax": nb_masked_softmax,
        "softmax_backward": nb_softmax_backward,
        "layer_norm_forward": nb_layer_norm_forward,
        "layer_norm_backward": nb_layer_norm_backward,
        "gelu_forward": nb_gelu_forward,
        "gelu_backward": nb_gelu_backward,
    }
    _active = NUMBA_KERNELS
else:
    NUMBA_KERNELS = None
    _active = NUMPY_KERNELS

BACKEND = "numba" if HAVE_NUMBA else "numpy"

softmax_rows = _active["softmax_rows"]
masked_softmax = _active["masked_softmax"]
softmax_backward = _active["softmax_backward"]
layer_norm_forward = _active["layer_norm_forward"]
layer_norm_backward = _active["layer_norm_backward"]
gelu_forward = _active["gelu_forward"]
gelu_backward = _active["gelu_backward"]
