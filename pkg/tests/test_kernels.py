import importlib
import os
import subprocess
import sys

import numpy as np
import pytest

from docrel import _kernels as K

needs_numba = pytest.mark.skipif(K.NUMBA_KERNELS is None, reason="numba unavailable")


@needs_numba
@pytest.mark.parametrize("dtype, tol", [(np.float64, 1e-12), (np.float32, 1e-5)])
def test_numba_matches_numpy(dtype, tol, rng):
    nb, npk = K.NUMBA_KERNELS, K.NUMPY_KERNELS
    x = rng.normal(size=(3, 2, 5, 7)).astype(dtype)
    valid = rng.random((3, 7)) > 0.3
    valid[:, 0] = True
    g = rng.normal(size=x.shape).astype(dtype)
    gain, bias = rng.normal(size=7).astype(dtype), rng.normal(size=7).astype(dtype)

    np.testing.assert_allclose(nb["softmax_rows"](x), npk["softmax_rows"](x), atol=tol)
    p_nb = nb["masked_softmax"](x, valid)
    p_np = npk["masked_softmax"](x, valid)
    np.testing.assert_allclose(p_nb, p_np, atol=tol)
    assert np.all(p_nb[~np.broadcast_to(valid[:, None, None, :], x.shape)] == 0)
    np.testing.assert_allclose(nb["softmax_backward"](p_np, g), npk["softmax_backward"](p_np, g), atol=tol)

    for a, b in zip(nb["layer_norm_forward"](x, gain, bias, 1e-5), npk["layer_norm_forward"](x, gain, bias, 1e-5)):
        np.testing.assert_allclose(a, b, atol=tol * 10)
    _, xhat, rstd = npk["layer_norm_forward"](x, gain, bias, 1e-5)
    for a, b in zip(nb["layer_norm_backward"](g, xhat, rstd, gain), npk["layer_norm_backward"](g, xhat, rstd, gain)):
        np.testing.assert_allclose(a, b, atol=tol * 10)

    np.testing.assert_allclose(nb["gelu_forward"](x), npk["gelu_forward"](x), atol=tol)
    np.testing.assert_allclose(nb["gelu_backward"](x, g), npk["gelu_backward"](x, g), atol=tol)
    assert nb["gelu_forward"](x).dtype == dtype


def test_gelu_derivative_by_differences():
    x = np.linspace(-4, 4, 41)
    h = 1e-6
    num = (K.gelu_forward(x + h) - K.gelu_forward(x - h)) / (2 * h)
    np.testing.assert_allclose(K.gelu_backward(x, np.ones_like(x)), num, atol=1e-8)
    assert K.gelu_forward(np.array([0.0]))[0] == 0.0
    np.testing.assert_allclose(K.gelu_forward(np.array([1.0])), [0.8413447460685429], rtol=1e-12)


def test_env_flag_selects_numpy_backend():
    code = "from docrel import _kernels as K; print(K.BACKEND)"
    env = dict(os.environ, DOCREL_DISABLE_NUMBA="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "numpy"


def test_fallback_when_numba_missing(monkeypatch):
    with monkeypatch.context() as m:
        m.setitem(sys.modules, "numba", None)
        mod = importlib.reload(K)
        assert mod.BACKEND == "numpy"
        assert mod.NUMBA_KERNELS is None
        assert mod.softmax_rows is mod.np_softmax_rows
    importlib.reload(K)
