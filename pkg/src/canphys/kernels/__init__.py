"""Convolution/pooling kernels with backend selection at import time.

The compiled extension (canphys.kernels._core) is used when it imported
successfully; otherwise the NumPy implementations take over. Selection can
be forced with CANPHYS_KERNELS=cython|numpy|auto. The compiled kernels are
fused-typed: float32 for production passes, float64 for gradient checking.

CANPHYS_THREADS caps the compiled kernels' worker threads (default: all
cores, at most 8).
"""

import importlib
import os

import numpy as np

from . import numpy_backend

_choice = os.environ.get("CANPHYS_KERNELS", "auto").lower()
if _choice not in ("auto", "cython", "numpy"):
    raise ValueError(f"CANPHYS_KERNELS must be auto|cython|numpy, "
                     f"got {_choice!r}")

_core = None
if _choice in ("auto", "cython"):
    try:
        _core = importlib.import_module(__name__ + "._core")
    except ImportError:
        _core = None
        if _choice == "cython":
            raise

BACKEND = "cython" if _core is not None else "numpy"


_CPU_COUNT = os.cpu_count() or 1  # cached; surprisingly slow to query


def num_threads():
    env = os.environ.get("CANPHYS_THREADS")
    if env:
        return max(1, int(env))
    return max(1, min(_CPU_COUNT, 8))


def conv2d_same(x, w, b):
    """3x3 same-padding convolution on [N,H,W,Ci] batches."""
    if _core is not None and x.dtype in (np.float32, np.float64):
        return _core.conv2d_same(
            np.ascontiguousarray(x), np.ascontiguousarray(w, dtype=x.dtype),
            np.ascontiguousarray(b, dtype=x.dtype), num_threads())
    return numpy_backend.conv2d_same(x, w.astype(x.dtype, copy=False),
                                     b.astype(x.dtype, copy=False))


def conv2d_input_grad(gy, w):
    """Gradient of conv2d_same w.r.t. its input.

    Equivalent to convolving the output gradient with the spatially flipped,
    in/out-transposed kernel, so it reuses the forward kernel.
    """
    wt = np.ascontiguousarray(w[::-1, ::-1].transpose(0, 1, 3, 2))
    zero = np.zeros(wt.shape[3], dtype=gy.dtype)
    return conv2d_same(gy, wt, zero)


def conv2d_param_grad(x, gy):
    """Gradients of conv2d_same w.r.t. weights and bias."""
    if _core is not None and x.dtype in (np.float32, np.float64):
        gw = _core.conv2d_param_grad(np.ascontiguousarray(x),
                                     np.ascontiguousarray(gy), num_threads())
        return gw, gy.sum(axis=(0, 1, 2))
    return numpy_backend.conv2d_param_grad(x, gy)


def avgpool2(x):
    """2x2 average pooling: [N,H,W,C] -> [N,H/2,W/2,C]."""
    N, H, W, C = x.shape
    return x.reshape(N, H // 2, 2, W // 2, 2, C).mean(axis=(2, 4))


def avgpool2_grad(gy):
    """Backward of 2x2 average pooling: spread each gradient over its 2x2
    window with weight 1/4."""
    N, h, w, C = gy.shape
    g = gy * np.asarray(0.25, dtype=gy.dtype)
    out = np.empty((N, h, 2, w, 2, C), dtype=gy.dtype)
    out[:] = g[:, :, None, :, None, :]
    return out.reshape(N, h * 2, w * 2, C)
