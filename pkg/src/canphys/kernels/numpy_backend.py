"""Pure NumPy twin of the compiled convolution kernels.

All convolutions are 3x3, stride 1, zero-padded to 'same' size, on
channels-last batches [N, H, W, C]. The forward pass is expressed as nine
shifted GEMMs so BLAS does the heavy lifting; this is the fastest
arrangement of the pure-NumPy options benchmarked on typical layer shapes
(see benchmarks/bench_kernels.py).
"""

import numpy as np


def conv2d_same(x, w, b, num_threads=None):
    """3x3 same-padding convolution. x: [N,H,W,Ci], w: [3,3,Ci,Co], b: [Co]."""
    N, H, W, Ci = x.shape
    Co = w.shape[3]
    xp = np.zeros((N, H + 2, W + 2, Ci), dtype=x.dtype)
    xp[:, 1:-1, 1:-1, :] = x
    y = np.empty((N, H, W, Co), dtype=x.dtype)
    np.copyto(y, b.astype(x.dtype))
    acc = y.reshape(N * H * W, Co)
    for ky in range(3):
        for kx in range(3):
            patch = xp[:, ky:ky + H, kx:kx + W, :].reshape(N * H * W, Ci)
            acc += patch @ w[ky, kx].astype(x.dtype)
    return y


def conv2d_param_grad(x, gy, num_threads=None):
    """Gradients of conv2d_same w.r.t. weights and bias.

    x: [N,H,W,Ci] forward input, gy: [N,H,W,Co] output gradient.
    Returns (gw [3,3,Ci,Co], gb [Co]).
    """
    N, H, W, Ci = x.shape
    Co = gy.shape[3]
    xp = np.zeros((N, H + 2, W + 2, Ci), dtype=x.dtype)
    xp[:, 1:-1, 1:-1, :] = x
    gy_flat = gy.reshape(N * H * W, Co)
    gw = np.empty((3, 3, Ci, Co), dtype=x.dtype)
    for ky in range(3):
        for kx in range(3):
            patch = xp[:, ky:ky + H, kx:kx + W, :].reshape(N * H * W, Ci)
            gw[ky, kx] = patch.T @ gy_flat
    gb = gy.sum(axis=(0, 1, 2))
    return gw, gb
