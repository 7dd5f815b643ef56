"""Shared test oracles: straight-line forward re-implementation and
finite-difference gradients. Everything here is deliberately loop-based and
independent of the package's vectorized/batched code paths."""

import math

import numpy as np

from canphys.model import forward_batch


def _conv_same_loops(x, w, b):
    H, W, Ci = x.shape
    Co = w.shape[3]
    y = np.zeros((H, W, Co))
    for i in range(H):
        for j in range(W):
            for co in range(Co):
                acc = float(b[co])
                for ky in range(3):
                    for kx in range(3):
                        ii, jj = i + ky - 1, j + kx - 1
                        if 0 <= ii < H and 0 <= jj < W:
                            for ci in range(Ci):
                                acc += x[ii, jj, ci] * w[ky, kx, ci, co]
                y[i, j, co] = acc
    return y


def _tanh_loops(x):
    out = np.zeros_like(x)
    flat_in, flat_out = x.reshape(-1), out.reshape(-1)
    for k in range(flat_in.size):
        flat_out[k] = math.tanh(flat_in[k])
    return out


def _mask_loops(feat, w, b):
    H, W, C = feat.shape
    s = np.zeros((H, W))
    for i in range(H):
        for j in range(W):
            z = float(b[0])
            for c in range(C):
                z += feat[i, j, c] * w[c]
            s[i, j] = 1.0 / (1.0 + math.exp(-z))
    total = 0.0
    for i in range(H):
        for j in range(W):
            total += s[i, j]
    return (H * W) * s / (2.0 * total)


def _pool_loops(x):
    H, W, C = x.shape
    y = np.zeros((H // 2, W // 2, C))
    for i in range(H // 2):
        for j in range(W // 2):
            for c in range(C):
                y[i, j, c] = (x[2 * i, 2 * j, c] + x[2 * i, 2 * j + 1, c] +
                              x[2 * i + 1, 2 * j, c] +
                              x[2 * i + 1, 2 * j + 1, c]) / 4.0
    return y


def oracle_forward(motion, appearance, params):
    """Scalar re-implementation of the inference pass for one sample."""
    p = {k: v.astype(np.float64) for k, v in params.tensors.items()}
    motion = motion.astype(np.float64)
    appearance = appearance.astype(np.float64)

    a1 = _tanh_loops(_conv_same_loops(appearance, p["a_conv1_w"],
                                      p["a_conv1_b"]))
    a2 = _tanh_loops(_conv_same_loops(a1, p["a_conv2_w"], p["a_conv2_b"]))
    q1 = _mask_loops(a2, p["attn1_w"], p["attn1_b"])

    m1 = _tanh_loops(_conv_same_loops(motion, p["m_conv1_w"], p["m_conv1_b"]))
    m2 = _tanh_loops(_conv_same_loops(m1, p["m_conv2_w"], p["m_conv2_b"]))
    z1 = m2 * q1[:, :, None]
    mp1 = _pool_loops(z1)
    ap1 = _pool_loops(a2)

    a3 = _tanh_loops(_conv_same_loops(ap1, p["a_conv3_w"], p["a_conv3_b"]))
    a4 = _tanh_loops(_conv_same_loops(a3, p["a_conv4_w"], p["a_conv4_b"]))
    q2 = _mask_loops(a4, p["attn2_w"], p["attn2_b"])

    m3 = _tanh_loops(_conv_same_loops(mp1, p["m_conv3_w"], p["m_conv3_b"]))
    m4 = _tanh_loops(_conv_same_loops(m3, p["m_conv4_w"], p["m_conv4_b"]))
    mp2 = _pool_loops(m4 * q2[:, :, None])

    side, C = mp2.shape[0], mp2.shape[2]
    flat = np.zeros(side * side * C)
    for i in range(side):
        for j in range(side):
            for c in range(C):
                flat[(i * side + j) * C + c] = mp2[i, j, c]
    n8 = p["fc1_b"].size
    h = np.zeros(n8)
    for k in range(n8):
        acc = p["fc1_b"][k]
        for f in range(flat.size):
            acc += flat[f] * p["fc1_w"][f, k]
        h[k] = math.tanh(acc)
    est = p["fc2_b"][0]
    for k in range(n8):
        est += h[k] * p["fc2_w"][k, 0]
    return float(est), q1, q2


def finite_difference_grads(motion, appearance, params, label, h=1e-4,
                            train=False, dropout_seed=None):
    """Central-difference gradients of (est - label)^2 / 2 w.r.t. every
    parameter element. Mutates and restores the parameter arrays in place."""

    def loss():
        est, _, _ = forward_batch(motion, appearance, params, train=train,
                                  dropout_seed=dropout_seed)
        return 0.5 * (float(est[0]) - label) ** 2

    grads = {}
    for name, arr in params.walk():
        g = np.zeros_like(arr)
        flat, gflat = arr.reshape(-1), g.reshape(-1)
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + h
            up = loss()
            flat[idx] = orig - h
            down = loss()
            flat[idx] = orig
            gflat[idx] = (up - down) / (2.0 * h)
        grads[name] = g
    return grads


def max_relative_error(analytic, numeric, floor=1e-8):
    """Worst relative disagreement over all parameters, with an absolute
    floor so that near-zero pairs compare as equal."""
    worst = 0.0
    for name in analytic:
        a = np.asarray(analytic[name], dtype=np.float64).reshape(-1)
        b = np.asarray(numeric[name], dtype=np.float64).reshape(-1)
        denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
        worst = max(worst, float((np.abs(a - b) / denom).max()))
    return worst
