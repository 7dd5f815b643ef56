"""Two-branch convolutional attention network with analytic gradients.

The motion branch maps a normalized frame difference to the derivative of
the physiological signal; the appearance branch sees the standardized
current frame and produces soft spatial masks (sigmoid + L1 normalization)
that gate the motion features right before each pooling stage. Both
branches and the mask kernels train jointly from a single scalar MSE loss.

Layout is channels-last throughout: batches are [N, side, side, C].
All hidden activations are tanh, pooling is 2x2 average, the output layer
is linear. Dropout uses inverted scaling, so inference is deterministic
and expectation-consistent with training.
"""

import struct
from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .kernels import (avgpool2, avgpool2_grad, conv2d_input_grad,
                      conv2d_param_grad, conv2d_same)

PARAM_ORDER = (
    "m_conv1_w", "m_conv1_b", "m_conv2_w", "m_conv2_b",
    "m_conv3_w", "m_conv3_b", "m_conv4_w", "m_conv4_b",
    "a_conv1_w", "a_conv1_b", "a_conv2_w", "a_conv2_b",
    "a_conv3_w", "a_conv3_b", "a_conv4_w", "a_conv4_b",
    "attn1_w", "attn1_b", "attn2_w", "attn2_b",
    "fc1_w", "fc1_b", "fc2_w", "fc2_b",
)


@dataclass(frozen=True)
class CanArch:
    """Shape family of the network.

    channels are the output widths of the four conv layers (two before each
    pooling stage); n8 is the hidden dense width; dropout holds the three
    rates applied after pool 1, after pool 2, and after the hidden dense
    layer. input_side must be divisible by 4 (two 2x2 pooling stages).
    """

    input_side: int = 36
    in_channels: int = 3
    channels: tuple = (32, 32, 64, 64)
    n8: int = 128
    dropout: tuple = (0.25, 0.25, 0.5)
    out_dim: int = 1

    def __post_init__(self):
        if self.input_side % 4 != 0 or self.input_side < 4:
            raise DataError("input_side must be a positive multiple of 4")
        if len(self.channels) != 4 or any(c < 1 for c in self.channels):
            raise DataError("channels must be four positive widths")
        if self.in_channels not in (1, 3):
            raise DataError("in_channels must be 1 or 3")
        if self.n8 < 1:
            raise DataError("n8 must be positive")
        if len(self.dropout) != 3 or any(not 0 <= d < 1 for d in self.dropout):
            raise DataError("dropout rates must be three values in [0, 1)")
        if self.out_dim != 1:
            raise DataError("only scalar output is supported")

    @property
    def flat_features(self):
        side = self.input_side // 4
        return side * side * self.channels[3]


@dataclass
class CanParams:
    """All learnable tensors, in the canonical PARAM_ORDER."""

    arch: CanArch
    tensors: dict

    def walk(self):
        for name in PARAM_ORDER:
            yield name, self.tensors[name]

    def __getitem__(self, name):
        return self.tensors[name]

    @property
    def dtype(self):
        return self.tensors["m_conv1_w"].dtype

    def astype(self, dtype):
        return CanParams(self.arch, {k: v.astype(dtype)
                                     for k, v in self.tensors.items()})

    def copy(self):
        return CanParams(self.arch, {k: v.copy()
                                     for k, v in self.tensors.items()})

    def n_parameters(self):
        return sum(v.size for v in self.tensors.values())


@dataclass
class AttentionMaps:
    """Soft masks from the two attention stages; each sums to H*W/2."""

    q1: np.ndarray
    q2: np.ndarray


@dataclass
class ForwardTrace:
    """Every intermediate needed to run the exact backward pass.

    Holds a reference to the parameters it was computed with; replaying
    forward_batch with the same inputs, params and dropout_seed reproduces
    est bit for bit.
    """

    params: "CanParams"
    motion_in: np.ndarray
    appearance_in: np.ndarray
    m1: np.ndarray
    m2: np.ndarray
    a1: np.ndarray
    a2: np.ndarray
    s1: np.ndarray
    q1: np.ndarray
    mp1d: np.ndarray
    ap1d: np.ndarray
    m3: np.ndarray
    m4: np.ndarray
    a3: np.ndarray
    a4: np.ndarray
    s2: np.ndarray
    q2: np.ndarray
    flat: np.ndarray
    h: np.ndarray
    hd: np.ndarray
    est: np.ndarray
    drop_m1: np.ndarray | None
    drop_a1: np.ndarray | None
    drop2: np.ndarray | None
    drop3: np.ndarray | None
    train: bool
    dropout_seed: int | None


def param_shapes(arch):
    """Shapes of every tensor in PARAM_ORDER for a given architecture."""
    c1, c2, c3, c4 = arch.channels
    cin = arch.in_channels
    shapes = {}
    for prefix in ("m", "a"):
        shapes[f"{prefix}_conv1_w"] = (3, 3, cin, c1)
        shapes[f"{prefix}_conv1_b"] = (c1,)
        shapes[f"{prefix}_conv2_w"] = (3, 3, c1, c2)
        shapes[f"{prefix}_conv2_b"] = (c2,)
        shapes[f"{prefix}_conv3_w"] = (3, 3, c2, c3)
        shapes[f"{prefix}_conv3_b"] = (c3,)
        shapes[f"{prefix}_conv4_w"] = (3, 3, c3, c4)
        shapes[f"{prefix}_conv4_b"] = (c4,)
    shapes["attn1_w"] = (c2,)
    shapes["attn1_b"] = (1,)
    shapes["attn2_w"] = (c4,)
    shapes["attn2_b"] = (1,)
    shapes["fc1_w"] = (arch.flat_features, arch.n8)
    shapes["fc1_b"] = (arch.n8,)
    shapes["fc2_w"] = (arch.n8, arch.out_dim)
    shapes["fc2_b"] = (arch.out_dim,)
    return shapes


def _glorot_limit(shape):
    if len(shape) == 4:  # conv kernel
        receptive = shape[0] * shape[1]
        fan_in, fan_out = receptive * shape[2], receptive * shape[3]
    else:  # dense
        fan_in, fan_out = shape
    return np.sqrt(6.0 / (fan_in + fan_out))


def init_params(arch, seed):
    """Glorot-uniform conv/dense weights, zero biases, zero attention
    kernels (so fresh masks are uniform at 1/2). Deterministic per seed."""
    rng = np.random.default_rng(seed)
    shapes = param_shapes(arch)
    tensors = {}
    for name in PARAM_ORDER:
        shape = shapes[name]
        if name.endswith("_b") or name.startswith("attn"):
            tensors[name] = np.zeros(shape, dtype=np.float32)
        else:
            limit = _glorot_limit(shape)
            tensors[name] = rng.uniform(-limit, limit, size=shape) \
                .astype(np.float32)
    return CanParams(arch, tensors)


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _attention_forward(feat, w, b):
    """Mask q = H*W * sigmoid(w.feat + b) / (2 * l1norm(sigmoid)).

    The sigmoid map and its normalization run in float64 regardless of the
    working dtype so the sum invariant (sum q = H*W/2) holds tightly; q is
    returned in the working dtype, the float64 sigmoid map is kept for the
    backward pass.
    """
    N, H, W, _ = feat.shape
    z = feat.astype(np.float64) @ w.astype(np.float64) + float(b[0])
    s = _sigmoid(z)
    total = s.sum(axis=(1, 2))
    q = (H * W) * s / (2.0 * total[:, None, None])
    return q.astype(feat.dtype), s


def _attention_backward(g_q, s, feat, w):
    """Gradients through the sigmoid + L1 normalization of the mask."""
    N, H, W = g_q.shape
    K = float(H * W)
    g_q = g_q.astype(np.float64)
    total = s.sum(axis=(1, 2))
    inner = (g_q * s).sum(axis=(1, 2))
    g_s = (K / (2.0 * total**2))[:, None, None] * \
        (total[:, None, None] * g_q - inner[:, None, None])
    g_z = (g_s * s * (1.0 - s)).astype(feat.dtype)
    g_w = np.tensordot(g_z, feat, axes=([0, 1, 2], [0, 1, 2]))
    g_b = np.asarray([g_z.sum()], dtype=feat.dtype)
    g_feat = g_z[..., None] * w.reshape(1, 1, 1, -1)
    return g_feat, g_w, g_b


def attention_mask(feat, w, b):
    """Public single-sample mask: feat [H, W, C] -> q [H, W]."""
    b = np.atleast_1d(np.asarray(b, dtype=np.float64))
    q, _ = _attention_forward(feat[None], np.asarray(w), b)
    return q[0]


def apply_mask(feat, q):
    """Gate a feature map with a spatial mask, broadcast over channels."""
    if feat.shape[-3:-1] != q.shape[-2:]:
        raise DataError(
            f"mask {q.shape} does not match feature map {feat.shape}")
    return feat * q[..., None]


def _dropout_mask(rng, shape, rate, dtype):
    if rate == 0.0:
        return None
    keep = (rng.random(shape) >= rate).astype(dtype)
    keep /= dtype.type(1.0 - rate)
    return keep


def _apply_drop(x, mask):
    return x if mask is None else x * mask


def forward_batch(motion, appearance, params, train=False, dropout_seed=None):
    """Run the network on a batch.

    Returns (estimates [N], AttentionMaps with leading batch axis, trace).
    train=True applies inverted dropout drawn from dropout_seed; inference
    is deterministic and uses no dropout.
    """
    arch = params.arch
    L = arch.input_side
    expected = (L, L, arch.in_channels)
    if motion.shape[1:] != expected or appearance.shape[1:] != expected:
        raise DataError(
            f"inputs must be [N,{L},{L},{arch.in_channels}], got "
            f"{motion.shape} and {appearance.shape}")
    if motion.shape[0] != appearance.shape[0]:
        raise DataError("motion and appearance batch sizes differ")
    dtype = params.dtype
    if motion.dtype != dtype or appearance.dtype != dtype:
        raise DataError(
            f"inputs ({motion.dtype}) must match parameter dtype ({dtype})")
    if train and dropout_seed is None:
        raise DataError("train mode requires a dropout seed")
    p = params.tensors
    rng = np.random.default_rng(dropout_seed) if train else None
    d1, d2, d3 = arch.dropout
    fdtype = np.dtype(dtype)

    a1 = np.tanh(conv2d_same(appearance, p["a_conv1_w"], p["a_conv1_b"]))
    a2 = np.tanh(conv2d_same(a1, p["a_conv2_w"], p["a_conv2_b"]))
    q1, s1 = _attention_forward(a2, p["attn1_w"], p["attn1_b"])

    m1 = np.tanh(conv2d_same(motion, p["m_conv1_w"], p["m_conv1_b"]))
    m2 = np.tanh(conv2d_same(m1, p["m_conv2_w"], p["m_conv2_b"]))
    mp1 = avgpool2(apply_mask(m2, q1))
    ap1 = avgpool2(a2)

    drop_m1 = _dropout_mask(rng, mp1.shape, d1, fdtype) if train else None
    drop_a1 = _dropout_mask(rng, ap1.shape, d1, fdtype) if train else None
    mp1d = _apply_drop(mp1, drop_m1)
    ap1d = _apply_drop(ap1, drop_a1)

    a3 = np.tanh(conv2d_same(ap1d, p["a_conv3_w"], p["a_conv3_b"]))
    a4 = np.tanh(conv2d_same(a3, p["a_conv4_w"], p["a_conv4_b"]))
    q2, s2 = _attention_forward(a4, p["attn2_w"], p["attn2_b"])

    m3 = np.tanh(conv2d_same(mp1d, p["m_conv3_w"], p["m_conv3_b"]))
    m4 = np.tanh(conv2d_same(m3, p["m_conv4_w"], p["m_conv4_b"]))
    mp2 = avgpool2(apply_mask(m4, q2))

    drop2 = _dropout_mask(rng, mp2.shape, d2, fdtype) if train else None
    mp2d = _apply_drop(mp2, drop2)

    flat = mp2d.reshape(mp2d.shape[0], -1)
    h = np.tanh(flat @ p["fc1_w"] + p["fc1_b"])
    drop3 = _dropout_mask(rng, h.shape, d3, fdtype) if train else None
    hd = _apply_drop(h, drop3)
    est = (hd @ p["fc2_w"] + p["fc2_b"])[:, 0]

    trace = ForwardTrace(
        params=params, motion_in=motion, appearance_in=appearance,
        m1=m1, m2=m2, a1=a1, a2=a2, s1=s1, q1=q1, mp1d=mp1d, ap1d=ap1d,
        m3=m3, m4=m4, a3=a3, a4=a4, s2=s2, q2=q2, flat=flat, h=h, hd=hd,
        est=est, drop_m1=drop_m1, drop_a1=drop_a1, drop2=drop2, drop3=drop3,
        train=train, dropout_seed=dropout_seed)
    return est, AttentionMaps(q1=q1, q2=q2), trace


def backward_batch(trace, labels, reduction="mean"):
    """Exact gradients of the squared-error loss for a traced forward pass.

    Per-sample loss is (est - label)^2 / 2; reduction "mean" averages over
    the batch, "sum" adds. Returns {name: gradient} over PARAM_ORDER.
    """
    p = trace.params.tensors
    labels = np.asarray(labels, dtype=trace.est.dtype)
    if labels.shape != trace.est.shape:
        raise DataError(
            f"labels {labels.shape} do not match estimates {trace.est.shape}")
    n = len(labels)
    g_est = trace.est - labels
    if reduction == "mean":
        g_est = g_est / n
    elif reduction != "sum":
        raise DataError(f"unknown reduction {reduction!r}")

    g = {}
    # output layer
    g_col = g_est[:, None]
    g["fc2_w"] = trace.hd.T @ g_col
    g["fc2_b"] = g_col.sum(axis=0)
    g_hd = g_col @ p["fc2_w"].T
    g_h = _apply_drop(g_hd, trace.drop3)
    g_pre = g_h * (1.0 - trace.h * trace.h)
    g["fc1_w"] = trace.flat.T @ g_pre
    g["fc1_b"] = g_pre.sum(axis=0)
    g_flat = g_pre @ p["fc1_w"].T

    side2 = trace.params.arch.input_side // 4
    c4 = trace.params.arch.channels[3]
    g_mp2d = g_flat.reshape(n, side2, side2, c4)
    g_mp2 = _apply_drop(g_mp2d, trace.drop2)
    g_z2 = avgpool2_grad(g_mp2)

    # second attention stage
    g_m4 = apply_mask(g_z2, trace.q2)
    g_q2 = (g_z2 * trace.m4).sum(axis=-1)
    g_a4_attn, g["attn2_w"], g["attn2_b"] = _attention_backward(
        g_q2, trace.s2, trace.a4, p["attn2_w"])

    # motion convs 4 and 3
    g_m4pre = g_m4 * (1.0 - trace.m4 * trace.m4)
    g["m_conv4_w"], g["m_conv4_b"] = conv2d_param_grad(trace.m3, g_m4pre)
    g_m3 = conv2d_input_grad(g_m4pre, p["m_conv4_w"])
    g_m3pre = g_m3 * (1.0 - trace.m3 * trace.m3)
    g["m_conv3_w"], g["m_conv3_b"] = conv2d_param_grad(trace.mp1d, g_m3pre)
    g_mp1d = conv2d_input_grad(g_m3pre, p["m_conv3_w"])

    g_mp1 = _apply_drop(g_mp1d, trace.drop_m1)
    g_z1 = avgpool2_grad(g_mp1)

    # first attention stage
    g_m2 = apply_mask(g_z1, trace.q1)
    g_q1 = (g_z1 * trace.m2).sum(axis=-1)
    g_a2_attn, g["attn1_w"], g["attn1_b"] = _attention_backward(
        g_q1, trace.s1, trace.a2, p["attn1_w"])

    # motion convs 2 and 1
    g_m2pre = g_m2 * (1.0 - trace.m2 * trace.m2)
    g["m_conv2_w"], g["m_conv2_b"] = conv2d_param_grad(trace.m1, g_m2pre)
    g_m1 = conv2d_input_grad(g_m2pre, p["m_conv2_w"])
    g_m1pre = g_m1 * (1.0 - trace.m1 * trace.m1)
    g["m_conv1_w"], g["m_conv1_b"] = conv2d_param_grad(
        trace.motion_in, g_m1pre)

    # appearance branch: gradients arrive only through the two masks
    g_a4pre = g_a4_attn * (1.0 - trace.a4 * trace.a4)
    g["a_conv4_w"], g["a_conv4_b"] = conv2d_param_grad(trace.a3, g_a4pre)
    g_a3 = conv2d_input_grad(g_a4pre, p["a_conv4_w"])
    g_a3pre = g_a3 * (1.0 - trace.a3 * trace.a3)
    g["a_conv3_w"], g["a_conv3_b"] = conv2d_param_grad(trace.ap1d, g_a3pre)
    g_ap1d = conv2d_input_grad(g_a3pre, p["a_conv3_w"])

    g_ap1 = _apply_drop(g_ap1d, trace.drop_a1)
    g_a2 = g_a2_attn + avgpool2_grad(g_ap1)
    g_a2pre = g_a2 * (1.0 - trace.a2 * trace.a2)
    g["a_conv2_w"], g["a_conv2_b"] = conv2d_param_grad(trace.a1, g_a2pre)
    g_a1 = conv2d_input_grad(g_a2pre, p["a_conv2_w"])
    g_a1pre = g_a1 * (1.0 - trace.a1 * trace.a1)
    g["a_conv1_w"], g["a_conv1_b"] = conv2d_param_grad(
        trace.appearance_in, g_a1pre)
    return g


def can_forward(motion, appearance, params, train=False, dropout_seed=None):
    """Single-sample forward pass: returns (estimate, AttentionMaps, trace)."""
    est, maps, trace = forward_batch(motion[None], appearance[None], params,
                                     train=train, dropout_seed=dropout_seed)
    return float(est[0]), AttentionMaps(q1=maps.q1[0], q2=maps.q2[0]), trace


def can_backward(trace, label):
    """Gradient of (estimate - label)^2 / 2 for a single-sample trace."""
    return backward_batch(trace, np.asarray([label], dtype=trace.est.dtype),
                          reduction="sum")


def mse_loss(est, labels):
    """Mean over the batch of (est - label)^2 / 2."""
    d = np.asarray(est, dtype=np.float64) - np.asarray(labels,
                                                       dtype=np.float64)
    return float(0.5 * np.mean(d * d))


# --------------------------------------------------------------------------
# Checkpoint format: magic "CANW", version, architecture descriptor, then
# the tensors as little-endian float32 in PARAM_ORDER.
# --------------------------------------------------------------------------

_CANW_MAGIC = b"CANW"
_CANW_VERSION = 1


def params_to_bytes(params):
    arch = params.arch
    head = struct.pack(
        "<4sB8I3f", _CANW_MAGIC, _CANW_VERSION, arch.input_side,
        arch.in_channels, *arch.channels, arch.n8, arch.out_dim,
        *[float(d) for d in arch.dropout])
    blobs = [head]
    for _, tensor in params.walk():
        blobs.append(np.ascontiguousarray(tensor, dtype="<f4").tobytes())
    return b"".join(blobs)


def params_from_bytes(blob):
    head_size = struct.calcsize("<4sB8I3f")
    if len(blob) < head_size:
        raise DataError("checkpoint truncated before header end")
    magic, version, side, cin, c1, c2, c3, c4, n8, out_dim, d1, d2, d3 = \
        struct.unpack_from("<4sB8I3f", blob)
    if magic != _CANW_MAGIC:
        raise DataError("not a CANW checkpoint (bad magic)")
    if version != _CANW_VERSION:
        raise DataError(f"unsupported checkpoint version {version}")
    arch = CanArch(input_side=side, in_channels=cin,
                   channels=(c1, c2, c3, c4), n8=n8,
                   dropout=(d1, d2, d3), out_dim=out_dim)
    shapes = param_shapes(arch)
    tensors = {}
    offset = head_size
    for name in PARAM_ORDER:
        shape = shapes[name]
        count = int(np.prod(shape))
        end = offset + 4 * count
        if end > len(blob):
            raise DataError(f"checkpoint truncated inside tensor {name}")
        tensor = np.frombuffer(blob, dtype="<f4", count=count,
                               offset=offset).reshape(shape).copy()
        if not np.all(np.isfinite(tensor)):
            raise DataError(f"checkpoint tensor {name} has non-finite values")
        tensors[name] = tensor
        offset = end
    if offset != len(blob):
        raise DataError("checkpoint has trailing bytes")
    return CanParams(arch, tensors)
