"""Adadelta training loop with checkpoint-ensemble model selection.

Training minimizes the squared error between the network output and the
gold-signal derivative, but the quantity that matters downstream is the
spectral rate. Because a small temporal error does not guarantee a small
rate error, training continues for a number of extra epochs past the
configured convergence budget, a checkpoint is kept after each, every
checkpoint is scored by its windowed rate MAE on the training clips, and
the lowest-error checkpoint wins (ties to the later epoch).
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, NonFiniteGradientError
from .model import backward_batch, forward_batch, init_params, mse_loss
from .spectral import BandSpec, butterworth_bandpass, estimate_rate, \
    sliding_windows, windowed_rates


@dataclass
class TrainConfig:
    epochs: int = 8                 # convergence budget before the extras
    extra_epochs: int = 16
    batch_size: int = 128
    rho: float = 0.95
    eps: float = 1e-6
    shuffle_seed: int = 0
    init_seed: int = 0
    dropout_seed: int = 0
    target: str = "HR"
    window_s: float = 30.0          # rate-error evaluation settings
    stride_s: float = 1.0
    plateau_eps: float | None = None   # enable early convergence detection
    plateau_patience: int = 3

    def __post_init__(self):
        if self.batch_size < 1:
            raise DataError("batch_size must be >= 1")
        if not 0.0 < self.rho < 1.0:
            raise DataError("rho must lie in (0, 1)")
        if not self.eps > 0.0:
            raise DataError("eps must be positive")
        if self.epochs < 1:
            raise DataError("need at least one training epoch")
        if self.extra_epochs < 0:
            raise DataError("extra_epochs must be >= 0")
        if self.target.upper() not in ("HR", "BR"):
            raise DataError("target must be HR or BR")
        self.target = self.target.upper()


@dataclass
class OptState:
    """Per-parameter running second moments of gradients and updates."""

    sq_grad: dict
    sq_update: dict

    @classmethod
    def zeros_like(cls, params):
        return cls(sq_grad={k: np.zeros_like(v) for k, v in params.walk()},
                   sq_update={k: np.zeros_like(v) for k, v in params.walk()})


@dataclass
class Checkpoint:
    epoch: int
    params: object
    freq_error_bpm: float


@dataclass
class EpochStats:
    epoch: int
    mean_loss: float
    freq_error_bpm: float  # NaN for epochs without a checkpoint evaluation


@dataclass
class TrainResult:
    checkpoints: list = field(default_factory=list)
    history: list = field(default_factory=list)


def adadelta_step(params, grads, state, config):
    """One Adadelta update. Returns (new_params, new_state); inputs are not
    modified. Aborts with diagnostics if any gradient is non-finite."""
    bad = [name for name, _ in params.walk()
           if not np.all(np.isfinite(grads[name]))]
    if bad:
        raise NonFiniteGradientError(bad)
    rho = params.dtype.type(config.rho)
    eps = params.dtype.type(config.eps)
    one_minus = params.dtype.type(1.0 - config.rho)
    new_tensors, new_sq_grad, new_sq_update = {}, {}, {}
    for name, value in params.walk():
        g = grads[name].reshape(value.shape)
        eg2 = rho * state.sq_grad[name] + one_minus * g * g
        step = -np.sqrt(state.sq_update[name] + eps) / np.sqrt(eg2 + eps) * g
        new_tensors[name] = value + step
        new_sq_grad[name] = eg2
        new_sq_update[name] = rho * state.sq_update[name] + one_minus * \
            step * step
    new_params = type(params)(params.arch, new_tensors)
    return new_params, OptState(sq_grad=new_sq_grad, sq_update=new_sq_update)


def _check_dataset(tensors_list, arch):
    if not tensors_list:
        raise DataError("empty dataset")
    L, C = arch.input_side, arch.in_channels
    for t in tensors_list:
        if t.motion.shape[1:] != (L, L, C) or \
                t.appearance.shape[1:] != (L, L, C):
            raise DataError(
                f"clip {t.name!r} tensors {t.motion.shape[1:]} do not match "
                f"the architecture ({L}x{L}x{C})")
        if len(t.motion) != len(t.labels):
            raise DataError(f"clip {t.name!r} has misaligned labels")


def predict_series(params, tensors, batch_size=512):
    """Deterministic inference over one clip; returns the [T-1] estimate."""
    out = np.empty(len(tensors), dtype=np.float32)
    for lo in range(0, len(tensors), batch_size):
        hi = min(lo + batch_size, len(tensors))
        est, _, _ = forward_batch(tensors.motion[lo:hi],
                                  tensors.appearance[lo:hi], params)
        out[lo:hi] = est
    return out


def training_frequency_error(params, tensors_list, config):
    """Mean windowed rate MAE (BPM) of the model over the training clips.

    Uses the same filter/window/stride settings as the final evaluation.
    Returns NaN when no clip is long enough to hold a single window.
    """
    band = BandSpec.for_kind(config.target)
    errors = []
    for tensors in tensors_list:
        wlen = int(round(config.window_s * tensors.fps))
        if len(tensors) < wlen or tensors.gold is None:
            continue
        pred = predict_series(params, tensors)
        filtered = butterworth_bandpass(pred, tensors.fps, band)
        gold_rates = windowed_rates(tensors.gold[:len(pred)], tensors.fps,
                                    band, config.window_s, config.stride_s)
        for (start, seg), (_, gold_bpm) in zip(
                sliding_windows(filtered, tensors.fps, config.window_s,
                                config.stride_s), gold_rates):
            errors.append(abs(estimate_rate(seg, tensors.fps, band)
                              - gold_bpm))
    return float(np.mean(errors)) if errors else float("nan")


def _run_epoch(params, state, motion, appearance, labels, perm, config,
               epoch_index):
    """One pass over the shuffled dataset; returns (params, state, loss)."""
    total_loss = 0.0
    n = len(perm)
    for bi, lo in enumerate(range(0, n, config.batch_size)):
        idx = perm[lo:lo + config.batch_size]
        est, _, trace = forward_batch(
            motion[idx], appearance[idx], params, train=True,
            dropout_seed=(config.dropout_seed, epoch_index, bi))
        grads = backward_batch(trace, labels[idx], reduction="mean")
        total_loss += mse_loss(est, labels[idx]) * len(idx)
        params, state = adadelta_step(params, grads, state, config)
    return params, state, total_loss / n


def train_epochs(tensors_list, arch, config):
    """Full training run: convergence epochs, then one checkpoint after the
    convergence point and after each extra epoch, each scored on the
    training clips. Deterministic given the config seeds."""
    _check_dataset(tensors_list, arch)
    motion = np.concatenate([t.motion for t in tensors_list])
    appearance = np.concatenate([t.appearance for t in tensors_list])
    labels = np.concatenate([t.labels for t in tensors_list])

    params = init_params(arch, config.init_seed)
    state = OptState.zeros_like(params)
    shuffle_rng = np.random.default_rng(config.shuffle_seed)
    result = TrainResult()

    def note_checkpoint(epoch):
        err = training_frequency_error(params, tensors_list, config)
        result.checkpoints.append(
            Checkpoint(epoch=epoch, params=params.copy(),
                       freq_error_bpm=err))
        return err

    epoch = 0
    recent = []
    converged_at = None
    while epoch < config.epochs:
        epoch += 1
        perm = shuffle_rng.permutation(len(labels))
        params, state, loss = _run_epoch(params, state, motion, appearance,
                                         labels, perm, config, epoch)
        freq_err = float("nan")
        plateaued = False
        if config.plateau_eps is not None:
            recent.append(loss)
            if len(recent) > config.plateau_patience:
                improvement = recent[-config.plateau_patience - 1] - \
                    min(recent[-config.plateau_patience:])
                plateaued = improvement < config.plateau_eps
        if epoch == config.epochs or plateaued:
            converged_at = epoch
            freq_err = note_checkpoint(epoch)
        result.history.append(EpochStats(epoch, loss, freq_err))
        if converged_at is not None:
            break

    for _ in range(config.extra_epochs):
        epoch += 1
        perm = shuffle_rng.permutation(len(labels))
        params, state, loss = _run_epoch(params, state, motion, appearance,
                                         labels, perm, config, epoch)
        freq_err = note_checkpoint(epoch)
        result.history.append(EpochStats(epoch, loss, freq_err))
    return result


def select_checkpoint(checkpoints):
    """Lowest training-set rate error wins; ties go to the later epoch.

    Checkpoints whose error could not be computed (NaN) are skipped; if
    none were scorable the last checkpoint is returned.
    """
    if not checkpoints:
        raise DataError("no checkpoints to select from")
    best = None
    for ck in checkpoints:
        if math.isnan(ck.freq_error_bpm):
            continue
        if best is None or ck.freq_error_bpm <= best.freq_error_bpm:
            best = ck
    return (best or checkpoints[-1]).params
