"""Conversion of videos + gold signals into aligned training tensors.

Stages: bicubic spatial downsampling, normalized frame differences,
outlier clipping and per-video standardization, gold-signal resampling and
first-difference labels. Index t of the motion tensor is built from frames
(t, t+1), index t of the appearance tensor holds frame t, and label t holds
gold(t+1) - gold(t).
"""

from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .video import FrameSequence
from .waveforms import resample_waveform

DENOM_EPS = 1e-7  # two-frame sums below this magnitude produce zero motion


def _degenerate_sigma(sigma, scale):
    """A spread this far below the data magnitude is numerical dust, not
    signal; treat it like an exactly constant input."""
    return sigma <= 1e-12 * max(scale, 1.0)


@dataclass
class PreprocConfig:
    L: int = 36
    clip_sigmas: float = 3.0
    target_fps: float | None = None

    def __post_init__(self):
        if self.L < 4:
            raise DataError(f"downsample side must be >= 4, got {self.L}")
        if not self.clip_sigmas > 0:
            raise DataError("clip_sigmas must be positive")
        if self.target_fps is not None and not self.target_fps > 0:
            raise DataError("target_fps must be positive")


@dataclass
class MotionTensor:
    data: np.ndarray  # [T-1, L, L, C] float32
    fps: float


@dataclass
class AppearanceTensor:
    data: np.ndarray  # [T-1, L, L, C] float32
    fps: float


@dataclass
class LabelSeries:
    values: np.ndarray  # [T-1] float32
    fps: float
    kind: str


@dataclass
class TrainingTensors:
    """Aligned per-clip training data: one sample per frame pair.

    gold keeps the resampled (unstandardized) gold signal at the video
    frame rate; per-window reference rates for evaluation come from its
    spectral peaks, which the standardized derivative labels cannot
    provide.
    """

    motion: np.ndarray      # [T-1, L, L, C] float32
    appearance: np.ndarray  # [T-1, L, L, C] float32
    labels: np.ndarray      # [T-1] float32
    fps: float
    label_kind: str
    gold: np.ndarray | None = None  # [T] float32
    name: str = ""

    def __len__(self):
        return len(self.labels)


def _cubic_kernel(d):
    """Keys bicubic kernel with a = -0.5 evaluated at |distance| d."""
    a = -0.5
    d = np.abs(d)
    near = (a + 2) * d**3 - (a + 3) * d**2 + 1
    far = a * d**3 - 5 * a * d**2 + 8 * a * d - 4 * a
    return np.where(d <= 1, near, np.where(d < 2, far, 0.0))


def _resize_matrix(n_in, n_out):
    """Dense [n_out, n_in] bicubic resampling matrix with edge clamping.

    Output sample i reads source coordinate (i + 0.5) * n_in/n_out - 0.5
    (pixel centers aligned) through the four-tap cubic kernel; taps outside
    the image reuse the border pixel.
    """
    scale = n_in / n_out
    x = (np.arange(n_out) + 0.5) * scale - 0.5
    base = np.floor(x).astype(np.int64)
    frac = x - base
    M = np.zeros((n_out, n_in))
    for k in range(-1, 3):
        w = _cubic_kernel(frac - k)
        idx = np.clip(base + k, 0, n_in - 1)
        np.add.at(M, (np.arange(n_out), idx), w)
    return M


def bicubic_resize(frames, L):
    """Resize [T, H, W, C] float frames to [T, L, L, C] (separable bicubic)."""
    T, H, W, C = frames.shape
    My = _resize_matrix(H, L)
    Mx = _resize_matrix(W, L)
    # rows: [T,H,W,C] x [L,H] -> [T,L,W,C]
    out = np.tensordot(My, frames, axes=(1, 1)).transpose(1, 0, 2, 3)
    # cols: [T,L,W,C] x [L,W] -> [T,L,L,C]
    out = np.tensordot(Mx, out, axes=(1, 2)).transpose(1, 2, 0, 3)
    return np.ascontiguousarray(out, dtype=np.float32)


def downsample_frames(seq, L):
    """Spatially average a video down to L x L via bicubic interpolation."""
    T, H, W, C = seq.shape
    if H < L or W < L:
        raise DataError(f"frame {H}x{W} smaller than target {L}x{L}")
    small = bicubic_resize(seq.as_float().frames, L)
    return FrameSequence(small, fps=seq.fps, provenance=seq.provenance)


def normalized_frame_difference(seq):
    """Per-pixel (next - current) / (next + current) motion representation.

    The division cancels the stationary luminance and skin color shared by
    the two frames. Pixel pairs whose sum is smaller than DENOM_EPS in
    magnitude yield zero (no spurious motion from dark/degenerate pixels).
    """
    x = seq.as_float().frames
    if x.shape[0] < 2:
        raise DataError("need at least 2 frames for a frame difference")
    num = x[1:] - x[:-1]
    den = x[1:] + x[:-1]
    out = np.zeros_like(num)
    np.divide(num, den, out=out, where=np.abs(den) >= DENOM_EPS)
    return MotionTensor(data=out, fps=seq.fps)


def clip_and_standardize(motion, clip_sigmas=3.0):
    """Clip to +-clip_sigmas standard deviations, then rescale to unit std.

    The standard deviation is computed jointly over all frames, pixels and
    channels of the video; clipping bounds are symmetric around zero. An
    all-constant tensor has no scale and is rejected as degenerate.
    """
    data = motion.data
    sigma = float(data.std(dtype=np.float64))
    if _degenerate_sigma(sigma, float(np.abs(data).max(initial=0.0))):
        raise DataError("motion tensor is constant; degenerate video")
    bound = clip_sigmas * sigma
    clipped = np.clip(data, -bound, bound)
    sigma2 = float(clipped.std(dtype=np.float64))
    if _degenerate_sigma(sigma2, float(np.abs(clipped).max(initial=0.0))):
        raise DataError("motion tensor collapsed to a constant after clipping")
    return MotionTensor(data=(clipped / np.float32(sigma2)).astype(np.float32),
                        fps=motion.fps)


def standardize_appearance(seq):
    """Zero-mean unit-std appearance frames (one per frame pair).

    Statistics are per video, over all T-1 retained frames, pixels and
    channels jointly.
    """
    x = seq.as_float().frames[:-1]
    mu = float(x.mean(dtype=np.float64))
    sigma = float(x.std(dtype=np.float64))
    if _degenerate_sigma(sigma, float(np.abs(x).max(initial=0.0))):
        raise DataError("appearance frames are constant; degenerate video")
    out = ((x - np.float32(mu)) / np.float32(sigma)).astype(np.float32)
    return AppearanceTensor(data=out, fps=seq.fps)


def resample_gold(signal, target_fps, n_frames):
    """Interpolate a gold-standard signal to the video frame times."""
    return resample_waveform(signal, target_fps, n_frames)


def derive_labels(resampled):
    """Forward-difference the resampled gold signal and scale to unit std."""
    y = np.asarray(resampled.samples, dtype=np.float64)
    if len(y) < 2:
        raise DataError("need at least 2 gold samples to difference")
    d = np.diff(y)
    sigma = d.std()
    if _degenerate_sigma(sigma, float(np.abs(d).max(initial=0.0))):
        raise DataError("gold signal has a constant derivative; no label scale")
    return LabelSeries(values=(d / sigma).astype(np.float32),
                       fps=resampled.sample_rate, kind=resampled.kind)


def _reindex_to_fps(seq, target_fps):
    """Re-time a video to target_fps by nearest-frame selection."""
    T = seq.shape[0]
    duration = T / seq.fps
    n_out = int(np.floor(duration * target_fps))
    if n_out < 2:
        raise DataError("video too short for the requested target_fps")
    idx = np.minimum(np.round(np.arange(n_out) * seq.fps / target_fps)
                     .astype(np.int64), T - 1)
    return FrameSequence(np.ascontiguousarray(seq.frames[idx]),
                         fps=target_fps, provenance=seq.provenance)


def preprocess_clip(seq, gold, cfg, name=""):
    """Full preprocessing of one clip into aligned training tensors."""
    if cfg.target_fps is not None and abs(cfg.target_fps - seq.fps) > 1e-9:
        seq = _reindex_to_fps(seq, cfg.target_fps)
    small = downsample_frames(seq, cfg.L)
    motion = clip_and_standardize(normalized_frame_difference(small),
                                  cfg.clip_sigmas)
    appearance = standardize_appearance(small)
    gold_at_fps = resample_gold(gold, small.fps, small.shape[0])
    labels = derive_labels(gold_at_fps)
    return TrainingTensors(motion=motion.data, appearance=appearance.data,
                           labels=labels.values, fps=small.fps,
                           label_kind=labels.kind,
                           gold=gold_at_fps.samples.astype(np.float32),
                           name=name)
