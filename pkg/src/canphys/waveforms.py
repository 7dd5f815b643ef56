"""Physiological and nuisance waveform generators plus resampling.

All generators are deterministic: the same arguments (and seed, where one
exists) reproduce the same samples bit for bit.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DataError

PULSE_BPM_RANGE = (30.0, 240.0)
RESPIRATION_BPM_RANGE = (4.0, 60.0)


@dataclass
class PhysioWaveform:
    """A sampled physiological signal.

    kind is "BVP" or "respiration"; fundamental_hz records the generating
    rate for synthetic waveforms and is None for loaded ones.
    """

    kind: str
    sample_rate: float
    samples: np.ndarray
    fundamental_hz: float | None = None

    def __post_init__(self):
        if self.kind not in ("BVP", "respiration"):
            raise DataError(f"unknown waveform kind {self.kind!r}")
        if not self.sample_rate > 0:
            raise DataError("sample_rate must be positive")
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise DataError("samples must be a 1-D sequence")
        if not np.all(np.isfinite(self.samples)):
            raise DataError("waveform samples contain non-finite values")

    @property
    def duration(self):
        return len(self.samples) / self.sample_rate


@dataclass
class MotionNuisance:
    """Non-physiological motion signal (lighting flicker, body motion...)."""

    sample_rate: float
    samples: np.ndarray

    def __post_init__(self):
        if not self.sample_rate > 0:
            raise DataError("sample_rate must be positive")
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if not np.all(np.isfinite(self.samples)):
            raise DataError("nuisance samples contain non-finite values")

    @property
    def duration(self):
        return len(self.samples) / self.sample_rate


def make_pulse(rate_bpm, duration_s, fs, harmonic_ratio=0.0, kind="BVP",
               phase=0.0):
    """Generate a zero-mean periodic waveform with a known fundamental.

    The waveform is a sinusoid at rate_bpm/60 Hz plus one second harmonic
    scaled by harmonic_ratio. BVP rates must lie in [30, 240] BPM,
    respiration rates in [4, 60] BPM.
    """
    lo, hi = PULSE_BPM_RANGE if kind == "BVP" else RESPIRATION_BPM_RANGE
    if kind not in ("BVP", "respiration"):
        raise DataError(f"unknown waveform kind {kind!r}")
    if not lo <= rate_bpm <= hi:
        raise DataError(
            f"{kind} rate {rate_bpm} BPM outside supported band [{lo}, {hi}]")
    if not duration_s > 0:
        raise DataError("duration must be positive")
    if not fs > 0:
        raise DataError("sampling rate must be positive")
    f0 = rate_bpm / 60.0
    n = int(round(duration_s * fs))
    t = np.arange(n) / fs
    x = np.sin(2 * np.pi * f0 * t + phase)
    if harmonic_ratio != 0.0:
        x = x + harmonic_ratio * np.sin(2 * np.pi * 2 * f0 * t + 2 * phase)
    x -= x.mean()
    return PhysioWaveform(kind=kind, sample_rate=fs, samples=x,
                          fundamental_hz=f0)


def make_band_noise(duration_s, fs, sigma, seed, cutoff_hz=0.5):
    """Band-limited Gaussian noise (flat up to cutoff_hz, zero above).

    Synthesized in the frequency domain: white spectrum, hard cutoff,
    inverse FFT, then rescaled to standard deviation sigma. Used as the
    non-respiratory part of the nuisance signal m(t).
    """
    if not duration_s > 0:
        raise DataError("duration must be positive")
    if sigma < 0:
        raise DataError("sigma must be non-negative")
    n = int(round(duration_s * fs))
    rng = np.random.default_rng(seed)
    spectrum = rng.standard_normal(n // 2 + 1) + \
        1j * rng.standard_normal(n // 2 + 1)
    freqs = np.fft.rfftfreq(n, d=1.0 / fs)
    spectrum[freqs > cutoff_hz] = 0.0
    spectrum[0] = 0.0
    x = np.fft.irfft(spectrum, n=n)
    std = x.std()
    if sigma > 0 and std > 0:
        x *= sigma / std
    else:
        x = np.zeros(n)
    return MotionNuisance(sample_rate=fs, samples=x)


def _pchip_slopes(y, h):
    """Monotonicity-preserving tangents for uniformly spaced data.

    Interior slopes use the Fritsch-Carlson weighted harmonic mean and are
    zero wherever the data has a local extremum; endpoint slopes use the
    shape-preserving three-point rule.
    """
    n = len(y)
    d = np.zeros(n)
    delta = np.diff(y) / h
    if n == 2:
        d[:] = delta[0]
        return d
    # interior
    dl, dr = delta[:-1], delta[1:]
    keep = dl * dr > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        # uniform spacing: weights w1 = w2, harmonic mean of the two slopes
        hm = 2.0 * dl * dr / (dl + dr)
    d[1:-1] = np.where(keep, hm, 0.0)
    # endpoints: one-sided three-point estimate, clamped for shape
    for idx, (d0, d1) in ((0, (delta[0], delta[1])),
                          (n - 1, (delta[-1], delta[-2]))):
        t = (3.0 * d0 - d1) / 2.0
        if t * d0 <= 0:
            t = 0.0
        elif d0 * d1 < 0 and abs(t) > 3.0 * abs(d0):
            t = 3.0 * d0
        d[idx] = t
    return d


def pchip_eval(y, fs, t_query):
    """Evaluate the monotone piecewise-cubic interpolant of uniform samples.

    y are samples at times k/fs; t_query must lie inside [0, (n-1)/fs].
    """
    y = np.asarray(y, dtype=np.float64)
    n = len(y)
    if n < 2:
        raise DataError("need at least two samples to interpolate")
    h = 1.0 / fs
    t_query = np.asarray(t_query, dtype=np.float64)
    if t_query.min() < -1e-12 or t_query.max() > (n - 1) * h + 1e-12:
        raise DataError("interpolation query outside the sampled range")
    d = _pchip_slopes(y, h)
    pos = np.clip(t_query / h, 0.0, n - 1 - 1e-12)
    i = np.minimum(pos.astype(np.int64), n - 2)
    u = pos - i
    y0, y1 = y[i], y[i + 1]
    d0, d1 = d[i] * h, d[i + 1] * h
    u2, u3 = u * u, u * u * u
    return ((2 * u3 - 3 * u2 + 1) * y0 + (u3 - 2 * u2 + u) * d0
            + (-2 * u3 + 3 * u2) * y1 + (u3 - u2) * d1)


def resample_waveform(wave, target_fps, n_out):
    """Resample a waveform to n_out samples at target_fps.

    Uses the monotone cubic interpolant above; sample times are k/target_fps
    starting at the waveform origin. Raises if the source is too short.
    """
    if not target_fps > 0:
        raise DataError("target rate must be positive")
    if n_out < 1:
        raise DataError("need at least one output sample")
    if wave.duration + 1e-9 < n_out / target_fps:
        raise DataError(
            f"waveform covers {wave.duration:.3f}s but {n_out / target_fps:.3f}s "
            "is required")
    t = np.arange(n_out) / target_fps
    last = (len(wave.samples) - 1) / wave.sample_rate
    vals = pchip_eval(wave.samples, wave.sample_rate, np.minimum(t, last))
    kind = wave.kind if isinstance(wave, PhysioWaveform) else None
    if kind is None:
        return MotionNuisance(sample_rate=target_fps, samples=vals)
    return PhysioWaveform(kind=kind, sample_rate=target_fps, samples=vals,
                          fundamental_hz=wave.fundamental_hz)
