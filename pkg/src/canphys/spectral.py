"""Band-pass filtering, windowed spectral rate estimation and metrics.

Rate estimation follows the standard protocol for camera-based vitals:
zero-phase 6th-order Butterworth band-pass, 30-second windows with
1-second stride, periodogram peak inside the band, and the de Haan-style
SNR (energy near the first two harmonics of the reference rate versus the
remaining in-range energy).
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy import signal as sp_signal

from .errors import DataError

SNR_CAP_DB = 60.0  # keeps pure-tone windows from producing infinite dB


@dataclass(frozen=True)
class BandSpec:
    """Frequency band for one vital sign.

    pass_lo/pass_hi bound the Butterworth band-pass and the admissible
    spectral peak; snr_lo/snr_hi bound the SNR energy ratio; the template
    around each harmonic extends +-harmonic_halfwidth Hz.
    """

    kind: str
    pass_lo: float
    pass_hi: float
    snr_lo: float
    snr_hi: float
    harmonic_halfwidth: float

    @classmethod
    def hr(cls):
        return cls("HR", 0.7, 2.5, 0.5, 4.0, 0.1)

    @classmethod
    def br(cls):
        return cls("BR", 0.08, 0.5, 0.05, 1.0, 0.025)

    @classmethod
    def for_kind(cls, kind):
        if kind.upper() == "HR":
            return cls.hr()
        if kind.upper() == "BR":
            return cls.br()
        raise DataError(f"unknown band kind {kind!r}")


@dataclass
class RateEstimate:
    window_start: float  # seconds
    rate_bpm: float
    snr_db: float


@dataclass
class MetricsReport:
    mae_bpm: float
    rmse_bpm: float
    pearson_r: float
    mean_snr_db: float
    n_windows: int


_FILTER_ORDER = 6
_REALIZED_ORDER = 2 * _FILTER_ORDER  # band-pass doubles the pole count


def butterworth_bandpass(x, fs, band):
    """Zero-phase (forward-backward) 6th-order Butterworth band-pass.

    The forward-backward application squares the magnitude response, so
    effective attenuation doubles in dB and the phase is exactly zero.
    Edge transients are tamed two ways: maximal odd-reflection padding, and
    averaging with the time-reversed application, which also makes
    filtering commute with time reversal bit for bit.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise DataError("expected a 1-D signal")
    if not fs > 2.0 * band.pass_hi:
        raise DataError(
            f"sampling rate {fs} too low for band up to {band.pass_hi} Hz")
    if len(x) < 3 * _REALIZED_ORDER:
        raise DataError(
            f"signal of {len(x)} samples too short to filter "
            f"(need {3 * _REALIZED_ORDER})")
    sos = sp_signal.butter(_FILTER_ORDER, [band.pass_lo, band.pass_hi],
                           btype="bandpass", fs=fs, output="sos")
    padlen = len(x) - 1
    fwd = sp_signal.sosfiltfilt(sos, x, padtype="odd", padlen=padlen)
    rev = sp_signal.sosfiltfilt(sos, x[::-1], padtype="odd",
                                padlen=padlen)[::-1]
    return 0.5 * (fwd + rev)


def sliding_windows(x, fs, window_s=30.0, stride_s=1.0):
    """Split a signal into fixed-duration windows.

    Returns a list of (start_time_seconds, segment_view); the number of
    windows is floor((duration - window)/stride) + 1.
    """
    x = np.asarray(x)
    wlen = int(round(window_s * fs))
    step = max(1, int(round(stride_s * fs)))
    if len(x) < wlen:
        raise DataError(
            f"signal of {len(x) / fs:.2f}s shorter than the "
            f"{window_s:.0f}s window")
    count = (len(x) - wlen) // step + 1
    return [(i * step / fs, x[i * step:i * step + wlen])
            for i in range(count)]


def _periodogram(segment, fs, pad=True):
    """Rectangular-window power spectrum.

    With pad=True the segment is zero-padded to at least 60*fs points so
    peak locations resolve to 1 BPM or better. Energy-ratio computations
    use pad=False: padding adds no information and only smears tone energy
    across neighboring bins via the sinc sidelobes.
    """
    n = len(segment)
    nfft = max(n, int(math.ceil(60.0 * fs))) if pad else n
    spec = np.fft.rfft(np.asarray(segment, dtype=np.float64), n=nfft)
    power = np.abs(spec) ** 2
    freqs = np.fft.rfftfreq(nfft, d=1.0 / fs)
    return freqs, power


def estimate_rate(segment, fs, band):
    """Rate in BPM at the periodogram peak inside [pass_lo, pass_hi]."""
    segment = np.asarray(segment, dtype=np.float64)
    if not np.any(segment):
        raise DataError("cannot estimate a rate from an all-zero segment")
    freqs, power = _periodogram(segment, fs)
    in_band = (freqs >= band.pass_lo) & (freqs <= band.pass_hi)
    if not np.any(in_band):
        raise DataError("no spectral bins inside the pass band")
    band_power = power[in_band]
    if band_power.max() == 0.0:
        raise DataError("no spectral energy inside the pass band")
    peak = np.argmax(band_power)
    return 60.0 * float(freqs[in_band][peak])


def compute_snr(segment, fs, gold_rate_bpm, band):
    """de Haan SNR in dB: energy within +-halfwidth of the first two
    harmonics of the gold rate versus the remaining energy in
    [snr_lo, snr_hi]. Clipped to +-SNR_CAP_DB so window averages stay
    finite even for pure tones."""
    f_gold = gold_rate_bpm / 60.0
    if not band.snr_lo <= f_gold <= band.snr_hi:
        raise DataError(
            f"gold rate {gold_rate_bpm} BPM outside the SNR range "
            f"[{band.snr_lo * 60:.0f}, {band.snr_hi * 60:.0f}] BPM")
    freqs, power = _periodogram(segment, fs, pad=False)
    in_range = (freqs >= band.snr_lo) & (freqs <= band.snr_hi)
    hw = band.harmonic_halfwidth
    template = (np.abs(freqs - f_gold) <= hw) | \
               (np.abs(freqs - 2.0 * f_gold) <= hw)
    sig = float(power[in_range & template].sum())
    noise = float(power[in_range & ~template].sum())
    if sig <= 0.0:
        return -SNR_CAP_DB
    snr = 10.0 * math.log10(sig / max(noise, np.finfo(np.float64).tiny))
    return float(np.clip(snr, -SNR_CAP_DB, SNR_CAP_DB))


def aggregate_metrics(estimates, gold_bpm, allow_constant_rates=False):
    """MAE / RMSE / Pearson r / mean SNR over per-window rates.

    Zero-variance rate sequences leave Pearson's r undefined; that is an
    error by default, but per-clip evaluation of a steady-rate recording is
    a legitimate degenerate case, so allow_constant_rates=True reports
    r = NaN instead.
    """
    est = np.asarray([e.rate_bpm for e in estimates], dtype=np.float64)
    gold = np.asarray(gold_bpm, dtype=np.float64)
    if len(est) != len(gold):
        raise DataError(
            f"{len(est)} estimates vs {len(gold)} gold rates")
    if len(est) < 2:
        raise DataError("need at least 2 windows for aggregate metrics")
    err = est - gold
    mae = float(np.mean(np.abs(err)))
    rmse = float(np.sqrt(np.mean(err * err)))
    if np.array_equal(est, gold) and est.std() > 0.0:
        r = 1.0  # exact agreement; skip the numerically redundant corrcoef
    elif est.std() == 0.0 or gold.std() == 0.0:
        if not allow_constant_rates:
            raise DataError("zero-variance rates; correlation undefined")
        r = float("nan")
    else:
        r = float(np.corrcoef(est, gold)[0, 1])
    snrs = np.asarray([e.snr_db for e in estimates], dtype=np.float64)
    mean_snr = float(np.nanmean(snrs)) if np.any(np.isfinite(snrs)) \
        else float("nan")
    return MetricsReport(mae_bpm=mae, rmse_bpm=rmse, pearson_r=r,
                         mean_snr_db=mean_snr, n_windows=len(est))


def windowed_rates(x, fs, band, window_s=30.0, stride_s=1.0):
    """Per-window spectral-peak rates of a (reference) signal, unfiltered."""
    return [(start, estimate_rate(seg, fs, band))
            for start, seg in sliding_windows(x, fs, window_s, stride_s)]


def evaluate_series(pred, gold_signal, fs, band, window_s=30.0, stride_s=1.0):
    """Full evaluation of a predicted signal against a gold signal.

    Band-passes the prediction, estimates a rate and SNR per window, takes
    the per-window gold rate as the spectral peak of the gold signal over
    the same window, and aggregates. Returns (estimates, gold_rates,
    MetricsReport).
    """
    pred = np.asarray(pred, dtype=np.float64)
    gold_signal = np.asarray(gold_signal, dtype=np.float64)[:len(pred)]
    if len(gold_signal) < len(pred):
        raise DataError("gold signal shorter than the prediction")
    filtered = butterworth_bandpass(pred, fs, band)
    gold_rates = [r for _, r in windowed_rates(gold_signal, fs, band,
                                               window_s, stride_s)]
    estimates = []
    for (start, seg), gold_rate in zip(
            sliding_windows(filtered, fs, window_s, stride_s), gold_rates):
        rate = estimate_rate(seg, fs, band)
        snr = compute_snr(seg, fs, gold_rate, band)
        estimates.append(RateEstimate(window_start=start, rate_bpm=rate,
                                      snr_db=snr))
    report = aggregate_metrics(estimates, gold_rates,
                               allow_constant_rates=True)
    return estimates, gold_rates, report


def _moving_average(x, width):
    """Centered moving average with windows clipped at the edges."""
    n = len(x)
    half = width // 2
    csum = np.concatenate(([0.0], np.cumsum(x, dtype=np.float64)))
    lo = np.clip(np.arange(n) - half, 0, n)
    hi = np.clip(np.arange(n) + (width - half), 0, n)
    return (csum[hi] - csum[lo]) / (hi - lo)


def green_trace(seq, detrend_window=30):
    """Spatially averaged green channel, detrended by a moving average."""
    if seq.shape[3] != 3:
        raise DataError("green-channel baseline needs a 3-channel video")
    green = seq.as_float().frames[:, :, :, 1].mean(axis=(1, 2),
                                                   dtype=np.float64)
    if green.std() == 0.0:
        raise DataError("constant video; nothing to detrend")
    return green - _moving_average(green, detrend_window)


def green_channel_baseline(seq, band, gold_signal=None, window_s=30.0,
                           stride_s=1.0):
    """Classic spatial-averaging baseline: per-window rates from the green
    channel. SNR values are NaN unless a gold signal is supplied."""
    trace = green_trace(seq)
    filtered = butterworth_bandpass(trace, seq.fps, band)
    gold_rates = None
    if gold_signal is not None:
        gold_rates = [r for _, r in windowed_rates(
            np.asarray(gold_signal, dtype=np.float64)[:len(trace)],
            seq.fps, band, window_s, stride_s)]
    estimates = []
    for k, (start, seg) in enumerate(
            sliding_windows(filtered, seq.fps, window_s, stride_s)):
        rate = estimate_rate(seg, seq.fps, band)
        snr = compute_snr(seg, seq.fps, gold_rates[k], band) \
            if gold_rates is not None else float("nan")
        estimates.append(RateEstimate(window_start=start, rate_bpm=rate,
                                      snr_db=snr))
    return estimates
