"""Synthetic skin-patch video renderer with known physiological ground truth.

Pixel colors follow a dichromatic reflection model: a stationary skin
reflection term, a specular fluctuation driven by motion and pulse, a
luminance fluctuation, a pulsatile color term on skin pixels, and additive
sensor noise. Because every input signal is known, the rendered clips act
as oracles for the downstream measurement pipeline.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .video import FrameSequence
from .waveforms import resample_waveform

_UNIT_TOL = 1e-9


@dataclass
class SceneParams:
    """Everything that defines one rendered scene except the waveforms.

    base_color/base_strength: stationary skin reflection (unit direction and
    magnitude; fold_stationary builds them from separate diffuse + specular
    stationary parts). pulse_color: per-channel pulsatile strengths.
    light_color: unit spectrum direction of the light source, carrying the
    specular fluctuation. luminance: per-pixel stationary intensity map.
    specular_coupling/luminance_coupling: (motion_gain, pulse_gain) pairs for
    the two fluctuation channels; cross_gain adds an optional quadratic
    motion*pulse term to both for stress tests.
    """

    base_color: np.ndarray
    base_strength: float
    pulse_color: np.ndarray
    light_color: np.ndarray
    luminance: np.ndarray
    skin_mask: np.ndarray
    specular_coupling: tuple[float, float] = (0.0, 0.0)
    luminance_coupling: tuple[float, float] = (0.0, 0.0)
    cross_gain: float = 0.0
    noise_sigma: float = 0.0
    rng_seed: int = 0

    def __post_init__(self):
        self.base_color = np.asarray(self.base_color, dtype=np.float64)
        self.pulse_color = np.asarray(self.pulse_color, dtype=np.float64)
        self.light_color = np.asarray(self.light_color, dtype=np.float64)
        self.luminance = np.asarray(self.luminance, dtype=np.float64)
        self.skin_mask = np.asarray(self.skin_mask, dtype=bool)
        for name, v in (("base_color", self.base_color),
                        ("light_color", self.light_color)):
            if v.shape != (3,):
                raise DataError(f"{name} must be a 3-vector")
            if abs(np.linalg.norm(v) - 1.0) > _UNIT_TOL:
                raise DataError(f"{name} must have unit norm")
        if self.pulse_color.shape != (3,):
            raise DataError("pulse_color must be a 3-vector")
        if not self.base_strength > 0:
            raise DataError("base_strength must be positive")
        if self.luminance.ndim != 2 or self.luminance.shape != self.skin_mask.shape:
            raise DataError("luminance and skin_mask must be equal 2-D maps")
        if not np.all(np.isfinite(self.luminance)):
            raise DataError("luminance map contains non-finite values")
        if np.any(self.luminance[self.skin_mask] <= 0):
            raise DataError("luminance must be strictly positive on skin")
        if self.noise_sigma < 0:
            raise DataError("noise_sigma must be non-negative")


def fold_stationary(diffuse_color, diffuse_strength, light_color,
                    light_strength):
    """Combine stationary diffuse and specular reflections into one term.

    Returns (base_color, base_strength) with base_color a unit vector, such
    that base_color * base_strength equals the summed stationary parts.
    """
    diffuse_color = np.asarray(diffuse_color, dtype=np.float64)
    light_color = np.asarray(light_color, dtype=np.float64)
    v = diffuse_color * diffuse_strength + light_color * light_strength
    c0 = float(np.linalg.norm(v))
    if c0 <= 0:
        raise DataError("stationary reflection folds to the zero vector")
    return v / c0, c0


def radial_luminance(H, W, center_gain=1.3, corner_gain=0.7, center=None):
    """Smooth radial luminance map: center_gain at `center` (frame middle
    by default) falling linearly with distance to corner_gain at the
    farthest corner."""
    cy, cx = center if center is not None else ((H - 1) / 2.0, (W - 1) / 2.0)
    ys = np.arange(H) - cy
    xs = np.arange(W) - cx
    r = np.hypot(ys[:, None], xs[None, :])
    r_max = max(math.hypot(y, x)
                for y in (cy, H - 1 - cy) for x in (cx, W - 1 - cx))
    if r_max == 0:
        return np.full((H, W), center_gain)
    return center_gain + (corner_gain - center_gain) * (r / r_max)


def centered_skin_mask(H, W, area_fraction=0.4, center=None):
    """Boolean mask of a rectangle covering area_fraction of the frame,
    centered at `center` (frame middle by default, clipped to stay fully
    inside the frame)."""
    if not 0 < area_fraction <= 1:
        raise DataError("area_fraction must be in (0, 1]")
    side = math.sqrt(area_fraction)
    h = max(1, int(round(H * side)))
    w = max(1, int(round(W * side)))
    if center is None:
        r0 = (H - h) // 2
        c0 = (W - w) // 2
    else:
        r0 = int(np.clip(round(center[0] - h / 2.0), 0, H - h))
        c0 = int(np.clip(round(center[1] - w / 2.0), 0, W - w))
    mask = np.zeros((H, W), dtype=bool)
    mask[r0:r0 + h, c0:c0 + w] = True
    return mask


def default_scene(H, W, pulse_amp=0.02, motion_gain=0.0, pulse_gain=0.0,
                  noise_sigma=0.0, rng_seed=0, cross_gain=0.0,
                  skin_center=None):
    """SceneParams with skin-tone defaults: rectangular skin patch, radial
    luminance peaking on the patch, green-dominant pulsatile color.

    motion_gain/pulse_gain set both coupling channels at once (specular and
    luminance), which is the common calibration for stress levels.
    skin_center=(row, col) moves the lit skin patch off-center, emulating a
    subject that sits at a different position in each recording.
    """
    base = np.array([0.85, 0.65, 0.55])
    base /= np.linalg.norm(base)
    light = np.ones(3) / math.sqrt(3.0)
    pulse_color = np.array([0.5, 1.0, 0.7]) * pulse_amp
    return SceneParams(
        base_color=base,
        base_strength=0.5,
        pulse_color=pulse_color,
        light_color=light,
        luminance=radial_luminance(H, W, center=skin_center),
        skin_mask=centered_skin_mask(H, W, center=skin_center),
        specular_coupling=(motion_gain, pulse_gain),
        luminance_coupling=(motion_gain, pulse_gain),
        cross_gain=cross_gain,
        noise_sigma=noise_sigma,
        rng_seed=rng_seed,
    )


def synthesize_scene(params, pulse, resp, nuisance, T, H, W, fps):
    """Render a [T, H, W, 3] float32 clip from the reflection model.

    Skin pixels:       lum * (1 + lum_fluct) * (base + light * spec_fluct
                                                + pulse_color * p) + noise
    Background pixels: lum * (1 + lum_fluct) * base + noise

    where the fluctuation channels are linear in the combined nuisance
    signal m = nuisance + respiration and in the pulse p, plus the optional
    quadratic cross term. Deterministic given params.rng_seed.
    """
    if T < 2:
        raise DataError("need at least 2 frames")
    if params.luminance.shape != (H, W):
        raise DataError(
            f"scene maps are {params.luminance.shape}, requested {(H, W)}")
    if not fps > 0:
        raise DataError("fps must be positive")

    p = resample_waveform(pulse, fps, T).samples
    m = np.zeros(T)
    if nuisance is not None and len(nuisance.samples):
        m = m + resample_waveform(nuisance, fps, T).samples
    if resp is not None and len(resp.samples):
        m = m + resample_waveform(resp, fps, T).samples

    a_m, a_p = params.specular_coupling
    b_m, b_p = params.luminance_coupling
    cross = params.cross_gain * m * p
    spec_fluct = a_m * m + a_p * p + cross
    lum_fluct = b_m * m + b_p * p + cross

    # [T, 3] chromatic terms for skin and background pixels
    stationary = params.base_color * params.base_strength
    skin_vec = (stationary[None, :]
                + np.outer(spec_fluct, params.light_color)
                + np.outer(p, params.pulse_color))
    bg_vec = np.broadcast_to(stationary, (T, 3))

    gain = params.luminance[None, :, :, None] * \
        (1.0 + lum_fluct)[:, None, None, None]
    mask = params.skin_mask[None, :, :, None]
    chroma = np.where(mask, skin_vec[:, None, None, :], bg_vec[:, None, None, :])
    frames = (gain * chroma).astype(np.float32)

    if params.noise_sigma > 0:
        rng = np.random.default_rng(params.rng_seed)
        frames += params.noise_sigma * rng.standard_normal(
            frames.shape, dtype=np.float32)

    return FrameSequence(frames, fps=fps, provenance="synthetic")
