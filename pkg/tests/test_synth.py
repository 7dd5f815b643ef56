import numpy as np
import pytest

from canphys.errors import DataError
from canphys.synth import (SceneParams, centered_skin_mask, default_scene,
                           fold_stationary, radial_luminance,
                           synthesize_scene)
from canphys.waveforms import make_band_noise, make_pulse


def flat_scene(H=6, W=6, **kwargs):
    """Scene with unit luminance and all-skin mask: isolates the chromatic
    terms from the spatial maps."""
    defaults = dict(
        base_color=np.array([1.0, 0.0, 0.0]),
        base_strength=0.5,
        pulse_color=np.array([0.01, 0.02, -0.005]),
        light_color=np.ones(3) / np.sqrt(3.0),
        luminance=np.ones((H, W)),
        skin_mask=np.ones((H, W), dtype=bool),
    )
    defaults.update(kwargs)
    return SceneParams(**defaults)


def pulse_30fps(rate=72.0, duration=4.0):
    return make_pulse(rate, duration, 30.0)


class TestSynthesizeScene:
    def test_uncoupled_skin_pixel_is_exactly_stationary_plus_pulse(self):
        scene = flat_scene()
        pulse = pulse_30fps()
        seq = synthesize_scene(scene, pulse, None, None, T=60, H=6, W=6,
                               fps=30.0)
        p = pulse.samples[:60]
        expected = (scene.base_color * scene.base_strength
                    + p[:, None] * scene.pulse_color).astype(np.float32)
        np.testing.assert_allclose(seq.frames[:, 3, 2, :], expected,
                                   atol=1e-7)

    def test_temporal_variance_proportional_to_pulse_color_squared(self):
        scene = flat_scene()
        seq = synthesize_scene(scene, pulse_30fps(), None, None, 120, 6, 6,
                               30.0)
        var = seq.frames[:, 1, 1, :].var(axis=0, dtype=np.float64)
        ratio = var / scene.pulse_color.astype(np.float64) ** 2
        np.testing.assert_allclose(ratio, ratio[0], rtol=1e-4)

    def test_background_pixel_constant_without_luminance_coupling(self):
        mask = np.zeros((6, 6), dtype=bool)
        mask[2:4, 2:4] = True
        scene = flat_scene(skin_mask=mask)
        seq = synthesize_scene(scene, pulse_30fps(), None, None, 60, 6, 6,
                               30.0)
        background = seq.frames[:, 0, 0, :]
        assert np.all(background == background[0])

    def test_matches_per_pixel_loop_oracle(self):
        H = W = 5
        T = 24
        fps = 30.0
        scene = SceneParams(
            base_color=np.array([0.70651,  0.54027, 0.45712]) /
            np.linalg.norm([0.70651, 0.54027, 0.45712]),
            base_strength=0.5,
            pulse_color=np.array([0.01, 0.02, 0.013]),
            light_color=np.ones(3) / np.sqrt(3.0),
            luminance=radial_luminance(H, W),
            skin_mask=centered_skin_mask(H, W),
            specular_coupling=(0.05, 0.02),
            luminance_coupling=(0.03, 0.01),
            cross_gain=0.2,
            noise_sigma=0.004,
            rng_seed=42,
        )
        pulse = make_pulse(80.0, 1.0, fps, harmonic_ratio=0.3)
        resp = make_pulse(15.0, 1.0, fps, kind="respiration")
        nuis = make_band_noise(1.0, fps, 0.4, seed=5)
        seq = synthesize_scene(scene, pulse, resp, nuis, T, H, W, fps)

        # straight-line oracle: evaluate the reflection formula per pixel
        p = pulse.samples[:T]
        m = nuis.samples[:T] + resp.samples[:T]
        a_m, a_p = scene.specular_coupling
        b_m, b_p = scene.luminance_coupling
        oracle = np.zeros((T, H, W, 3), dtype=np.float32)
        for t in range(T):
            spec = a_m * m[t] + a_p * p[t] + scene.cross_gain * m[t] * p[t]
            lum = b_m * m[t] + b_p * p[t] + scene.cross_gain * m[t] * p[t]
            for i in range(H):
                for j in range(W):
                    for c in range(3):
                        base = scene.base_color[c] * scene.base_strength
                        if scene.skin_mask[i, j]:
                            chroma = base + scene.light_color[c] * spec \
                                + scene.pulse_color[c] * p[t]
                        else:
                            chroma = base
                        oracle[t, i, j, c] = np.float32(
                            scene.luminance[i, j] * (1.0 + lum) * chroma)
        noise = scene.noise_sigma * np.random.default_rng(42) \
            .standard_normal(oracle.shape, dtype=np.float32)
        oracle += noise
        assert np.abs(seq.frames - oracle).max() < 1e-6

    def test_deterministic_given_seed(self):
        scene = default_scene(8, 8, noise_sigma=0.01, rng_seed=9)
        pulse = pulse_30fps()
        a = synthesize_scene(scene, pulse, None, None, 40, 8, 8, 30.0)
        b = synthesize_scene(scene, pulse, None, None, 40, 8, 8, 30.0)
        assert np.array_equal(a.frames, b.frames)

    def test_skin_channel_covariance_sign_matches_pulse_color(self):
        scene = flat_scene(pulse_color=np.array([0.01, -0.02, 0.005]))
        pulse = pulse_30fps()
        seq = synthesize_scene(scene, pulse, None, None, 120, 6, 6, 30.0)
        p = pulse.samples[:120]
        for c in range(3):
            cov = np.cov(seq.frames[:, 2, 2, c].astype(np.float64), p)[0, 1]
            assert np.sign(cov) == np.sign(scene.pulse_color[c])

    def test_background_uncorrelated_with_pulse_under_noise(self):
        scene = default_scene(8, 8, pulse_amp=0.02, noise_sigma=0.01,
                              rng_seed=3)
        pulse = pulse_30fps(duration=20.0)
        seq = synthesize_scene(scene, pulse, None, None, 600, 8, 8, 30.0)
        p = pulse.samples[:600]
        bg = np.argwhere(~scene.skin_mask)
        for i, j in bg[:5]:
            series = seq.frames[:, i, j, 1].astype(np.float64)
            r = np.corrcoef(series, p)[0, 1]
            assert abs(r) < 0.05

    def test_dimension_mismatch_rejected(self):
        scene = flat_scene(H=6, W=6)
        with pytest.raises(DataError):
            synthesize_scene(scene, pulse_30fps(), None, None, 30, 8, 8, 30.0)

    def test_waveform_too_short_rejected(self):
        scene = flat_scene()
        short = make_pulse(72.0, 0.5, 30.0)
        with pytest.raises(DataError):
            synthesize_scene(scene, short, None, None, 60, 6, 6, 30.0)


class TestFoldStationary:
    def test_folded_params_reproduce_separate_stationary_terms(self):
        diffuse = np.array([0.8, 0.6, 0.55])
        diffuse /= np.linalg.norm(diffuse)
        light = np.ones(3) / np.sqrt(3.0)
        d0, s0 = 0.4, 0.15
        base_color, base_strength = fold_stationary(diffuse, d0, light, s0)
        assert np.linalg.norm(base_color) == pytest.approx(1.0, abs=1e-12)
        lum = radial_luminance(5, 5)
        separate = lum[..., None] * (diffuse * d0 + light * s0)
        folded = lum[..., None] * (base_color * base_strength)
        np.testing.assert_allclose(folded, separate, atol=1e-9)

    def test_zero_fold_rejected(self):
        v = np.array([1.0, 0.0, 0.0])
        with pytest.raises(DataError):
            fold_stationary(v, 1.0, -v, 1.0)


class TestSceneValidation:
    def test_non_unit_base_color_rejected(self):
        with pytest.raises(DataError):
            flat_scene(base_color=np.array([1.0, 0.1, 0.0]))

    def test_negative_noise_rejected(self):
        with pytest.raises(DataError):
            flat_scene(noise_sigma=-0.1)

    def test_nonpositive_luminance_on_skin_rejected(self):
        lum = np.ones((6, 6))
        lum[3, 3] = 0.0
        with pytest.raises(DataError):
            flat_scene(luminance=lum)

    def test_default_scene_mask_covers_about_forty_percent(self):
        scene = default_scene(36, 36)
        frac = scene.skin_mask.mean()
        assert 0.35 < frac < 0.45

    def test_radial_luminance_bright_center_dim_corners(self):
        lum = radial_luminance(21, 21)
        assert lum[10, 10] == pytest.approx(1.3)
        assert lum[0, 0] == pytest.approx(0.7)
        assert np.all(lum > 0)
