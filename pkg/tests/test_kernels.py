import numpy as np
import pytest

from canphys import kernels
from canphys.kernels import (avgpool2, avgpool2_grad, conv2d_input_grad,
                             conv2d_param_grad, conv2d_same, numpy_backend)


def conv_loop_oracle(x, w, b):
    """Direct quadruple-loop 3x3 same-padding convolution."""
    N, H, W, Ci = x.shape
    Co = w.shape[3]
    y = np.zeros((N, H, W, Co), dtype=np.float64)
    for n in range(N):
        for i in range(H):
            for j in range(W):
                for co in range(Co):
                    acc = float(b[co])
                    for ky in range(3):
                        for kx in range(3):
                            ii, jj = i + ky - 1, j + kx - 1
                            if 0 <= ii < H and 0 <= jj < W:
                                for ci in range(Ci):
                                    acc += float(x[n, ii, jj, ci]) * \
                                        float(w[ky, kx, ci, co])
                    y[n, i, j, co] = acc
    return y


@pytest.fixture
def fixture_f32():
    rng = np.random.default_rng(7)
    x = rng.standard_normal((3, 6, 5, 4)).astype(np.float32)
    w = rng.standard_normal((3, 3, 4, 6)).astype(np.float32) * 0.3
    b = rng.standard_normal(6).astype(np.float32)
    return x, w, b


class TestConvForward:
    def test_matches_loop_oracle(self, fixture_f32):
        x, w, b = fixture_f32
        expected = conv_loop_oracle(x, w, b)
        got = conv2d_same(x, w, b)
        np.testing.assert_allclose(got, expected, atol=1e-4)

    def test_numpy_backend_matches_loop_oracle(self, fixture_f32):
        x, w, b = fixture_f32
        expected = conv_loop_oracle(x, w, b)
        got = numpy_backend.conv2d_same(x, w, b)
        np.testing.assert_allclose(got, expected, atol=1e-4)

    def test_backends_agree(self, fixture_f32):
        if kernels.BACKEND != "cython":
            pytest.skip("compiled core not built")
        x, w, b = fixture_f32
        a = kernels._core.conv2d_same(x, w, b, 2)
        c = numpy_backend.conv2d_same(x, w, b)
        np.testing.assert_allclose(a, c, atol=1e-5)

    def test_thread_count_does_not_change_result(self, fixture_f32):
        if kernels.BACKEND != "cython":
            pytest.skip("compiled core not built")
        x, w, b = fixture_f32
        a = kernels._core.conv2d_same(x, w, b, 1)
        c = kernels._core.conv2d_same(x, w, b, 4)
        assert np.array_equal(a, c)

    def test_float64_path_runs_on_numpy(self):
        rng = np.random.default_rng(1)
        x = rng.standard_normal((2, 4, 4, 2))
        w = rng.standard_normal((3, 3, 2, 3)) * 0.2
        b = rng.standard_normal(3)
        got = conv2d_same(x, w, b)
        assert got.dtype == np.float64
        np.testing.assert_allclose(got, conv_loop_oracle(x, w, b), atol=1e-12)


class TestConvGrads:
    def test_input_grad_is_adjoint_of_forward(self, fixture_f32):
        # <gy, conv(x)> == <input_grad(gy), x> for zero bias
        x, w, _ = fixture_f32
        rng = np.random.default_rng(11)
        x64, w64 = x.astype(np.float64), w.astype(np.float64)
        gy = rng.standard_normal((3, 6, 5, 6))
        left = np.vdot(gy, conv2d_same(x64, w64, np.zeros(6)))
        right = np.vdot(conv2d_input_grad(gy, w64), x64)
        assert left == pytest.approx(right, rel=1e-12)

    def test_param_grad_matches_einsum_oracle(self, fixture_f32):
        x, w, _ = fixture_f32
        rng = np.random.default_rng(13)
        gy = rng.standard_normal((3, 6, 5, 6)).astype(np.float32)
        gw, gb = conv2d_param_grad(x, gy)
        xp = np.zeros((3, 8, 7, 4))
        xp[:, 1:-1, 1:-1, :] = x
        expected = np.zeros((3, 3, 4, 6))
        for ky in range(3):
            for kx in range(3):
                expected[ky, kx] = np.einsum(
                    "nijc,nijk->ck", xp[:, ky:ky + 6, kx:kx + 5, :],
                    gy.astype(np.float64))
        np.testing.assert_allclose(gw, expected, atol=1e-3)
        np.testing.assert_allclose(gb, gy.sum(axis=(0, 1, 2)), atol=1e-4)

    def test_param_grad_backends_agree(self, fixture_f32):
        if kernels.BACKEND != "cython":
            pytest.skip("compiled core not built")
        x, w, _ = fixture_f32
        rng = np.random.default_rng(17)
        gy = rng.standard_normal((3, 6, 5, 6)).astype(np.float32)
        gw_c = kernels._core.conv2d_param_grad(x, gy, 2)
        gw_n, _ = numpy_backend.conv2d_param_grad(x, gy)
        np.testing.assert_allclose(gw_c, gw_n, atol=2e-4)


class TestAvgPool:
    def test_forward_matches_block_means(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal((2, 4, 6, 3)).astype(np.float32)
        y = avgpool2(x)
        assert y.shape == (2, 2, 3, 3)
        assert y[1, 0, 1, 2] == pytest.approx(
            x[1, 0:2, 2:4, 2].mean(), rel=1e-6)

    def test_grad_is_adjoint(self):
        rng = np.random.default_rng(5)
        x = rng.standard_normal((2, 4, 4, 2))
        gy = rng.standard_normal((2, 2, 2, 2))
        left = np.vdot(gy, avgpool2(x))
        right = np.vdot(avgpool2_grad(gy), x)
        assert left == pytest.approx(right, rel=1e-12)


class TestEnvironmentControls:
    def test_thread_cap_env(self, monkeypatch):
        monkeypatch.setenv("CANPHYS_THREADS", "3")
        assert kernels.num_threads() == 3
        monkeypatch.setenv("CANPHYS_THREADS", "0")
        assert kernels.num_threads() == 1
        monkeypatch.delenv("CANPHYS_THREADS")
        assert kernels.num_threads() >= 1

    def test_forced_numpy_backend_in_subprocess(self):
        import subprocess
        import sys
        code = ("import canphys.kernels as k; "
                "print(k.BACKEND)")
        out = subprocess.run(
            [sys.executable, "-c", code],
            env={"PATH": "/usr/bin:/bin", "CANPHYS_KERNELS": "numpy"},
            capture_output=True, text=True)
        assert out.stdout.strip() == "numpy"
