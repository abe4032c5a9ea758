"""Backend parity: the compiled core must agree with the NumPy fallback."""

import numpy as np
import pytest

from rfat import kernels
from rfat.filters import butter_lowpass

cython_only = pytest.mark.skipif(
    "cython" not in kernels.available_backends(),
    reason="compiled kernel core not built",
)


def _random_signal(n, seed=0, scale=0.5):
    rng = np.random.default_rng(seed)
    return scale * (rng.standard_normal(n) + 1j * rng.standard_normal(n))


class TestDispatch:
    def test_backend_reported(self):
        assert kernels.backend_name() in ("numpy", "cython")

    def test_numpy_always_available(self):
        assert "numpy" in kernels.available_backends()


class TestIirParity:
    @cython_only
    @pytest.mark.parametrize("bw", [60e3, 150e3, 350e3])
    def test_matches_fallback(self, bw):
        b, a = butter_lowpass(bw, 1e6)
        x = _random_signal(4096, seed=int(bw))
        ref = kernels.available_backends()["numpy"].iir_filter(b, a, x)
        core = kernels.available_backends()["cython"].iir_filter(
            np.ascontiguousarray(b), np.ascontiguousarray(a), np.ascontiguousarray(x)
        )
        np.testing.assert_allclose(core, ref, rtol=1e-12, atol=1e-15)

    @cython_only
    def test_pure_gain_filter(self):
        b = np.array([2.5])
        a = np.array([1.0])
        x = _random_signal(64, seed=1)
        core = kernels.available_backends()["cython"].iir_filter(b, a, np.ascontiguousarray(x))
        np.testing.assert_allclose(core, 2.5 * x, rtol=1e-15)


class TestFeatureParity:
    @cython_only
    @pytest.mark.parametrize("m,k", [(0, 1), (3, 3), (5, 2)])
    def test_matches_fallback(self, m, k):
        x = _random_signal(512, seed=m * 10 + k, scale=1.5)
        ref = kernels.available_backends()["numpy"].arvtdnn_features(x, m, k)
        core = kernels.available_backends()["cython"].arvtdnn_features(
            np.ascontiguousarray(x), m, k
        )
        assert core.shape == ref.shape == (512, (m + 1) * (2 + k))
        np.testing.assert_allclose(core, ref, rtol=1e-12, atol=1e-15)

    def test_zero_history(self):
        x = np.ones(4, dtype=complex)
        feats = kernels.arvtdnn_features(x, 3, 2)
        # first row: only tap 0 is nonzero
        assert np.allclose(feats[0], [1, 0, 0, 0, 0, 0, 0, 0, 1, 1, 0, 0, 0, 0, 0, 0])
