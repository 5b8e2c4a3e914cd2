import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pgnet.baselines import bicubic_baseline, sfim, smooth
from pgnet.degradation import gaussian_kernel
from pgnet.errors import DimensionError

from oracles import box_or_kernel_smooth


def test_bicubic_constant_and_identity(rng):
    np.testing.assert_allclose(bicubic_baseline(np.full((3, 4, 4), 0.2), 4), 0.2, atol=1e-7)
    x = rng.random((2, 5, 5))
    np.testing.assert_allclose(bicubic_baseline(x, 1), x, atol=1e-12)
    assert bicubic_baseline(x, 3).shape == (2, 15, 15)


def test_smooth_matches_loop(rng):
    img = rng.random((12, 12))
    k = gaussian_kernel(4, 0.8493)
    np.testing.assert_allclose(smooth(img, k), box_or_kernel_smooth(img, k), atol=1e-12)


class TestSfim:
    def test_constant_pan(self, rng):
        up = rng.random((4, 32, 32))
        np.testing.assert_allclose(sfim(up, np.full((32, 32), 0.6)), up, atol=1e-6)

    def test_zero_lr(self, rng):
        np.testing.assert_array_equal(sfim(np.zeros((2, 32, 32)), rng.random((32, 32)) + 0.1), 0.0)

    def test_inverse_construction(self, rng):
        up = rng.random((3, 32, 32))
        pan = rng.random((32, 32)) + 0.2
        k = gaussian_kernel(16, 0.8493)
        hr = up * (pan / box_or_kernel_smooth(pan, k))[None]
        np.testing.assert_allclose(sfim(up, pan, k), hr, atol=1e-5)

    @settings(max_examples=20, deadline=None)
    @given(s=st.floats(0.01, 100.0), seed=st.integers(0, 10 ** 6))
    def test_pan_scale_invariance(self, s, seed):
        r = np.random.default_rng(seed)
        up, pan = r.random((2, 32, 32)), r.random((32, 32)) + 0.1
        np.testing.assert_allclose(sfim(up, s * pan), sfim(up, pan), atol=1e-6)

    def test_zero_pan_guarded(self):
        out = sfim(np.ones((1, 32, 32)), np.zeros((32, 32)))
        assert np.all(np.isfinite(out))

    def test_extent_mismatch(self, rng):
        with pytest.raises(DimensionError):
            sfim(rng.random((2, 16, 16)), rng.random((32, 32)))

    def test_shape_and_dtype(self, rng):
        out = sfim(rng.random((2, 32, 32)).astype(np.float32), rng.random((1, 32, 32)) + 0.1)
        assert out.shape == (2, 32, 32) and out.dtype == np.float32
