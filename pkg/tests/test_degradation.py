import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pgnet.degradation import (DegradationConfig, add_noise, degrade_spatial, gaussian_kernel, normalize_srf,
                               patch_grid, patchify, read_srf_csv, simulate, split_rows, synthesize_pan,
                               uniform_srf, write_srf_csv)
from pgnet.errors import ConfigError, DimensionError, FormatError

from oracles import blur_matrix, decimation_matrix, gaussian_taps


class TestKernel:
    def test_single_tap(self):
        np.testing.assert_array_equal(gaussian_kernel(1, 3.0), [[1.0]])

    def test_default_kernel(self):
        k = gaussian_kernel(16, 0.8493)
        assert abs(k.sum() - 1) < 1e-7
        np.testing.assert_allclose(k, k[::-1, ::-1], atol=1e-15)
        np.testing.assert_allclose(k, gaussian_taps(16, 0.8493), atol=1e-12)

    def test_flat_limit(self):
        np.testing.assert_allclose(gaussian_kernel(3, 1e6), 1 / 9, atol=1e-6)

    def test_bad_args(self):
        with pytest.raises(ConfigError):
            gaussian_kernel(0, 1.0)


class TestDegradeSpatial:
    def test_constant(self):
        x = np.full((2, 32, 32), 0.7, np.float32)
        np.testing.assert_allclose(degrade_spatial(x, DegradationConfig(ratio=16)), 0.7, atol=1e-6)

    def test_pure_decimation_offset(self, rng):
        x = rng.random((1, 16, 16))
        out = degrade_spatial(x, DegradationConfig(ratio=16, kernel_size=1))
        assert out.shape == (1, 1, 1)
        assert out[0, 0, 0] == x[0, 8, 8]

    @pytest.mark.parametrize("ratio,size", [(4, 16), (4, 5), (2, 3)])
    def test_dense_oracle(self, rng, ratio, size):
        x = rng.random((32, 32))
        cfg = DegradationConfig(ratio=ratio, kernel_size=size, sigma=0.8493)
        expect = decimation_matrix(32, 32, ratio) @ blur_matrix(32, 32, gaussian_taps(size, 0.8493)) @ x.ravel()
        out = degrade_spatial(x[None], cfg)
        np.testing.assert_allclose(out.ravel(), expect, atol=1e-5)

    def test_non_divisible(self):
        with pytest.raises(ConfigError):
            degrade_spatial(np.zeros((1, 30, 32)), DegradationConfig(ratio=4))

    def test_pan_commutes(self, rng):
        x = rng.random((5, 32, 32))
        s = normalize_srf(rng.random(5))
        cfg = DegradationConfig(ratio=4)
        a = synthesize_pan(degrade_spatial(x, cfg), s)
        b = degrade_spatial(synthesize_pan(x, s)[None], cfg)[0]
        np.testing.assert_allclose(a, b, atol=1e-5)


class TestPan:
    def test_one_hot(self, rng):
        x = rng.random((4, 3, 3))
        np.testing.assert_array_equal(synthesize_pan(x, np.eye(4)[2]), x[2])

    def test_uniform_constant(self):
        np.testing.assert_allclose(synthesize_pan(np.full((6, 2, 2), 0.5), np.full(6, 1 / 6)), 0.5)

    def test_hand_values(self):
        x = np.array([[[0.1, 0.2], [0.3, 0.4]],
                      [[1.0, 0.0], [0.5, 0.5]],
                      [[0.2, 0.4], [0.6, 0.8]]])
        pan = synthesize_pan(x, np.array([0.2, 0.3, 0.5]))
        # 0.2*0.1 + 0.3*1.0 + 0.5*0.2 = 0.42, etc.
        np.testing.assert_allclose(pan, [[0.42, 0.24], [0.51, 0.63]], atol=1e-12)

    def test_length_mismatch(self):
        with pytest.raises(DimensionError):
            synthesize_pan(np.zeros((3, 2, 2)), np.ones(4) / 4)

    def test_uniform_srf_visible(self):
        wl = np.array([0.35, 0.45, 0.55, 0.65, 0.9])
        np.testing.assert_allclose(uniform_srf(5, wl), [0, 1 / 3, 1 / 3, 1 / 3, 0])
        np.testing.assert_allclose(uniform_srf(4), 0.25)

    def test_srf_csv_roundtrip(self, tmp_path):
        wl, w = np.array([0.4, 0.5, 0.6]), np.array([1.0, 2.0, 1.0])
        write_srf_csv(tmp_path / "s.csv", wl, w)
        wl2, w2 = read_srf_csv(tmp_path / "s.csv")
        np.testing.assert_allclose(wl2, wl)
        np.testing.assert_allclose(w2, [0.25, 0.5, 0.25])

    def test_srf_csv_bad_header(self, tmp_path):
        (tmp_path / "s.csv").write_text("a,b\n1,2\n")
        with pytest.raises(FormatError):
            read_srf_csv(tmp_path / "s.csv")


class TestNoise:
    def test_zero_std_identity(self, rng):
        x = rng.random((3, 4))
        np.testing.assert_array_equal(add_noise(x, 0.0, 5), x)

    def test_sample_std(self):
        n = add_noise(np.zeros(10 ** 6), 0.01, 3)
        assert abs(n.std() - 0.01) < 0.0002

    def test_seeded(self, rng):
        x = rng.random(100)
        assert add_noise(x, 0.1, 9).tobytes() == add_noise(x, 0.1, 9).tobytes()

    def test_negative_std(self):
        with pytest.raises(ConfigError):
            add_noise(np.zeros(3), -1.0, 0)

    def test_simulate_independent_noise(self, rng):
        hr = rng.random((4, 16, 16)).astype(np.float32)
        cfg = DegradationConfig(ratio=4, noise_std=0.01, seed=2)
        lr, pan = simulate(hr, uniform_srf(4), cfg)
        lr2, pan2 = simulate(hr, uniform_srf(4), cfg)
        assert lr.tobytes() == lr2.tobytes() and pan.tobytes() == pan2.tobytes()
        clean = synthesize_pan(hr, uniform_srf(4))
        assert 0.007 < (pan - clean).std() < 0.013


class TestPatches:
    def _scene(self, rng, h=128, r=16, b=3):
        hr = rng.random((b, h, h)).astype(np.float32)
        return hr, hr.mean(axis=0), degrade_spatial(hr, DegradationConfig(ratio=r))

    def test_four_triples(self, rng):
        hr, pan, lr = self._scene(rng)
        p = patchify(hr, pan, lr, 64, 16)
        assert len(p) == 4
        assert all(t[2].shape == (3, 4, 4) and t[1].shape == (64, 64) for t in p)

    def test_single_patch(self, rng):
        hr, pan, lr = self._scene(rng, h=64)
        (t,) = patchify(hr, pan, lr, 64, 16)
        np.testing.assert_array_equal(t[0], hr)
        np.testing.assert_array_equal(t[1], pan)
        np.testing.assert_array_equal(t[2], lr)

    def test_reassemble(self, rng):
        hr, pan, lr = self._scene(rng, h=128, r=4)
        p = patchify(hr, pan, lr, 32, 4)
        rows, cols = patch_grid(128, 128, 32)
        rebuilt = np.concatenate([np.concatenate([p[i * cols + j][0] for j in range(cols)], axis=2)
                                  for i in range(rows)], axis=1)
        assert rebuilt.tobytes() == hr.tobytes()

    def test_footprint_alignment(self, rng):
        hr, pan, lr = self._scene(rng, h=64, r=4)
        p = patchify(hr, pan, lr, 16, 4)
        cfg = DegradationConfig(ratio=4)
        full = degrade_spatial(hr, cfg)
        np.testing.assert_array_equal(p[5][2], full[:, 4:8, 4:8])

    def test_partial_patch_rejected(self, rng):
        hr, pan, lr = self._scene(rng, h=128, r=16)
        with pytest.raises(ConfigError):
            patchify(hr, pan, lr, 48, 16)

    def test_row_split(self):
        patches = list(range(20))
        train, test = split_rows(patches, 5, 0.8)
        assert train == list(range(16)) and test == list(range(16, 20))


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10 ** 6), r=st.sampled_from([2, 4, 8]), v=st.floats(0.0, 1.0))
def test_constant_preserved(seed, r, v):
    x = np.full((2, 16, 16), v)
    out = degrade_spatial(x, DegradationConfig(ratio=r, seed=seed))
    np.testing.assert_allclose(out, v, atol=1e-12)
