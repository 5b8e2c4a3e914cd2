import json

import numpy as np
import pytest

from pgnet.errors import DimensionError, FormatError
from pgnet.raster_io import (cube_paths, default_bands, read_cube, read_pnm, write_cube, write_error_map,
                             write_quicklook)


class TestCube:
    def test_bit_exact_roundtrip(self, rng, tmp_path):
        cube = rng.normal(size=(5, 7, 3)).astype(np.float32)
        write_cube(cube, tmp_path / "c", wavelengths=np.linspace(0.4, 1.0, 5))
        back, meta = read_cube(tmp_path / "c", with_meta=True)
        assert back.tobytes() == cube.tobytes()
        assert meta["dtype"] == "f32le" and len(meta["wavelengths"]) == 5

    def test_payload_size(self, tmp_path):
        write_cube(np.zeros((128, 4, 4), np.float32), tmp_path / "lr")
        assert cube_paths(tmp_path / "lr")[1].stat().st_size == 8192

    def test_suffix_is_optional(self, rng, tmp_path):
        cube = rng.random((2, 3, 3)).astype(np.float32)
        write_cube(cube, tmp_path / "c.json")
        np.testing.assert_array_equal(read_cube(tmp_path / "c.f32"), cube)

    def test_truncated_payload(self, tmp_path):
        write_cube(np.zeros((2, 4, 4), np.float32), tmp_path / "c")
        payload = cube_paths(tmp_path / "c")[1]
        payload.write_bytes(payload.read_bytes()[:100])
        with pytest.raises(FormatError, match="expected 128 bytes, got 100"):
            read_cube(tmp_path / "c")

    def test_malformed_json(self, tmp_path):
        write_cube(np.zeros((1, 2, 2), np.float32), tmp_path / "c")
        cube_paths(tmp_path / "c")[0].write_text("{bands: 1")
        with pytest.raises(FormatError, match="malformed JSON"):
            read_cube(tmp_path / "c")

    def test_bad_dtype(self, tmp_path):
        write_cube(np.zeros((1, 2, 2), np.float32), tmp_path / "c")
        side = cube_paths(tmp_path / "c")[0]
        meta = json.loads(side.read_text())
        meta["dtype"] = "f64le"
        side.write_text(json.dumps(meta))
        with pytest.raises(FormatError, match="unsupported dtype"):
            read_cube(tmp_path / "c")

    def test_wavelength_count(self, tmp_path):
        with pytest.raises(DimensionError):
            write_cube(np.zeros((3, 2, 2)), tmp_path / "c", wavelengths=[0.5, 0.6])


class TestQuicklook:
    def test_constant_cube_is_gray(self, tmp_path):
        write_quicklook(np.full((4, 6, 9), 0.3), (0, 1, 2), tmp_path / "q.ppm")
        img = read_pnm(tmp_path / "q.ppm")
        assert img.shape == (6, 9, 3)
        assert np.all(img == 128)
        assert (tmp_path / "q.ppm").read_bytes().startswith(b"P6\n9 6\n255\n")

    def test_stretch_spans_range(self, rng, tmp_path):
        write_quicklook(rng.random((3, 20, 20)), (0, 1, 2), tmp_path / "q.ppm")
        img = read_pnm(tmp_path / "q.ppm")
        assert img.min() == 0 and img.max() == 255

    def test_index_out_of_range(self, tmp_path):
        with pytest.raises(IndexError):
            write_quicklook(np.zeros((3, 4, 4)), (0, 1, 3), tmp_path / "q.ppm")

    def test_default_bands(self):
        assert default_bands(128) == (20, 40, 60)
        trip = default_bands(32)
        assert len(trip) == 3 and all(0 <= i < 32 for i in trip)


class TestErrorMap:
    @pytest.mark.parametrize("err,lo,hi", [(0.0, 0, 0), (0.05, 255, 255), (0.025, 127, 129)])
    def test_levels(self, rng, tmp_path, err, lo, hi):
        ref = rng.random((3, 5, 4))
        write_error_map(ref + err, ref, tmp_path / "e.pgm")
        img = read_pnm(tmp_path / "e.pgm")
        assert img.shape == (5, 4)
        assert lo <= img.min() and img.max() <= hi

    def test_shape_mismatch(self, tmp_path):
        with pytest.raises(DimensionError):
            write_error_map(np.zeros((2, 3, 3)), np.zeros((2, 3, 4)), tmp_path / "e.pgm")


def test_writers_deterministic(rng, tmp_path):
    cube = rng.random((3, 8, 8))
    for name in ("a", "b"):
        write_quicklook(cube, (0, 1, 2), tmp_path / f"{name}.ppm")
        write_error_map(cube, cube * 0.9, tmp_path / f"{name}.pgm")
    assert (tmp_path / "a.ppm").read_bytes() == (tmp_path / "b.ppm").read_bytes()
    assert (tmp_path / "a.pgm").read_bytes() == (tmp_path / "b.pgm").read_bytes()
