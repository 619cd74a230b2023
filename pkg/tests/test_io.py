import numpy as np
import pytest

from ngsgrasp import io
from ngsgrasp.errors import ConfigurationError
from ngsgrasp.geometry import EulerRotation, Grasp


class TestPfm:
    def test_round_trip_float32(self, tmp_path):
        d = np.random.default_rng(0).uniform(0, 2, (7, 5))
        io.write_pfm(tmp_path / "d.pfm", d)
        back = io.read_pfm(tmp_path / "d.pfm")
        np.testing.assert_array_equal(back, d.astype(np.float32))

    def test_header_is_little_endian(self, tmp_path):
        io.write_pfm(tmp_path / "d.pfm", np.zeros((2, 3)))
        raw = (tmp_path / "d.pfm").read_bytes()
        assert raw.startswith(b"Pf\n3 2\n-1.0\n")
        assert len(raw) == len(b"Pf\n3 2\n-1.0\n") + 2 * 3 * 4

    def test_bottom_row_first(self, tmp_path):
        d = np.array([[1.0], [2.0]])
        io.write_pfm(tmp_path / "d.pfm", d)
        payload = (tmp_path / "d.pfm").read_bytes()[-8:]
        assert np.frombuffer(payload, "<f4").tolist() == [2.0, 1.0]

    def test_colour(self, tmp_path):
        d = np.random.default_rng(1).random((3, 4, 3))
        io.write_pfm(tmp_path / "c.pfm", d)
        np.testing.assert_array_equal(io.read_pfm(tmp_path / "c.pfm"), d.astype(np.float32))

    def test_stack(self, tmp_path):
        planes = np.random.default_rng(2).random((4, 3, 5))
        io.write_pfm_stack(tmp_path / "s.pfm", planes)
        np.testing.assert_array_equal(io.read_pfm_stack(tmp_path / "s.pfm", 4),
                                      planes.astype(np.float32))

    def test_not_pfm(self, tmp_path):
        (tmp_path / "x.pfm").write_bytes(b"P6\n1 1\n255\n\0\0\0")
        with pytest.raises(ConfigurationError):
            io.read_pfm(tmp_path / "x.pfm")


class TestPpm:
    def test_round_trip(self, tmp_path):
        rgb = np.random.default_rng(3).integers(0, 256, (4, 6, 3)) / 255.0
        io.write_ppm(tmp_path / "c.ppm", rgb)
        np.testing.assert_allclose(io.read_ppm(tmp_path / "c.ppm"), rgb, atol=1e-12)

    def test_comment_in_header(self, tmp_path):
        (tmp_path / "c.ppm").write_bytes(b"P6\n# made by hand\n1 1\n255\n\xff\x00\x80")
        np.testing.assert_allclose(io.read_ppm(tmp_path / "c.ppm")[0, 0], [1.0, 0.0, 128 / 255])


def test_grasp_lines(tmp_path):
    gs = [Grasp([0.1, 0.0, 0.5], EulerRotation(0.1, -0.2, 0.0), 0.04, 0.9),
          Grasp([0.0, 0.1, 0.6], EulerRotation(-0.3, 0.0, 0.2), 0.02, 0.5)]
    io.write_grasps(tmp_path / "g.jsonl", gs)
    back = io.read_grasps(tmp_path / "g.jsonl")
    assert [g.to_dict() for g in back] == [g.to_dict() for g in gs]
    first = (tmp_path / "g.jsonl").read_text().splitlines()[0]
    assert first.startswith('{"beta":0.0,"gamma":-0.2,"score":0.9,"t":[0.1,0.0,0.5]')
