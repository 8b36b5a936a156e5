import numpy as np
import pytest

from dsmstereo import io
from dsmstereo.errors import FormatError


def test_pfm_round_trip(tmp_path, rng):
    m = rng.normal(size=(7, 5)).astype(np.float32)
    io.write_pfm(tmp_path / "m.pfm", m)
    out = io.read_pfm(tmp_path / "m.pfm")
    assert out.dtype == np.float32 and out.tobytes() == m.tobytes()


def test_pfm_rows_bottom_up(tmp_path):
    m = np.array([[1.0, 2.0], [3.0, 4.0]], dtype=np.float32)
    io.write_pfm(tmp_path / "m.pfm", m)
    payload = (tmp_path / "m.pfm").read_bytes()[-16:]
    assert np.frombuffer(payload, "<f4").tolist() == [3.0, 4.0, 1.0, 2.0]


def test_pfm_both_endiannesses(tmp_path, rng):
    m = rng.normal(size=(4, 6)).astype(np.float32)
    rows = np.flipud(m)
    (tmp_path / "le.pfm").write_bytes(b"Pf\n6 4\n-1.0\n" + rows.astype("<f4").tobytes())
    (tmp_path / "be.pfm").write_bytes(b"Pf\n6 4\n1.0\n" + rows.astype(">f4").tobytes())
    le, be = io.read_pfm(tmp_path / "le.pfm"), io.read_pfm(tmp_path / "be.pfm")
    assert le.tobytes() == be.tobytes() == m.tobytes()


def test_pfm_space_separated_header(tmp_path):
    (tmp_path / "m.pfm").write_bytes(b"Pf 2 1 -1.0\n" + np.array([1, 2], "<f4").tobytes())
    assert io.read_pfm(tmp_path / "m.pfm").tolist() == [[1.0, 2.0]]


@pytest.mark.parametrize("data, offset", [
    (b"P6\n2 2\n-1\n", 0),
    (b"Pf\n2 x\n-1\n", 5),
    (b"Pf\n2 2\nabc\n", 7),
    (b"Pf\n2 2\n0\n", 7),
    (b"Pf\n2 2\n", 7),
])
def test_pfm_malformed_header(tmp_path, data, offset):
    (tmp_path / "bad.pfm").write_bytes(data)
    with pytest.raises(FormatError) as info:
        io.read_pfm(tmp_path / "bad.pfm")
    assert info.value.offset == offset
    assert f"at byte {offset}" in str(info.value)


def test_pfm_truncated_payload(tmp_path):
    data = b"Pf\n2 2\n-1.0\n" + np.zeros(3, "<f4").tobytes()
    (tmp_path / "t.pfm").write_bytes(data)
    with pytest.raises(FormatError) as info:
        io.read_pfm(tmp_path / "t.pfm")
    assert info.value.offset == len(data)


def test_pgm_round_trip(tmp_path):
    img = np.arange(12).reshape(3, 4) / 11.0
    io.write_pgm(tmp_path / "i.pgm", img)
    out = io.read_image(tmp_path / "i.pgm")
    assert np.max(np.abs(out - img)) <= 0.5 / 255 + 1e-12


def test_ppm_luminance(tmp_path):
    img = np.zeros((2, 2, 3))
    img[0, 0] = [1, 0, 0]
    img[1, 1] = [1, 1, 1]
    io.write_ppm(tmp_path / "c.ppm", img)
    out = io.read_image(tmp_path / "c.ppm")
    np.testing.assert_allclose(out, [[0.299, 0], [0, 1]], atol=1e-12)


def test_pgm_with_comment_and_16_bit(tmp_path):
    payload = np.array([0, 65535, 32768], ">u2").tobytes()
    (tmp_path / "w.pgm").write_bytes(b"P5\n# made by hand\n3 1\n65535\n" + payload)
    np.testing.assert_allclose(io.read_image(tmp_path / "w.pgm"), [[0, 1, 32768 / 65535]])


def test_image_truncated(tmp_path):
    (tmp_path / "t.pgm").write_bytes(b"P5\n4 4\n255\n" + bytes(10))
    with pytest.raises(FormatError):
        io.read_image(tmp_path / "t.pgm")


def test_heatmap_mid_range(tmp_path):
    io.write_pgm_heatmap(tmp_path / "h.pgm", np.full((3, 4), 5.0), (0.0, 10.0))
    raw = np.frombuffer((tmp_path / "h.pgm").read_bytes()[-12:], np.uint8)
    assert np.all(np.abs(raw.astype(int) - 128) <= 1)


def test_heatmap_clamps(tmp_path):
    io.write_pgm_heatmap(tmp_path / "h.pgm", np.array([[-5.0, 0.0, 10.0, 50.0]]), (0.0, 10.0))
    raw = np.frombuffer((tmp_path / "h.pgm").read_bytes()[-4:], np.uint8)
    assert raw.tolist() == [0, 0, 255, 255]
