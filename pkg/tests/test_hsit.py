import struct

import numpy as np
import pytest

from mstcassi import hsit


@pytest.mark.parametrize("dtype", [np.float32, np.float64])
def test_round_trip(tmp_path, dtype):
    arr = np.random.default_rng(0).random((3, 4, 5)).astype(dtype)
    hsit.save(tmp_path / "a.hsit", arr)
    back = hsit.load(tmp_path / "a.hsit")
    assert back.dtype == dtype and np.array_equal(back, arr)


def test_header_layout(tmp_path):
    hsit.save(tmp_path / "a.hsit", np.zeros((2, 3), np.float64))
    raw = (tmp_path / "a.hsit").read_bytes()
    assert raw[:4] == b"HSIT"
    version, code, ndim = struct.unpack("<HBB", raw[4:8])
    assert (version, code, ndim) == (1, 1, 2)
    assert struct.unpack("<2Q", raw[8:24]) == (2, 3)
    assert len(raw) == 24 + 6 * 8


def test_errors(tmp_path):
    p = tmp_path / "a.hsit"
    hsit.save(p, np.ones(10, np.float32))
    raw = p.read_bytes()
    p.write_bytes(raw[:-3])
    with pytest.raises(hsit.IntegrityError):
        hsit.load(p)
    p.write_bytes(raw + b"x")
    with pytest.raises(hsit.IntegrityError):
        hsit.load(p)
    p.write_bytes(b"NOPE" + raw[4:])
    with pytest.raises(hsit.FormatError):
        hsit.load(p)
    p.write_bytes(raw[:4] + struct.pack("<H", 9) + raw[6:])
    with pytest.raises(hsit.VersionError):
        hsit.load(p)
    p.write_bytes(raw[:6] + bytes([7]) + raw[7:])
    with pytest.raises(hsit.FormatError):
        hsit.load(p)


def test_other_dtypes_are_stored_as_single(tmp_path):
    hsit.save(tmp_path / "i.hsit", np.arange(3, dtype=np.int32))
    back = hsit.load(tmp_path / "i.hsit")
    assert back.dtype == np.float32 and back.tolist() == [0, 1, 2]


def test_bundle(tmp_path):
    arrays = {"a.w": np.ones((2, 2), np.float32), "b": np.arange(3.0)}
    hsit.save_bundle(tmp_path / "b.hsit", arrays)
    back = hsit.load_bundle(tmp_path / "b.hsit")
    assert list(back) == ["a.w", "b"]
    assert all(np.array_equal(back[k], arrays[k]) for k in arrays)
