import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from cdpm.conditioning import FeatureMap
from cdpm.errors import DataError
from cdpm.io import read_fmap, read_ply, read_xyz, write_fmap, write_pgm, write_ply, write_xyz

f32 = st.floats(-1e3, 1e3, allow_nan=False, width=32)


@given(st.integers(1, 30).flatmap(lambda n: arrays(np.float32, (n, 3), elements=f32)))
@settings(max_examples=30)
def test_ply_round_trip_is_exact(tmp_path_factory, pts):
    path = tmp_path_factory.mktemp("ply") / "c.ply"
    write_ply(path, pts)
    np.testing.assert_array_equal(read_ply(path), pts.astype(np.float64))


def test_xyz_round_trip(tmp_path, rng):
    pts = rng.normal(size=(7, 3))
    write_xyz(tmp_path / "c.xyz", pts)
    np.testing.assert_array_equal(read_xyz(tmp_path / "c.xyz"), pts)
    (tmp_path / "bad.xyz").write_text("1 2\n")
    with pytest.raises(DataError):
        read_xyz(tmp_path / "bad.xyz")


def test_ply_rejects_malformed(tmp_path):
    path = tmp_path / "c.ply"
    write_ply(path, np.zeros((4, 3)))
    raw = path.read_bytes()
    for bad in (raw[:-1], b"obj\n" + raw[4:], raw.replace(b"binary_little_endian", b"ascii"),
                raw.replace(b"property float z", b"property double z")):
        path.write_bytes(bad)
        with pytest.raises(DataError):
            read_ply(path)


def test_fmap_round_trip_and_header(tmp_path, rng):
    fm = FeatureMap(rng.random((5, 7, 5)).astype(np.float32))
    write_fmap(tmp_path / "m.fmap", fm)
    raw = (tmp_path / "m.fmap").read_bytes()
    assert raw[:4] == b"FMAP" and len(raw) == 16 + 4 * 5 * 7 * 5
    assert int.from_bytes(raw[4:8], "little") == 7
    back = read_fmap(tmp_path / "m.fmap")
    np.testing.assert_array_equal(back.data, fm.data)
    (tmp_path / "m.fmap").write_bytes(raw[:-4])
    with pytest.raises(DataError):
        read_fmap(tmp_path / "m.fmap")


def test_pgm_output(tmp_path):
    data = np.zeros((2, 3, 5), dtype=np.float32)
    data[1, 2, 1] = 0.5
    write_pgm(tmp_path / "d.pgm", FeatureMap(data), "depth")
    raw = (tmp_path / "d.pgm").read_bytes()
    assert raw.startswith(b"P5\n3 2\n255\n")
    assert list(raw[-6:]) == [0, 0, 0, 0, 0, 255]
