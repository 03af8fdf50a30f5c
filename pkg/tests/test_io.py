import numpy as np
import pytest

from histopet import io
from histopet.geometry import ScannerGeometry, VoxelGrid
from histopet.volume import Volume


def test_events_roundtrip(tmp_path, small_events, geometry):
    p = tmp_path / "e.hpet"
    io.write_events(p, small_events, geometry)
    ev, digest = io.read_events(p, geometry)
    assert ev.tobytes() == small_events.tobytes() and digest == geometry.digest()
    assert p.stat().st_size == 6 + 16 + 8 + 13 * len(small_events)
    with pytest.raises(io.DataError):
        io.read_events(p, ScannerGeometry(num_rings=4))


def test_truncated_and_foreign_files(tmp_path, small_events, geometry):
    p = tmp_path / "e.hpet"
    io.write_events(p, small_events[:10], geometry)
    p.write_bytes(p.read_bytes()[:-5])
    with pytest.raises(io.DataError):
        io.read_events(p)
    q = tmp_path / "x.hvol"
    q.write_bytes(b"nonsense")
    with pytest.raises(io.DataError):
        io.read_volume(q)
    r = tmp_path / "v.hvol"
    io.write_volume(r, Volume(np.zeros((1, 2, 2)), VoxelGrid((1, 2, 2))))
    buf = bytearray(r.read_bytes())
    buf[4] = 9  # version
    r.write_bytes(bytes(buf))
    with pytest.raises(io.DataError):
        io.read_volume(r)


def test_volume_roundtrip(tmp_path, rng):
    grid = VoxelGrid((3, 4, 5), (1.6, 4.0, 4.0), origin=(-12.8, -126.0, -126.0))
    vol = Volume(rng.random(grid.dims).astype(np.float32), grid, "Bq/ml")
    io.write_volume(tmp_path / "v.hvol", vol)
    back = io.read_volume(tmp_path / "v.hvol")
    assert back.grid == grid and back.unit == "Bq/ml"
    np.testing.assert_array_equal(back.data, vol.data)


def test_checkpoint_roundtrip(tmp_path, rng):
    params = {"a.w": rng.normal(size=(2, 3)), "a.b": rng.normal(size=3)}
    m = [rng.normal(size=(2, 3)), rng.normal(size=3)]
    v = [rng.random((2, 3)), rng.random(3)]
    io.write_checkpoint(tmp_path / "c.hnet", {"k": 1}, params, (7, m, v), {"note": "x"})
    ck = io.read_checkpoint(tmp_path / "c.hnet")
    assert ck["network"] == {"k": 1} and ck["extra"] == {"note": "x"}
    assert list(ck["params"]) == ["a.w", "a.b"]
    for name in params:
        np.testing.assert_array_equal(ck["params"][name], params[name])
    step, m2, v2 = ck["optimizer"]
    assert step == 7 and all(np.array_equal(x, y) for x, y in zip(m + v, m2 + v2))


def test_compact_export(tmp_path, rng):
    params = {"w": rng.normal(size=(4, 4))}
    io.write_checkpoint(tmp_path / "c.hnet", {}, params, precision="f32")
    ck = io.read_checkpoint(tmp_path / "c.hnet")
    assert ck["precision"] == "f32" and ck["optimizer"] is None
    np.testing.assert_allclose(ck["params"]["w"], params["w"], rtol=1e-7)
    with pytest.raises(ValueError):
        io.write_checkpoint(tmp_path / "d.hnet", {}, params, (1, [params["w"]], [params["w"]]),
                            precision="f32")
    p = tmp_path / "c.hnet"
    p.write_bytes(p.read_bytes() + b"\0")
    with pytest.raises(io.DataError):
        io.read_checkpoint(p)


def test_config_files(tmp_path):
    p = tmp_path / "a.cfg"
    p.write_text("# comment\ntrain.crop = 64, 64  # trailing\n\nseed=3\n")
    cfg = io.read_config(p)
    assert cfg == {"train.crop": "64, 64", "seed": "3"}
    assert io.parse_value(cfg["train.crop"]) == (64, 64)
    assert io.parse_value("yes") is True and io.parse_value("2.5") == 2.5 and io.parse_value("abc") == "abc"
    io.write_config(tmp_path / "b.cfg", {"z": 1, "a": "x"})
    assert io.read_config(tmp_path / "b.cfg") == {"a": "x", "z": "1"}
    (tmp_path / "bad.cfg").write_text("novalue\n")
    with pytest.raises(io.ConfigFileError):
        io.read_config(tmp_path / "bad.cfg")
    with pytest.raises(io.ConfigFileError):
        io.read_config(tmp_path / "missing.cfg")
