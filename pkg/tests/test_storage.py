import numpy as np
import pytest

from fwdbarrier import forward_pide as fp
from fwdbarrier import storage
from fwdbarrier.errors import ConfigurationError
from fwdbarrier.mesh import build_forward_grid
from fwdbarrier.model import MarketParams, reference_surface


def test_csv_round_trip(tmp_path):
    rows = [[0.0, 1.5, 1 / 3], [2.0, float("nan"), 1e-300]]
    p = storage.write_csv(tmp_path / "a.csv", "demo", ["x", "y", "z"], rows)
    text = p.read_text().splitlines()
    assert text[0].startswith(storage.CSV_PREFIX) and "kind=demo" in text[0]
    assert text[1] == "x,y,z"
    kind, cols, back = storage.read_csv(p)
    assert kind == "demo" and cols == ["x", "y", "z"]
    assert back[0] == rows[0] and back[1][2] == 1e-300 and np.isnan(back[1][1])


def test_csv_rejects_unversioned(tmp_path):
    p = tmp_path / "b.csv"
    p.write_text("x,y\n1,2\n")
    with pytest.raises(ConfigurationError):
        storage.read_csv(p)


def test_cube_snapshot_round_trip(tmp_path):
    grid = build_forward_grid(100.0, 103.0, 0.2, 0.5, 0.05)
    cube = fp.solve_all(grid, reference_surface(), MarketParams.flat(100.0, 0.1, 0.05),
                        options=fp.ForwardOptions(store_times=[0.1, 0.2]))
    p = storage.save_cube(cube, tmp_path / "c.bin")
    assert p.read_bytes()[:8] == storage.MAGIC
    back = storage.load_cube(p)
    assert back.grid == cube.grid and back.market == cube.market
    np.testing.assert_array_equal(back.values, cube.values)
    np.testing.assert_array_equal(back.time_index, cube.time_index)
    rows = list(storage.cube_rows(cube))
    assert len(rows[0]) == 5


def test_snapshot_bad_magic(tmp_path):
    p = tmp_path / "bad.bin"
    p.write_bytes(b"NOTACUBE" + b"\0" * 16)
    with pytest.raises(ConfigurationError):
        storage.load_cube(p)
