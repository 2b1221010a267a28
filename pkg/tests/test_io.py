import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gcmimaging import io
from gcmimaging.core import Domain, PlaneDataset, ghz_to_wavenumber, plane_geometry
from gcmimaging.errors import SchemaError, UnitError

cplx = st.complex_numbers(allow_nan=False, allow_infinity=False, max_magnitude=1e300)


def _dataset(rng, nk=3, nx=4, ny=5):
    ks = np.sort(rng.uniform(6.0, 7.0, nk))
    ds = plane_geometry(-1.0, 1.0, nx, -2.0, 2.0, ny, -3.0, ks)
    return ds.with_data(rng.standard_normal((nk, ny, nx)) + 1j * rng.standard_normal((nk, ny, nx)))


def test_measurement_round_trip_is_lossless(tmp_path):
    ds = _dataset(np.random.default_rng(0))
    path = io.write_measurements(tmp_path / "m.csv", ds)
    back = io.ingest_measurements(path)
    assert np.array_equal(back.data, ds.data)
    assert np.array_equal(back.wavenumbers, ds.wavenumbers)
    assert np.array_equal(back.x, ds.x) and np.array_equal(back.y, ds.y)
    assert back.z_level == ds.z_level


@settings(max_examples=25, deadline=None)
@given(st.lists(cplx, min_size=6, max_size=6))
def test_round_trip_extreme_values(tmp_path_factory, values):
    ds = plane_geometry(0.0, 1.0, 3, 0.0, 1.0, 2, -3.0, [6.5]).with_data(np.array(values).reshape(1, 2, 3))
    path = io.write_measurements(tmp_path_factory.mktemp("rt") / "m.csv", ds)
    assert np.array_equal(io.ingest_measurements(path).data, ds.data)


def test_rows_may_come_in_any_order(tmp_path):
    ds = _dataset(np.random.default_rng(1))
    path = io.write_measurements(tmp_path / "m.csv", ds)
    lines = path.read_text().splitlines()
    head = [ln for ln in lines if ln.startswith("#")] + [io.CSV_COLUMNS]
    body = lines[len(head):]
    path.write_text("\n".join(head + body[::-1]) + "\n")
    assert np.array_equal(io.ingest_measurements(path).data, ds.data)


def test_frequency_header_without_wavenumbers(tmp_path):
    ds = plane_geometry(-1, 1, 2, -1, 1, 2, -3.0, [ghz_to_wavenumber(3.1)]).with_data(np.ones((1, 2, 2)) + 0j)
    path = io.write_measurements(tmp_path / "m.csv", ds)
    text = "\n".join(ln for ln in path.read_text().splitlines() if not ln.startswith("# wavenumbers"))
    path.write_text(text + "\n")
    back = io.ingest_measurements(path)
    assert back.wavenumbers[0] == pytest.approx(6.49712, abs=1e-5)


def test_full_size_measurement_file(tmp_path):
    rng = np.random.default_rng(2)
    ghz = np.linspace(1.0, 10.0, 300)
    ds = plane_geometry(-5, 5, 51, -5, 4.8, 50, -2.0, ghz_to_wavenumber(ghz))
    ds = ds.with_data(rng.standard_normal((300, 50, 51)) + 0j)
    back = io.ingest_measurements(io.write_measurements(tmp_path / "big.csv", ds))
    assert back.matrix.shape == (300, 2550)


def test_schema_and_unit_errors(tmp_path):
    empty = tmp_path / "empty.csv"
    empty.write_text("")
    with pytest.raises(SchemaError):
        io.ingest_measurements(empty)

    ds = _dataset(np.random.default_rng(3))
    path = io.write_measurements(tmp_path / "m.csv", ds)
    text = path.read_text()
    (tmp_path / "unit.csv").write_text(text.replace("dimensionless-0.1m", "cm"))
    with pytest.raises(UnitError):
        io.ingest_measurements(tmp_path / "unit.csv")

    lines = text.splitlines()
    (tmp_path / "gap.csv").write_text("\n".join(lines[:-2]) + "\n")
    with pytest.raises(SchemaError, match="missing lattice points"):
        io.ingest_measurements(tmp_path / "gap.csv")

    (tmp_path / "dup.csv").write_text("\n".join(lines + [lines[-1]]) + "\n")
    with pytest.raises(SchemaError):
        io.ingest_measurements(tmp_path / "dup.csv")


def test_vtk_round_trip_and_header(tmp_path):
    dom = Domain(-1, 1, -2, 2, -0.75, 1.25, 4, 5, 6)
    eps = 1 + np.random.default_rng(4).random(dom.shape)
    path = io.write_vtk(tmp_path / "eps.vtk", dom, eps)
    raw = path.read_bytes()
    head = raw.split(b"LOOKUP_TABLE default\n")[0].decode().splitlines()
    assert head[0] == "# vtk DataFile Version 3.0"
    assert head[2:5] == ["BINARY", "DATASET STRUCTURED_POINTS", "DIMENSIONS 4 5 6"]
    assert "SCALARS eps_r double 1" in head
    dom2, back = io.read_vtk(path)
    assert np.array_equal(back, eps)
    assert dom2.shape == dom.shape and dom2.x_min == dom.x_min and dom2.spacing == pytest.approx(dom.spacing)


def test_atomic_write_leaves_no_temporaries(tmp_path):
    io.atomic_write(tmp_path / "a.txt", "one")
    io.atomic_write(tmp_path / "a.txt", "two")
    assert (tmp_path / "a.txt").read_text() == "two"
    assert [p.name for p in tmp_path.iterdir()] == ["a.txt"]


def test_slices(tmp_path):
    dom = Domain(0, 1, 0, 1, 0, 1, 3, 4, 5)
    eps = np.arange(dom.size, dtype=float).reshape(dom.shape)
    paths = io.write_slices(tmp_path, dom, eps, (1, 2, 3))
    assert sorted(p.name for p in paths) == ["slice_xy.csv", "slice_xz.csv", "slice_yz.csv"]
    xy = np.loadtxt(tmp_path / "slice_xy.csv", delimiter=",", skiprows=1)
    assert xy.shape == (12, 4) and np.all(xy[:, 2] == dom.z[3])
    np.testing.assert_array_equal(xy[:, 3], eps[3].ravel())
