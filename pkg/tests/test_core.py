import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gcmimaging.core import (
    Domain,
    PipelineConfig,
    build_partition,
    ghz_to_wavenumber,
    grid_coordinates,
    wavenumber_to_ghz,
)


def test_partition_examples():
    p = build_partition(6.25, 6.70, 9)
    assert p.h == pytest.approx(0.05)
    assert p.values[0] == 6.70 and p.values[-1] == 6.25
    np.testing.assert_allclose(p.values, np.linspace(6.70, 6.25, 10), atol=1e-12)

    p = build_partition(1.0, 2.0, 1)
    assert p.h == 1.0 and p.values == (2.0, 1.0)

    p = build_partition(6.25, 6.70, 5)
    assert p.h == pytest.approx(0.09)
    assert p.values[2] == pytest.approx(6.52)


@pytest.mark.parametrize("args", [(0.0, 1.0, 3), (2.0, 1.0, 3), (-1.0, 1.0, 2), (1.0, 2.0, 0)])
def test_partition_rejects_bad_input(args):
    with pytest.raises(ValueError):
        build_partition(*args)


@given(
    st.floats(0.1, 50.0),
    st.floats(0.01, 10.0),
    st.integers(1, 200),
)
def test_partition_steps_are_uniform(k_lo, width, n):
    p = build_partition(k_lo, k_lo + width, n)
    diffs = -np.diff(p.values)
    assert np.all(diffs > 0)
    np.testing.assert_allclose(diffs, p.h, atol=1e-12 * max(1.0, k_lo + width))
    assert p.values[0] == k_lo + width and p.values[-1] == k_lo


def test_grid_coordinates_corners_and_spacing():
    dom = Domain(0, 1, 0, 1, 0, 1, 2, 2, 2)
    pts = grid_coordinates(dom)
    corners = {tuple(p) for p in pts}
    assert corners == {(x, y, z) for x in (0, 1) for y in (0, 1) for z in (0, 1)}

    dom = Domain(nx=51, ny=51, nz=51)
    assert dom.spacing == pytest.approx((0.1, 0.1, 0.1))
    assert len(grid_coordinates(dom)) == 132651


def test_layout_is_x_fastest():
    dom = Domain(0, 1, 0, 2, 0, 3, 3, 4, 5)
    pts = grid_coordinates(dom)
    assert pts[1, 0] > pts[0, 0] and pts[1, 1] == pts[0, 1]
    X, Y, Z = dom.mesh()
    np.testing.assert_array_equal(X.ravel(), pts[:, 0])
    np.testing.assert_array_equal(Z.ravel(), pts[:, 2])


@settings(max_examples=50)
@given(st.integers(2, 6), st.integers(2, 6), st.integers(2, 6), st.data())
def test_index_is_a_bijection(nx, ny, nz, data):
    dom = Domain(0, 1, 0, 1, 0, 1, nx, ny, nz)
    i = data.draw(st.integers(0, dom.size - 1))
    assert dom.index(*dom.unravel(i)) == i
    pts = grid_coordinates(dom)
    ix, iy, iz = dom.unravel(i)
    np.testing.assert_allclose(pts[i], [dom.x[ix], dom.y[iy], dom.z[iz]])


def test_domain_invariants():
    with pytest.raises(ValueError):
        Domain(x_min=1.0, x_max=0.0)
    with pytest.raises(ValueError):
        Domain(nx=1)
    with pytest.raises(ValueError):
        Domain(z_gamma=0.0)
    assert Domain().z_gamma == -0.75


def test_unit_convention():
    assert ghz_to_wavenumber(3.1) == pytest.approx(6.49712, abs=1e-5)
    assert wavenumber_to_ghz(ghz_to_wavenumber(2.98)) == pytest.approx(2.98)
    # the stable band quoted in GHz maps onto the dimensionless partition range
    assert ghz_to_wavenumber(2.98) == pytest.approx(6.25, abs=0.01)
    assert ghz_to_wavenumber(3.19) == pytest.approx(6.69, abs=0.01)


def test_config_empty_file_and_round_trip(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text("")
    cfg = PipelineConfig.load(path)
    assert cfg == PipelineConfig()
    assert cfg.data_threshold == 0.8 and cfg.region_threshold == 0.7
    assert cfg.inner_stop == 1e-6 and cfg.outer_stop == 5e-4
    assert cfg.search_z == (-0.75, 1.0)

    path.write_text(json.dumps(cfg.to_dict()))
    assert PipelineConfig.load(path) == cfg


def test_config_nested_override_and_validation():
    cfg = PipelineConfig.from_dict({"partition": {"n_intervals": 5}, "inner_cap": 5})
    assert cfg.partition_obj.h == pytest.approx(0.09)
    assert cfg.inner_cap == 5
    with pytest.raises(ValueError):
        PipelineConfig.from_dict({"no_such_key": 1})
    with pytest.raises(ValueError):
        PipelineConfig(data_threshold=1.5)
    with pytest.raises(ValueError):
        PipelineConfig(inner_cap=1)
    with pytest.raises(ValueError):
        PipelineConfig(outer_stop=0.0)
