import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gcmimaging.core import Domain, plane_geometry
from gcmimaging.errors import ExteriorDomainError, SingularityError
from gcmimaging.forward import (
    LSOperatorContext,
    _kernel_spectrum,
    add_noise,
    evaluate_exterior,
    kernel_matrix_entries,
    rasterize_scene,
    self_cell_integral,
    simulate_measurements,
    solve_total_field,
    green_function,
)

coords = st.tuples(*[st.floats(-5, 5, allow_nan=False)] * 3)


def test_green_function_closed_forms():
    assert green_function([0, 0, 0], [1, 0, 0], 0.0) == pytest.approx(1 / (4 * np.pi))
    assert green_function([0, 0, 0], [0, 0.5, 0], 6.575) == pytest.approx(np.exp(1j * 3.2875) / (2 * np.pi))
    with pytest.raises(SingularityError):
        green_function([1, 2, 3], [1, 2, 3], 1.0)


@given(coords, coords, st.floats(0, 20))
def test_green_function_symmetric(x, y, k):
    if np.linalg.norm(np.subtract(x, y)) < 1e-6:
        return
    assert green_function(x, y, k) == green_function(y, x, k)


def test_self_cell_small_k_limit():
    # series and closed form agree where both are accurate
    v = 1e-3
    a = (3 * v / (4 * np.pi)) ** (1 / 3)
    closed = self_cell_integral(1e-1 / a, v)
    k = 1e-1 / a
    series = a * a / 2 + 1j * k * a**3 / 3 - k**2 * a**4 / 8
    assert closed == pytest.approx(series, rel=1e-4)


def test_kernel_spectrum_is_even():
    spec = _kernel_spectrum(4.0, (5, 6, 7), (0.1, 0.12, 0.09))
    flipped = np.roll(spec[::-1, ::-1, ::-1], 1, axis=(0, 1, 2))
    np.testing.assert_allclose(spec, flipped, atol=1e-12 * np.abs(spec).max())


def test_zero_contrast_returns_incident_exactly():
    dom = Domain(0, 1, 0, 1, 0, 1, 6, 6, 6)
    k = 3.0
    u = solve_total_field(dom, np.ones(dom.shape), k)
    _, _, Z = dom.mesh()
    assert np.array_equal(u, np.exp(1j * k * Z))
    ctx = LSOperatorContext(dom, np.ones(dom.shape), k)
    assert ctx.is_trivial


def _smooth_eps(dom, amp=1.0):
    X, Y, Z = dom.mesh()
    c = [(dom.x_min + dom.x_max) / 2, (dom.y_min + dom.y_max) / 2, (dom.z_min + dom.z_max) / 2]
    return 1 + amp * np.exp(-((X - c[0]) ** 2 + (Y - c[1]) ** 2 + (Z - c[2]) ** 2) / 0.04)


def test_matches_dense_collocation_on_12_cube():
    dom = Domain(0, 1, 0, 1, 0, 1, 12, 12, 12)
    eps = _smooth_eps(dom)
    k = 6.0
    ctx = LSOperatorContext(dom, eps, k, tol=1e-12)
    u = solve_total_field(dom, eps, k, ctx=ctx)

    pts = np.stack([a.ravel() for a in dom.mesh()], axis=-1)
    idx = np.rint((pts - pts[0]) / np.asarray(dom.spacing)).astype(int)
    K = kernel_matrix_entries(k, idx[:, None, :] - idx[None, :, :], dom.spacing)
    A = np.eye(dom.size) - k**2 * K * (eps.ravel() - 1)[None, :]
    ref = np.linalg.solve(A, np.exp(1j * k * pts[:, 2]))
    err = np.linalg.norm(u.ravel() - ref) / np.linalg.norm(ref)
    assert err <= 1e-6


def _born_setup(delta):
    dom = Domain(-0.5, 0.5, -0.5, 0.5, -0.5, 0.5, 17, 17, 17)
    eps = rasterize_scene(dom, [{"shape": "ball", "center": [0, 0, 0], "radius": 0.25, "eps": 1 + delta}])
    return dom, eps


def test_born_regime_and_linearity():
    k = 6.0
    dom, eps = _born_setup(0.01)
    u = solve_total_field(dom, eps, k, tol=1e-12)
    _, _, Z = dom.mesh()
    inc = np.exp(1j * k * Z)
    # Born field by direct quadrature of the same kernel
    pts = np.stack([a.ravel() for a in dom.mesh()], axis=-1)
    src = np.flatnonzero(eps.ravel() != 1)
    idx = np.rint((pts - pts[0]) / np.asarray(dom.spacing)).astype(int)
    K = kernel_matrix_entries(k, idx[:, None, :] - idx[None, src, :], dom.spacing)
    born = k**2 * K @ ((eps.ravel()[src] - 1) * inc.ravel()[src])
    sc = (u - inc).ravel()
    assert np.linalg.norm(sc - born) / np.linalg.norm(born) <= 0.02

    dom, eps_half = _born_setup(0.005)
    sc_half = solve_total_field(dom, eps_half, k, tol=1e-12) - inc
    ratio = np.linalg.norm(sc) / np.linalg.norm(sc_half)
    assert ratio == pytest.approx(2.0, rel=0.05)


def test_grid_refinement_differences_decrease():
    k = 5.0
    sols = {}
    for n in (9, 17, 33, 65):
        dom = Domain(0, 1, 0, 1, 0, 1, n, n, n)
        sols[n] = solve_total_field(dom, _smooth_eps(dom, 0.5), k, tol=1e-10)
    diffs = []
    for coarse, fine in ((9, 17), (17, 33), (33, 65)):
        s = (fine - 1) // (coarse - 1)
        sub = sols[fine][::s, ::s, ::s]
        diffs.append(np.linalg.norm(sols[coarse] - sub) / np.linalg.norm(sub))
    assert diffs[0] > diffs[1] > diffs[2]


@pytest.fixture(scope="module")
def ball_solution():
    dom = Domain(-1, 1, -1, 1, -1, 1, 17, 17, 17)
    eps = rasterize_scene(dom, [{"shape": "ball", "center": [0, 0, 0], "radius": 0.3, "eps": 2.0}])
    k = 6.0
    return dom, eps, k, solve_total_field(dom, eps, k, tol=1e-12)


def test_exterior_evaluation_trivial_and_guarded(ball_solution):
    dom, eps, k, u = ball_solution
    pts = np.array([[0.3, 0.2, 2.0], [5, 5, 5]])
    np.testing.assert_array_equal(evaluate_exterior(dom, u, np.ones(dom.shape), k, pts), np.exp(1j * k * pts[:, 2]))
    with pytest.raises(ExteriorDomainError):
        evaluate_exterior(dom, u, eps, k, [[0.0, 0.0, 0.0]])


def test_exterior_consistent_with_interior(ball_solution):
    dom, eps, k, u = ball_solution
    # first node on the z axis outside the contrast support
    iz = max(np.flatnonzero(eps[:, 8, 8] > 1)) + 1
    point = [dom.x[8], dom.y[8], dom.z[iz]]
    val = evaluate_exterior(dom, u, eps, k, [point])[0]
    assert abs(val - u[iz, 8, 8]) <= 1e-3 * abs(u[iz, 8, 8])


def test_far_field_decay(ball_solution):
    dom, eps, k, u = ball_solution
    direction = np.array([0.3, -0.2, -1.0]) / np.linalg.norm([0.3, -0.2, -1.0])
    r = 40.0
    pts = np.array([r * direction, 2 * r * direction])
    sc = evaluate_exterior(dom, u, eps, k, pts) - np.exp(1j * k * pts[:, 2])
    assert abs(sc[0]) / abs(sc[1]) == pytest.approx(2.0, rel=0.1)


def test_simulate_measurements_examples():
    dom = Domain(-1, 1, -1, 1, -0.75, 1.25, 17, 17, 17)
    plane = plane_geometry(-2, 2, 21, -2, 2, 21, -2.0)
    ks = [6.3, 6.5, 6.7]
    ds = simulate_measurements(dom, np.ones(dom.shape), ks, plane)
    assert ds.data.shape == (3, 21, 21)
    np.testing.assert_allclose(ds.data, np.exp(1j * np.array(ks) * -2.0)[:, None, None] * np.ones((3, 21, 21)))

    eps = rasterize_scene(dom, [{"shape": "ball", "center": [0, 0, 0.25], "radius": 0.3, "eps": 3.0}])
    sc = simulate_measurements(dom, eps, ks, plane, scattered=True)
    for row in np.abs(sc.data):
        iy, ix = np.unravel_index(np.argmax(row), row.shape)
        assert (plane.x[ix], plane.y[iy]) == (0.0, 0.0)

    with pytest.raises(ValueError):
        simulate_measurements(dom, eps, ks, plane_geometry(-2, 2, 5, -2, 2, 5, 0.5))


def test_rasterize_scene_volume_fraction():
    dom = Domain(-1, 1, -1, 1, -1, 1, 33, 33, 33)
    eps = rasterize_scene(dom, [{"shape": "ball", "center": [0, 0, 0], "radius": 0.5, "eps": 2.0}], subsamples=4)
    vol = (eps - 1).sum() * np.prod(dom.spacing)
    assert vol == pytest.approx(4 / 3 * np.pi * 0.5**3, rel=0.03)
    box = rasterize_scene(dom, [{"shape": "box", "min": [-0.5, -0.5, -0.5], "max": [0.5, 0.5, 0.5], "eps": 3.0}])
    assert box.max() == 3.0 and box.min() == 1.0


@settings(max_examples=20, deadline=None)
@given(st.floats(0.1, 20), st.integers(0, 2**31 - 1))
def test_noise_touches_only_scattered_part(pct, seed):
    plane = plane_geometry(-1, 1, 5, -1, 1, 5, -2.0, wavenumbers=[6.0, 6.5])
    inc = np.exp(1j * plane.wavenumbers * -2.0)[:, None, None] * np.ones((2, 5, 5))
    clean = plane.with_data(inc.copy())
    np.testing.assert_allclose(add_noise(clean, pct, seed).data, inc)
    sc = 0.1 * np.ones((2, 5, 5))
    noisy = add_noise(clean.with_data(inc + sc), pct, seed).data - inc
    assert np.all(np.abs(noisy.real - 0.1) <= 0.1 * pct / 100 + 1e-12)
    np.testing.assert_array_equal(add_noise(clean.with_data(inc + sc), pct, seed).data,
                                  add_noise(clean.with_data(inc + sc), pct, seed).data)
