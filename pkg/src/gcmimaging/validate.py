"""Quick built-in oracle checks, run by ``gcm validate``."""

from __future__ import annotations

import time
from pathlib import Path

import numpy as np

from .core import Domain
from .elliptic import DirichletProblem, solve_dirichlet, solve_laplace_p
from .forward import LSOperatorContext, solve_total_field
from .inversion import stopping_inner, stopping_outer
from .preprocess import gaussian_kernel, propagate_plane, truncate_field


def check_ls_dense():
    dom = Domain(0, 1, 0, 1, 0, 1, 8, 8, 8)
    X, Y, Z = dom.mesh()
    eps = 1 + 0.8 * np.exp(-((X - 0.5) ** 2 + (Y - 0.5) ** 2 + (Z - 0.5) ** 2) / 0.05)
    k = 5.0
    ctx = LSOperatorContext(dom, eps, k, tol=1e-12)
    u = solve_total_field(dom, eps, k, ctx=ctx)
    ref = np.linalg.solve(ctx.dense_matrix(), ctx.incident().ravel()).reshape(dom.shape)
    err = np.linalg.norm(u - ref) / np.linalg.norm(ref)
    return err <= 1e-6, f"relative error {err:.2e}"


def check_laplace_linear():
    dom = Domain(0, 1, 0, 1, 0, 1, 9, 9, 9)
    X, _, Z = dom.mesh()
    p = solve_laplace_p(-1j * (X + 2 * Z), dom, tol=1e-12)
    err = np.abs(p - (X + 2 * Z)).max()
    return err <= 1e-10, f"max error {err:.2e}"


def check_max_principle(trials=10, seed=0):
    rng = np.random.default_rng(seed)
    dom = Domain(0, 1, 0, 1, 0, 1, 8, 8, 8)
    bm = dom.boundary_mask()
    worst = -np.inf
    for _ in range(trials):
        b = (rng.standard_normal(dom.shape) + 1j * rng.standard_normal(dom.shape)) * bm
        q = solve_dirichlet(DirichletProblem(dom, 0.0, b), tol=1e-12).field
        for part in (np.real, np.imag):
            worst = max(worst, part(q)[~bm].max() - part(b)[bm].max(), part(b)[bm].min() - part(q)[~bm].min())
    return worst <= 1e-10, f"worst excess {worst:.2e}"


def check_propagation_round_trip():
    rng = np.random.default_rng(1)
    f = rng.standard_normal((32, 32)) + 1j * rng.standard_normal((32, 32))
    band = propagate_plane(f, 0.2, 0.2, 6.5, 0.0, pad=0)
    there = propagate_plane(band, 0.2, 0.2, 6.5, 1.5, pad=0)
    back = propagate_plane(there, 0.2, 0.2, 6.5, -1.5, pad=0, allow_backward=True)
    err = np.linalg.norm(back - band) / np.linalg.norm(band)
    return err <= 1e-8, f"relative error {err:.2e}"


def check_preprocess_units():
    f = np.array([[1.0, 0.85, 0.5]])
    t = truncate_field(f)
    kern = gaussian_kernel(3, 0.65, 3)
    ok = np.array_equal(truncate_field(t), t) and abs(kern.sum() - 1) <= 1e-12 and t[0, 2] == 0
    return ok, "truncation idempotent, kernel normalized"


def check_stopping_rules():
    cases = [
        (stopping_inner([1e-7], 2), True),
        (stopping_inner([1e-3, 1e-3], 3), True),
        (stopping_inner([1e-3], 2), False),
        (stopping_outer([1e-3, 4e-4, 3e-4, 2e-4]), True),
        (stopping_outer([4e-4, 1e-3, 4e-4, 4e-4]), False),
        (stopping_outer([1e-2] * 6), False),
    ]
    ok = all(got == want for got, want in cases)
    return ok, f"{sum(g == w for g, w in cases)}/6 decisions"


def check_vtk(vtk_path, npy_path):
    from .io import read_vtk

    _, eps = read_vtk(vtk_path)
    ref = np.load(npy_path)
    ok = eps.shape == ref.shape and np.array_equal(eps, ref)
    return ok, f"{vtk_path} vs {npy_path}"


CHECKS = {
    "ls-dense-oracle": check_ls_dense,
    "laplace-linear-exact": check_laplace_linear,
    "maximum-principle": check_max_principle,
    "propagation-round-trip": check_propagation_round_trip,
    "preprocess-units": check_preprocess_units,
    "stopping-rules": check_stopping_rules,
}


def run_checks(out_dir=None, vtk=None, stream=print) -> bool:
    all_ok = True
    for name, fn in CHECKS.items():
        t0 = time.perf_counter()
        ok, detail = fn()
        all_ok &= bool(ok)
        stream(f"{'PASS' if ok else 'FAIL'} {name}: {detail} ({time.perf_counter() - t0:.2f}s)")
    if vtk is not None:
        npy = Path(out_dir or Path(vtk).parent) / "eps_r.npy"
        if not Path(vtk).exists() or not npy.exists():
            missing = vtk if not Path(vtk).exists() else npy
            raise FileNotFoundError(f"validation input not found: {missing}")
        ok, detail = check_vtk(vtk, npy)
        all_ok &= bool(ok)
        stream(f"{'PASS' if ok else 'FAIL'} vtk-bit-exact: {detail}")
    return all_ok
