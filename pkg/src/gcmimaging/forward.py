"""Lippmann-Schwinger forward solver for the scalar Helmholtz equation.

The volume integral ``u = e^{ikz} + k^2 (Phi_k * (eps - 1) u)`` is collocated at
the grid nodes with one cell volume per node.  Off-diagonal kernel entries are
point samples of the Green's function; the self cell uses the exact integral
of ``Phi_k`` over the sphere of equal volume.  The discrete convolution is
applied with FFTs on a zero-padded (doubled) box, so it matches the dense
collocation matrix exactly.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import scipy.fft as sfft
import scipy.sparse.linalg as spla

from .core import Domain, PlaneDataset
from .errors import ConvergenceError, ExteriorDomainError, SingularityError

log = logging.getLogger(__name__)

# support boxes up to this many nodes fall back to a dense LU solve if GMRES stalls
DENSE_FALLBACK_LIMIT = 3000


def green_function(x, y, k):
    """Free-space Green's function ``exp(ik|x-y|) / (4 pi |x-y|)``."""
    r = float(np.linalg.norm(np.asarray(x, float) - np.asarray(y, float)))
    if r == 0.0:
        raise SingularityError("Green's function is singular at x == y")
    return np.exp(1j * k * r) / (4.0 * np.pi * r)


def _green(k, r):
    return np.exp(1j * k * r) / (4.0 * np.pi * r)


def self_cell_integral(k: float, volume: float) -> complex:
    """Integral of ``Phi_k(0, y)`` over a ball of the given volume."""
    a = (3.0 * volume / (4.0 * np.pi)) ** (1.0 / 3.0)
    if k * a < 1e-4:
        return complex(a * a / 2.0 + 1j * k * a**3 / 3.0)
    ika = 1j * k * a
    return complex((np.exp(ika) * (1.0 - ika) - 1.0) / k**2)


def kernel_matrix_entries(k, offsets, spacing):
    """Kernel weight ``Phi_k(r) * dV`` for integer node offsets of shape (..., 3) in (x, y, z) order."""
    dv = float(np.prod(spacing))
    d = np.asarray(offsets, float) * np.asarray(spacing, float)
    r = np.sqrt(np.sum(d * d, axis=-1))
    out = np.empty(r.shape, complex)
    zero = r == 0
    out[~zero] = _green(k, r[~zero]) * dv
    out[zero] = self_cell_integral(k, dv)
    return out


def _padded_len(m):
    return sfft.next_fast_len(2 * m - 1)


def _kernel_spectrum(k, shape, spacing):
    """FFT of the kernel embedded circulantly on a padded box (shape in z, y, x order)."""
    axes = []
    for m in shape:
        p = _padded_len(m)
        j = np.arange(p)
        off = np.where(j < m, j, j - p)
        off = np.where((j >= m) & (j <= p - m), 0, off)
        axes.append((off, (j >= m) & (j <= p - m)))
    (oz, dead_z), (oy, dead_y), (ox, dead_x) = axes
    OZ, OY, OX = np.meshgrid(oz, oy, ox, indexing="ij")
    kern = kernel_matrix_entries(k, np.stack([OX, OY, OZ], axis=-1), spacing)
    dead = dead_z[:, None, None] | dead_y[None, :, None] | dead_x[None, None, :]
    kern[dead] = 0.0
    return sfft.fftn(kern)


class LSOperatorContext:
    """Precomputed pieces of the Lippmann-Schwinger operator for one wavenumber.

    The Krylov unknown lives on the bounding box of the contrast support; the
    full-grid field is then recovered with one more convolution.
    """

    def __init__(self, domain: Domain, eps, k, tol=1e-8, max_iter=500, restart=50, workers=1):
        self.domain = domain
        self.k = float(k)
        self.tol = tol
        self.max_iter = max_iter
        self.restart = restart
        self.workers = workers
        eps = domain.check_field(np.asarray(eps, float), "eps")
        self.contrast = eps - 1.0
        dx, dy, dz = domain.spacing
        self.spacing = (dx, dy, dz)
        nz_idx = np.nonzero(self.contrast)
        if len(nz_idx[0]) == 0:
            self.box = None
            self.kernel_hat = None
            return
        self.box = tuple(slice(int(ix.min()), int(ix.max()) + 1) for ix in nz_idx)
        self.box_shape = tuple(s.stop - s.start for s in self.box)
        self.kernel_hat = _kernel_spectrum(self.k, self.box_shape, self.spacing)

    @property
    def is_trivial(self) -> bool:
        return self.box is None

    def incident(self) -> np.ndarray:
        _, _, Z = self.domain.mesh()
        return np.exp(1j * self.k * Z)

    def _convolve(self, src, kernel_hat, shape):
        pad = kernel_hat.shape
        out = sfft.ifftn(kernel_hat * sfft.fftn(src, s=pad, workers=self.workers), workers=self.workers)
        return out[: shape[0], : shape[1], : shape[2]]

    def apply(self, w_box: np.ndarray) -> np.ndarray:
        """``(I - k^2 Phi_k * m) w`` on the support box."""
        m = self.contrast[self.box]
        return w_box - self.k**2 * self._convolve(m * w_box, self.kernel_hat, self.box_shape)

    def solve(self) -> np.ndarray:
        u_inc = self.incident()
        if self.is_trivial:
            return u_inc
        shape = self.box_shape
        n = int(np.prod(shape))
        b = u_inc[self.box].ravel()
        op = spla.LinearOperator((n, n), matvec=lambda v: self.apply(v.reshape(shape)).ravel(), dtype=complex)
        history = []
        cycles = max(1, math.ceil(self.max_iter / self.restart))
        x, info = spla.gmres(
            op, b, x0=b.copy(), rtol=self.tol, atol=0.0, restart=self.restart, maxiter=cycles,
            callback=history.append, callback_type="pr_norm",
        )
        res = float(np.linalg.norm(b - op.matvec(x)) / np.linalg.norm(b))
        if res > self.tol * 10 and n <= DENSE_FALLBACK_LIMIT:
            log.debug("GMRES stalled at %.3e on %d unknowns; using dense LU", res, n)
            x = np.linalg.solve(self.dense_matrix(), b)
            res = float(np.linalg.norm(b - op.matvec(x)) / np.linalg.norm(b))
        if res > self.tol * 10:
            raise ConvergenceError(
                f"Lippmann-Schwinger GMRES did not converge (k={self.k}, residual={res:.3e})", res, history
            )
        self.residual = res
        self.iterations = len(history)
        w_box = x.reshape(shape)
        return self.extend(w_box)

    def dense_matrix(self) -> np.ndarray:
        """Collocation matrix of ``I - k^2 Phi_k m`` on the support box."""
        nz, ny, nx = self.box_shape
        Z, Y, X = np.meshgrid(np.arange(nz), np.arange(ny), np.arange(nx), indexing="ij")
        idx = np.stack([X.ravel(), Y.ravel(), Z.ravel()], axis=-1)
        K = kernel_matrix_entries(self.k, idx[:, None, :] - idx[None, :, :], self.spacing)
        m = self.contrast[self.box].ravel()
        return np.eye(len(m)) - self.k**2 * K * m[None, :]

    def extend(self, w_box: np.ndarray) -> np.ndarray:
        """Evaluate the integral representation on every node of the domain."""
        u = self.incident()
        src = np.zeros(self.domain.shape, complex)
        src[self.box] = self.contrast[self.box] * w_box
        full_hat = _kernel_spectrum(self.k, self.domain.shape, self.spacing)
        u += self.k**2 * self._convolve(src, full_hat, self.domain.shape)
        # nodes inside the box already satisfy the equation; keep the Krylov values there
        u[self.box] = w_box
        return u


def solve_total_field(domain: Domain, eps, k, tol=1e-8, max_iter=500, restart=50, ctx=None, workers=1):
    """Total field ``u`` on every node of ``domain`` for permittivity ``eps`` at wavenumber ``k``."""
    if k <= 0:
        raise ValueError("wavenumber must be positive")
    if ctx is None:
        ctx = LSOperatorContext(domain, eps, k, tol=tol, max_iter=max_iter, restart=restart, workers=workers)
    return ctx.solve()


def evaluate_exterior(domain: Domain, u_interior, eps, k, points, chunk=4096):
    """Evaluate ``u`` at arbitrary points away from the contrast support by nodal quadrature."""
    points = np.atleast_2d(np.asarray(points, float))
    contrast = np.asarray(eps, float) - 1.0
    inc = np.exp(1j * k * points[:, 2])
    mask = contrast != 0
    if not mask.any():
        return inc
    X, Y, Z = domain.mesh()
    nodes = np.column_stack([X[mask], Y[mask], Z[mask]])
    weights = contrast[mask] * np.asarray(u_interior)[mask] * float(np.prod(domain.spacing))
    guard = 0.5 * min(domain.spacing)
    out = inc.astype(complex)
    for start in range(0, len(points), chunk):
        p = points[start : start + chunk]
        r = np.sqrt(((p[:, None, :] - nodes[None, :, :]) ** 2).sum(-1))
        bad = r.min(axis=1) < guard
        if bad.any():
            where = p[np.argmax(bad)]
            raise ExteriorDomainError(f"point {where.tolist()} lies inside the contrast support")
        out[start : start + chunk] += k**2 * (_green(k, r) @ weights)
    return out


def simulate_measurements(
    domain: Domain, eps, wavenumbers, plane: PlaneDataset, scattered=False,
    tol=1e-8, max_iter=500, restart=50, threads=1,
):
    """Synthetic plane data (total field, or scattered field if requested) for each wavenumber."""
    eps = np.asarray(eps, float)
    contrast = eps - 1.0
    if np.any(contrast != 0):
        _, _, Z = domain.mesh()
        z_support = Z[contrast != 0].min()
        if not plane.z_level < z_support:
            raise ValueError(f"plane z={plane.z_level} must lie below the contrast support (z >= {z_support})")
    PX, PY = np.meshgrid(plane.x, plane.y)
    points = np.column_stack([PX.ravel(), PY.ravel(), np.full(PX.size, plane.z_level)])
    ks = np.sort(np.asarray(wavenumbers, float))

    def one(k):
        u = solve_total_field(domain, eps, k, tol=tol, max_iter=max_iter, restart=restart)
        vals = evaluate_exterior(domain, u, eps, k, points)
        if scattered:
            vals = vals - np.exp(1j * k * plane.z_level)
        log.info("simulated k=%.5f", k)
        return vals.reshape(len(plane.y), len(plane.x))

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(one, ks))
    else:
        rows = [one(k) for k in ks]
    return PlaneDataset(plane.x, plane.y, plane.z_level, ks, np.array(rows))


def add_noise(data: PlaneDataset, pct: float, seed: int = 0, scattered_only=True) -> PlaneDataset:
    """Multiplicative noise ``x -> x (1 + pct/100 * xi)`` with xi uniform on the complex square [-1,1]^2.

    With ``scattered_only`` the incident plane wave is split off first so that
    only the scattered component is perturbed.
    """
    if pct <= 0:
        return data
    rng = np.random.default_rng(seed)
    shape = data.data.shape
    xi = rng.uniform(-1, 1, shape) + 1j * rng.uniform(-1, 1, shape)
    sigma = pct / 100.0
    if scattered_only:
        inc = np.exp(1j * data.wavenumbers * data.z_level)[:, None, None]
        noisy = inc + (data.data - inc) * (1 + sigma * xi)
    else:
        noisy = data.data * (1 + sigma * xi)
    return data.with_data(noisy)


def rasterize_scene(domain: Domain, scene, subsamples: int = 4) -> np.ndarray:
    """Permittivity on the grid from a list of balls/boxes, using per-cell volume fractions."""
    eps = np.ones(domain.shape)
    X, Y, Z = domain.mesh()
    dx, dy, dz = domain.spacing
    s = (np.arange(subsamples) + 0.5) / subsamples - 0.5
    SX, SY, SZ = np.meshgrid(s * dx, s * dy, s * dz, indexing="ij")
    offsets = np.column_stack([SX.ravel(), SY.ravel(), SZ.ravel()])
    for obj in scene:
        shape = obj.get("shape", "ball")
        value = float(obj["eps"])
        if value < 1:
            raise ValueError("permittivity must be >= 1")
        if shape == "ball":
            c = np.asarray(obj["center"], float)
            r = float(obj["radius"])
            lo, hi = c - r, c + r
        elif shape == "box":
            lo, hi = np.asarray(obj["min"], float), np.asarray(obj["max"], float)
        else:
            raise ValueError(f"unknown scene shape {shape!r}")
        near = (
            (X >= lo[0] - dx) & (X <= hi[0] + dx) & (Y >= lo[1] - dy) & (Y <= hi[1] + dy)
            & (Z >= lo[2] - dz) & (Z <= hi[2] + dz)
        )
        if not near.any():
            continue
        pts = np.column_stack([X[near], Y[near], Z[near]])[:, None, :] + offsets[None, :, :]
        if shape == "ball":
            inside = np.sum((pts - c) ** 2, axis=-1) <= r * r
        else:
            inside = np.all((pts >= lo) & (pts <= hi), axis=-1)
        frac = inside.mean(axis=1)
        eps[near] += frac * (value - 1.0)
    return eps
