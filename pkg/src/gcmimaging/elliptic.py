"""Finite-difference Dirichlet solver for ``Laplace(q) - F . grad(q) = rhs`` on a box.

Interior nodes carry the unknowns; boundary nodes hold the Dirichlet data.
Fields are ``(nz, ny, nx)`` arrays and vector fields ``(3, nz, ny, nx)`` with
components in (x, y, z) order.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .core import Domain
from .errors import ConvergenceError

log = logging.getLogger(__name__)

# above this many unknowns the sparse LU fill-in no longer fits comfortably in memory
DIRECT_LIMIT = 60_000


@dataclass
class DirichletProblem:
    domain: Domain
    rhs: np.ndarray
    boundary: np.ndarray
    convection: np.ndarray | None = None

    def __post_init__(self):
        shape = self.domain.shape
        self.rhs = np.broadcast_to(np.asarray(self.rhs, complex), shape)
        self.boundary = np.asarray(self.boundary, complex)
        if self.boundary.shape != shape:
            raise ValueError(f"boundary array must have grid shape {shape}")
        if self.convection is not None:
            self.convection = np.asarray(self.convection, complex)
            if self.convection.shape != (3, *shape):
                raise ValueError(f"convection must have shape {(3, *shape)}")


@dataclass
class BVPSolution:
    field: np.ndarray
    residual: float
    iterations: int
    method: str
    peclet_tripped: bool = False


def _second_diff(n, h):
    e = np.ones(n)
    return sp.diags([e[:-1], -2 * e, e[:-1]], [-1, 0, 1], format="csr") / h**2


def _first_diff(n, h, kind):
    e = np.ones(n)
    if kind == "central":
        return sp.diags([-e[:-1], e[:-1]], [-1, 1], format="csr") / (2 * h)
    if kind == "backward":
        return sp.diags([-e[:-1], e], [-1, 0], format="csr") / h
    return sp.diags([-e, e[:-1]], [0, 1], format="csr") / h


def _axis_op(domain, op1d, axis):
    """Lift a 1D operator to the grid; axis 0 = x (fastest), 1 = y, 2 = z."""
    nz, ny, nx = domain.shape
    eye = [sp.identity(n, format="csr") for n in (nz, ny, nx)]
    mats = list(eye)
    mats[2 - axis] = op1d
    return sp.kron(sp.kron(mats[0], mats[1]), mats[2], format="csr")


def assemble_operator(domain: Domain, convection=None):
    """Sparse matrix of ``Laplace - F . grad`` on all nodes plus the Peclet flag.

    Convection is centered; where a component violates ``|F_c| h_c / 2 <= 1``
    the flag is raised, and if the real part alone violates it that real part
    is upwinded (imaginary convection has no upwind direction).
    """
    spacing = domain.spacing
    sizes = (domain.nx, domain.ny, domain.nz)
    A = sum(_axis_op(domain, _second_diff(sizes[a], spacing[a]), a) for a in range(3))
    tripped = False
    if convection is not None:
        for a in range(3):
            Fa = convection[a].ravel()
            if not np.any(Fa):
                continue
            h = spacing[a]
            central = _axis_op(domain, _first_diff(sizes[a], h, "central"), a)
            cell = np.abs(Fa) * h / 2
            tripped = tripped or bool(np.any(cell > 1))
            upwind = np.abs(Fa.real) * h / 2 > 1
            if upwind.any():
                back = _axis_op(domain, _first_diff(sizes[a], h, "backward"), a)
                fwd = _axis_op(domain, _first_diff(sizes[a], h, "forward"), a)
                re = np.where(upwind, Fa.real, 0.0)
                pos = sp.diags(np.where(re > 0, re, 0.0))
                neg = sp.diags(np.where(re < 0, re, 0.0))
                rest = sp.diags(Fa - re)
                A = A - pos @ back - neg @ fwd - rest @ central
            else:
                A = A - sp.diags(Fa) @ central
    return A.tocsr(), tripped


def solve_dirichlet(problem: DirichletProblem, tol=1e-8, max_iter=2000, restart=50, method="auto") -> BVPSolution:
    """Solve the Dirichlet problem; ``method`` is ``direct``, ``gmres`` or ``auto``."""
    dom = problem.domain
    A, tripped = assemble_operator(dom, problem.convection)
    interior = ~dom.boundary_mask().ravel()
    bvals = np.where(interior, 0.0, problem.boundary.ravel())
    A_ii = A[interior][:, interior]
    b = problem.rhs.ravel()[interior] - (A[interior] @ bvals)
    n = A_ii.shape[0]
    if method == "auto":
        method = "direct" if n <= DIRECT_LIMIT else "gmres"
    history = []
    if n == 0:
        x = np.zeros(0, complex)
    elif method == "direct":
        x = spla.splu(A_ii.tocsc().astype(complex)).solve(b.astype(complex))
    elif method == "gmres":
        x = _gmres_amg(A_ii, b, tol, max_iter, restart, history)
    else:
        raise ValueError(f"unknown method {method!r}")
    bn = np.linalg.norm(b)
    res = float(np.linalg.norm(b - A_ii @ x) / bn) if bn > 0 else float(np.linalg.norm(A_ii @ x))
    if res > tol:
        raise ConvergenceError(f"Dirichlet solve stagnated (method={method}, residual={res:.3e})", res, history)
    q = bvals.astype(complex)
    q[interior] = x
    if tripped:
        log.debug("cell Peclet guard tripped")
    return BVPSolution(q.reshape(dom.shape), res, len(history), method, tripped)


def _gmres_amg(A, b, tol, max_iter, restart, history):
    import pyamg

    ml = pyamg.smoothed_aggregation_solver(A.tocsr().astype(complex), symmetry="nonsymmetric")
    M = ml.aspreconditioner()
    cycles = max(1, math.ceil(max_iter / restart))
    x, _ = spla.gmres(A, b, rtol=tol * 0.1, atol=0.0, restart=restart, maxiter=cycles, M=M,
                      callback=history.append, callback_type="pr_norm")
    return x


def solve_laplace_p(psi_bar, domain: Domain, tol=1e-8, max_iter=2000, method="auto") -> np.ndarray:
    """Harmonic ``p`` with boundary values ``i * psi_bar``."""
    boundary = 1j * np.asarray(psi_bar, complex) * domain.boundary_mask()
    sol = solve_dirichlet(DirichletProblem(domain, 0.0, boundary), tol=tol, max_iter=max_iter, method=method)
    return sol.field


# --------------------------------------------------------------------------
# difference operators


def gradient(field, domain: Domain) -> np.ndarray:
    """Centered differences inside, first-order one-sided on the faces."""
    dx, dy, dz = domain.spacing
    gz, gy, gx = np.gradient(field, dz, dy, dx, edge_order=1)
    return np.stack([gx, gy, gz])


def divergence(vec, domain: Domain) -> np.ndarray:
    dx, dy, dz = domain.spacing
    return (np.gradient(vec[0], dx, axis=2, edge_order=1)
            + np.gradient(vec[1], dy, axis=1, edge_order=1)
            + np.gradient(vec[2], dz, axis=0, edge_order=1))


def laplacian(field, domain: Domain) -> np.ndarray:
    """7-point Laplacian inside; on faces the one-sided second difference of the nearest three nodes."""
    field = np.asarray(field)
    out = np.zeros(field.shape, dtype=np.result_type(field, float))
    dx, dy, dz = domain.spacing
    for axis, h in ((2, dx), (1, dy), (0, dz)):
        f = np.moveaxis(field, axis, 0)
        d2 = np.zeros_like(f, dtype=out.dtype)
        if f.shape[0] >= 3:
            d2[1:-1] = (f[2:] - 2 * f[1:-1] + f[:-2]) / h**2
            d2[0] = (f[0] - 2 * f[1] + f[2]) / h**2
            d2[-1] = (f[-1] - 2 * f[-2] + f[-3]) / h**2
        out += np.moveaxis(d2, 0, axis)
    return out


def dot(a, b) -> np.ndarray:
    """Componentwise complex dot product (no conjugation) of two vector fields."""
    return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
