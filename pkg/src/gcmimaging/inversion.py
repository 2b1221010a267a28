"""Globally convergent reconstruction of the permittivity from boundary data.

The unknown ``v = log u`` is handled through ``q = d_k v`` (piecewise constant
on the wavenumber partition) and the tail ``V = v(., k_hi)``; only ``grad V``
and ``Laplace V = div grad V`` are ever stored.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .core import Domain, PipelineConfig, WavenumberPartition, l2_norm
from .elliptic import DirichletProblem, divergence, dot, gradient, laplacian, solve_dirichlet, solve_laplace_p
from .errors import GCMError, InversionAborted, InvalidStateError, VanishingFieldError
from .forward import solve_total_field
from .preprocess import gaussian_smooth

log = logging.getLogger(__name__)


@dataclass
class TailState:
    grad_V: np.ndarray
    div_grad_V: np.ndarray


@dataclass
class InversionState:
    q_history: list = field(default_factory=list)
    tail: TailState | None = None
    eps_current: np.ndarray | None = None
    error_sequence: list = field(default_factory=list)
    n: int = 0
    i: int = 0


@dataclass
class ReconstructionResult:
    eps_final: np.ndarray
    dielectric_constant: float
    argmax_location: tuple
    region_mask: np.ndarray
    log: list
    error_sequence: list
    n_outer: int
    stopped: bool

    def summary(self) -> dict:
        return {
            "dielectric_constant": self.dielectric_constant,
            "argmax_location": list(self.argmax_location),
            "iterations": {"outer": self.n_outer, "inner_total": len(self.log)},
            "stopped_by_rule": self.stopped,
            "error_sequence": [{"label": lab, "n": n, "i": i, "value": v} for lab, n, i, v in self.error_sequence],
        }


# --------------------------------------------------------------------------
# field helpers


def log_derivative(u, domain: Domain) -> np.ndarray:
    """``grad(u) / u`` as the gradient of the locally unwrapped ``log u``.

    One-cell differences ``log(u_{j+1} / u_j)`` are exact for plane waves,
    whereas differencing ``u`` itself loses ``sin(kh)/(kh)`` per axis.  The
    interior value averages the two adjacent one-cell differences so the
    principal branch is only needed for a phase change below pi per cell.
    """
    u = np.asarray(u, complex)
    if np.min(np.abs(u)) < 1e-12:
        raise VanishingFieldError("total field vanishes inside the domain")
    out = []
    for axis, h in ((2, domain.spacing[0]), (1, domain.spacing[1]), (0, domain.spacing[2])):
        f = np.moveaxis(u, axis, 0)
        step = np.log(f[1:] / f[:-1]) / h
        d = np.empty_like(f)
        d[1:-1] = 0.5 * (step[1:] + step[:-1])
        d[0] = step[0]
        d[-1] = step[-1]
        out.append(np.moveaxis(d, 0, axis))
    return np.stack(out)


def relative_error(eps_a, eps_b, domain: Domain) -> float:
    """Trapezoid-weighted ``||a - b|| / ||b||``."""
    den = l2_norm(domain, eps_b)
    if den == 0:
        raise ZeroDivisionError("reference permittivity has zero norm")
    return l2_norm(domain, np.asarray(eps_a) - np.asarray(eps_b)) / den


# --------------------------------------------------------------------------
# algorithm steps


def init_tail(psi_bar, k_hi, domain: Domain, tol=1e-8, method="auto") -> TailState:
    """First tail from the harmonic ``p`` with ``p = i psi(., k_hi)`` on the boundary.

    The tail gradient is taken as ``-i k_hi grad p`` so that a plane wave
    ``e^{ikz}`` (``psi = iz``, ``p = -z``) yields ``grad V = (0, 0, i k_hi)``,
    the same value the field-based tail update produces.
    """
    p = solve_laplace_p(psi_bar, domain, tol=tol, method=method)
    grad_V = -1j * k_hi * gradient(p, domain)
    return TailState(grad_V, divergence(grad_V, domain))


def _sums(q_history, domain):
    shape = (3, *domain.shape)
    sg = np.zeros(shape, complex)
    sl = np.zeros(domain.shape, complex)
    for q in q_history:
        sg += gradient(q, domain)
        sl += laplacian(q, domain)
    return sg, sl


def assemble_coefficients(n, partition: WavenumberPartition, q_history, tail: TailState, domain: Domain,
                          sums=None):
    """Convection ``F_n`` and source ``G_n`` of the n-th boundary value problem.

    ``q_history`` holds ``q_1 ... q_{n-1}`` (``q_0 = 0`` is implicit).  The
    problem solved is ``Laplace q - F_n . grad q = G_n / k_{n-1}``.
    """
    if not 1 <= n <= partition.n_intervals:
        raise IndexError(f"outer index {n} outside 1..{partition.n_intervals}")
    if len(q_history) != n - 1:
        raise ValueError(f"expected {n - 1} previous q fields, got {len(q_history)}")
    h = partition.h
    k_prev, k_n = partition[n - 1], partition[n]
    sg, sl = sums if sums is not None else _sums(q_history, domain)
    gV, lV = tail.grad_V, tail.div_grad_V
    F = (k_n / k_prev + 1.0) * (h * sg - gV)
    G = -2 * h * sl - 4 * h * dot(gV, sg) + 2 * lV + 2 * dot(gV, gV)
    return F, G


def update_v(q_ni, q_history, tail_prev: TailState, h, domain: Domain, sums=None):
    """Gradient and Laplacian of ``v_{n,i} = -(h q_{n,i} + h sum q_j) + V_{n,i-1}``."""
    sg, sl = sums if sums is not None else _sums(q_history, domain)
    grad_v = -(h * gradient(q_ni, domain) + h * sg) + tail_prev.grad_V
    lap_v = -(h * laplacian(q_ni, domain) + h * sl) + tail_prev.div_grad_V
    return grad_v, lap_v


def search_mask(domain: Domain, region_xy, z_range) -> np.ndarray:
    _, _, Z = domain.mesh()
    zmask = (Z > z_range[0]) & (Z < z_range[1])
    return zmask & np.asarray(region_xy, bool)[None, :, :]


def compute_epsilon(grad_v, lap_v, k, region_xy, z_range, domain: Domain, kernel_size=3, sigma=0.65,
                    smooth=True):
    """Permittivity from ``Laplace v + grad v . grad v = -k^2 eps``, then clamp and smooth.

    Returns ``(eps, eps_clamped)``; ``eps_clamped`` is the field before smoothing.
    """
    raw = -(lap_v + dot(grad_v, grad_v)) / k**2
    inside = search_mask(domain, region_xy, z_range)
    clamped = np.where(inside, np.maximum(np.abs(raw), 1.0), 1.0)
    if not smooth:
        return clamped, clamped
    eps = gaussian_smooth(clamped, kernel_size, sigma).real
    # rounding in the kernel sum must not create spurious contrast
    eps[np.abs(eps - 1.0) < 1e-12] = 1.0
    return eps, clamped


def update_tail(eps, k_hi, domain: Domain, tol=1e-8, max_iter=500, restart=50) -> tuple[TailState, float]:
    """Tail gradient ``grad u / u`` of the total field at ``k_hi`` for the current permittivity."""
    from .forward import LSOperatorContext

    ctx = LSOperatorContext(domain, eps, k_hi, tol=tol, max_iter=max_iter, restart=restart)
    u = solve_total_field(domain, eps, k_hi, ctx=ctx)
    grad_V = log_derivative(u, domain)
    return TailState(grad_V, divergence(grad_V, domain)), getattr(ctx, "residual", 0.0)


def stopping_inner(errors_this_outer, i, cap=3, threshold=1e-6) -> bool:
    """``errors_this_outer[0]`` is ``e_{n,2}``; stop once it is below threshold or ``i == cap``."""
    if i < 1:
        raise ValueError("inner index starts at 1")
    if i >= 2 and errors_this_outer and errors_this_outer[0] < threshold:
        return True
    return i >= cap


def qualifying_window(sequence, threshold=5e-4):
    """Start index of the first three consecutive entries ``<= threshold``, else ``None``."""
    for j in range(len(sequence) - 2):
        if all(v <= threshold for v in sequence[j : j + 3]):
            return j
    return None


def stopping_outer(sequence, window_threshold=5e-4) -> bool:
    return qualifying_window(sequence, window_threshold) is not None


def finalize(candidates, domain: Domain | None = None, region_mask=None) -> ReconstructionResult:
    if not candidates:
        raise InvalidStateError("no candidate permittivity fields to average")
    eps = np.mean(np.stack(candidates), axis=0)
    j = int(np.argmax(eps))
    loc = ()
    if domain is not None:
        ix, iy, iz = domain.unravel(j)
        loc = (float(domain.x[ix]), float(domain.y[iy]), float(domain.z[iz]))
    return ReconstructionResult(eps, float(eps.max()), loc, region_mask, [], [], 0, False)


def run_inversion(psi_data, region_xy, config: PipelineConfig, domain: Domain | None = None) -> ReconstructionResult:
    """Outer loop over wavenumber subintervals, inner loop refreshing the tail.

    ``psi_data[j]`` is the completed boundary field of ``psi`` at partition
    wavenumber ``k_j`` (``k_0 = k_hi``).
    """
    dom = domain or config.domain_obj
    part = config.partition_obj
    sol = config.solver
    N, h, k_hi = part.n_intervals, part.h, part.k_hi
    if len(psi_data) != N + 1:
        raise ValueError(f"need psi at all {N + 1} partition wavenumbers, got {len(psi_data)}")
    smooth_kw = dict(kernel_size=config.smoothing.kernel_size, sigma=config.smoothing.sigma)

    records = []
    try:
        tail = init_tail(psi_data[0], k_hi, dom, tol=sol.bvp_tol, method=sol.bvp_method)
    except GCMError as exc:
        raise InversionAborted(f"initial tail failed: {exc}", records) from exc

    q_history = []
    sg = np.zeros((3, *dom.shape), complex)
    sl = np.zeros(dom.shape, complex)
    sequence = []  # (label, n, i, value), label "e" or "bridge"
    eps_by_error = []  # eps field belonging to each sequence entry
    outer_eps = {}  # n -> list of eps iterates
    last_eps = None
    stopped = False
    candidates = None
    n_done = 0

    for n in range(1, N + 1):
        psi_n = 0.5 * (psi_data[n - 1] + psi_data[n])
        k_prev, k_n = part[n - 1], part[n]
        inner_errors = []
        outer_eps[n] = []
        prev = None
        for i in range(1, config.inner_cap + 1):
            try:
                F, G = assemble_coefficients(n, part, q_history, tail, dom, sums=(sg, sl))
                bvp = solve_dirichlet(
                    DirichletProblem(dom, G / k_prev, psi_n, F),
                    tol=sol.bvp_tol, max_iter=sol.bvp_max_iter, restart=sol.bvp_restart, method=sol.bvp_method,
                )
                q = bvp.field
                grad_v, lap_v = update_v(q, q_history, tail, h, dom, sums=(sg, sl))
                k_eval = k_n if config.eps_wavenumber == "k_n" else k_hi
                eps, _ = compute_epsilon(grad_v, lap_v, k_eval, region_xy, config.search_z, dom, **smooth_kw)
                tail, ls_res = update_tail(eps, k_hi, dom, tol=sol.ls_tol, max_iter=sol.ls_max_iter,
                                           restart=sol.ls_restart)
            except GCMError as exc:
                raise InversionAborted(f"outer {n}, inner {i}: {exc}", records) from exc

            e_val = None
            if i == 1 and last_eps is not None:
                e_val = relative_error(eps, last_eps, dom)
                sequence.append(("bridge", n, i, e_val))
                eps_by_error.append(eps)
            elif i >= 2:
                e_val = relative_error(eps, prev, dom)
                inner_errors.append(e_val)
                sequence.append(("e", n, i, e_val))
                eps_by_error.append(eps)
            outer_eps[n].append(eps)
            rec = {
                "n": n, "i": i, "e_value": e_val, "max_eps": float(eps.max()),
                "residuals": {"bvp": bvp.residual, "ls": ls_res}, "peclet_tripped": bvp.peclet_tripped,
            }
            records.append(rec)
            log.info("outer %d inner %d: e=%s max eps=%.4f", n, i, e_val, rec["max_eps"])
            prev = eps
            if stopping_inner(inner_errors, i, config.inner_cap, config.inner_stop):
                break

        q_history.append(q)
        sg = sg + gradient(q, dom)
        sl = sl + laplacian(q, dom)
        last_eps = prev
        n_done = n

        if n >= 2:
            idx = [j for j, s in enumerate(sequence)
                   if (s[1] == n - 1 and s[0] == "e") or s[1] == n]
            seg = [sequence[j][3] for j in idx]
            w = qualifying_window(seg, config.outer_stop)
            if w is not None:
                stopped = True
                if config.average_both_outers:
                    candidates = outer_eps[n - 1] + outer_eps[n]
                else:
                    candidates = [eps_by_error[idx[w + t]] for t in range(3)]
                break

    if candidates is None:
        values = [s[3] for s in sequence]
        if len(values) >= 3:
            worst = [max(values[j : j + 3]) for j in range(len(values) - 2)]
            j = int(np.argmin(worst))
            candidates = eps_by_error[j : j + 3]
        else:
            candidates = [last_eps]
        log.warning("outer stopping rule not met within %d outer iterations", N)

    result = finalize(candidates, dom, np.asarray(region_xy, bool))
    result.log = records
    result.error_sequence = sequence
    result.n_outer = n_done
    result.stopped = stopped
    return result
