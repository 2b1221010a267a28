"""Raw plane data -> calibrated, truncated boundary data for the inversion."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from scipy.interpolate import RegularGridInterpolator

from .core import Domain, PlaneDataset, WavenumberPartition
from .errors import BandNotFoundError, DivisionGuardError


@dataclass
class CalibrationRecord:
    wavenumbers: np.ndarray
    factors: np.ndarray
    provenance: str = ""

    def __post_init__(self):
        self.wavenumbers = np.asarray(self.wavenumbers, float)
        self.factors = np.asarray(self.factors, float)
        if self.factors.shape != self.wavenumbers.shape:
            raise ValueError("one calibration factor per wavenumber is required")
        if not np.all(np.isfinite(self.factors)) or np.any(self.factors <= 0):
            raise ValueError("calibration factors must be finite and positive")

    def factor(self, k, tol=1e-9):
        i = int(np.argmin(np.abs(self.wavenumbers - k)))
        if abs(self.wavenumbers[i] - k) > tol:
            return float(np.interp(k, self.wavenumbers, self.factors))
        return float(self.factors[i])


@dataclass
class TargetRegion:
    """xy-mask of the target estimate over a plane lattice."""

    x: np.ndarray
    y: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        self.mask = np.asarray(self.mask, bool)
        if self.mask.shape != (len(self.y), len(self.x)):
            raise ValueError("region mask must have shape (ny, nx)")
        if not self.mask.any():
            raise ValueError("target region must be nonempty")

    @property
    def bbox(self) -> tuple[float, float, float, float]:
        iy, ix = np.nonzero(self.mask)
        return (float(self.x[ix.min()]), float(self.x[ix.max()]), float(self.y[iy.min()]), float(self.y[iy.max()]))

    def on_grid(self, domain: Domain) -> np.ndarray:
        """Nearest-lattice-sample lookup of the mask at the domain's (y, x) nodes."""
        if len(self.x) == domain.nx and len(self.y) == domain.ny and np.allclose(self.x, domain.x) \
                and np.allclose(self.y, domain.y):
            return self.mask.copy()
        dx = self.x[1] - self.x[0]
        dy = self.y[1] - self.y[0]
        ix = np.rint((domain.x - self.x[0]) / dx).astype(int)
        iy = np.rint((domain.y - self.y[0]) / dy).astype(int)
        okx = (ix >= 0) & (ix < len(self.x))
        oky = (iy >= 0) & (iy < len(self.y))
        out = np.zeros((domain.ny, domain.nx), bool)
        sub = self.mask[np.ix_(iy[oky], ix[okx])]
        out[np.ix_(oky, okx)] = sub
        return out

    def to_dict(self):
        return {
            "x": self.x.tolist(),
            "y": self.y.tolist(),
            "mask": self.mask.astype(int).tolist(),
            "bbox": list(self.bbox),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["x"], float), np.asarray(d["y"], float), np.asarray(d["mask"], bool))


# --------------------------------------------------------------------------
# angular spectrum propagation


def propagate_plane(field, dx, dy, k, distance, sign=+1, pad=1, allow_backward=False):
    """Angular-spectrum propagation of one plane field over ``distance`` along +z.

    Each propagating plane wave (kx^2 + ky^2 < k^2) is multiplied by
    ``exp(sign * i * kz * distance)``; evanescent components are dropped.
    ``sign=+1`` is the plain formula (waves travelling towards +z under the
    transform pair used here); ``sign=-1`` propagates a field that travels
    towards -z, i.e. data scattered back towards the source under the
    ``e^{ikz}`` incident convention.  The field is zero-padded by ``pad``
    times its size on each axis before transforming and cropped afterwards.
    """
    if distance < 0 and not allow_backward:
        raise ValueError("target plane must lie on the target side of the data plane (distance >= 0)")
    field = np.asarray(field, complex)
    ny, nx = field.shape
    py, px = ny * (1 + pad), nx * (1 + pad)
    spec = np.fft.fft2(field, s=(py, px))
    KX = 2 * np.pi * np.fft.fftfreq(px, d=dx)[None, :]
    KY = 2 * np.pi * np.fft.fftfreq(py, d=dy)[:, None]
    kt2 = KX**2 + KY**2
    prop = kt2 < k * k
    kz = np.sqrt(np.where(prop, k * k - kt2, 0.0))
    spec = np.where(prop, spec * np.exp(sign * 1j * kz * distance), 0.0)
    return np.fft.ifft2(spec)[:ny, :nx]


def propagate_dataset(g: PlaneDataset, target_z: float, sign=+1, pad=1, allow_backward=False) -> PlaneDataset:
    dx, dy = g.spacing
    dist = target_z - g.z_level
    rows = [propagate_plane(g.data[j], dx, dy, k, dist, sign, pad, allow_backward) for j, k in enumerate(g.wavenumbers)]
    return g.with_data(np.array(rows), z_level=target_z)


# --------------------------------------------------------------------------
# band selection


def select_stable_band(propagated: PlaneDataset, max_shift=2, max_change=0.5, min_run=5):
    """Longest run of consecutive wavenumbers with a stable focus of the propagated field.

    Consecutive wavenumbers are compatible when the argmax of |f| moves by at
    most ``max_shift`` samples (Chebyshev distance) and max|f| changes by at
    most ``max_change`` relative to the larger of the two maxima.
    """
    mags = np.abs(propagated.data)
    nk = mags.shape[0]
    flat = mags.reshape(nk, -1)
    arg = np.array([np.unravel_index(np.argmax(row), mags.shape[1:]) for row in flat])
    peak = flat.max(axis=1)
    ok = []
    for j in range(nk - 1):
        shift = np.max(np.abs(arg[j + 1] - arg[j]))
        top = max(peak[j], peak[j + 1])
        change = abs(peak[j + 1] - peak[j]) / top if top > 0 else 0.0
        ok.append(shift <= max_shift and change <= max_change)
    best = (0, 0)
    start = 0
    for j in range(nk):
        if j == nk - 1 or not ok[j]:
            if j - start > best[1] - best[0]:
                best = (start, j)
            start = j + 1
    if best[1] - best[0] + 1 < min_run:
        raise BandNotFoundError(
            f"no stable run of at least {min_run} wavenumbers; select the band manually (e.g. --band LO:HI)"
        )
    ks = propagated.wavenumbers
    return float(ks[best[0]]), float(ks[best[1]])


# --------------------------------------------------------------------------
# truncation, smoothing, calibration


def truncate_field(f, threshold=0.8):
    """Keep samples with ``|f| >= threshold * max|f|``, zero the rest."""
    if not 0 < threshold <= 1:
        raise ValueError("threshold must lie in (0, 1]")
    f = np.asarray(f)
    mag = np.abs(f)
    top = mag.max()
    if top == 0:
        raise ValueError("cannot truncate an all-zero field")
    return np.where(mag >= threshold * top, f, 0)


def gaussian_kernel(kernel_size=3, sigma=0.65, ndim=2):
    if kernel_size % 2 != 1 or kernel_size < 1:
        raise ValueError("kernel size must be odd")
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    r = np.arange(kernel_size) - kernel_size // 2
    g1 = np.exp(-(r**2) / (2 * sigma**2))
    kern = g1
    for _ in range(ndim - 1):
        kern = np.multiply.outer(kern, g1)
    return kern / kern.sum()


def gaussian_smooth(field, kernel_size=3, sigma=0.65):
    """Normalized Gaussian filter with half-sample mirror padding (2D or 3D)."""
    field = np.asarray(field)
    kern = gaussian_kernel(kernel_size, sigma, field.ndim)
    if np.iscomplexobj(field):
        return (ndimage.correlate(field.real, kern, mode="reflect")
                + 1j * ndimage.correlate(field.imag, kern, mode="reflect"))
    return ndimage.correlate(field.astype(float), kern, mode="reflect")


def truncate_and_smooth(f: PlaneDataset, threshold=0.8, kernel_size=3, sigma=0.65) -> PlaneDataset:
    rows = [gaussian_smooth(truncate_field(row, threshold), kernel_size, sigma) for row in f.data]
    return f.with_data(np.array(rows))


def compute_calibration(sim: PlaneDataset, exp: PlaneDataset, provenance="", band_average=False):
    """Per-wavenumber amplitude ratio ``max|sim| / max|exp|``."""
    if len(sim.wavenumbers) != len(exp.wavenumbers) or not np.allclose(sim.wavenumbers, exp.wavenumbers):
        raise ValueError("calibration datasets must share the wavenumber list")
    top_sim = np.abs(sim.matrix).max(axis=1)
    top_exp = np.abs(exp.matrix).max(axis=1)
    if np.any(top_exp == 0):
        raise ZeroDivisionError("measured calibration data vanish at some wavenumber")
    factors = top_sim / top_exp
    if band_average:
        factors = np.full_like(factors, factors.mean())
    return CalibrationRecord(sim.wavenumbers.copy(), factors, provenance)


def apply_calibration(f: PlaneDataset, calib: CalibrationRecord | None) -> PlaneDataset:
    if calib is None:
        return f
    scale = np.array([calib.factor(k) for k in f.wavenumbers])
    return f.with_data(f.data * scale[:, None, None])


def estimate_target_region(f_smth, x, y, threshold=0.7) -> TargetRegion:
    """Samples where |f| exceeds ``threshold * max|f|`` (the argmax is always kept)."""
    mag = np.abs(np.asarray(f_smth))
    top = mag.max()
    if top == 0:
        raise ValueError("cannot locate a target in an all-zero field")
    mask = (mag > threshold * top) | (mag == top)
    return TargetRegion(np.asarray(x, float), np.asarray(y, float), mask)


# --------------------------------------------------------------------------
# boundary data


def resample_to_gamma(plane: PlaneDataset, domain: Domain) -> PlaneDataset:
    """Bilinear resampling of a plane dataset onto the (y, x) nodes of the face z = z_min.

    Nodes outside the plane rectangle receive zero (the data are zero there).
    """
    if len(plane.x) == domain.nx and len(plane.y) == domain.ny and np.allclose(plane.x, domain.x) \
            and np.allclose(plane.y, domain.y):
        return plane.with_data(plane.data.copy(), z_level=domain.z_min)
    YY, XX = np.meshgrid(domain.y, domain.x, indexing="ij")
    pts = np.column_stack([YY.ravel(), XX.ravel()])
    rows = []
    for row in plane.data:
        interp = RegularGridInterpolator((plane.y, plane.x), row, bounds_error=False, fill_value=0.0)
        rows.append(interp(pts).reshape(domain.ny, domain.nx))
    return PlaneDataset(domain.x, domain.y, domain.z_min, plane.wavenumbers, np.array(rows))


def complete_boundary_data(g_gamma, k, domain: Domain) -> np.ndarray:
    """Boundary values on the whole box: ``g`` on the face z = z_min, ``e^{ikz}`` elsewhere.

    Returned as a full grid array; interior entries are zero and ignored.
    """
    g_gamma = np.asarray(g_gamma, complex)
    if g_gamma.shape != (domain.ny, domain.nx):
        raise ValueError(f"face data must have shape {(domain.ny, domain.nx)}")
    _, _, Z = domain.mesh()
    out = np.where(domain.boundary_mask(), np.exp(1j * k * Z), 0.0)
    out[0] = g_gamma
    return out


def complete_psi(psi_gamma, domain: Domain) -> np.ndarray:
    """Boundary values of ``psi``: given on z = z_min, ``iz`` (from ``e^{ikz}``) elsewhere."""
    psi_gamma = np.asarray(psi_gamma, complex)
    _, _, Z = domain.mesh()
    out = np.where(domain.boundary_mask(), 1j * Z, 0.0).astype(complex)
    out[0] = psi_gamma
    return out


def _at(ks, values, k, tol=1e-9):
    """Row of ``values`` at wavenumber ``k`` (exact sample or linear interpolation)."""
    i = int(np.argmin(np.abs(ks - k)))
    if abs(ks[i] - k) <= tol:
        return values[i]
    if k < ks[0] - tol or k > ks[-1] + tol:
        raise ValueError(f"wavenumber {k} lies outside the sampled sweep")
    j = int(np.searchsorted(ks, k))
    t = (k - ks[j - 1]) / (ks[j] - ks[j - 1])
    return (1 - t) * values[j - 1] + t * values[j]


def select_kstar(g: PlaneDataset, dg: np.ndarray, candidates) -> float:
    """Reference wavenumber minimizing ``max_{x,k} |dg(x,k) / g(x,kappa)|``; ties go to the smaller kappa."""
    ks = g.wavenumbers
    scores = []
    for kappa in sorted(candidates):
        denom = np.abs(_at(ks, g.data, kappa))
        with np.errstate(divide="ignore"):
            scores.append(np.max(np.abs(dg) / denom[None]))
    scores = np.asarray(scores)
    best = float(np.min(scores))
    i = int(np.flatnonzero(scores <= best * (1 + 1e-12))[0])
    return float(sorted(candidates)[i])


def compute_psi(g: PlaneDataset, partition: WavenumberPartition, mode="kstar", guard=1e-12):
    """``psi = d_k g / g`` on the data plane at each partition wavenumber.

    ``d_k g`` is a central difference on the sweep spacing (one-sided at the
    ends).  In ``kstar`` mode the denominator is ``g(x, k*)`` for one reference
    wavenumber chosen by :func:`select_kstar`.  Returns ``(psi_dataset, kstar)``
    with rows in increasing wavenumber order.
    """
    ks = g.wavenumbers
    if len(ks) < 2:
        raise ValueError("need at least two wavenumbers to differentiate in k")
    dg = np.gradient(g.data, ks, axis=0, edge_order=1)
    targets = np.sort(np.asarray(partition.values))
    dg_t = np.array([_at(ks, dg, k) for k in targets])
    kstar = None
    if mode == "kstar":
        kstar = select_kstar(g, dg_t, targets)
        denom = np.broadcast_to(_at(ks, g.data, kstar), dg_t.shape)
    elif mode == "exact":
        denom = np.array([_at(ks, g.data, k) for k in targets])
    else:
        raise ValueError(f"unknown psi mode {mode!r}")
    small = np.abs(denom) < guard
    if small.any():
        idx = np.argwhere(small)[:10].tolist()
        raise DivisionGuardError(f"|g| below {guard} at {int(small.sum())} samples, e.g. {idx}", idx)
    psi = dg_t / denom
    return PlaneDataset(g.x, g.y, g.z_level, targets, psi), kstar
