"""Grids, wavenumber partitions, plane datasets and pipeline configuration.

Layout convention (shared by every module): a volume field over a
:class:`Domain` is a numpy array of shape ``(nz, ny, nx)`` in C order, so
flattening it gives x-fastest row-major ordering.  Lengths are dimensionless
with 1 unit = 10 cm, and a frequency ``nu`` in Hz maps to the wavenumber
``k = 2*pi*nu*0.1/c``.
"""

from __future__ import annotations

import json
import math
from dataclasses import MISSING, asdict, dataclass, field, fields, is_dataclass
from pathlib import Path
from typing import Any

import numpy as np

SPEED_OF_LIGHT = 299_792_458.0
LENGTH_UNIT_M = 0.1
UNIT_TAG = "dimensionless-0.1m"


def ghz_to_wavenumber(freq_ghz):
    return 2.0 * np.pi * np.asarray(freq_ghz, dtype=float) * 1e9 * LENGTH_UNIT_M / SPEED_OF_LIGHT


def wavenumber_to_ghz(k):
    return np.asarray(k, dtype=float) * SPEED_OF_LIGHT / (2.0 * np.pi * LENGTH_UNIT_M * 1e9)


@dataclass(frozen=True)
class Domain:
    """Axis-aligned box with a uniform node grid; ``z_gamma`` is the backscatter face."""

    x_min: float = -2.5
    x_max: float = 2.5
    y_min: float = -2.5
    y_max: float = 2.5
    z_min: float = -0.75
    z_max: float = 4.25
    nx: int = 33
    ny: int = 33
    nz: int = 33
    z_gamma: float | None = None

    def __post_init__(self):
        if not (self.x_min < self.x_max and self.y_min < self.y_max and self.z_min < self.z_max):
            raise ValueError("domain bounds must satisfy min < max on every axis")
        if min(self.nx, self.ny, self.nz) < 2:
            raise ValueError("need at least 2 grid points per axis")
        if self.z_gamma is None:
            object.__setattr__(self, "z_gamma", float(self.z_min))
        elif self.z_gamma != self.z_min:
            raise ValueError("z_gamma must equal z_min (backscatter face is the source side)")

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.nz, self.ny, self.nx)

    @property
    def size(self) -> int:
        return self.nx * self.ny * self.nz

    @property
    def spacing(self) -> tuple[float, float, float]:
        return (
            (self.x_max - self.x_min) / (self.nx - 1),
            (self.y_max - self.y_min) / (self.ny - 1),
            (self.z_max - self.z_min) / (self.nz - 1),
        )

    @property
    def x(self) -> np.ndarray:
        return np.linspace(self.x_min, self.x_max, self.nx)

    @property
    def y(self) -> np.ndarray:
        return np.linspace(self.y_min, self.y_max, self.ny)

    @property
    def z(self) -> np.ndarray:
        return np.linspace(self.z_min, self.z_max, self.nz)

    def mesh(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Return ``(X, Y, Z)`` arrays, each of shape ``(nz, ny, nx)``."""
        Z, Y, X = np.meshgrid(self.z, self.y, self.x, indexing="ij")
        return X, Y, Z

    def index(self, ix: int, iy: int, iz: int) -> int:
        return ix + self.nx * (iy + self.ny * iz)

    def unravel(self, i: int) -> tuple[int, int, int]:
        iz, rem = divmod(int(i), self.nx * self.ny)
        iy, ix = divmod(rem, self.nx)
        return ix, iy, iz

    def boundary_mask(self) -> np.ndarray:
        mask = np.zeros(self.shape, dtype=bool)
        mask[0, :, :] = mask[-1, :, :] = True
        mask[:, 0, :] = mask[:, -1, :] = True
        mask[:, :, 0] = mask[:, :, -1] = True
        return mask

    def trapezoid_weights(self) -> np.ndarray:
        """Cell-volume weights of the composite trapezoid rule on the node grid."""
        dx, dy, dz = self.spacing
        w = [np.full(n, d) for n, d in ((self.nz, dz), (self.ny, dy), (self.nx, dx))]
        for wa in w:
            wa[0] *= 0.5
            wa[-1] *= 0.5
        return w[0][:, None, None] * w[1][None, :, None] * w[2][None, None, :]

    def check_field(self, data: np.ndarray, name: str = "field") -> np.ndarray:
        data = np.asarray(data)
        if data.shape != self.shape:
            raise ValueError(f"{name} has shape {data.shape}, expected {self.shape}")
        if not np.all(np.isfinite(data)):
            raise ValueError(f"{name} contains non-finite values")
        return data


def grid_coordinates(domain: Domain) -> np.ndarray:
    """Node coordinates as an ``(N, 3)`` array of (x, y, z), x fastest."""
    X, Y, Z = domain.mesh()
    return np.column_stack([X.ravel(), Y.ravel(), Z.ravel()])


@dataclass(frozen=True)
class WavenumberPartition:
    k_lo: float
    k_hi: float
    n_intervals: int
    h: float
    values: tuple[float, ...]

    def __len__(self):
        return len(self.values)

    def __getitem__(self, j):
        return self.values[j]


def build_partition(k_lo: float, k_hi: float, n_intervals: int) -> WavenumberPartition:
    """Uniform decreasing grid ``k_0 = k_hi > k_1 > ... > k_N = k_lo``."""
    if not (k_lo > 0 and k_hi > k_lo):
        raise ValueError(f"need 0 < k_lo < k_hi, got k_lo={k_lo}, k_hi={k_hi}")
    if int(n_intervals) != n_intervals or n_intervals < 1:
        raise ValueError(f"number of intervals must be a positive integer, got {n_intervals}")
    n = int(n_intervals)
    h = (k_hi - k_lo) / n
    values = [k_hi - j * h for j in range(n)] + [k_lo]
    return WavenumberPartition(float(k_lo), float(k_hi), n, h, tuple(float(v) for v in values))


@dataclass
class PlaneDataset:
    """Complex samples on a constant-z rectangle, one row per wavenumber.

    ``data`` has shape ``(n_k, ny, nx)``; wavenumbers are strictly increasing.
    """

    x: np.ndarray
    y: np.ndarray
    z_level: float
    wavenumbers: np.ndarray
    data: np.ndarray

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.y = np.asarray(self.y, dtype=float)
        self.wavenumbers = np.atleast_1d(np.asarray(self.wavenumbers, dtype=float))
        self.data = np.asarray(self.data, dtype=complex)
        if self.data.ndim == 2:
            self.data = self.data[None]
        expected = (len(self.wavenumbers), len(self.y), len(self.x))
        if self.data.shape != expected:
            raise ValueError(f"plane data shape {self.data.shape} != {expected}")
        if len(self.wavenumbers) > 1 and np.any(np.diff(self.wavenumbers) <= 0):
            raise ValueError("wavenumbers must be strictly increasing")

    @property
    def spacing(self) -> tuple[float, float]:
        return (float(self.x[1] - self.x[0]), float(self.y[1] - self.y[0]))

    @property
    def matrix(self) -> np.ndarray:
        """Rows = wavenumbers, columns = plane samples (x fastest)."""
        return self.data.reshape(len(self.wavenumbers), -1)

    def with_data(self, data, wavenumbers=None, z_level=None) -> "PlaneDataset":
        return PlaneDataset(
            self.x,
            self.y,
            self.z_level if z_level is None else z_level,
            self.wavenumbers if wavenumbers is None else wavenumbers,
            data,
        )

    def select(self, k_lo: float, k_hi: float, tol: float = 1e-9) -> "PlaneDataset":
        keep = (self.wavenumbers >= k_lo - tol) & (self.wavenumbers <= k_hi + tol)
        return self.with_data(self.data[keep], self.wavenumbers[keep])

    def nearest(self, k: float) -> int:
        return int(np.argmin(np.abs(self.wavenumbers - k)))


def plane_geometry(x_min, x_max, nx, y_min, y_max, ny, z_level, wavenumbers=()) -> PlaneDataset:
    """Empty (zero) dataset describing a measurement rectangle."""
    x = np.linspace(x_min, x_max, nx)
    y = np.linspace(y_min, y_max, ny)
    ks = np.asarray(wavenumbers, dtype=float)
    return PlaneDataset(x, y, z_level, ks, np.zeros((len(ks), ny, nx), complex))


# --------------------------------------------------------------------------
# configuration


@dataclass
class DomainConfig:
    x_min: float = -2.5
    x_max: float = 2.5
    y_min: float = -2.5
    y_max: float = 2.5
    z_min: float = -0.75
    z_max: float = 4.25
    nx: int = 33
    ny: int = 33
    nz: int = 33

    def build(self) -> Domain:
        return Domain(**asdict(self))


@dataclass
class PartitionConfig:
    k_lo: float = 6.25
    k_hi: float = 6.70
    n_intervals: int = 9

    def build(self) -> WavenumberPartition:
        return build_partition(self.k_lo, self.k_hi, self.n_intervals)


@dataclass
class PlaneConfig:
    x_min: float = -5.0
    x_max: float = 5.0
    nx: int = 51
    y_min: float = -5.0
    y_max: float = 5.0
    ny: int = 51
    z_level: float = -3.0


@dataclass
class SweepConfig:
    """Simulated frequency sweep (wavenumbers) used by ``simulate``."""

    k_start: float = 6.0
    k_stop: float = 7.0
    n_points: int = 21

    def wavenumbers(self) -> np.ndarray:
        return np.linspace(self.k_start, self.k_stop, self.n_points)


@dataclass
class SmoothingConfig:
    kernel_size: int = 3
    sigma: float = 0.65


@dataclass
class BandConfig:
    max_shift_samples: int = 2
    max_relative_change: float = 0.5
    min_run: int = 5


@dataclass
class SolverConfig:
    ls_tol: float = 1e-8
    ls_max_iter: int = 500
    ls_restart: int = 50
    bvp_tol: float = 1e-8
    bvp_max_iter: int = 2000
    bvp_restart: int = 50
    bvp_method: str = "auto"


@dataclass
class PipelineConfig:
    domain: DomainConfig = field(default_factory=DomainConfig)
    partition: PartitionConfig = field(default_factory=PartitionConfig)
    plane: PlaneConfig = field(default_factory=PlaneConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    smoothing: SmoothingConfig = field(default_factory=SmoothingConfig)
    band_selection: BandConfig = field(default_factory=BandConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    inner_cap: int = 3
    data_threshold: float = 0.8
    region_threshold: float = 0.7
    inner_stop: float = 1e-6
    outer_stop: float = 5e-4
    search_z: tuple[float, float] = (-0.75, 1.0)
    reference_ghz: float = 3.1
    eps_upper: float = 10.0
    psi_mode: str = "exact"
    truncate_data: bool = True
    calibration_mode: str = "per_k"
    average_both_outers: bool = False
    eps_wavenumber: str = "k_hi"
    propagation_sign: int = -1
    band: tuple[float, float] | None = None
    noise_pct: float = 0.0
    seed: int = 0
    scene: list[dict[str, Any]] = field(
        default_factory=lambda: [{"shape": "ball", "center": [0.0, 0.0, 0.3], "radius": 0.3, "eps": 4.0}]
    )
    calibration_scene: list[dict[str, Any]] | None = None
    instrument_gain: float = 1.0
    measurements: str | None = None
    out_dir: str = "out"

    def __post_init__(self):
        for name in ("data_threshold", "region_threshold"):
            v = getattr(self, name)
            if not 0.0 < v <= 1.0:
                raise ValueError(f"{name} must lie in (0, 1], got {v}")
        if self.inner_stop <= 0 or self.outer_stop <= 0:
            raise ValueError("stopping thresholds must be positive")
        if self.inner_cap < 2:
            raise ValueError("inner iteration cap must be >= 2")
        if self.psi_mode not in ("kstar", "exact"):
            raise ValueError(f"unknown psi_mode {self.psi_mode!r}")
        if self.calibration_mode not in ("per_k", "band_average"):
            raise ValueError(f"unknown calibration_mode {self.calibration_mode!r}")
        if self.eps_wavenumber not in ("k_n", "k_hi"):
            raise ValueError(f"unknown eps_wavenumber {self.eps_wavenumber!r}")
        if self.propagation_sign not in (-1, 1):
            raise ValueError("propagation_sign must be +1 or -1")
        self.search_z = tuple(float(v) for v in self.search_z)
        if self.band is not None:
            self.band = tuple(float(v) for v in self.band)

    @property
    def domain_obj(self) -> Domain:
        return self.domain.build()

    @property
    def partition_obj(self) -> WavenumberPartition:
        return self.partition.build()

    @classmethod
    def from_dict(cls, raw: dict[str, Any]) -> "PipelineConfig":
        return _build(cls, raw)

    @classmethod
    def load(cls, path: str | Path | None) -> "PipelineConfig":
        if path is None:
            return cls()
        text = Path(path).read_text().strip()
        return cls.from_dict(json.loads(text) if text else {})

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


def _build(cls, raw):
    if raw is None:
        return cls()
    known = {f.name: f for f in fields(cls)}
    unknown = set(raw) - set(known)
    if unknown:
        raise ValueError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    kwargs = {}
    for name, value in raw.items():
        factory = known[name].default_factory
        if factory is not MISSING:
            sample = factory()
            if is_dataclass(sample):
                value = _build(type(sample), value)
        kwargs[name] = value
    return cls(**kwargs)


def l2_norm(domain: Domain, field_: np.ndarray) -> float:
    return math.sqrt(float(np.sum(domain.trapezoid_weights() * np.abs(field_) ** 2)))
