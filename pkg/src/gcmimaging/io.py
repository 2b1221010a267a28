"""File formats: measurement CSV, legacy VTK volumes, JSON results, slice CSVs."""

from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .core import UNIT_TAG, Domain, PlaneDataset, ghz_to_wavenumber, wavenumber_to_ghz
from .errors import SchemaError, UnitError

CSV_MAGIC = "# gcmimaging plane data v1"
CSV_COLUMNS = "freq_ghz,x,y,re,im"
VTK_TITLE = "eps_r reconstruction"


def atomic_write(path, payload: bytes | str):
    """Write to a temporary sibling and rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = payload.encode() if isinstance(payload, str) else payload
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def _fmt(v: float) -> str:
    return repr(float(v))


# --------------------------------------------------------------------------
# measurement CSV


def write_measurements(path, ds: PlaneDataset):
    """Plane dataset as CSV; every float is written with round-trip precision."""
    x, y = ds.x, ds.y
    ghz = wavenumber_to_ghz(ds.wavenumbers)
    lines = [
        CSV_MAGIC,
        f"# unit: {UNIT_TAG}",
        f"# z_level: {_fmt(ds.z_level)}",
        f"# x: {_fmt(x[0])} {_fmt(x[-1])} {len(x)}",
        f"# y: {_fmt(y[0])} {_fmt(y[-1])} {len(y)}",
        "# frequencies_ghz: " + " ".join(_fmt(f) for f in ghz),
        "# wavenumbers: " + " ".join(_fmt(k) for k in ds.wavenumbers),
        CSV_COLUMNS,
    ]
    xs = [_fmt(v) for v in x]
    ys = [_fmt(v) for v in y]
    for f, row in zip(ghz, ds.data):
        fs = _fmt(f)
        for iy in range(len(y)):
            for ix in range(len(x)):
                z = row[iy, ix]
                lines.append(f"{fs},{xs[ix]},{ys[iy]},{_fmt(z.real)},{_fmt(z.imag)}")
    return atomic_write(path, "\n".join(lines) + "\n")


def _parse_header(lines):
    header = {}
    for line in lines:
        if not line.startswith("#"):
            break
        body = line[1:].strip()
        if ":" in body:
            key, _, value = body.partition(":")
            header[key.strip()] = value.strip()
    return header


def ingest_measurements(path) -> PlaneDataset:
    """Read a measurement CSV into a :class:`PlaneDataset` (rows in any order)."""
    path = Path(path)
    text = path.read_text()
    if not text.strip():
        raise SchemaError(f"{path}: file is empty")
    lines = text.splitlines()
    header = _parse_header(lines)
    for key in ("unit", "z_level", "x", "y", "frequencies_ghz"):
        if key not in header:
            raise SchemaError(f"{path}: missing header field '{key}'")
    if header["unit"] != UNIT_TAG:
        raise UnitError(f"{path}: unit tag {header['unit']!r}, expected {UNIT_TAG!r}")
    try:
        x0, x1, nx = header["x"].split()
        y0, y1, ny = header["y"].split()
        x = np.linspace(float(x0), float(x1), int(nx))
        y = np.linspace(float(y0), float(y1), int(ny))
        z_level = float(header["z_level"])
        ghz = np.array([float(v) for v in header["frequencies_ghz"].split()])
        if "wavenumbers" in header:
            ks = np.array([float(v) for v in header["wavenumbers"].split()])
        else:
            ks = ghz_to_wavenumber(ghz)
    except ValueError as exc:
        raise SchemaError(f"{path}: malformed header ({exc})") from exc
    if len(ks) != len(ghz) or len(ghz) == 0:
        raise SchemaError(f"{path}: frequency and wavenumber lists disagree or are empty")

    body = [ln for ln in lines if ln and not ln.startswith("#")]
    if not body or body[0].replace(" ", "") != CSV_COLUMNS:
        raise SchemaError(f"{path}: expected column header '{CSV_COLUMNS}'")
    try:
        table = np.array([[float(v) for v in ln.split(",")] for ln in body[1:]], dtype=float)
    except ValueError as exc:
        raise SchemaError(f"{path}: non-numeric row ({exc})") from exc
    if table.size and table.shape[1] != 5:
        raise SchemaError(f"{path}: rows must have 5 columns")
    table = table.reshape(-1, 5)

    def lookup(values, grid, name):
        idx = np.searchsorted(grid, values)
        idx = np.clip(idx, 0, len(grid) - 1)
        lo = np.clip(idx - 1, 0, len(grid) - 1)
        pick = np.where(np.abs(grid[lo] - values) < np.abs(grid[idx] - values), lo, idx)
        tol = 1e-9 * max(1.0, float(np.max(np.abs(grid))))
        off = np.abs(grid[pick] - values) > tol
        if off.any():
            raise SchemaError(f"{path}: {name} value {values[np.argmax(off)]!r} is off the declared lattice")
        return pick

    order = np.argsort(ghz)
    fi = order[lookup(table[:, 0], ghz[order], "frequency")]
    xi = lookup(table[:, 1], x, "x")
    yi = lookup(table[:, 2], y, "y")
    count = np.zeros((len(ghz), len(y), len(x)), int)
    np.add.at(count, (fi, yi, xi), 1)
    if np.any(count != 1):
        gaps = np.argwhere(count == 0)
        dups = np.argwhere(count > 1)
        desc = [f"(f={ghz[a]}, x={x[c]}, y={y[b]})" for a, b, c in gaps[:10]]
        msg = f"{path}: {len(gaps)} missing lattice points"
        if desc:
            msg += " e.g. " + ", ".join(desc)
        if len(dups):
            msg += f"; {len(dups)} duplicated points"
        raise SchemaError(msg)
    data = np.zeros(count.shape, complex)
    data[fi, yi, xi] = table[:, 3] + 1j * table[:, 4]
    korder = np.argsort(ks)
    return PlaneDataset(x, y, z_level, ks[korder], data[korder])


# --------------------------------------------------------------------------
# legacy VTK


def write_vtk(path, domain: Domain, eps):
    """STRUCTURED_POINTS, big-endian float64 scalar ``eps_r``, x-fastest ordering."""
    eps = domain.check_field(np.asarray(eps, float), "eps")
    dx, dy, dz = domain.spacing
    header = "\n".join([
        "# vtk DataFile Version 3.0",
        VTK_TITLE,
        "BINARY",
        "DATASET STRUCTURED_POINTS",
        f"DIMENSIONS {domain.nx} {domain.ny} {domain.nz}",
        f"ORIGIN {_fmt(domain.x_min)} {_fmt(domain.y_min)} {_fmt(domain.z_min)}",
        f"SPACING {_fmt(dx)} {_fmt(dy)} {_fmt(dz)}",
        f"POINT_DATA {domain.size}",
        "SCALARS eps_r double 1",
        "LOOKUP_TABLE default",
    ]) + "\n"
    payload = header.encode("ascii") + eps.astype(">f8").tobytes(order="C") + b"\n"
    return atomic_write(path, payload)


def read_vtk(path) -> tuple[Domain, np.ndarray]:
    raw = Path(path).read_bytes()
    pos = 0
    fields = {}
    for _ in range(10):
        end = raw.index(b"\n", pos)
        line = raw[pos:end].decode("ascii").strip()
        pos = end + 1
        key, _, rest = line.partition(" ")
        fields[key] = rest
    if fields.get("DATASET") != "STRUCTURED_POINTS" or not fields.get("SCALARS", "").startswith("eps_r double"):
        raise SchemaError(f"{path}: not an eps_r structured-points file")
    nx, ny, nz = (int(v) for v in fields["DIMENSIONS"].split())
    ox, oy, oz = (float(v) for v in fields["ORIGIN"].split())
    sx, sy, sz = (float(v) for v in fields["SPACING"].split())
    dom = Domain(ox, ox + sx * (nx - 1), oy, oy + sy * (ny - 1), oz, oz + sz * (nz - 1), nx, ny, nz)
    n = nx * ny * nz
    values = np.frombuffer(raw, dtype=">f8", count=n, offset=pos).astype(float)
    return dom, values.reshape(nz, ny, nx)


# --------------------------------------------------------------------------
# JSON and slices


def dumps_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n"


def write_json(path, obj):
    return atomic_write(path, dumps_json(obj))


def read_json(path):
    return json.loads(Path(path).read_text())


def write_slices(out_dir, domain: Domain, eps, center_index):
    """Three axis-aligned slices through ``center_index = (ix, iy, iz)`` as x,y,z,eps_r CSVs."""
    out_dir = Path(out_dir)
    X, Y, Z = domain.mesh()
    ix, iy, iz = center_index
    cuts = {"xy": (iz, slice(None), slice(None)), "xz": (slice(None), iy, slice(None)),
            "yz": (slice(None), slice(None), ix)}
    paths = []
    for name, sl in cuts.items():
        cols = [a[sl].ravel() for a in (X, Y, Z, eps)]
        rows = ["x,y,z,eps_r"] + [",".join(_fmt(v) for v in r) for r in zip(*cols)]
        paths.append(atomic_write(out_dir / f"slice_{name}.csv", "\n".join(rows) + "\n"))
    return paths
