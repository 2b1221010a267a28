"""End-to-end stages: simulate, preprocess, invert.

Each stage reads and writes files in one output directory so that the
stages can be run separately from the command line or chained.
"""

from __future__ import annotations

import logging
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import io
from .core import Domain, PipelineConfig, PlaneDataset, build_partition, ghz_to_wavenumber, plane_geometry
from .forward import add_noise, rasterize_scene, simulate_measurements
from .inversion import ReconstructionResult, run_inversion
from .preprocess import (
    CalibrationRecord,
    TargetRegion,
    apply_calibration,
    complete_psi,
    compute_calibration,
    compute_psi,
    estimate_target_region,
    gaussian_smooth,
    propagate_dataset,
    resample_to_gamma,
    select_stable_band,
    truncate_field,
)

log = logging.getLogger(__name__)

MEASUREMENTS = "measurements.csv"
CALIBRATION_MEAS = "calibration_measurements.csv"
PSI = "psi.csv"
REGION = "target_region.json"
PREPROCESS_INFO = "preprocess.json"
RESULT = "result.json"
VOLUME = "eps_r.vtk"
ITER_LOG = "iterations.jsonl"


def _plane(cfg: PipelineConfig) -> PlaneDataset:
    p = cfg.plane
    return plane_geometry(p.x_min, p.x_max, p.nx, p.y_min, p.y_max, p.ny, p.z_level)


def _simulate_scene(cfg, scene, threads):
    dom = cfg.domain_obj
    eps = rasterize_scene(dom, scene)
    if eps.max() > cfg.eps_upper:
        raise ValueError(f"scene permittivity {eps.max()} exceeds eps_upper={cfg.eps_upper}")
    s = cfg.solver
    return simulate_measurements(dom, eps, cfg.sweep.wavenumbers(), _plane(cfg), tol=s.ls_tol,
                                 max_iter=s.ls_max_iter, restart=s.ls_restart, threads=threads)


def _scale_scattered(ds: PlaneDataset, gain: float) -> PlaneDataset:
    if gain == 1.0:
        return ds
    inc = np.exp(1j * ds.wavenumbers * ds.z_level)[:, None, None]
    return ds.with_data(inc + gain * (ds.data - inc))


def simulate(cfg: PipelineConfig, out_dir, threads=1) -> dict:
    """Synthetic measurements of the configured scene (and calibration object, if any)."""
    out = Path(out_dir)
    ds = _simulate_scene(cfg, cfg.scene, threads)
    ds = add_noise(_scale_scattered(ds, cfg.instrument_gain), cfg.noise_pct, cfg.seed)
    written = {"measurements": str(io.write_measurements(out / MEASUREMENTS, ds))}
    if cfg.calibration_scene:
        cal = _simulate_scene(cfg, cfg.calibration_scene, threads)
        cal = add_noise(_scale_scattered(cal, cfg.instrument_gain), cfg.noise_pct, cfg.seed + 1)
        written["calibration"] = str(io.write_measurements(out / CALIBRATION_MEAS, cal))
    return written


def scattered_part(ds: PlaneDataset) -> PlaneDataset:
    inc = np.exp(1j * ds.wavenumbers * ds.z_level)[:, None, None]
    return ds.with_data(ds.data - inc)


def truncate_dataset(ds: PlaneDataset, cfg: PipelineConfig) -> PlaneDataset:
    """Truncate and smooth each wavenumber row; rows that vanish identically stay zero."""
    sm = cfg.smoothing
    rows = []
    for row in ds.data:
        if not np.any(row):
            rows.append(np.zeros_like(row))
            continue
        kept = truncate_field(row, cfg.data_threshold) if cfg.truncate_data else row
        rows.append(gaussian_smooth(kept, sm.kernel_size, sm.sigma))
    return ds.with_data(np.array(rows))


def _calibration(cfg, out: Path, domain: Domain, threads) -> CalibrationRecord | None:
    path = out / CALIBRATION_MEAS
    if not cfg.calibration_scene or not path.exists():
        return None
    measured = io.ingest_measurements(path)
    sim = _simulate_scene(replace(cfg, noise_pct=0.0), cfg.calibration_scene, threads)
    sign = cfg.propagation_sign
    u_exp = propagate_dataset(scattered_part(measured), domain.z_min, sign=sign)
    u_sim = propagate_dataset(scattered_part(sim), domain.z_min, sign=sign)
    return compute_calibration(u_sim, u_exp, provenance="calibration_scene",
                               band_average=cfg.calibration_mode == "band_average")


def preprocess(cfg: PipelineConfig, out_dir, band=None, input_path=None, threads=1) -> dict:
    """Propagate, select the band, truncate/smooth, calibrate, build the target region and psi."""
    out = Path(out_dir)
    src = Path(input_path or cfg.measurements or out / MEASUREMENTS)
    if not src.exists():
        raise FileNotFoundError(f"measurement file not found: {src}")
    raw = io.ingest_measurements(src)
    dom = cfg.domain_obj

    propagated = propagate_dataset(scattered_part(raw), dom.z_min, sign=cfg.propagation_sign)
    band = band or cfg.band
    if band is None:
        bs = cfg.band_selection
        band = select_stable_band(propagated, bs.max_shift_samples, bs.max_relative_change, bs.min_run)
        band_source = "auto"
    else:
        band_source = "manual"
    k_lo, k_hi = float(band[0]), float(band[1])
    if not (raw.wavenumbers[0] - 1e-9 <= k_lo < k_hi <= raw.wavenumbers[-1] + 1e-9):
        raise ValueError(f"band [{k_lo}, {k_hi}] is not inside the measured sweep")
    partition = build_partition(k_lo, k_hi, cfg.partition.n_intervals)

    f_smth = truncate_dataset(propagated, cfg)
    calib = _calibration(cfg, out, dom, threads)
    f_cal = apply_calibration(f_smth, calib)

    in_band = (f_cal.wavenumbers >= k_lo - 1e-9) & (f_cal.wavenumbers <= k_hi + 1e-9)
    ks_band = f_cal.wavenumbers[in_band]
    k_ref = float(ghz_to_wavenumber(cfg.reference_ghz))
    ref_row = int(np.flatnonzero(in_band)[np.argmin(np.abs(ks_band - k_ref))])
    region = estimate_target_region(f_cal.data[ref_row], f_cal.x, f_cal.y, cfg.region_threshold) \
        if np.any(f_cal.data[ref_row]) else TargetRegion(f_cal.x, f_cal.y, np.ones(f_cal.data.shape[1:], bool))

    g = f_cal.with_data(f_cal.data + np.exp(1j * f_cal.wavenumbers * dom.z_min)[:, None, None])
    g_gamma = resample_to_gamma(g, dom)
    psi, kstar = compute_psi(g_gamma, partition, mode=cfg.psi_mode)

    io.write_measurements(out / "propagated.csv", propagated)
    io.write_measurements(out / "truncated.csv", f_cal)
    io.write_measurements(out / PSI, psi)
    io.write_json(out / REGION, region.to_dict())
    info = {
        "band": [k_lo, k_hi],
        "band_source": band_source,
        "n_intervals": partition.n_intervals,
        "kstar": kstar,
        "reference_wavenumber": float(f_cal.wavenumbers[ref_row]),
        "calibration": None if calib is None else {
            "wavenumbers": calib.wavenumbers.tolist(), "factors": calib.factors.tolist(),
            "provenance": calib.provenance,
        },
    }
    io.write_json(out / PREPROCESS_INFO, info)
    return info


def load_psi(path, cfg: PipelineConfig, domain: Domain, k_lo=None, k_hi=None):
    """Completed psi boundary fields ordered like the partition (``k_0 = k_hi`` first)."""
    ds = io.ingest_measurements(path)
    k_lo = ds.wavenumbers[0] if k_lo is None else k_lo
    k_hi = ds.wavenumbers[-1] if k_hi is None else k_hi
    part = build_partition(float(k_lo), float(k_hi), cfg.partition.n_intervals)
    face = resample_to_gamma(ds, domain)
    fields_ = []
    for k in part.values:
        j = int(np.argmin(np.abs(face.wavenumbers - k)))
        if abs(face.wavenumbers[j] - k) > 1e-9:
            raise ValueError(f"psi file has no row at partition wavenumber {k}")
        fields_.append(complete_psi(face.data[j], domain))
    return part, fields_


def invert(cfg: PipelineConfig, out_dir, input_dir=None) -> ReconstructionResult:
    out = Path(out_dir)
    src = Path(input_dir or out)
    for name in (PSI, REGION):
        if not (src / name).exists():
            raise FileNotFoundError(f"inversion input not found: {src / name}")
    dom = cfg.domain_obj
    part, psi_fields = load_psi(src / PSI, cfg, dom)
    cfg = replace(cfg, partition=replace(cfg.partition, k_lo=part.k_lo, k_hi=part.k_hi))
    region = TargetRegion.from_dict(io.read_json(src / REGION))
    result = run_inversion(psi_fields, region.on_grid(dom), cfg, dom)
    write_result(out, dom, result, part)
    return result


def write_result(out: Path, domain: Domain, result: ReconstructionResult, partition) -> None:
    summary = result.summary()
    summary["partition"] = {"k_lo": partition.k_lo, "k_hi": partition.k_hi, "n_intervals": partition.n_intervals}
    io.write_json(out / RESULT, summary)
    io.write_vtk(out / VOLUME, domain, result.eps_final)
    io.atomic_write(out / ITER_LOG, "".join(io.dumps_json(r).replace("\n", "") + "\n" for r in result.log))
    j = int(np.argmax(result.eps_final))
    io.write_slices(out, domain, result.eps_final, domain.unravel(j))
    buf = out / "eps_r.npy"
    tmp = out / ".eps_r.npy.tmp"
    with open(tmp, "wb") as fh:
        np.save(fh, result.eps_final)
    tmp.replace(buf)
