"""Command-line interface: ``gcm {simulate,preprocess,invert,full-run,validate}``."""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import pipeline
from .core import PipelineConfig

EXIT_STAGE_FAILED = 1
EXIT_MISSING_INPUT = 2


def _band(text):
    try:
        lo, hi = (float(v) for v in text.split(":"))
    except ValueError as exc:
        raise argparse.ArgumentTypeError("band must look like LO:HI (dimensionless wavenumbers)") from exc
    if not 0 < lo < hi:
        raise argparse.ArgumentTypeError("band needs 0 < LO < HI")
    return lo, hi


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON configuration file (all keys optional)")
    common.add_argument("--out", type=Path, help="output directory (default from config)")
    common.add_argument("--threads", type=int, default=1, help="worker threads for per-wavenumber solves")
    common.add_argument("--seed", type=int, help="noise seed")
    common.add_argument("--noise-pct", type=float, help="multiplicative noise level in percent")
    common.add_argument("--band", type=_band, help="wavenumber band LO:HI, overrides automatic selection")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="gcm", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="synthetic measurement CSV from the configured scene")
    pp = sub.add_parser("preprocess", parents=[common], help="measurements -> psi boundary data and target region")
    pp.add_argument("--input", type=Path, help="measurement CSV (default: config or OUT/measurements.csv)")
    pi = sub.add_parser("invert", parents=[common], help="psi data -> permittivity volume and result JSON")
    pi.add_argument("--input", type=Path, help="directory holding psi.csv and target_region.json")
    sub.add_parser("full-run", parents=[common], help="simulate, preprocess and invert in one go")
    pv = sub.add_parser("validate", parents=[common], help="run the built-in oracle checks")
    pv.add_argument("--vtk", type=Path, help="also check that this VTK export matches OUT/eps_r.npy bit for bit")
    return p


def _config(args) -> PipelineConfig:
    cfg = PipelineConfig.load(args.config)
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.noise_pct is not None:
        changes["noise_pct"] = args.noise_pct
    if args.out is not None:
        changes["out_dir"] = str(args.out)
    return replace(cfg, **changes) if changes else cfg


def _run_stage(name, func, *a, **kw):
    try:
        return func(*a, **kw)
    except FileNotFoundError as exc:
        print(f"gcm: stage {name}: {exc}", file=sys.stderr)
        raise SystemExit(EXIT_MISSING_INPUT) from exc
    except Exception as exc:  # noqa: BLE001 - every failure maps to the stage exit code
        print(f"gcm: stage {name} failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        raise SystemExit(EXIT_STAGE_FAILED) from exc


def _report(result, out):
    print(f"dielectric constant {result.dielectric_constant:.4f} at {tuple(round(v, 4) for v in result.argmax_location)}")
    print(f"outer iterations {result.n_outer}, stopped by rule: {result.stopped}")
    print(f"wrote {Path(out) / pipeline.RESULT}")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _config(args)
    except FileNotFoundError as exc:
        print(f"gcm: stage config: {exc}", file=sys.stderr)
        return EXIT_MISSING_INPUT
    except (ValueError, TypeError) as exc:
        print(f"gcm: stage config failed: {exc}", file=sys.stderr)
        return EXIT_STAGE_FAILED
    out = Path(cfg.out_dir)
    cmd = args.command

    if cmd in ("simulate", "full-run"):
        written = _run_stage("simulate", pipeline.simulate, cfg, out, threads=args.threads)
        for path in written.values():
            print(f"wrote {path}")
    if cmd in ("preprocess", "full-run"):
        info = _run_stage("preprocess", pipeline.preprocess, cfg, out, band=args.band,
                          input_path=getattr(args, "input", None), threads=args.threads)
        print(f"band [{info['band'][0]:.4f}, {info['band'][1]:.4f}] ({info['band_source']})")
    if cmd in ("invert", "full-run"):
        result = _run_stage("invert", pipeline.invert, cfg, out, input_dir=getattr(args, "input", None))
        _report(result, out)
    if cmd == "validate":
        from .validate import run_checks

        ok = _run_stage("validate", run_checks, out_dir=out, vtk=args.vtk)
        return 0 if ok else EXIT_STAGE_FAILED
    return 0


if __name__ == "__main__":
    sys.exit(main())
