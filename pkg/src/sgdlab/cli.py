"""Command-line entry point: ``sgdlab <subcommand> ...``."""
from __future__ import annotations

import argparse
import contextlib
import dataclasses
import json
import math
import os
import sys
from pathlib import Path

from . import __version__
from .config import load_config
from .errors import LabError
from .experiments import emit_report, escape_summary, flatness_summary, grid_points, run_sweep

SPECTRUM_KINDS = ("relu", "leaky_relu", "softplus", "gelu", "sigmoid", "tanh", "sin", "hermite", "identity", "z2exp")


def _deterministic():
    """Pin BLAS to one thread when LAB_DETERMINISTIC=1 so reductions keep a fixed order."""
    if os.environ.get("LAB_DETERMINISTIC") == "1":
        from threadpoolctl import threadpool_limits

        return threadpool_limits(limits=1)
    return contextlib.nullcontext()


def _load(args, mode: str):
    cfg = load_config(args.config)
    if cfg.mode != mode:
        cfg = dataclasses.replace(cfg, mode=mode)
    return cfg


def _print(obj) -> None:
    print(json.dumps(obj, indent=2, default=lambda o: None if isinstance(o, float) and not math.isfinite(o) else str(o)))


def _status(manifest) -> int:
    return 0 if all(r["status"] == "ok" for r in manifest["runs"]) else 1


def cmd_run(args, mode: str) -> int:
    cfg = _load(args, mode)
    if mode == "trajectory" and len(grid_points(cfg)) != 1:
        print("trajectory mode needs a single grid point; use `sweep`", file=sys.stderr)
        return 2
    results, manifest = run_sweep(cfg, out_dir=args.out, jobs=args.jobs, seed_offset=args.seed_offset)
    root = Path(args.out if args.out is not None else cfg.output_dir) / cfg.name
    summary = {"manifest": str(root / "manifest.json"), "runs": len(results), "failed": sum(r.status != "ok" for r in results)}
    if getattr(args, "format", "csv") == "json":
        emit_report(results, root / "report.json", "json")
    if mode == "escape":
        esc = escape_summary(cfg, results)
        (root / "escape_summary.json").write_text(json.dumps(esc, indent=2) + "\n")
        summary["escape"] = {k: {t: v.get("slope") for t, v in e.items() if isinstance(v, dict) and "slope" in v} for k, e in esc["by_k_star"].items()}
    if mode == "periodic_flatness":
        flat = flatness_summary(results)
        (root / "flatness_summary.json").write_text(json.dumps(flat, indent=2) + "\n")
        summary["flatness"] = flat["runs"]
    _print(summary)
    return _status(manifest)


def cmd_hermite(args) -> int:
    from . import hermite as hm
    from .models import Activation, Link

    if args.kind in ("identity", "z2exp") or (args.kind in ("sin", "tanh", "hermite") and args.link):
        fn = Link(args.kind, degree=args.degree)
        spec = fn.spectrum(args.scale, args.kmax)
    elif args.kind == "sin":
        spec = hm.sin_coeffs_closed_form(args.scale, args.kmax)
    else:
        spec = Activation(args.kind, alpha=args.alpha, degree=args.degree).spectrum(args.scale, args.kmax)
    try:
        k_star = hm.information_exponent(spec, args.tol)
    except hm.AllCoefficientsVanish:
        k_star = None
    _print(spec.to_json(k_star))
    return 0


def cmd_selfcheck(args) -> int:
    from .selfcheck import BUDGET_SECONDS, run_selfcheck

    results, elapsed = run_selfcheck(fast=args.fast)
    out = {"passed": all(r.passed for r in results), "elapsed_s": round(elapsed, 3), "checks": [r.to_json() for r in results]}
    if elapsed > BUDGET_SECONDS:
        out["warning"] = f"selfcheck took {elapsed:.0f}s, over the {BUDGET_SECONDS:.0f}s budget"
    _print(out)
    return 0 if out["passed"] else 1


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sgdlab", description="SGD alignment and escape-time lab")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)
    for name in ("trajectory", "sweep", "escape", "flatness"):
        p = sub.add_parser(name)
        p.add_argument("config", help="experiment config (JSON)")
        p.add_argument("--jobs", type=int, default=1)
        p.add_argument("--out", default=None, help="output directory (overrides output_dir)")
        p.add_argument("--seed-offset", type=int, default=0)
        p.add_argument("--format", choices=("csv", "json"), default="csv", help="also write a combined report.json")
    p = sub.add_parser("hermite-coeffs")
    p.add_argument("--kind", required=True, choices=SPECTRUM_KINDS)
    p.add_argument("--scale", type=float, default=1.0)
    p.add_argument("--kmax", type=int, default=40)
    p.add_argument("--degree", type=int, default=0, help="degree for the hermite kind")
    p.add_argument("--alpha", type=float, default=0.0, help="negative slope for leaky_relu")
    p.add_argument("--link", action="store_true", help="treat sin/tanh/hermite as a target link")
    p.add_argument("--tol", type=float, default=1e-7)
    p = sub.add_parser("selfcheck")
    p.add_argument("--fast", action="store_true", help="skip the slow Monte Carlo checks")
    return ap


_MODES = {"trajectory": "trajectory", "sweep": "sweep", "escape": "escape", "flatness": "periodic_flatness"}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        with _deterministic():
            if args.command in _MODES:
                return cmd_run(args, _MODES[args.command])
            if args.command == "hermite-coeffs":
                return cmd_hermite(args)
            return cmd_selfcheck(args)
    except (LabError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
