"""Sweep orchestration, escape-time fitting and report emission."""
from __future__ import annotations

import csv
import io
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from itertools import product
from pathlib import Path
from typing import Iterable

import numpy as np

from . import __version__
from .config import ExperimentConfig, config_from_dict
from .engine import SGDConfig, TrajectoryRecord, run_trajectory, sample_budget_k1, theorem1_rho_ceiling
from .errors import InsufficientData
from .models import (
    Activation,
    InputDistribution,
    Link,
    TwoLayerPredictor,
    haar_frame,
    initialize_weights,
    periodic_target,
    product_target,
    random_unit,
    single_index_target,
)
from .rng import Stream, generator

SCHEMA_VERSION = 1
REPORT_COLUMNS = (
    "experiment",
    "d",
    "m",
    "p",
    "k_star",
    "seed",
    "t",
    "rho",
    "w_fro",
    "s_min",
    "s_max",
    "loss_hat",
    "loss_se",
    "grad_pop_hat",
    "kappa_hat",
    "psi_at_rho",
    "ceiling_thm1",
)
SENSITIVITY_THRESHOLDS = (0.3, 0.5, 0.7)


@dataclass(frozen=True)
class RunParams:
    d: int
    m: int
    p: int
    k_star: int
    seed: int

    def as_dict(self) -> dict:
        return {"d": self.d, "m": self.m, "p": self.p, "k_star": self.k_star, "seed": self.seed}


@dataclass
class RunResult:
    experiment: str
    params: RunParams
    record: TrajectoryRecord | None
    ceiling_thm1: float = math.nan
    status: str = "ok"
    wall_ms: int = 0
    file: str | None = None


def grid_points(cfg: ExperimentConfig, seed_offset: int = 0) -> list[RunParams]:
    g = cfg.grid
    return [RunParams(d, m, p, k, s + seed_offset) for d, m, p, k, s in product(g.d, g.m, g.p, g.k_star, g.seeds)]


def resolve_eta(cfg: ExperimentConfig, d: int, k_star: int) -> float:
    rule = cfg.sgd.eta_rule
    base = 1.0 if rule == "constant" else 1.0 / d if rule == "inv_d" else d ** (-k_star / 2)
    return cfg.sgd.eta_scale * base


def resolve_T(cfg: ExperimentConfig, d: int) -> int:
    s = cfg.sgd
    return s.T if s.T is not None else int(math.ceil(s.T_factor * d**s.T_power))


def build_run(cfg: ExperimentConfig, rp: RunParams):
    """(SGDConfig, predictor, target, input law) for one grid point.

    Degree 0 on a hermite link or activation means "use the grid's k_star".
    """
    d, m, p, k, seed = rp.d, rp.m, rp.p, rp.k_star, rp.seed
    tsec, asec = cfg.target, cfg.activation
    trng = generator(seed, Stream.TARGET)
    norm_u = math.sqrt(d) if tsec.norm_u == "sqrt_d" else float(tsec.norm_u)
    link = Link(tsec.link, degree=(tsec.degree or k) if tsec.link == "hermite" else 0)
    if tsec.kind == "periodic":
        target = periodic_target(norm_u * random_unit(d, trng))
    elif tsec.kind == "single_index":
        target = single_index_target(link, norm_u * random_unit(d, trng))
    else:
        target = product_target(link, haar_frame(p, d, trng))
    act = Activation(asec.kind, alpha=asec.alpha, degree=(asec.degree or k) if asec.kind == "hermite" else 0)
    pred = TwoLayerPredictor(act, initialize_weights(m, d, generator(seed, Stream.INIT)))
    escape = cfg.mode == "escape"
    s = cfg.sgd
    sgd = SGDConfig(
        eta=resolve_eta(cfg, d, k),
        T=resolve_T(cfg, d),
        seed=seed,
        record_every=s.record_every,
        mc_samples=s.mc_samples,
        grad_samples=s.grad_samples,
        kappa_samples=s.kappa_samples,
        kappa_G=s.kappa_G,
        clip_G=s.clip_G,
        dense_until=s.dense_until,
        escape_threshold=cfg.escape_threshold if escape else None,
        extra_thresholds=SENSITIVITY_THRESHOLDS if escape else (),
        stop_on_escape=s.stop_on_escape,
    )
    return sgd, pred, target, InputDistribution(cfg.distribution, d)


def thm1_ceiling(cfg: ExperimentConfig, rp: RunParams, T: int) -> float:
    th = cfg.thm1
    try:
        return theorem1_rho_ceiling(th.C, th.kappa_bar, rp.m, rp.p, max(T, 1), rp.d, th.delta)
    except ValueError:
        return math.nan


def run_one(cfg: ExperimentConfig, rp: RunParams) -> RunResult:
    """Run one grid point; failures become a status string, never an exception."""
    start = time.perf_counter()
    try:
        sgd, pred, target, dist = build_run(cfg, rp)
        rec = run_trajectory(sgd, pred, target, dist)
        res = RunResult(cfg.name, rp, rec, thm1_ceiling(cfg, rp, sgd.T))
    except Exception as exc:  # noqa: BLE001 - recorded in the manifest
        res = RunResult(cfg.name, rp, None, status=f"failed: {type(exc).__name__}: {exc}")
    res.wall_ms = int(round(1000 * (time.perf_counter() - start)))
    return res


def _run_job(args):
    cfg_dict, rp = args
    return run_one(config_from_dict(cfg_dict), rp)


def run_file_name(cfg: ExperimentConfig, rp: RunParams) -> str:
    stem = f"{rp.d}_{rp.m}_{rp.p}_{rp.seed}.csv"
    return f"k{rp.k_star}/{stem}" if len(cfg.grid.k_star) > 1 else stem


def run_sweep(cfg: ExperimentConfig, out_dir=None, jobs: int = 1, seed_offset: int = 0, write: bool = True) -> tuple[list[RunResult], dict]:
    """Run every grid point, then write one CSV per run and a manifest.

    Results come back in grid order whatever ``jobs`` is, and this process is
    the only writer of output files.
    """
    points = grid_points(cfg, seed_offset)
    if jobs > 1 and len(points) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(_run_job, [(cfg.to_dict(), rp) for rp in points]))
    else:
        results = [run_one(cfg, rp) for rp in points]
    root = Path(out_dir if out_dir is not None else cfg.output_dir) / cfg.name
    runs = []
    for res in results:
        if res.record is not None:
            res.file = run_file_name(cfg, res.params)
            if write:
                emit_report([res], root / res.file, "csv")
        runs.append({"params": res.params.as_dict(), "status": res.status, "wall_ms": res.wall_ms, "file": res.file})
    manifest = {
        "config_sha256": cfg.sha256(),
        "schema_version": SCHEMA_VERSION,
        "code_version": __version__,
        "seed_offset": seed_offset,
        "runs": runs,
    }
    if write:
        root.mkdir(parents=True, exist_ok=True)
        (root / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    return results, manifest


# ---------------------------------------------------------------- reports


def report_rows(results: Iterable[RunResult]) -> list[dict]:
    rows = []
    for res in results:
        if res.record is None:
            continue
        meta = {"experiment": res.experiment, **res.params.as_dict()}
        for r in res.record.rows():
            rows.append(
                {
                    **meta,
                    "t": r["t"],
                    "rho": r["rho"],
                    "w_fro": r["w_fro"],
                    "s_min": r["s_min"],
                    "s_max": r["s_max"],
                    "loss_hat": r["loss_hat"],
                    "loss_se": r["loss_se"],
                    "grad_pop_hat": r["grad_pop_hat"],
                    "kappa_hat": r["kappa_hat"],
                    "psi_at_rho": r["psi_at_rho"],
                    "ceiling_thm1": res.ceiling_thm1,
                }
            )
    return rows


def _csv_cell(v) -> str:
    if isinstance(v, float):
        return "" if not math.isfinite(v) else repr(v)
    return str(v)


def _json_cell(v):
    if isinstance(v, float) and not math.isfinite(v):
        return None
    return v


def emit_report(results: Iterable[RunResult], path, fmt: str = "csv") -> Path:
    """Long-format table with the frozen 17 columns; missing values are empty (csv) or null (json)."""
    rows = report_rows(results)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for row in rows:
            w.writerow([_csv_cell(row[c]) for c in REPORT_COLUMNS])
        path.write_text(buf.getvalue())
    elif fmt == "json":
        data = [{c: _json_cell(row[c]) for c in REPORT_COLUMNS} for row in rows]
        path.write_text(json.dumps(data, indent=1) + "\n")
    else:
        raise ValueError(f"unknown format {fmt!r}")
    return path


def read_report(path) -> list[dict]:
    """Load a csv or json report back into row dicts, missing values as None."""
    path = Path(path)
    if path.suffix == ".json":
        return json.loads(path.read_text())
    ints = {"d", "m", "p", "k_star", "seed", "t"}
    out = []
    with path.open() as fh:
        for row in csv.DictReader(fh):
            rec = {}
            for c in REPORT_COLUMNS:
                v = row[c]
                if c == "experiment":
                    rec[c] = v
                elif v == "":
                    rec[c] = None
                else:
                    rec[c] = int(v) if c in ints else float(v)
            out.append(rec)
    return out


# ---------------------------------------------------------------- escape


@dataclass
class EscapeResult:
    threshold: float
    times: dict = field(default_factory=dict)
    medians: dict = field(default_factory=dict)
    censored: dict = field(default_factory=dict)
    runs: dict = field(default_factory=dict)
    d_used: tuple = ()
    slope: float = math.nan
    intercept: float = math.nan
    residual: float = math.nan

    def censored_fraction(self, d: int) -> float:
        return self.censored.get(d, 0) / self.runs[d] if self.runs.get(d) else math.nan

    def to_json(self) -> dict:
        return {
            "threshold": self.threshold,
            "slope": self.slope,
            "intercept": self.intercept,
            "residual": self.residual,
            "d_used": list(self.d_used),
            "per_d": [
                {
                    "d": d,
                    "median": self.medians.get(d),
                    "censored": self.censored.get(d, 0),
                    "runs": self.runs[d],
                    "times": [self.times[(d, s)] for s in sorted(s for dd, s in self.times if dd == d)],
                }
                for d in sorted(self.runs)
            ],
        }


def fit_escape(runs: Iterable, threshold: float, min_seeds: int = 5, min_d: int = 3) -> EscapeResult:
    """Fit log(median escape time) against log(d).

    ``runs`` yields (d, seed, record) triples. A run that never reaches the
    threshold is censored: excluded from medians and the fit, counted per d.
    Only d values with at least ``min_seeds`` uncensored runs enter the fit.
    """
    res = EscapeResult(threshold=threshold)
    by_d: dict[int, list[int]] = {}
    for d, seed, rec in runs:
        t = rec.first_crossing(threshold)
        res.times[(d, seed)] = t
        res.runs[d] = res.runs.get(d, 0) + 1
        if t is None:
            res.censored[d] = res.censored.get(d, 0) + 1
        else:
            by_d.setdefault(d, []).append(t)
    for d, ts in by_d.items():
        res.medians[d] = float(np.median(ts))
    used = sorted(d for d, ts in by_d.items() if len(ts) >= min_seeds)
    res.d_used = tuple(used)
    if len(used) < min_d:
        raise InsufficientData(f"need {min_d} d values with >= {min_seeds} uncensored runs, have {len(used)}")
    x = np.log(np.array(used, dtype=np.float64))
    y = np.log(np.array([max(res.medians[d], 1.0) for d in used]))
    slope, intercept = np.polyfit(x, y, 1)
    res.slope, res.intercept = float(slope), float(intercept)
    res.residual = float(np.sqrt(np.mean((y - (slope * x + intercept)) ** 2)))
    return res


def escape_summary(cfg: ExperimentConfig, results: list[RunResult]) -> dict:
    """Fit per k_star at the configured threshold plus the sensitivity thresholds."""
    out = {"config_sha256": cfg.sha256(), "threshold": cfg.escape_threshold, "by_k_star": {}}
    for k in cfg.grid.k_star:
        runs = [(r.params.d, r.params.seed, r.record) for r in results if r.params.k_star == k and r.record is not None]
        entry = {}
        for thr in sorted({cfg.escape_threshold, *SENSITIVITY_THRESHOLDS}):
            try:
                entry[str(thr)] = fit_escape(runs, thr).to_json()
            except InsufficientData as exc:
                entry[str(thr)] = {"error": str(exc)}
        if k == 1:
            entry["sample_budget_k1_eps_0.25"] = {str(d): sample_budget_k1(d, 1, 0.25) for d in cfg.grid.d}
        out["by_k_star"][str(k)] = entry
    return out


# ---------------------------------------------------------------- flatness


def flatness_summary(results: list[RunResult], C: float = 5.0) -> dict:
    """Alignment against C sqrt(m log T / d) and CRN loss-change z-scores per run."""
    runs = []
    for res in results:
        rec = res.record
        if rec is None:
            runs.append({"params": res.params.as_dict(), "status": res.status})
            continue
        rp = res.params
        T = max(int(rec.t[-1]), 2)
        bound = C * math.sqrt(rp.m * math.log(T) / rp.d)
        delta, se = rec.loss_delta[1:], rec.loss_delta_se[1:]
        with np.errstate(divide="ignore", invalid="ignore"):
            z = np.where(se > 0, np.abs(delta) / se, np.where(delta == 0, 0.0, np.inf))
        runs.append(
            {
                "params": rp.as_dict(),
                "max_rho": float(rec.rho.max()),
                "rho_bound": bound,
                "rho_ok": bool(rec.rho.max() <= bound),
                "max_abs_z": float(z.max()) if z.size else 0.0,
                "n_over_3se": int(np.sum(z > 3)),
                "n_records": int(len(rec)),
            }
        )
    return {"C": C, "runs": runs}
