import json
import math
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from sgdlab import hermite as hm
from sgdlab.cli import main
from sgdlab.config import (
    ExperimentConfig,
    Grid,
    SgdSection,
    config_from_dict,
    load_config,
    parse_config_text,
)
from sgdlab.engine import TrajectoryRecord
from sgdlab.errors import InsufficientData, ParseError, ValidationError
from sgdlab.experiments import (
    REPORT_COLUMNS,
    RunParams,
    RunResult,
    emit_report,
    fit_escape,
    grid_points,
    read_report,
    resolve_eta,
    resolve_T,
    run_sweep,
)
from sgdlab.selfcheck import check_names, run_selfcheck

GOLDEN = Path(__file__).parent / "golden" / "report_header.csv"


def small_cfg(**over):
    raw = {
        "name": "small",
        "grid": {"d": [8], "m": [2], "seeds": [0]},
        "sgd": {"eta_scale": 0.05, "T": 300, "record_every": 100, "mc_samples": 500},
        "target": {"kind": "periodic", "norm_u": 1.5},
        "activation": {"kind": "tanh"},
    }
    raw.update(over)
    return config_from_dict(raw)


def test_minimal_config_defaults():
    cfg = parse_config_text('{"name": "x"}')
    assert cfg == ExperimentConfig(name="x")
    assert cfg.mode == "trajectory" and cfg.escape_threshold == 0.5
    assert cfg.grid == Grid() and cfg.sgd == SgdSection()
    assert cfg.distribution == "standard_gaussian" and cfg.output_dir == "results"


def test_validation_names_field():
    with pytest.raises(ValidationError) as exc:
        parse_config_text('{"name": "x", "escape_threshold": 1.5}')
    assert [p for p, _ in exc.value.errors] == ["escape_threshold"]
    with pytest.raises(ValidationError) as exc:
        config_from_dict({"name": "x", "grid": {"d": [8, 0]}, "bogus": 1, "sgd": {"eta": 1}})
    paths = {p for p, _ in exc.value.errors}
    assert {"bogus", "sgd.eta"} <= paths
    with pytest.raises(ValidationError) as exc:
        config_from_dict({"name": "x", "grid": {"d": [8, 0]}})
    assert [p for p, _ in exc.value.errors] == ["grid.d[1]"]
    with pytest.raises(ValidationError):
        config_from_dict({"name": "x", "grid": {"seeds": []}})


def test_parse_error_position():
    with pytest.raises(ParseError) as exc:
        parse_config_text('{\n  "name": "x",\n  "mode": }')
    assert (exc.value.line, exc.value.column) == (3, 11)


def test_round_trip_and_hash(tmp_path):
    cfg = small_cfg(escape_threshold=0.3)
    path = tmp_path / "c.json"
    path.write_text(cfg.canonical())
    back = load_config(path)
    assert back == cfg and back.sha256() == cfg.sha256()
    assert small_cfg(escape_threshold=0.4).sha256() != cfg.sha256()


def test_eta_and_T_rules():
    cfg = config_from_dict({"name": "x", "sgd": {"eta_rule": "info_exponent", "eta_scale": 2.0, "T": None, "T_factor": 5, "T_power": 2}})
    assert resolve_eta(cfg, 16, 3) == pytest.approx(2.0 / 64)
    assert resolve_T(cfg, 16) == 5 * 256
    cfg = config_from_dict({"name": "x", "sgd": {"eta_rule": "inv_d", "eta_scale": 1.0}})
    assert resolve_eta(cfg, 64, 1) == 1 / 64


def test_sweep_single_point(tmp_path):
    results, manifest = run_sweep(small_cfg(), out_dir=tmp_path)
    root = tmp_path / "small"
    assert sorted(p.name for p in root.iterdir()) == ["8_2_1_0.csv", "manifest.json"]
    m = json.loads((root / "manifest.json").read_text())
    assert m == manifest
    assert m["schema_version"] == 1 and m["config_sha256"] == small_cfg().sha256()
    (run,) = m["runs"]
    assert run["status"] == "ok" and run["params"] == {"d": 8, "m": 2, "p": 1, "k_star": 1, "seed": 0}
    assert isinstance(run["wall_ms"], int)
    rows = read_report(root / "8_2_1_0.csv")
    assert len(rows) == 4 and [r["t"] for r in rows] == [0, 100, 200, 300]


def test_sweep_rerun_byte_identical(tmp_path):
    cfg = small_cfg(grid={"d": [8], "m": [2], "seeds": [0, 1]})
    run_sweep(cfg, out_dir=tmp_path / "a")
    run_sweep(cfg, out_dir=tmp_path / "b", jobs=2)
    for name in ("8_2_1_0.csv", "8_2_1_1.csv"):
        assert (tmp_path / "a/small" / name).read_bytes() == (tmp_path / "b/small" / name).read_bytes()


def test_sweep_eight_seeds_distinct(tmp_path):
    d, m = 400, 2
    cfg = small_cfg(grid={"d": [d], "m": [m], "seeds": list(range(8))}, sgd={"eta_scale": 0.01, "T": 50, "record_every": 50})
    results, _ = run_sweep(cfg, write=False)
    finals = [r.record.final_W for r in results]
    assert len({w.tobytes() for w in finals}) == 8
    # each initial ||W||_F^2 is chi^2_{md} / d: mean m, sd sqrt(2 m / d)
    w0 = np.array([r.record.w_fro[0] for r in results]) ** 2
    assert np.all(np.abs(w0 - m) <= 4 * math.sqrt(2 * m / d))


def test_sweep_failure_recorded_not_raised(tmp_path):
    cfg = config_from_dict(
        {
            "name": "boom",
            "grid": {"d": [4], "seeds": [0]},
            "sgd": {"eta_scale": 100.0, "T": 5000, "record_every": 5000},
            "target": {"kind": "single_index", "link": "hermite", "degree": 5, "norm_u": 1.0},
            "activation": {"kind": "hermite", "degree": 5},
        }
    )
    with np.errstate(all="ignore"):
        results, manifest = run_sweep(cfg, out_dir=tmp_path)
    assert manifest["runs"][0]["status"].startswith("failed: NonFinite")
    assert manifest["runs"][0]["file"] is None


def test_k_star_grid_gets_subdirectories(tmp_path):
    cfg = small_cfg(grid={"d": [8], "k_star": [1, 2], "seeds": [0]}, target={"kind": "single_index", "link": "hermite", "norm_u": 1.0})
    run_sweep(cfg, out_dir=tmp_path)
    assert (tmp_path / "small/k1/8_1_1_0.csv").exists() and (tmp_path / "small/k2/8_1_1_0.csv").exists()


def test_report_golden_header_and_empty(tmp_path):
    assert len(REPORT_COLUMNS) == 17
    assert ",".join(REPORT_COLUMNS) + "\n" == GOLDEN.read_text()
    path = emit_report([], tmp_path / "empty.csv")
    assert path.read_text() == GOLDEN.read_text()


def _one_record_result():
    rec = TrajectoryRecord.from_columns(t=[0], rho=[0.25], w_fro=[1.0], s_min=[1.0], s_max=[1.0], loss_hat=[-0.1], loss_se=[0.01])
    return RunResult("demo", RunParams(8, 1, 1, 1, 3), rec, ceiling_thm1=0.9)


def test_report_one_row_and_formats_agree(tmp_path):
    res = _one_record_result()
    csv_path = emit_report([res], tmp_path / "r.csv")
    lines = csv_path.read_text().splitlines()
    assert len(lines) == 2 and len(lines[1].split(",")) == 17
    json_path = emit_report([res], tmp_path / "r.json", "json")
    a, b = read_report(csv_path), read_report(json_path)
    assert a == b
    assert a[0]["grad_pop_hat"] is None and a[0]["rho"] == 0.25 and a[0]["seed"] == 3
    with pytest.raises(ValueError):
        emit_report([res], tmp_path / "r.xml", "xml")


def test_report_csv_json_agree_on_real_run(tmp_path):
    results, _ = run_sweep(small_cfg(), write=False)
    a = read_report(emit_report(results, tmp_path / "r.csv"))
    b = read_report(emit_report(results, tmp_path / "r.json", "json"))
    assert a == b and len(a) == 4


class _Fake:
    def __init__(self, t):
        self.t = t

    def first_crossing(self, thr):
        return self.t


def test_fit_escape_exact_power_law():
    runs = [(d, s, _Fake(d**2)) for d in (16, 24, 32, 48, 64) for s in range(5)]
    res = fit_escape(runs, 0.5)
    assert abs(res.slope - 2.0) <= 1e-9
    assert res.residual <= 1e-9
    assert res.d_used == (16, 24, 32, 48, 64)


def test_fit_escape_censoring():
    runs = [(d, s, _Fake(None if s == 0 else d**3)) for d in (8, 16, 32) for s in range(6)]
    res = fit_escape(runs, 0.5)
    assert abs(res.slope - 3.0) <= 1e-9
    assert res.censored == {8: 1, 16: 1, 32: 1} and res.censored_fraction(8) == pytest.approx(1 / 6)
    js = res.to_json()
    assert js["per_d"][0]["times"][0] is None
    with pytest.raises(InsufficientData):
        fit_escape([(d, s, _Fake(None)) for d in (8, 16, 32) for s in range(6)], 0.5)
    with pytest.raises(InsufficientData):
        fit_escape([(d, s, _Fake(d)) for d in (8, 16) for s in range(6)], 0.5)


def test_grid_points_seed_offset():
    cfg = small_cfg(grid={"d": [8, 16], "m": [1], "seeds": [0, 1]})
    pts = grid_points(cfg, seed_offset=10)
    assert [(p.d, p.seed) for p in pts] == [(8, 10), (8, 11), (16, 10), (16, 11)]


def test_selfcheck_all_pass_in_order():
    names = check_names(fast=True)
    results, _ = run_selfcheck(fast=True)
    assert [r.name for r in results] == names
    assert all(r.passed for r in results), [r for r in results if not r.passed]
    assert len(check_names()) > len(names)


def test_selfcheck_detects_recurrence_mutation(monkeypatch):
    orig = hm.hermite_table

    def perturbed(kmax, x):
        T = orig(kmax, x).copy()
        T[2:] *= 1 + 1e-3
        return T

    monkeypatch.setattr(hm, "hermite_table", perturbed)
    results, _ = run_selfcheck(fast=True)
    orth = next(r for r in results if r.name == "hermite.orthonormality")
    assert not orth.passed and orth.measured > 1e-3


def _write_cfg(tmp_path, cfg):
    path = tmp_path / "cfg.json"
    path.write_text(cfg.canonical())
    return str(path)


def test_cli_trajectory(tmp_path, capsys):
    path = _write_cfg(tmp_path, small_cfg())
    assert main(["trajectory", path, "--out", str(tmp_path / "out"), "--format", "json"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["runs"] == 1 and out["failed"] == 0
    assert (tmp_path / "out/small/8_2_1_0.csv").exists() and (tmp_path / "out/small/report.json").exists()


def test_cli_trajectory_rejects_grid(tmp_path):
    path = _write_cfg(tmp_path, small_cfg(grid={"d": [8], "seeds": [0, 1]}))
    assert main(["trajectory", path, "--out", str(tmp_path)]) == 2


def test_cli_sweep_seed_offset(tmp_path, capsys):
    path = _write_cfg(tmp_path, small_cfg(grid={"d": [8], "m": [2], "seeds": [0, 1]}))
    assert main(["sweep", path, "--out", str(tmp_path), "--jobs", "2", "--seed-offset", "5"]) == 0
    assert sorted(p.name for p in (tmp_path / "small").glob("*.csv")) == ["8_2_1_5.csv", "8_2_1_6.csv"]


def test_cli_bad_config(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text('{"name": "x", "escape_threshold": 1.5}')
    assert main(["sweep", str(path)]) == 2
    assert "escape_threshold" in capsys.readouterr().err
    path.write_text("{nope")
    assert main(["sweep", str(path)]) == 2
    assert "line 1" in capsys.readouterr().err


def test_cli_escape_and_flatness(tmp_path, capsys):
    esc = config_from_dict(
        {
            "name": "esc",
            "grid": {"d": [8, 12, 16], "k_star": [1], "seeds": list(range(5))},
            "sgd": {"eta_rule": "info_exponent", "eta_scale": 1.0, "T": None, "T_factor": 5, "T_power": 2, "record_every": 64, "clip_G": 20.0, "stop_on_escape": True},
            "target": {"kind": "single_index", "link": "hermite", "norm_u": 1.0},
            "activation": {"kind": "hermite"},
        }
    )
    assert main(["escape", _write_cfg(tmp_path, esc), "--out", str(tmp_path)]) == 0
    summary = json.loads((tmp_path / "esc/escape_summary.json").read_text())
    assert math.isfinite(summary["by_k_star"]["1"]["0.5"]["slope"])
    assert "sample_budget_k1_eps_0.25" in summary["by_k_star"]["1"]
    capsys.readouterr()
    flat = small_cfg(name="flat")
    assert main(["flatness", _write_cfg(tmp_path, flat), "--out", str(tmp_path)]) == 0
    fs = json.loads((tmp_path / "flat/flatness_summary.json").read_text())
    assert fs["runs"][0]["n_records"] == 4


def test_cli_hermite_coeffs(capsys):
    assert main(["hermite-coeffs", "--kind", "sin", "--scale", "1", "--kmax", "3"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert np.allclose(out["coeffs"], [0, 0.6065306597, 0, -0.2476151049], atol=1e-9)
    assert out["k_star"] == 1
    assert main(["hermite-coeffs", "--kind", "hermite", "--degree", "3", "--kmax", "6"]) == 0
    assert json.loads(capsys.readouterr().out)["k_star"] == 3


def test_cli_selfcheck_exit_code(capsys, monkeypatch):
    assert main(["selfcheck", "--fast"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["passed"] and [c["name"] for c in out["checks"]] == check_names(fast=True)
    orig = hm.hermite_table
    monkeypatch.setattr(hm, "hermite_table", lambda k, x: orig(k, x) * 1.001)
    assert main(["selfcheck", "--fast"]) == 1


def test_cli_entry_point_subprocess():
    proc = subprocess.run(
        [sys.executable, "-m", "sgdlab.cli", "hermite-coeffs", "--kind", "relu", "--kmax", "2"],
        capture_output=True,
        text=True,
        env={"LAB_DETERMINISTIC": "1", "PATH": ""},
        check=True,
    )
    assert json.loads(proc.stdout)["coeffs"][0] == pytest.approx(1 / math.sqrt(2 * math.pi), abs=1e-12)
