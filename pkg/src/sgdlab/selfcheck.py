"""Registry of numerical self-checks with machine-readable results."""
from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np

from . import hermite as hm
from . import linalg
from .engine import SGDConfig, estimate_kappa, estimate_population_gradient_norm, run_trajectory
from .experiments import REPORT_COLUMNS, fit_escape
from .engine import TrajectoryRecord
from .models import (
    Activation,
    InputDistribution,
    Link,
    TwoLayerPredictor,
    certify_activation,
    initialize_weights,
    periodic_target,
    random_unit,
    single_index_target,
)
from .rng import Stream, generator

BUDGET_SECONDS = 600.0


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    measured: float
    tolerance: float
    detail: str = ""

    def to_json(self) -> dict:
        return asdict(self)


_REGISTRY: list[tuple[str, Callable[[], CheckResult], bool]] = []


def check(name: str, slow: bool = False):
    def deco(fn):
        _REGISTRY.append((name, fn, slow))
        return fn

    return deco


def _le(name, measured, tol, detail=""):
    return CheckResult(name, bool(measured <= tol), float(measured), float(tol), detail)


@check("linalg.svd_reconstruction")
def _svd_recon():
    A = generator(7, Stream.AUX).uniform(-1e3, 1e3, (4, 6))
    r = linalg.svd(A)
    err = np.linalg.norm(A - r.reconstruct()) / np.linalg.norm(A)
    return _le("linalg.svd_reconstruction", err, 1e-8)


@check("linalg.projector_identities")
def _proj():
    A = generator(3, Stream.AUX).standard_normal((2, 5))
    P = linalg.row_space_projector(A)
    err = max(np.abs(P @ P - P).max(), np.abs(P - P.T).max(), abs(np.trace(P) - 2))
    return _le("linalg.projector_identities", err, 1e-10)


@check("linalg.alignment_oracle")
def _align():
    g = generator(11, Stream.AUX)
    W, U = g.standard_normal((3, 40)), g.standard_normal((2, 40))
    ref = np.linalg.svd(linalg.row_space_projector(W) @ linalg.row_space_projector(U), compute_uv=False)[0]
    return _le("linalg.alignment_oracle", abs(linalg.alignment(W, U) - ref), 1e-8)


@check("hermite.orthonormality")
def _orth():
    x, w = hm.gauss_hermite(hm.default_nodes(12))
    T = hm.hermite_table(12, x)
    err = np.abs((T * w) @ T.T - np.eye(13)).max()
    return _le("hermite.orthonormality", err, 1e-8)


@check("hermite.sin_closed_form")
def _sin():
    err = 0.0
    for s in (0.5, 1.0, 2.0, 3.0):
        a = hm.sin_coeffs_closed_form(s, 15).coeffs
        b = hm.coeffs_by_quadrature(np.sin, s, 15).coeffs
        err = max(err, np.abs(a - b).max())
    return _le("hermite.sin_closed_form", err, 1e-6)


@check("hermite.sin_parseval")
def _parseval():
    err = max(abs(hm.sin_coeffs_closed_form(s).energy() - hm.sin_l2_norm_sq(s)) for s in (0.5, 1.0, 2.0, 3.0))
    return _le("hermite.sin_parseval", err, 1e-8)


@check("hermite.derivative_shift")
def _shift():
    err = 0.0
    for kind in ("tanh", "softplus", "sin"):
        act = Activation(kind)
        for s in (0.5, 1.0, 2.0):
            d = hm.derivative_shift(hm.coeffs_by_quadrature(act, s, 21))
            ref = s * hm.coeffs_by_quadrature(act.deriv, s, 20).coeffs
            err = max(err, np.abs(d - ref).max())
    return _le("hermite.derivative_shift", err, 1e-5)


@check("hermite.relu_b0")
def _relu():
    b0 = Activation("relu").spectrum(1.0, 4).coeffs[0]
    return _le("hermite.relu_b0", abs(b0 - 1 / math.sqrt(2 * math.pi)), 1e-10)


@check("hermite.information_exponent")
def _iexp():
    got = [hm.information_exponent(Link("hermite", k).spectrum(1.0, 8)) for k in (1, 2, 3, 4)]
    got += [hm.information_exponent(Link("z2exp").spectrum(1.0, 8)), hm.information_exponent(hm.sin_coeffs_closed_form(1.0))]
    want = [1, 2, 3, 4, 4, 1]
    bad = sum(g != w for g, w in zip(got, want))
    return CheckResult("hermite.information_exponent", bad == 0, bad, 0, f"got {got}")


@check("models.certify_activation")
def _cert():
    relu = certify_activation(Activation("relu"))
    soft = certify_activation(Activation("softplus"))
    sin = certify_activation(Activation("sin"))
    ok = (relu.G1, relu.K_sigma) == (1.0, 2.0) and soft.K_sigma <= 8 and sin.K_sigma <= 2 * 1.02
    err = max(abs(soft.K_sigma - 4) / 4, abs(sin.K_sigma - 2) / 2)
    return CheckResult("models.certify_activation", bool(ok and err <= 0.02), err, 0.02)


@check("models.random_init_alignment")
def _init_align():
    rhos = []
    for i in range(200):
        W = initialize_weights(2, 200, generator(i, Stream.INIT))
        u = random_unit(200, generator(i, Stream.TARGET))
        rhos.append(linalg.alignment(W, u[None, :]))
    frac = float(np.mean(np.array(rhos) <= 0.35))
    return CheckResult("models.random_init_alignment", frac >= 0.95, frac, 0.95)


def _linear_run(scale: float, eta: float, seed: int = 0):
    d = 8
    u = random_unit(d, generator(seed, Stream.TARGET)) / scale
    target = single_index_target(Link("identity"), u)
    pred = TwoLayerPredictor(Activation("leaky_relu", alpha=1.0), initialize_weights(1, d, generator(seed, Stream.INIT)))
    cfg = SGDConfig(eta=eta, T=500, seed=seed, record_every=50)
    return run_trajectory(cfg, pred, target, InputDistribution("standard_gaussian", d, scale))


@check("engine.determinism")
def _det():
    a, b = _linear_run(1.0, 0.01), _linear_run(1.0, 0.01)
    same = np.array_equal(a.final_W, b.final_W) and np.array_equal(a.rho, b.rho)
    return CheckResult("engine.determinism", bool(same), 0.0 if same else 1.0, 0.0)


@check("engine.scale_covariance")
def _scale():
    a, b = _linear_run(1.0, 0.01), _linear_run(2.0, 0.01 / 2)
    err = float(np.abs(a.final_W - b.final_W).max())
    return _le("engine.scale_covariance", err, 1e-12)


@check("experiments.fit_escape_power_law")
def _fit():
    runs = []
    for d in (16, 24, 32):
        for s in range(5):
            runs.append((d, s, TrajectoryRecord.from_columns(t=[0, d * d], rho=[0.0, 0.9])))
    r = fit_escape(runs, 0.5)
    return _le("experiments.fit_escape_power_law", abs(r.slope - 2.0), 1e-9)


@check("experiments.report_columns")
def _cols():
    return CheckResult("experiments.report_columns", len(REPORT_COLUMNS) == 17, len(REPORT_COLUMNS), 17)


@check("engine.kappa_bound", slow=True)
def _kappa():
    d = 64
    target = periodic_target(math.sqrt(d) * random_unit(d, generator(0, Stream.TARGET)))
    pred = TwoLayerPredictor(Activation("relu"), initialize_weights(1, d, generator(0, Stream.INIT)))
    dist = InputDistribution("standard_gaussian", d)
    est = estimate_kappa(pred, target, dist, 50_000, 1.0, generator(0, Stream.KAPPA))
    bound = 8.0 * (1 + 3 * est.rel_se)
    return _le("engine.kappa_bound", est.kappa_hat, bound)


@check("engine.periodic_gradient_bound", slow=True)
def _grad():
    d, m = 16, 2
    target = periodic_target(math.sqrt(d) * random_unit(d, generator(1, Stream.TARGET)))
    pred = TwoLayerPredictor(Activation("relu"), initialize_weights(m, d, generator(1, Stream.INIT)))
    dist = InputDistribution("standard_gaussian", d)
    norm, se = estimate_population_gradient_norm(pred, target, dist, 200_000, generator(1, Stream.GRAD))
    rho = linalg.alignment(pred.W, target.U)
    psi = hm.psi_periodic(hm.BoundConstants(G1=1.0), target.norm_u, m, rho)
    return _le("engine.periodic_gradient_bound", norm - 3 * se, psi)


def run_selfcheck(fast: bool = False) -> tuple[list[CheckResult], float]:
    """Run registered checks in registration order; failures are data, not exceptions."""
    out = []
    start = time.perf_counter()
    for name, fn, slow in _REGISTRY:
        if fast and slow:
            continue
        try:
            out.append(fn())
        except Exception as exc:  # noqa: BLE001 - a crashing check is a failed check
            out.append(CheckResult(name, False, math.nan, math.nan, f"{type(exc).__name__}: {exc}"))
    return out, time.perf_counter() - start


def check_names(fast: bool = False) -> list[str]:
    return [name for name, _, slow in _REGISTRY if not (fast and slow)]
