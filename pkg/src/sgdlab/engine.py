"""Vanilla per-sample SGD on the correlation loss, with instrumentation.

The loss is l(theta; x) = -f_theta(x) f*(x), so one step is
``W <- W + eta * f*(x) * grad_{Wx} f(x) x^T``.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np

from . import hermite as hm
from .errors import DegenerateGradient, DimensionMismatch, NonFinite
from .linalg import alignment, alignment_vectors
from .models import (
    InputDistribution,
    PredictorSpec,
    TargetSpec,
    TwoLayerPredictor,
    bound_constants,
    eval_target,
    pre_grad_bound,
)
from .rng import INPUT_BLOCK, Stream, generator

MC_CHUNK = 65536
JACKKNIFE_GROUPS = 20


@dataclass(frozen=True)
class SGDConfig:
    """Run parameters.

    ``mc_samples`` sizes the fixed evaluation set used for loss_hat and the
    common-random-number loss change; ``grad_samples`` and ``kappa_samples``
    size fresh per-record estimates. A zero size disables that estimate.
    """

    eta: float
    T: int
    seed: int = 0
    record_every: int = 1
    mc_samples: int = 0
    grad_samples: int = 0
    kappa_samples: int = 0
    kappa_G: float | None = None
    clip_G: float | None = None
    dense_until: int = 0
    escape_threshold: float | None = None
    extra_thresholds: tuple[float, ...] = ()
    stop_on_escape: bool = False

    def __post_init__(self):
        if not (self.eta >= 0 and math.isfinite(self.eta)):
            raise ValueError("eta must be finite and non-negative")
        if self.T < 0:
            raise ValueError("T must be non-negative")
        if self.record_every < 1:
            raise ValueError("record_every must be at least 1")
        for name in ("mc_samples", "grad_samples", "kappa_samples"):
            n = getattr(self, name)
            if n < 0 or n == 1:
                raise ValueError(f"{name} must be 0 or at least 2")
        if self.clip_G is not None and not self.clip_G > 0:
            raise ValueError("clip_G must be positive")
        for thr in (self.escape_threshold, *self.extra_thresholds):
            if thr is not None and not 0 < thr < 1:
                raise ValueError("escape thresholds must lie in (0, 1)")
        if self.extra_thresholds and self.escape_threshold is None:
            raise ValueError("extra_thresholds need escape_threshold")

    @property
    def thresholds(self) -> tuple[float, ...]:
        if self.escape_threshold is None:
            return ()
        return tuple(sorted({self.escape_threshold, *self.extra_thresholds}))


_COLUMNS = (
    "t",
    "rho",
    "w_fro",
    "s_min",
    "s_max",
    "loss_hat",
    "loss_se",
    "loss_delta",
    "loss_delta_se",
    "grad_pop_hat",
    "grad_pop_se",
    "kappa_hat",
    "kappa_rel_se",
    "min_eig_running",
    "psi_at_rho",
)


@dataclass
class TrajectoryRecord:
    """Column-oriented trace of one run; NaN marks estimates that were not requested."""

    t: np.ndarray
    rho: np.ndarray
    w_fro: np.ndarray
    s_min: np.ndarray
    s_max: np.ndarray
    loss_hat: np.ndarray
    loss_se: np.ndarray
    loss_delta: np.ndarray
    loss_delta_se: np.ndarray
    grad_pop_hat: np.ndarray
    grad_pop_se: np.ndarray
    kappa_hat: np.ndarray
    kappa_rel_se: np.ndarray
    min_eig_running: np.ndarray
    psi_at_rho: np.ndarray
    escape_step: int | None = None
    crossings: dict = field(default_factory=dict)
    steps_run: int = 0
    max_grad_coeff: float = 0.0
    kappa_G: float = math.nan
    final_W: np.ndarray | None = field(default=None, repr=False)

    @classmethod
    def from_columns(cls, **cols) -> "TrajectoryRecord":
        """Build from a subset of columns; missing ones are filled with NaN."""
        t = np.asarray(cols.pop("t"), dtype=np.int64)
        data = {"t": t}
        for name in _COLUMNS[1:]:
            data[name] = np.asarray(cols.pop(name, np.full(t.size, np.nan)), dtype=np.float64)
        return cls(**data, **cols)

    def __len__(self) -> int:
        return int(self.t.size)

    def rows(self) -> list[dict]:
        return [{name: getattr(self, name)[i].item() for name in _COLUMNS} for i in range(len(self))]

    def first_crossing(self, threshold: float) -> int | None:
        """Exact per-step crossing if tracked, else the first recorded one."""
        if threshold in self.crossings:
            return self.crossings[threshold]
        hit = np.nonzero(self.rho >= threshold)[0]
        return int(self.t[hit[0]]) if hit.size else None


@dataclass(frozen=True)
class KappaEstimate:
    G_used: float
    min_eig: float
    min_eig_running: float
    kappa_hat: float
    rel_se: float


def _pre_grad_row(pred: PredictorSpec, x: np.ndarray) -> np.ndarray:
    if isinstance(pred, TwoLayerPredictor):
        return pred.activation.deriv(pred.W @ x)
    return pred.pre_grad(x[None, :])[0]


def _check_shapes(pred: PredictorSpec, target: TargetSpec, d: int | None = None) -> None:
    if pred.d != target.d or (d is not None and d != pred.d):
        raise DimensionMismatch(f"dimension mismatch: predictor {pred.d}, target {target.d}, inputs {d}")


def sgd_step(pred: PredictorSpec, target: TargetSpec, x: np.ndarray, eta: float, clip_G: float | None = None) -> np.ndarray:
    """One step on sample x; updates ``pred.W`` in place and returns it."""
    x = np.asarray(x, dtype=np.float64)
    _check_shapes(pred, target, x.shape[-1])
    a = eval_target(target, x) * _pre_grad_row(pred, x)
    if clip_G is not None:
        n = math.sqrt(float(a @ a))
        if n > clip_G:
            a = a * (clip_G / n)
    W = pred.W + np.outer(eta * a, x)
    if not np.all(np.isfinite(W)):
        raise NonFinite("SGD update produced NaN/Inf")
    pred.W = W
    return W


def record_steps(T: int, record_every: int, dense_until: int = 0) -> np.ndarray:
    """Steps 0, r, 2r, ..., T, plus every step up to ``dense_until``."""
    steps = set(range(0, T + 1, record_every))
    steps.add(T)
    steps.update(range(0, min(dense_until, T) + 1))
    return np.array(sorted(steps), dtype=np.int64)


def _chunks(n: int, size: int = MC_CHUNK):
    start = 0
    while start < n:
        stop = min(n, start + size)
        yield start, stop
        start = stop


def estimate_population_loss(pred, target, dist: InputDistribution, n: int, rng: np.random.Generator) -> tuple[float, float]:
    """MC mean of -f(x) f*(x) with its standard error."""
    if n < 2:
        raise ValueError("need n >= 2")
    _check_shapes(pred, target, dist.d)
    s = s2 = 0.0
    for a, b in _chunks(n):
        X = dist.sample(rng, b - a)
        ell = -pred.value(X) * eval_target(target, X)
        s += float(ell.sum())
        s2 += float(ell @ ell)
    mean = s / n
    var = max(0.0, (s2 - n * mean * mean) / (n - 1))
    return mean, math.sqrt(var / n)


def _loss_gradient_parts(pred, target, X):
    """Per-sample g = grad_{Wx} l = -f*(x) grad_{Wx} f(x), shape n x m."""
    return -eval_target(target, X)[:, None] * pred.pre_grad(X)


def estimate_population_gradient_norm(pred, target, dist: InputDistribution, n: int, rng: np.random.Generator) -> tuple[float, float]:
    """Estimate ||E[grad_W l]||_F.

    The plug-in norm of the sample mean is biased upward by tr(Cov)/n, which
    swamps exponentially small gradients. This uses the unbiased U-statistic
    (||sum_i G_i||^2 - sum_i ||G_i||^2) / (n (n-1)) for the squared norm and a
    grouped jackknife for its standard deviation sd. The norm-scale error is
    ``se = (sqrt(sq+) - sqrt(max(0, sq - 3 sd))) / 3``, so ``norm - 3 se`` is a
    3-sigma lower band even when the true norm is near 0. Far from 0 it reduces
    to the delta-method value sd / (2 norm).
    """
    if n < 2:
        raise ValueError("need n >= 2")
    _check_shapes(pred, target, dist.d)
    groups = min(JACKKNIFE_GROUPS, n)
    bounds = np.linspace(0, n, groups + 1).astype(int)
    S_g, Q_g, n_g = [], [], []
    for gi in range(groups):
        S = np.zeros((pred.m, pred.d))
        Q = 0.0
        for a, b in _chunks(int(bounds[gi + 1] - bounds[gi])):
            X = dist.sample(rng, b - a)
            A = _loss_gradient_parts(pred, target, X)
            S += A.T @ X
            Q += float(np.sum(np.sum(A * A, axis=1) * np.sum(X * X, axis=1)))
        S_g.append(S)
        Q_g.append(Q)
        n_g.append(int(bounds[gi + 1] - bounds[gi]))
    S_tot = np.sum(S_g, axis=0)
    Q_tot = float(np.sum(Q_g))

    def ustat(S, Q, k):
        return (float(np.sum(S * S)) - Q) / (k * (k - 1))

    sq = ustat(S_tot, Q_tot, n)
    if groups >= 2 and min(n - k for k in n_g) >= 2:
        loo = np.array([ustat(S_tot - S_g[i], Q_tot - Q_g[i], n - n_g[i]) for i in range(groups)])
        var = (groups - 1) / groups * float(np.sum((loo - loo.mean()) ** 2))
    else:
        var = 0.0
    sq_pos = max(0.0, sq)
    norm = math.sqrt(sq_pos)
    se = (norm - math.sqrt(max(0.0, sq - 3.0 * math.sqrt(var)))) / 3.0
    return norm, se


def estimate_kappa(
    pred,
    target,
    dist: InputDistribution,
    n: int,
    G: float,
    rng: np.random.Generator,
    running_min: float = math.inf,
) -> KappaEstimate:
    """kappa = G^2 / lambda_min(E[g g^T]) with g = grad_{Wx} l in R^m.

    The infimum over unit v of E[(v.g)^2] is exactly the smallest eigenvalue
    of the m x m second-moment matrix.
    """
    if n < 100 * pred.m:
        raise ValueError(f"need n >= 100 m = {100 * pred.m}")
    _check_shapes(pred, target, dist.d)
    M = np.zeros((pred.m, pred.m))
    parts = []
    for a, b in _chunks(n):
        g = _loss_gradient_parts(pred, target, dist.sample(rng, b - a))
        M += g.T @ g
        parts.append(g)
    M /= n
    vals, vecs = np.linalg.eigh(M)
    lam = float(vals[0])
    trace = float(np.trace(M))
    if lam <= 1e-12 * trace / pred.m:
        raise DegenerateGradient(f"lambda_min {lam:.3g} vs trace {trace:.3g}")
    proj = np.concatenate([(g @ vecs[:, 0]) ** 2 for g in parts])
    rel_se = float(proj.std(ddof=1) / math.sqrt(n)) / lam
    running = min(running_min, lam)
    return KappaEstimate(G_used=G, min_eig=lam, min_eig_running=running, kappa_hat=G**2 / running, rel_se=rel_se)


def default_kappa_G(pred: PredictorSpec, target: TargetSpec, clip_G: float | None = None) -> float:
    """Tight per-sample bound on ||grad_{Wx} l||: the clip level if set, else sqrt(m) G1 G2."""
    if clip_G is not None:
        return clip_G
    return pre_grad_bound(pred) * target.G2


def psi_value(pred: PredictorSpec, target: TargetSpec, rho: float) -> float:
    """The population-gradient bound at alignment rho, NaN when G1 is unbounded."""
    consts = bound_constants(pred, target)
    if not math.isfinite(consts.G1):
        return math.nan
    if target.kind == "periodic":
        return hm.psi_periodic(consts, target.norm_u, pred.m, rho)
    return hm.psi_info_exponent(consts, pred.m, rho)


class _EvalSet:
    """Fixed evaluation sample shared across records (common random numbers)."""

    def __init__(self, target, dist, n: int, seed: int):
        self.n = n
        self.chunks = []
        for c, (a, b) in enumerate(_chunks(n)):
            X = dist.sample(generator(seed, Stream.EVAL, c), b - a)
            self.chunks.append((X, eval_target(target, X)))
        self.base = None

    def losses(self, pred):
        return [-pred.value(X) * F for X, F in self.chunks]

    def estimate(self, pred) -> tuple[float, float, float, float]:
        ells = self.losses(pred)
        if self.base is None:
            self.base = ells
        n = self.n
        out = []
        for vals in (ells, [e - b for e, b in zip(ells, self.base)]):
            s = sum(float(v.sum()) for v in vals)
            s2 = sum(float(v @ v) for v in vals)
            mean = s / n
            var = max(0.0, (s2 - n * mean * mean) / (n - 1))
            out += [mean, math.sqrt(var / n)]
        return tuple(out)


def run_trajectory(cfg: SGDConfig, pred: PredictorSpec, target: TargetSpec, dist: InputDistribution) -> TrajectoryRecord:
    """Run T steps of SGD from ``pred.W`` and record the schedule.

    Inputs come from the INPUTS stream in blocks of 4096, so step t always
    sees the same sample for a given seed. ``pred`` is not modified; the last
    state is returned as ``final_W``. With ``escape_threshold`` set the
    alignment is checked after every step; ``stop_on_escape`` ends the run at
    the first crossing with a final record there.
    """
    _check_shapes(pred, target, dist.d)
    pred = dataclasses.replace(pred, W=pred.W.copy())
    m, d = pred.m, pred.d
    U = target.U
    fast_align = m == 1 and target.p == 1
    u = U[0]

    steps = record_steps(cfg.T, cfg.record_every, cfg.dense_until)
    cols = {name: [] for name in _COLUMNS}
    eval_set = _EvalSet(target, dist, cfg.mc_samples, cfg.seed) if cfg.mc_samples else None
    kappa_G = cfg.kappa_G if cfg.kappa_G is not None else default_kappa_G(pred, target, cfg.clip_G)
    state = {"min_eig": math.inf}

    def record(t: int) -> None:
        W = pred.W
        sv = np.linalg.svd(W, compute_uv=False)
        rho = alignment_vectors(W[0], u) if fast_align else alignment(W, U)
        cols["t"].append(t)
        cols["rho"].append(rho)
        cols["w_fro"].append(float(np.linalg.norm(W)))
        cols["s_min"].append(float(sv[-1]))
        cols["s_max"].append(float(sv[0]))
        if eval_set is not None:
            lh, ls, dh, ds = eval_set.estimate(pred)
        else:
            lh = ls = dh = ds = math.nan
        cols["loss_hat"].append(lh)
        cols["loss_se"].append(ls)
        cols["loss_delta"].append(dh)
        cols["loss_delta_se"].append(ds)
        if cfg.grad_samples:
            gh, gs = estimate_population_gradient_norm(pred, target, dist, cfg.grad_samples, generator(cfg.seed, Stream.GRAD, t))
        else:
            gh = gs = math.nan
        cols["grad_pop_hat"].append(gh)
        cols["grad_pop_se"].append(gs)
        kh = kse = math.nan
        if cfg.kappa_samples and math.isfinite(kappa_G):
            try:
                est = estimate_kappa(pred, target, dist, cfg.kappa_samples, kappa_G, generator(cfg.seed, Stream.KAPPA, t), state["min_eig"])
                state["min_eig"] = est.min_eig_running
                kh, kse = est.kappa_hat, est.rel_se
            except DegenerateGradient:
                state["min_eig"] = 0.0
        cols["kappa_hat"].append(kh)
        cols["kappa_rel_se"].append(kse)
        cols["min_eig_running"].append(state["min_eig"] if cfg.kappa_samples else math.nan)
        cols["psi_at_rho"].append(psi_value(pred, target, rho))

    rec_iter = iter(steps.tolist())
    next_rec = next(rec_iter)
    record(0)
    next_rec = next(rec_iter, None)

    eta, clip = cfg.eta, cfg.clip_G
    pending = list(cfg.thresholds)
    crossings: dict[float, int | None] = {thr: None for thr in pending}

    def check_escape(W, t) -> bool:
        r = alignment_vectors(W[0], u) if fast_align else alignment(W, U)
        while pending and r >= pending[0]:
            crossings[pending.pop(0)] = t
        return not pending

    max_coeff = 0.0
    t = 0
    stopped = bool(pending) and check_escape(pred.W, 0) and cfg.stop_on_escape
    n_blocks = -(-cfg.T // INPUT_BLOCK)
    for blk in range(n_blocks):
        if stopped:
            break
        count = min(INPUT_BLOCK, cfg.T - blk * INPUT_BLOCK)
        X = dist.sample(generator(cfg.seed, Stream.INPUTS, blk), INPUT_BLOCK)[:count]
        F = eval_target(target, X)
        for i in range(count):
            x = X[i]
            t += 1
            a = F[i] * _pre_grad_row(pred, x)
            nrm = math.sqrt(float(a @ a))
            if not math.isfinite(nrm):
                raise NonFinite(f"non-finite gradient at step {t}", step=t)
            if nrm > max_coeff:
                max_coeff = nrm
            if clip is not None and nrm > clip:
                a = a * (clip / nrm)
            W = pred.W
            W += np.outer(eta * a, x)
            if not math.isfinite(float(W.sum())):
                raise NonFinite(f"SGD update produced NaN/Inf at step {t}", step=t)
            if pending and check_escape(W, t) and cfg.stop_on_escape:
                record(t)
                stopped = True
                break
            if t == next_rec:
                record(t)
                next_rec = next(rec_iter, None)

    arrays = {name: np.asarray(v, dtype=np.int64 if name == "t" else np.float64) for name, v in cols.items()}
    return TrajectoryRecord(
        **arrays,
        escape_step=crossings.get(cfg.escape_threshold),
        crossings=crossings,
        steps_run=t,
        max_grad_coeff=max_coeff,
        kappa_G=kappa_G,
        final_W=pred.W.copy(),
    )


def theorem1_rho_ceiling(C: float, kappa_bar: float, m: int, p: int, T: int, d: int, delta: float) -> float:
    """C sqrt(kappa_bar m p log(T d p / delta) / d)."""
    if min(C, kappa_bar, m, p, T, d) <= 0:
        raise ValueError("all arguments must be positive")
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    return C * math.sqrt(kappa_bar * m * p * math.log(T * d * p / delta) / d)


def calibrate_thm1_constant(max_rho: float, kappa_bar: float, m: int, p: int, T: int, d: int, delta: float) -> float:
    """Smallest C whose ceiling covers ``max_rho``."""
    return max_rho / theorem1_rho_ceiling(1.0, kappa_bar, m, p, T, d, delta)


def sample_budget_k1(d: int, p: int, epsilon: float) -> int:
    """floor(d eps^2 / p)."""
    if not 0 < epsilon < 0.5:
        raise ValueError("epsilon must lie in (0, 1/2)")
    if d < 1 or p < 1:
        raise ValueError("d and p must be positive")
    return int(math.floor(d * epsilon**2 / p))
