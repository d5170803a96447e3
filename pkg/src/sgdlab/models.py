"""Input laws, activations, targets and predictors consumed by the SGD engine."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import ndtr

from . import hermite as hm
from .errors import AssumptionViolated, DimensionMismatch
from .hermite import BoundConstants

_SQRT_2PI = math.sqrt(2 * math.pi)

INPUT_KINDS = ("standard_gaussian", "hypercube", "scaled_sphere")
ACTIVATION_KINDS = ("relu", "leaky_relu", "softplus", "gelu", "sigmoid", "tanh", "sin", "hermite")
LINK_KINDS = ("identity", "hermite", "sin", "tanh", "z2exp")
TARGET_KINDS = ("single_index", "periodic", "product")

K_SIGMA_LIMIT = 1e6


# ---------------------------------------------------------------- inputs


@dataclass(frozen=True)
class InputDistribution:
    """Isotropic input law on R^d with E[x] = 0 and E[||x||^2] = d * scale^2."""

    kind: str
    d: int
    scale: float = 1.0

    def __post_init__(self):
        if self.kind not in INPUT_KINDS:
            raise ValueError(f"unknown input kind {self.kind!r}")
        if self.d < 1:
            raise ValueError("d must be positive")
        if not self.scale > 0:
            raise ValueError("scale must be positive")

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if self.kind == "standard_gaussian":
            X = rng.standard_normal((n, self.d))
        elif self.kind == "hypercube":
            X = 2.0 * rng.integers(0, 2, size=(n, self.d)).astype(np.float64) - 1.0
        else:
            X = rng.standard_normal((n, self.d))
            X *= math.sqrt(self.d) / np.linalg.norm(X, axis=1, keepdims=True)
        if self.scale != 1.0:
            X *= self.scale
        return X


def sample_input(dist: InputDistribution, rng: np.random.Generator) -> np.ndarray:
    """One draw x ~ dist as a length-d vector."""
    return dist.sample(rng, 1)[0]


def sample_inputs(dist: InputDistribution, rng: np.random.Generator, n: int) -> np.ndarray:
    return dist.sample(rng, n)


def initialize_weights(m: int, d: int, rng: np.random.Generator) -> np.ndarray:
    """m x d matrix with i.i.d. N(0, 1/d) entries."""
    if m < 1 or d < 1:
        raise ValueError("m and d must be positive")
    return rng.standard_normal((m, d)) / math.sqrt(d)


def random_unit(d: int, rng: np.random.Generator) -> np.ndarray:
    v = rng.standard_normal(d)
    return v / np.linalg.norm(v)


def haar_frame(p: int, d: int, rng: np.random.Generator) -> np.ndarray:
    """p orthonormal rows drawn from the Haar measure on the Stiefel manifold."""
    if not 1 <= p <= d:
        raise ValueError("need 1 <= p <= d")
    Q, R = np.linalg.qr(rng.standard_normal((d, p)))
    # sign fix makes the QR factor Haar distributed
    Q = Q * np.sign(np.diag(R))
    return Q.T.copy()


# ---------------------------------------------------------------- activations


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


@dataclass(frozen=True)
class Activation:
    """Scalar activation with its derivative and documented derivative bound G1.

    ``alpha`` is the negative slope of leaky_relu; ``degree`` selects H_k for
    the hermite kind. At kinks the derivative takes the left value: 0 for
    relu and alpha for leaky_relu.
    """

    kind: str
    alpha: float = 0.0
    degree: int = 0

    def __post_init__(self):
        if self.kind not in ACTIVATION_KINDS:
            raise ValueError(f"unknown activation {self.kind!r}")
        if self.kind == "hermite" and not 1 <= self.degree <= hm.MAX_EVAL_DEGREE:
            raise ValueError("hermite activation needs 1 <= degree <= 60")

    def __call__(self, z):
        z = np.asarray(z, dtype=np.float64)
        k = self.kind
        if k == "relu":
            return np.maximum(z, 0.0)
        if k == "leaky_relu":
            return np.where(z > 0, z, self.alpha * z)
        if k == "softplus":
            return np.logaddexp(0.0, z)
        if k == "gelu":
            return z * ndtr(z)
        if k == "sigmoid":
            return _sigmoid(z)
        if k == "tanh":
            return np.tanh(z)
        if k == "sin":
            return np.sin(z)
        return hm.hermite_table(self.degree, z)[self.degree]

    def deriv(self, z):
        z = np.asarray(z, dtype=np.float64)
        k = self.kind
        if k == "relu":
            return (z > 0).astype(np.float64)
        if k == "leaky_relu":
            return np.where(z > 0, 1.0, self.alpha)
        if k == "softplus":
            return _sigmoid(z)
        if k == "gelu":
            return ndtr(z) + z * np.exp(-0.5 * z**2) / _SQRT_2PI
        if k == "sigmoid":
            s = _sigmoid(z)
            return s * (1.0 - s)
        if k == "tanh":
            return 1.0 - np.tanh(z) ** 2
        if k == "sin":
            return np.cos(z)
        n = self.degree
        return math.sqrt(n) * hm.hermite_table(n - 1, z)[n - 1]

    @property
    def G1(self) -> float:
        """Documented sup |sigma'|."""
        k = self.kind
        if k == "leaky_relu":
            return max(1.0, abs(self.alpha))
        if k == "gelu":
            r = math.sqrt(2.0)
            return float(ndtr(r)) + r * math.exp(-1.0) / _SQRT_2PI
        if k == "sigmoid":
            return 0.25
        if k == "hermite":
            return 1.0 if self.degree == 1 else math.inf
        return 1.0

    @property
    def kinks(self) -> tuple[float, ...]:
        return (0.0,) if self.kind in ("relu", "leaky_relu") else ()

    def spectrum(self, s: float, kmax: int = hm.DEFAULT_KMAX) -> hm.HermiteSpectrum:
        return hm.coeffs_by_quadrature(self, s, kmax, kinks=self.kinks)


@dataclass(frozen=True)
class ActivationCertificate:
    G1: float
    K_sigma: float
    decaying: bool
    min_moment: float
    s_at_min: float
    closed_form: bool

    def __iter__(self):
        # unpacks as (G1, K_sigma)
        return iter((self.G1, self.K_sigma))


def default_s_grid(n: int = 64) -> np.ndarray:
    return np.geomspace(0.05, 20.0, n)


def derivative_moment(act: Activation, s: float) -> float:
    """E_{x ~ N(0, s^2)}[sigma'(x)^2]."""
    return hm.gaussian_expectation(
        lambda z: act.deriv(s * z) ** 2, breaks=(0.0,), panel_width=min(0.25, 0.25 / s)
    )


def certify_activation(act: Activation, s_grid=None) -> ActivationCertificate:
    """Estimate (G1, K_sigma) with K_sigma = G1^2 / min_s E[sigma'(s z)^2].

    relu and leaky_relu use the exact branch: E[sigma'(s z)^2] = (1 + alpha^2)/2
    for every s. Other kinds take G1 as the sup of |sigma'| on a dense grid and
    the moment minimum over ``s_grid``. ``decaying`` flags a minimum sitting at
    a grid end while still falling, i.e. an infimum that is likely 0.
    """
    s_grid = default_s_grid() if s_grid is None else np.asarray(s_grid, dtype=np.float64)
    if s_grid.ndim != 1 or s_grid.size < 2 or np.any(s_grid <= 0):
        raise ValueError("s_grid must hold at least two positive scales")
    s_grid = np.sort(s_grid)
    if act.kind in ("relu", "leaky_relu"):
        G1 = max(1.0, abs(act.alpha))
        moment = 0.5 * (1.0 + act.alpha**2)
        return ActivationCertificate(G1, G1**2 / moment, False, moment, float(s_grid[0]), True)
    if not math.isfinite(act.G1):
        raise AssumptionViolated(f"{act.kind} has an unbounded derivative")
    x = np.concatenate([np.linspace(-50.0, 50.0, 200_001), [math.sqrt(2.0)]])
    G1 = float(np.max(np.abs(act.deriv(x))))
    moments = np.array([derivative_moment(act, s) for s in s_grid])
    i = int(np.argmin(moments))
    decaying = False
    if i in (0, s_grid.size - 1):
        j = 1 if i == 0 else s_grid.size - 2
        slope = math.log(moments[i] / moments[j]) / math.log(s_grid[i] / s_grid[j])
        decaying = abs(slope) > 0.1
    K = G1**2 / moments[i]
    if not K <= K_SIGMA_LIMIT:
        raise AssumptionViolated(f"K_sigma estimate {K:.3g} exceeds {K_SIGMA_LIMIT:g}")
    return ActivationCertificate(G1, float(K), decaying, float(moments[i]), float(s_grid[i]), False)


# ---------------------------------------------------------------- targets


@dataclass(frozen=True)
class Link:
    """1-D link function phi of a target."""

    kind: str
    degree: int = 0

    def __post_init__(self):
        if self.kind not in LINK_KINDS:
            raise ValueError(f"unknown link {self.kind!r}")
        if self.kind == "hermite" and not 1 <= self.degree <= hm.MAX_EVAL_DEGREE:
            raise ValueError("hermite link needs 1 <= degree <= 60")

    def __call__(self, z):
        z = np.asarray(z, dtype=np.float64)
        k = self.kind
        if k == "identity":
            return z.copy()
        if k == "sin":
            return np.sin(z)
        if k == "tanh":
            return np.tanh(z)
        if k == "z2exp":
            return z**2 * np.exp(-(z**2))
        return hm.hermite_table(self.degree, z)[self.degree]

    def deriv(self, z):
        z = np.asarray(z, dtype=np.float64)
        k = self.kind
        if k == "identity":
            return np.ones_like(z)
        if k == "sin":
            return np.cos(z)
        if k == "tanh":
            return 1.0 - np.tanh(z) ** 2
        if k == "z2exp":
            return 2.0 * z * (1.0 - z**2) * np.exp(-(z**2))
        n = self.degree
        return math.sqrt(n) * hm.hermite_table(n - 1, z)[n - 1]

    @property
    def sup_abs(self) -> float:
        return {"sin": 1.0, "tanh": 1.0, "z2exp": math.exp(-1.0)}.get(self.kind, math.inf)

    def spectrum(self, s: float = 1.0, kmax: int = hm.DEFAULT_KMAX) -> hm.HermiteSpectrum:
        return hm.coeffs_by_quadrature(self, s, kmax)


@dataclass(frozen=True)
class TargetSpec:
    """f*(x) = phi(Ux) for the three supported link structures.

    single_index: phi(u.x). periodic: sin(u.x). product: prod_i phi(u_i.x)
    with orthonormal rows u_i. ``l2``, ``G2``, ``grad_norm`` and ``k_star``
    are the target's regularity constants.
    """

    kind: str
    U: np.ndarray
    link: Link
    l2: float = field(default=math.nan, compare=False)
    G2: float = field(default=math.inf, compare=False)
    grad_norm: float = field(default=math.nan, compare=False)
    k_star: int = field(default=1, compare=False)

    def __post_init__(self):
        if self.kind not in TARGET_KINDS:
            raise ValueError(f"unknown target kind {self.kind!r}")
        U = np.array(self.U, dtype=np.float64)
        if U.ndim == 1:
            U = U[None, :]
        if self.kind != "product" and U.shape[0] != 1:
            raise DimensionMismatch(f"{self.kind} target needs a single row")
        if self.kind == "product" and np.abs(U @ U.T - np.eye(U.shape[0])).max() > 1e-10:
            raise ValueError("product target needs orthonormal rows")
        U.setflags(write=False)
        object.__setattr__(self, "U", U)

    @property
    def d(self) -> int:
        return self.U.shape[1]

    @property
    def p(self) -> int:
        return self.U.shape[0]

    @property
    def norm_u(self) -> float:
        return float(np.linalg.norm(self.U[0]))

    def __call__(self, X):
        return eval_target(self, X)


def _ridge_constants(link: Link, s: float) -> tuple[float, float, int]:
    """(||phi(s z)||, ||d/dx phi(u.x)||, k*) for a ridge with ||u|| = s."""
    if s == 0.0:
        return 0.0, 0.0, 1
    l2 = math.sqrt(hm.gaussian_expectation(lambda z: link(s * z) ** 2, panel_width=min(0.25, 0.25 / s)))
    g = s * math.sqrt(hm.gaussian_expectation(lambda z: link.deriv(s * z) ** 2, panel_width=min(0.25, 0.25 / s)))
    if link.kind == "hermite" and s == 1.0:
        k_star = link.degree
    else:
        try:
            k_star = hm.information_exponent(link.spectrum(s))
        except hm.AllCoefficientsVanish:
            k_star = 1
    return l2, g, k_star


def single_index_target(link: Link, u) -> TargetSpec:
    u = np.asarray(u, dtype=np.float64).ravel()
    l2, g, k_star = _ridge_constants(link, float(np.linalg.norm(u)))
    return TargetSpec("single_index", u, link, l2=l2, G2=link.sup_abs, grad_norm=g, k_star=k_star)


def periodic_target(u) -> TargetSpec:
    """f*(x) = sin(u.x)."""
    u = np.asarray(u, dtype=np.float64).ravel()
    s = float(np.linalg.norm(u))
    l2 = math.sqrt(hm.sin_l2_norm_sq(s)) if s > 0 else 0.0
    g = s * math.sqrt(0.5 * (1.0 + math.exp(-2.0 * s**2)))
    return TargetSpec("periodic", u, Link("sin"), l2=l2, G2=1.0, grad_norm=g, k_star=1)


def product_target(link: Link, U) -> TargetSpec:
    """f*(x) = prod_i phi(u_i.x) over orthonormal rows of U."""
    U = np.asarray(U, dtype=np.float64)
    p = U.shape[0]
    e2 = hm.gaussian_expectation(lambda z: link(z) ** 2)
    ed2 = hm.gaussian_expectation(lambda z: link.deriv(z) ** 2)
    spec = link.spectrum(1.0)
    k1 = hm.information_exponent(spec)
    k_star = k1 if abs(spec.coeffs[0]) > hm.DEFAULT_TOL else p * k1
    return TargetSpec(
        "product",
        U,
        link,
        l2=e2 ** (p / 2),
        G2=link.sup_abs**p,
        grad_norm=math.sqrt(p * ed2 * e2 ** (p - 1)),
        k_star=k_star,
    )


def _as_rows(x, d: int) -> tuple[np.ndarray, bool]:
    X = np.asarray(x, dtype=np.float64)
    single = X.ndim == 1
    if single:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != d:
        raise DimensionMismatch(f"expected inputs of dimension {d}, got shape {np.shape(x)}")
    return X, single


def eval_target(t: TargetSpec, x):
    """f*(x) for one input (returns float) or a batch of rows (returns array)."""
    X, single = _as_rows(x, t.d)
    Z = X @ t.U.T
    if t.kind == "product":
        out = np.prod(t.link(Z), axis=1)
    else:
        out = t.link(Z[:, 0])
    return float(out[0]) if single else out


# ---------------------------------------------------------------- predictors


@dataclass
class TwoLayerPredictor:
    """f(x) = sum_i sigma(w_i . x) with second-layer weights fixed at 1."""

    activation: Activation
    W: np.ndarray

    def __post_init__(self):
        self.W = np.array(self.W, dtype=np.float64, ndmin=2)

    @property
    def m(self) -> int:
        return self.W.shape[0]

    @property
    def d(self) -> int:
        return self.W.shape[1]

    @property
    def G1(self) -> float:
        return self.activation.G1

    def value(self, X: np.ndarray) -> np.ndarray:
        return self.activation(X @ self.W.T).sum(axis=1)

    def pre_grad(self, X: np.ndarray) -> np.ndarray:
        """grad of f with respect to Wx, one row per input."""
        return self.activation.deriv(X @ self.W.T)


@dataclass
class GenericPredictor:
    """f(x) = h(Wx) for a user-supplied h acting row-wise on n x m arrays.

    ``grad_h`` returns the n x m gradient of h; ``G1`` must bound its norm.
    """

    h: Callable[[np.ndarray], np.ndarray]
    grad_h: Callable[[np.ndarray], np.ndarray]
    W: np.ndarray
    G1: float = 1.0

    def __post_init__(self):
        self.W = np.array(self.W, dtype=np.float64, ndmin=2)
        if not self.G1 > 0:
            raise ValueError("G1 must be positive")

    @property
    def m(self) -> int:
        return self.W.shape[0]

    @property
    def d(self) -> int:
        return self.W.shape[1]

    def value(self, X: np.ndarray) -> np.ndarray:
        return np.asarray(self.h(X @ self.W.T), dtype=np.float64)

    def pre_grad(self, X: np.ndarray) -> np.ndarray:
        return np.asarray(self.grad_h(X @ self.W.T), dtype=np.float64)


PredictorSpec = TwoLayerPredictor | GenericPredictor


def eval_predictor(pred: PredictorSpec, x):
    X, single = _as_rows(x, pred.d)
    out = pred.value(X)
    return float(out[0]) if single else out


def predictor_gradient(pred: PredictorSpec, x) -> tuple[np.ndarray, np.ndarray]:
    """(grad of f w.r.t. Wx, grad of f w.r.t. W) at a single input x."""
    X, _ = _as_rows(x, pred.d)
    g = pred.pre_grad(X)[0]
    return g, np.outer(g, X[0])


def pre_grad_bound(pred: PredictorSpec) -> float:
    """Bound on ||grad_{Wx} f||: sqrt(m) G1 for two-layer sums, G1 otherwise."""
    if isinstance(pred, TwoLayerPredictor):
        return math.sqrt(pred.m) * pred.G1
    return pred.G1


def bound_constants(pred: PredictorSpec, target: TargetSpec, K_sigma: float = 1.0) -> BoundConstants:
    """Per-neuron G1 with the target's G2, ||grad f*|| and k*."""
    return BoundConstants(
        G1=pred.G1,
        G2=target.G2,
        K_sigma=K_sigma,
        grad_norm_fstar=target.grad_norm if target.grad_norm > 0 else 1.0,
        k_star=target.k_star,
    )
