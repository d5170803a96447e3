"""Normalized probabilist's Hermite polynomials and the bound functions built on them.

``H_k`` is orthonormal under N(0, 1) and obeys
``sqrt(k+1) H_{k+1}(x) = x H_k(x) - sqrt(k) H_{k-1}(x)``.

A ridge function ``sigma(w.x)`` has d-dimensional Hermite tensors
``b_k(||w||) (w/||w||)^{⊗k}`` with ``b_k(s) = E[sigma(s z) H_k(z)]``, so every
quantity here is one-dimensional.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np

from .errors import AllCoefficientsVanish, DegreeTooLarge, NonFinite

MAX_EVAL_DEGREE = 60
DEFAULT_KMAX = 40
DEFAULT_TOL = 1e-7
MAX_ADAPTIVE_NODES = 1024


@dataclass(frozen=True)
class HermiteSpectrum:
    """Coefficients b_0..b_kmax of a 1-D function taken at ridge norm ``scale``."""

    coeffs: np.ndarray
    scale: float = 1.0

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=np.float64)
        if c.ndim != 1 or c.size == 0:
            raise ValueError("coeffs must be a non-empty 1-D sequence")
        if not np.all(np.isfinite(c)):
            raise NonFinite("Hermite coefficients contain NaN or Inf")
        if not self.scale > 0:
            raise ValueError("scale must be positive")
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    @property
    def kmax(self) -> int:
        return self.coeffs.size - 1

    def energy(self) -> float:
        """sum_k b_k^2, a lower bound on the squared L2 norm (Bessel)."""
        return float(np.sum(self.coeffs**2))

    def satisfies_bessel(self, l2_norm_sq: float, slack: float = 1e-6) -> bool:
        return self.energy() <= l2_norm_sq + slack

    def to_json(self, k_star: int | None = None) -> dict:
        return {"scale": self.scale, "coeffs": self.coeffs.tolist(), "k_star": k_star}


@dataclass(frozen=True)
class BoundConstants:
    """Regularity constants of an (activation, target) pair.

    ``G1`` bounds |sigma'|, ``G2`` bounds |f*| (may be ``inf`` for polynomial
    links), ``K_sigma`` is the activation's second-moment ratio, and
    ``grad_norm_fstar`` is ||grad f*||_{L2}.
    """

    G1: float
    G2: float = 1.0
    K_sigma: float = 1.0
    grad_norm_fstar: float = 1.0
    k_star: int = 1
    extra: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        for name in ("G1", "G2", "K_sigma", "grad_norm_fstar"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if int(self.k_star) != self.k_star or self.k_star < 1:
            raise ValueError("k_star must be a positive integer")


def hermite_table(kmax: int, x) -> np.ndarray:
    """Rows H_0(x) .. H_kmax(x) by the three-term recurrence."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty((kmax + 1,) + x.shape)
    out[0] = 1.0
    if kmax >= 1:
        out[1] = x
    for k in range(1, kmax):
        out[k + 1] = (x * out[k] - math.sqrt(k) * out[k - 1]) / math.sqrt(k + 1)
    return out


def hermite_eval(k: int, x):
    """Normalized probabilist's Hermite polynomial H_k at ``x`` (scalar or array)."""
    if k < 0:
        raise ValueError("degree must be non-negative")
    if k > MAX_EVAL_DEGREE:
        raise DegreeTooLarge(f"degree {k} exceeds {MAX_EVAL_DEGREE}")
    vals = hermite_table(k, x)[k]
    return float(vals) if np.ndim(vals) == 0 else vals


def hermite_derivative(k: int, x):
    """H_k'(x) = sqrt(k) H_{k-1}(x)."""
    if k == 0:
        return np.zeros_like(np.asarray(x, dtype=np.float64))
    return math.sqrt(k) * hermite_eval(k - 1, x)


def _scaled_recurrence(n: int, x: np.ndarray):
    """(H_n / H_{n-1}, log of sum_{k<n} H_k^2) without overflow at large |x|."""
    prev = np.zeros_like(x)
    cur = np.ones_like(x)
    total = np.ones_like(x)
    log_scale = np.zeros_like(x)
    for k in range(n - 1):
        prev, cur = cur, (x * cur - math.sqrt(k) * prev) / math.sqrt(k + 1)
        total += cur**2
        big = np.abs(cur) > 1e100
        if np.any(big):
            prev[big] *= 1e-100
            cur[big] *= 1e-100
            total[big] *= 1e-200
            log_scale[big] += 200 * math.log(10)
    nxt = (x * cur - math.sqrt(n - 1) * prev) / math.sqrt(n)
    return nxt / cur, np.log(total) + log_scale


@lru_cache(maxsize=64)
def _gauss_hermite_cached(n: int) -> tuple[np.ndarray, np.ndarray]:
    # Golub-Welsch: eigenvalues of the Jacobi matrix of the orthonormal family
    off = np.sqrt(np.arange(1, n, dtype=np.float64))
    J = np.diag(off, 1) + np.diag(off, -1)
    x = np.linalg.eigh(J)[0]
    if n > 1:
        for _ in range(2):
            # Newton polish on H_n; H_n' = sqrt(n) H_{n-1}
            ratio, _ = _scaled_recurrence(n, x)
            x = x - ratio / math.sqrt(n)
    x = 0.5 * (x - x[::-1])
    # Christoffel weights 1 / sum_k H_k(x)^2 stay accurate in relative terms
    # at the extreme nodes, unlike squared eigenvector components.
    _, log_sum = _scaled_recurrence(n, x)
    w = np.exp(-log_sum)
    w = 0.5 * (w + w[::-1])
    w /= w.sum()
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def gauss_hermite(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and weights integrating against N(0, 1); exact to degree 2n-1."""
    if n < 1:
        raise ValueError("need at least one node")
    return _gauss_hermite_cached(int(n))


def default_nodes(kmax: int) -> int:
    return max(2 * kmax + 16, 64)


def _kinked_rule(breaks: Sequence[float], kmax: int, nodes: int):
    """Composite Gauss-Legendre rule for N(0,1) split at the given breakpoints."""
    half = max(12.0, 2.5 * math.sqrt(kmax + 1) + 6.0)
    pts = sorted({float(b) for b in breaks if -half < b < half})
    edges = [-half, *pts, half]
    t, v = np.polynomial.legendre.leggauss(nodes)
    xs, ws = [], []
    for a, b in zip(edges[:-1], edges[1:]):
        xs.append(0.5 * (b - a) * t + 0.5 * (a + b))
        ws.append(0.5 * (b - a) * v)
    x = np.concatenate(xs)
    w = np.concatenate(ws) * np.exp(-0.5 * x**2) / math.sqrt(2 * math.pi)
    return x, w


def gaussian_expectation(
    fn: Callable[[np.ndarray], np.ndarray],
    breaks: Sequence[float] = (),
    panel_width: float = 0.25,
    order: int = 32,
    half: float = 12.0,
) -> float:
    """E[fn(z)] for z ~ N(0, 1) by panelled Gauss-Legendre on [-half, half].

    Panels are split at ``breaks`` and kept narrower than ``panel_width``, so
    steep or oscillating integrands such as sigma'(20 z) stay resolved.
    """
    inner = sorted({float(b) for b in breaks if -half < b < half})
    edges = [-half, *inner, half]
    t, v = np.polynomial.legendre.leggauss(order)
    total = 0.0
    for a, b in zip(edges[:-1], edges[1:]):
        n = max(1, math.ceil((b - a) / panel_width))
        lo = a + (b - a) * np.arange(n) / n
        h = (b - a) / n
        x = (lo[:, None] + 0.5 * h * (t + 1.0)).ravel()
        w = np.tile(0.5 * h * v, n) * np.exp(-0.5 * x**2)
        total += float(np.dot(w, fn(x)))
    return total / math.sqrt(2 * math.pi)


def coeffs_by_quadrature(
    sigma: Callable[[np.ndarray], np.ndarray],
    s: float,
    kmax: int = DEFAULT_KMAX,
    nodes: int | None = None,
    kinks: Sequence[float] | None = None,
) -> HermiteSpectrum:
    """b_k = E_{z~N(0,1)}[sigma(s z) H_k(z)] for k = 0..kmax.

    Smooth functions use Gauss-Hermite. With ``nodes`` unset the rule starts
    at max(2 kmax + 16, 64) points and doubles until successive coefficient
    vectors agree to 1e-12, since functions with poles near the real axis
    (tanh at large s) converge slowly. If ``kinks`` lists points where
    ``sigma`` is not smooth (in sigma's own argument), a composite
    Gauss-Legendre rule split at ``kink / s`` is used instead.
    """
    if not s > 0:
        raise ValueError("scale must be positive")
    if nodes is not None and nodes < 2 * kmax + 16:
        raise ValueError(f"need nodes >= 2*kmax+16 = {2 * kmax + 16}")

    def compute(x, w):
        vals = np.asarray(sigma(s * x), dtype=np.float64)
        if not np.all(np.isfinite(vals)):
            raise NonFinite("function returned NaN/Inf on a quadrature node")
        return hermite_table(kmax, x) @ (w * vals)

    n = default_nodes(kmax) if nodes is None else nodes
    if kinks:
        coeffs = compute(*_kinked_rule([k / s for k in kinks], kmax, n))
    else:
        coeffs = compute(*gauss_hermite(n))
        while nodes is None and n < MAX_ADAPTIVE_NODES:
            n *= 2
            finer = compute(*gauss_hermite(n))
            done = np.abs(finer - coeffs).max() <= 1e-12 * max(1.0, np.abs(finer).max())
            coeffs = finer
            if done:
                break
    return HermiteSpectrum(coeffs, scale=float(s))


def sin_coeffs_closed_form(norm_u: float, kmax: int = DEFAULT_KMAX) -> HermiteSpectrum:
    """Spectrum of z -> sin(norm_u z).

    b_k = (-1)^((k-1)/2) norm_u^k / sqrt(k!) exp(-norm_u^2 / 2) for odd k, else 0.
    """
    if not norm_u > 0:
        raise ValueError("norm_u must be positive")
    k = np.arange(kmax + 1)
    # log-space keeps large norm_u and k finite
    logmag = k * math.log(norm_u) - 0.5 * np.array([math.lgamma(j + 1) for j in k]) - 0.5 * norm_u**2
    sign = np.where(k % 4 == 1, 1.0, -1.0)
    coeffs = np.where(k % 2 == 1, sign * np.exp(logmag), 0.0)
    return HermiteSpectrum(coeffs, scale=float(norm_u))


def sin_l2_norm_sq(norm_u: float) -> float:
    """E[sin(u.x)^2] = (1 - exp(-2||u||^2)) / 2."""
    return 0.5 * (1.0 - math.exp(-2.0 * norm_u**2))


def information_exponent(spec: HermiteSpectrum, tol: float = DEFAULT_TOL) -> int:
    """Smallest k >= 1 with |b_k| > tol."""
    if spec.kmax < 1:
        raise ValueError("spectrum needs kmax >= 1")
    nz = np.nonzero(np.abs(spec.coeffs[1:]) > tol)[0]
    if nz.size == 0:
        raise AllCoefficientsVanish(f"no coefficient with 1 <= k <= {spec.kmax} exceeds {tol}")
    return int(nz[0]) + 1


def derivative_shift(spec: HermiteSpectrum) -> np.ndarray:
    """d_k = sqrt(k+1) b_{k+1}, k = 0..kmax-1.

    This is the spectrum of z -> d/dz sigma(s z) = s sigma'(s z): the
    derivative along the ridge, chain-rule factor included.
    """
    b = spec.coeffs
    k = np.arange(b.size - 1)
    return np.sqrt(k + 1.0) * b[1:]


def correlation_ceiling(f_l2: float, target_spec: HermiteSpectrum, rho: float) -> float:
    """f_l2 * sqrt(sum_k b_k^2 rho^(2k)), the ceiling on |E[f_W g_U]|."""
    _check_rho(rho)
    b = target_spec.coeffs
    k = np.arange(b.size)
    return float(f_l2 * math.sqrt(np.sum(b**2 * rho ** (2 * k))))


def gradient_ceiling(target_spec: HermiteSpectrum, m: int, G1: float, rho: float) -> float:
    """G1 sqrt(m sum_k b_k^2 rho^2k) + G1 sqrt(sum_k (k+1) b_{k+1}^2 rho^2k)."""
    _check_rho(rho)
    b = target_spec.coeffs
    k = np.arange(b.size)
    first = np.sum(b**2 * rho ** (2 * k))
    d = derivative_shift(target_spec)
    second = np.sum(d**2 * rho ** (2 * k[:-1]))
    return float(G1 * math.sqrt(m * first) + G1 * math.sqrt(second))


def psi_periodic(consts: BoundConstants, norm_u: float, m: int, rho: float) -> float:
    """sqrt(m) G1 (1 + ||u||) exp(-||u||^2 (1 - rho^2) / 2)."""
    _check_rho(rho)
    return math.sqrt(m) * consts.G1 * (1.0 + norm_u) * math.exp(-0.5 * norm_u**2 * (1.0 - rho**2))


def psi_info_exponent(consts: BoundConstants, m: int, rho: float) -> float:
    """G1 ||grad f*|| (sqrt(m) rho + 1) rho^(k*-1), with 0^0 = 1."""
    _check_rho(rho)
    power = 1.0 if consts.k_star == 1 else rho ** (consts.k_star - 1)
    return consts.G1 * consts.grad_norm_fstar * (math.sqrt(m) * rho + 1.0) * power


def loss_ceiling_info_exponent(f_l2: float, g_l2: float, k_star: int, rho: float) -> float:
    """f_l2 g_l2 rho^k*, the ceiling on |E[f g]| when g has information exponent k*."""
    _check_rho(rho)
    return f_l2 * g_l2 * rho**k_star


def variance_floor(f_l2: float, g_l2: float, consts: BoundConstants, rho: float) -> float:
    """max(0, f_l2^2 g_l2^2 - 4 G1^2 G2^2 rho), the floor on E[f^2 g^2]."""
    _check_rho(rho)
    return max(0.0, f_l2**2 * g_l2**2 - 4.0 * consts.G1**2 * consts.G2**2 * rho)


def _check_rho(rho: float) -> None:
    if not 0.0 <= rho <= 1.0:
        raise ValueError(f"rho must lie in [0, 1], got {rho}")
