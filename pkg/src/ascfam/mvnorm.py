"""Multivariate normal utilities: densities, conditioning, sampling, and
rectangle (orthant) probabilities with controlled accuracy.

Rectangle probabilities are routed by structure:

* n = 1: the univariate normal CDF (abs error < 1e-15).
* n = 2: one-dimensional adaptive quadrature along the correlation path of
  the bivariate density (Drezner-type integrand, abs error < 1e-12).
* n >= 3 with a one-factor covariance (diag(d) + u u^T, d > 0): deterministic
  Gauss-Hermite quadrature over the shared factor. Exchangeable sibship
  covariances always have this form, which keeps likelihood evaluation fast.
* general n >= 3: randomized quasi-Monte Carlo with scrambled Sobol points
  (separation-of-variables transform, 12 randomizations, up to 2**14 points
  per randomization). The error estimate comes from the randomization spread.

Within one likelihood optimization the QMC point sets are frozen (common
random numbers) so the objective is a smooth deterministic function of the
parameters.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np
from scipy.integrate import quad
from scipy.linalg import solve_triangular
from scipy.special import log_ndtr, ndtr, ndtri, roots_hermitenorm
from scipy.stats import qmc

MAX_DIM = 16
QMC_RANDOMIZATIONS = 12
QMC_MIN_LOG2 = 9
QMC_MAX_LOG2 = 14
FACTOR_NODES = 128
FACTOR_NODES_CHECK = 192
DEFAULT_ACCURACY = 1e-6

_LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)


class NotPositiveDefiniteError(np.linalg.LinAlgError):
    """Covariance is not positive definite even after the jitter retry."""


@dataclass(frozen=True)
class Gaussian:
    """A mean vector and covariance matrix."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)
        n = mean.shape[0]
        if cov.shape != (n, n):
            raise ValueError(f"cov shape {cov.shape} does not match mean length {n}")
        if not np.allclose(cov, cov.T, atol=1e-10 * max(1.0, np.abs(cov).max())):
            raise ValueError("covariance matrix is not symmetric")

    @property
    def dim(self) -> int:
        return self.mean.shape[0]


@dataclass(frozen=True)
class Rectangle:
    """An axis-aligned integration region; use +-inf for open sides."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lower = np.atleast_1d(np.asarray(self.lower, dtype=float))
        upper = np.atleast_1d(np.asarray(self.upper, dtype=float))
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        if lower.shape != upper.shape:
            raise ValueError("lower and upper must have the same length")
        if not np.all(lower < upper):
            raise ValueError("rectangle requires lower[j] < upper[j] for all j")

    @property
    def dim(self) -> int:
        return self.lower.shape[0]


def cholesky_with_jitter(cov: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor, retrying once with a tiny diagonal jitter.

    The jitter (1e-10 * trace / n) guards against benign rounding without
    masking real singularity; a second failure raises.
    """
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        n = cov.shape[0]
        jitter = 1e-10 * np.trace(cov) / n
        try:
            return np.linalg.cholesky(cov + jitter * np.eye(n))
        except np.linalg.LinAlgError:
            raise NotPositiveDefiniteError(
                "covariance not positive definite after jitter"
            ) from None


def log_density(g: Gaussian, x: Sequence[float]) -> float:
    """Exact MVN log-density at ``x`` via Cholesky factorization."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.shape[0] != g.dim:
        raise ValueError(f"x has length {x.shape[0]}, expected {g.dim}")
    chol = cholesky_with_jitter(g.cov)
    z = solve_triangular(chol, x - g.mean, lower=True)
    log_det = 2.0 * np.log(np.diag(chol)).sum()
    return float(-0.5 * (g.dim * np.log(2.0 * np.pi) + log_det + z @ z))


def condition(g: Gaussian, observed_idx: Sequence[int], values: Sequence[float]) -> Gaussian:
    """Condition on ``X[observed_idx] = values`` (Schur complement formulas)."""
    obs = np.asarray(observed_idx, dtype=int)
    values = np.atleast_1d(np.asarray(values, dtype=float))
    n = g.dim
    if obs.size == 0:
        raise ValueError("observed_idx must be nonempty")
    if len(set(obs.tolist())) != obs.size or np.any(obs < 0) or np.any(obs >= n):
        raise ValueError("observed_idx must be distinct indices in range")
    if obs.size >= n:
        raise ValueError("observed_idx must be a proper subset of the coordinates")
    if values.shape[0] != obs.size:
        raise ValueError("values must match observed_idx in length")

    rest = np.array([i for i in range(n) if i not in set(obs.tolist())], dtype=int)
    s_oo = g.cov[np.ix_(obs, obs)]
    s_ro = g.cov[np.ix_(rest, obs)]
    s_rr = g.cov[np.ix_(rest, rest)]
    try:
        chol = np.linalg.cholesky(s_oo)
    except np.linalg.LinAlgError:
        raise NotPositiveDefiniteError("observed-block covariance is singular") from None
    # A = Sigma_ro Sigma_oo^{-1}, via two triangular solves.
    tmp = solve_triangular(chol, s_ro.T, lower=True)
    resid = solve_triangular(chol, values - g.mean[obs], lower=True)
    mean = g.mean[rest] + tmp.T @ resid
    cov = s_rr - tmp.T @ tmp
    cov = 0.5 * (cov + cov.T)
    return Gaussian(mean=mean, cov=cov)


def sample(g: Gaussian, rng: np.random.Generator, count: int) -> np.ndarray:
    """Draw ``count`` rows from the distribution, reproducible given the rng."""
    if count < 1:
        raise ValueError("count must be >= 1")
    chol = cholesky_with_jitter(g.cov)
    z = rng.standard_normal((count, g.dim))
    return g.mean[None, :] + z @ chol.T


# ---------------------------------------------------------------------------
# One-factor (diag + rank-1) rectangle probabilities
# ---------------------------------------------------------------------------


@lru_cache(maxsize=8)
def _gh_nodes(n_nodes: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Probabilists' Gauss-Hermite nodes with weights normalized to sum 1."""
    t, w = roots_hermitenorm(n_nodes)
    w = w / np.sqrt(2.0 * np.pi)
    return t, w, np.log(w)


def factor_decompose(
    cov: np.ndarray, rtol: float = 1e-9
) -> Optional[tuple[np.ndarray, np.ndarray]]:
    """Try to write ``cov = diag(d) + u u^T`` with strictly positive ``d``.

    Returns ``(d, u)`` on success, ``None`` if no such decomposition exists
    (within ``rtol`` of the matrix scale). Covers exchangeable matrices,
    block-exchangeable-plus-independent patterns, and diagonal matrices.
    """
    cov = np.asarray(cov, dtype=float)
    n = cov.shape[0]
    scale = max(np.abs(cov).max(), 1e-300)
    tol = rtol * scale
    diag = np.diag(cov).copy()
    off = cov - np.diag(diag)
    amax = np.abs(off).max()
    if amax <= tol:
        if np.any(diag <= 0):
            return None
        return diag, np.zeros(n)

    a, b = np.unravel_index(np.abs(off).argmax(), off.shape)
    third = [c for c in range(n) if c not in (a, b) and abs(off[b, c]) > tol]
    if third:
        c = max(third, key=lambda j: abs(off[b, j]))
        ua_sq = off[a, b] * off[a, c] / off[b, c]
        if ua_sq <= tol:
            return None
        ua = np.sqrt(ua_sq)
    else:
        ua = np.sqrt(abs(off[a, b]))
    u = off[a, :] / ua
    u[a] = ua
    d = diag - u * u
    if np.any(d <= tol):
        return None
    resid = np.abs(cov - (np.diag(d) + np.outer(u, u))).max()
    if resid > 10.0 * tol:
        return None
    return d, u


def log_orthant_factor(
    means: np.ndarray,
    signs: np.ndarray,
    d: np.ndarray,
    u: np.ndarray,
    n_nodes: int = FACTOR_NODES,
) -> np.ndarray:
    """Log one-sided rectangle probabilities for a one-factor Gaussian, batched.

    Computes log P(sign_j * X_j > 0 for all j) where X = mean + u z + sqrt(d) eps
    with z, eps standard normal. ``means`` and ``signs`` are (K, n); the result
    has shape (K,). Rows whose probability underflows in linear space are
    recomputed in log space, so the result is finite (or -inf) but never NaN.
    """
    t, w, logw = _gh_nodes(n_nodes)
    sd = np.sqrt(d)
    a = (signs * means) / sd
    b = (signs * u) / sd
    arg = a[:, None, :] + b[:, None, :] * t[None, :, None]
    f = ndtr(arg).prod(axis=2)
    p = f @ w
    out = np.full(p.shape, -np.inf)
    ok = p > 1e-280
    out[ok] = np.log(p[ok])
    bad = ~ok
    if np.any(bad):
        lt = log_ndtr(arg[bad]).sum(axis=2) + logw[None, :]
        m = lt.max(axis=1)
        finite = np.isfinite(m)
        if np.any(finite):
            idx = np.where(bad)[0][finite]
            mm = m[finite]
            out[idx] = mm + np.log(np.exp(lt[finite] - mm[:, None]).sum(axis=1))
    return out


def log_rect_factor(
    means: np.ndarray,
    lower: np.ndarray,
    upper: np.ndarray,
    d: np.ndarray,
    u: np.ndarray,
    n_nodes: int = FACTOR_NODES,
) -> np.ndarray:
    """Log rectangle probabilities for a one-factor Gaussian, batched.

    ``means`` is (K, n); ``lower`` / ``upper`` broadcast against it. Handles
    two-sided intervals with a tail-swap so the log difference of CDFs stays
    accurate far from the origin.
    """
    means = np.atleast_2d(means)
    t, w, logw = _gh_nodes(n_nodes)
    sd = np.sqrt(d)
    lo = np.broadcast_to(lower, means.shape)
    hi = np.broadcast_to(upper, means.shape)
    shift = u / sd
    lo_s = (lo - means) / sd
    hi_s = (hi - means) / sd
    lo_t = lo_s[:, None, :] - shift[None, None, :] * t[None, :, None]
    hi_t = hi_s[:, None, :] - shift[None, None, :] * t[None, :, None]
    with np.errstate(invalid="ignore"):
        # Work in the tail with more mass: P(lo < Z < hi) = P(-hi < Z < -lo).
        swap = lo_t + hi_t > 0
        lo_use = np.where(swap, -hi_t, lo_t)
        hi_use = np.where(swap, -lo_t, hi_t)
        log_hi = log_ndtr(hi_use)
        log_lo = log_ndtr(lo_use)
        diff = -np.expm1(np.minimum(log_lo - log_hi, 0.0))
        term = log_hi + np.log(np.maximum(diff, 1e-300))
        term = np.where(np.isneginf(log_hi), -np.inf, term)
    lt = term.sum(axis=2) + logw[None, :]
    m = lt.max(axis=1)
    out = np.full(m.shape, -np.inf)
    finite = np.isfinite(m)
    if np.any(finite):
        mm = m[finite]
        out[finite] = mm + np.log(np.exp(lt[finite] - mm[:, None]).sum(axis=1))
    return out


# ---------------------------------------------------------------------------
# Closed-form low-dimensional cases
# ---------------------------------------------------------------------------


def _bvn_cdf(h: float, k: float, rho: float) -> float:
    """P(X <= h, Y <= k) for standard bivariate normal with correlation rho.

    Integrates the bivariate density along the correlation path from 0 to
    rho (adaptive quadrature), anchored at independence.
    """
    if np.isneginf(h) or np.isneginf(k):
        return 0.0
    if np.isposinf(h):
        return float(ndtr(k))
    if np.isposinf(k):
        return float(ndtr(h))
    rho = float(np.clip(rho, -1.0 + 1e-12, 1.0 - 1e-12))
    base = float(ndtr(h) * ndtr(k))
    if rho == 0.0:
        return base

    hk = h * k
    hh = h * h + k * k

    def integrand(t: float) -> float:
        om = 1.0 - t * t
        return np.exp(-(hh - 2.0 * t * hk) / (2.0 * om)) / (2.0 * np.pi * np.sqrt(om))

    val, _ = quad(integrand, 0.0, rho, epsabs=1e-14, epsrel=1e-13, limit=200)
    return float(min(max(base + val, 0.0), 1.0))


def _rect_prob_2d(mean: np.ndarray, cov: np.ndarray, lower: np.ndarray, upper: np.ndarray) -> float:
    sd = np.sqrt(np.diag(cov))
    if np.any(sd <= 0):
        raise NotPositiveDefiniteError("nonpositive variance in 2-d rectangle")
    rho = cov[0, 1] / (sd[0] * sd[1])
    lo = (lower - mean) / sd
    hi = (upper - mean) / sd
    p = (
        _bvn_cdf(hi[0], hi[1], rho)
        - _bvn_cdf(lo[0], hi[1], rho)
        - _bvn_cdf(hi[0], lo[1], rho)
        + _bvn_cdf(lo[0], lo[1], rho)
    )
    return float(min(max(p, 0.0), 1.0))


# ---------------------------------------------------------------------------
# Randomized QMC for general covariances
# ---------------------------------------------------------------------------


class QmcPointCache:
    """Frozen scrambled Sobol point sets keyed by (dimension, randomization).

    All points for a given cache are determined by its seed, so repeated
    probability evaluations (e.g. across optimizer steps) see identical
    point sets and the objective stays deterministic.
    """

    def __init__(self, seed: int = 0):
        self.seed = seed
        self._store: dict[tuple[int, int], np.ndarray] = {}

    def points(self, dim: int, rep: int, log2n: int) -> np.ndarray:
        key = (dim, rep)
        arr = self._store.get(key)
        if arr is None:
            eng = qmc.Sobol(
                d=dim,
                scramble=True,
                seed=np.random.default_rng(np.random.SeedSequence((self.seed, dim, rep))),
            )
            arr = eng.random_base2(m=QMC_MAX_LOG2)
            self._store[key] = arr
        return arr[: 2 ** log2n]


_DEFAULT_CACHE = QmcPointCache(seed=0)


def _genz_batch(
    chol: np.ndarray, lower: np.ndarray, upper: np.ndarray, pts: np.ndarray
) -> float:
    """Mean of the separation-of-variables integrand over one point batch."""
    n = chol.shape[0]
    m = pts.shape[0]
    d0 = float(ndtr(lower[0] / chol[0, 0]))
    e0 = float(ndtr(upper[0] / chol[0, 0]))
    f = np.full(m, e0 - d0)
    y = np.empty((m, n - 1))
    d_cur = np.full(m, d0)
    e_cur = np.full(m, e0)
    for i in range(1, n):
        q = d_cur + pts[:, i - 1] * (e_cur - d_cur)
        y[:, i - 1] = ndtri(np.clip(q, 1e-300, 1.0 - 1e-16))
        s = y[:, :i] @ chol[i, :i]
        d_cur = ndtr((lower[i] - s) / chol[i, i])
        e_cur = ndtr((upper[i] - s) / chol[i, i])
        f *= np.maximum(e_cur - d_cur, 0.0)
    return float(f.mean())


def _rect_prob_qmc(
    mean: np.ndarray,
    cov: np.ndarray,
    lower: np.ndarray,
    upper: np.ndarray,
    accuracy: float,
    cache: QmcPointCache,
) -> tuple[float, float]:
    lower = lower - mean
    upper = upper - mean
    sd = np.sqrt(np.diag(cov))
    # Tightest coordinates first reduces the integrand's variance.
    width = ndtr(upper / sd) - ndtr(lower / sd)
    order = np.argsort(width)
    cov_o = cov[np.ix_(order, order)]
    chol = cholesky_with_jitter(cov_o)
    lower = lower[order]
    upper = upper[order]

    n = cov.shape[0]
    estimate, err = 0.5, np.inf
    for log2n in range(QMC_MIN_LOG2, QMC_MAX_LOG2 + 1):
        estimates = np.array(
            [
                _genz_batch(chol, lower, upper, cache.points(n - 1, rep, log2n))
                for rep in range(QMC_RANDOMIZATIONS)
            ]
        )
        estimate = float(estimates.mean())
        err = float(
            3.0 * estimates.std(ddof=1) / np.sqrt(QMC_RANDOMIZATIONS) + 1e-16
        )
        if err <= accuracy:
            break
    return min(max(estimate, 0.0), 1.0), err


def rectangle_prob(
    g: Gaussian,
    r: Rectangle,
    accuracy: float = DEFAULT_ACCURACY,
    method: str = "auto",
    point_cache: Optional[QmcPointCache] = None,
) -> tuple[float, float]:
    """Probability that the Gaussian falls in the rectangle, with an error bound.

    Returns ``(probability, error_estimate)``. For the deterministic paths the
    error estimate is a declared bound; for the QMC path it reflects the
    randomization spread and may exceed ``accuracy`` if the point budget ran
    out (the best estimate is still returned).

    ``method`` is "auto", "factor" or "qmc"; "factor" raises if the covariance
    is not diagonal-plus-rank-one.
    """
    if g.dim != r.dim:
        raise ValueError(f"dimension mismatch: gaussian {g.dim}, rectangle {r.dim}")
    if g.dim > MAX_DIM:
        raise ValueError(f"dimension {g.dim} exceeds supported maximum {MAX_DIM}")
    if accuracy <= 0:
        raise ValueError("accuracy must be positive")
    if method not in ("auto", "factor", "qmc"):
        raise ValueError(f"unknown method {method!r}")

    n = g.dim
    if method == "auto" and n == 1:
        sd = np.sqrt(g.cov[0, 0])
        if sd <= 0:
            raise NotPositiveDefiniteError("nonpositive variance")
        p = float(ndtr((r.upper[0] - g.mean[0]) / sd) - ndtr((r.lower[0] - g.mean[0]) / sd))
        return min(max(p, 0.0), 1.0), 1e-15
    if method == "auto" and n == 2:
        return _rect_prob_2d(g.mean, g.cov, r.lower, r.upper), 1e-12

    if method in ("auto", "factor"):
        fac = factor_decompose(g.cov)
        if fac is not None:
            d, u = fac
            p1 = float(
                np.exp(log_rect_factor(g.mean[None, :], r.lower, r.upper, d, u, FACTOR_NODES))[0]
            )
            p2 = float(
                np.exp(
                    log_rect_factor(
                        g.mean[None, :], r.lower, r.upper, d, u, FACTOR_NODES_CHECK
                    )
                )[0]
            )
            err = abs(p1 - p2) + 1e-15
            if err <= accuracy or method == "factor":
                return min(max(p2, 0.0), 1.0), err
        elif method == "factor":
            raise ValueError("covariance is not diagonal-plus-rank-one")

    cache = point_cache if point_cache is not None else _DEFAULT_CACHE
    return _rect_prob_qmc(g.mean, g.cov, r.lower, r.upper, accuracy, cache)
