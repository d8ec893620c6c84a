"""Joint covariance assembly and per-family retrospective log-likelihoods.

The model couples a latent-Gaussian (probit) primary phenotype Y with a
continuous secondary phenotype X through a shared polygenic vector b (one
draw per family, covariance R) and a shared individual effect u:

    Y* = alpha0 + alpha1 g + Z alpha_z + sigma_gy b + sigma_u u + eps_y
    X  = beta0  + beta1 g  + Z beta_z  + sigma_gx b + delta sigma_u u + sigma_eps eps_x

with eps_y standard normal, Y = 1{Y* > 0}. The retrospective contribution of
one family is

    log P(X | G) + log P(Y | X, G) + log P(G) - log P(Y)

where the denominator sums the primary-phenotype orthant probability over
the family genotype distribution (SNP mode) or integrates the polygenic
score analytically into an inflated Y* covariance (score mode).

:class:`RetrospectiveLikelihood` is the batched cohort evaluator used by the
fitter: it caches denominators by (family size, number affected) for
covariate-free complete-data sibships, which is what makes simulation-scale
fitting feasible, and falls back to the general per-family path otherwise.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.special import logsumexp

from ascfam import mvnorm
from ascfam.genetics import (
    GenotypeDist,
    ScoreModel,
    GeneticsError,
    family_genotype_dist,
    score_distribution,
)
from ascfam.mvnorm import Gaussian, QmcPointCache, Rectangle
from ascfam.pedigree import Cohort, Family, relationship_matrix

LIKELIHOOD_NODES = 48


class ModelError(ValueError):
    """Raised on invalid parameter values or unusable family data."""


@dataclass(frozen=True)
class Theta:
    """Full parameter vector of the joint model.

    The latent residual SD of Y* is fixed at 1 and the probit threshold at 0
    for identifiability; they are not parameters.
    """

    alpha0: float
    alpha1: float
    beta0: float
    beta1: float
    sigma_gy: float
    sigma_gx: float
    sigma_u: float
    sigma_eps: float
    delta: float = 1.0
    alpha_z: tuple[float, ...] = ()
    beta_z: tuple[float, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "alpha_z", tuple(float(v) for v in self.alpha_z))
        object.__setattr__(self, "beta_z", tuple(float(v) for v in self.beta_z))
        if self.sigma_eps <= 0:
            raise ModelError(f"sigma_eps must be > 0, got {self.sigma_eps}")
        for name in ("sigma_gy", "sigma_gx", "sigma_u"):
            if getattr(self, name) < 0:
                raise ModelError(f"{name} must be >= 0, got {getattr(self, name)}")
        if len(self.alpha_z) != len(self.beta_z):
            raise ModelError("alpha_z and beta_z must have the same length")

    @property
    def n_covariates(self) -> int:
        return len(self.alpha_z)


@dataclass(frozen=True)
class NaiveParams:
    """Parameters of the comparator linear mixed model for X alone."""

    beta0: float
    beta1: float
    sigma_gx: float
    sigma_eps: float
    beta_z: tuple[float, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "beta_z", tuple(float(v) for v in self.beta_z))
        if self.sigma_eps <= 0:
            raise ModelError(f"sigma_eps must be > 0, got {self.sigma_eps}")
        if self.sigma_gx < 0:
            raise ModelError(f"sigma_gx must be >= 0, got {self.sigma_gx}")


@dataclass
class FamilyData:
    """Observed vectors of one family, restricted to members with observed Y.

    ``x`` and ``g`` carry NaN where unobserved. ``included_idx`` maps rows
    back to positions in ``family.members``.
    """

    family: Family
    member_ids: tuple[str, ...]
    y: np.ndarray
    x: np.ndarray
    g: np.ndarray
    z: np.ndarray
    relationship: np.ndarray
    included_idx: np.ndarray
    warnings: tuple[str, ...] = ()

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @classmethod
    def from_family(cls, family: Family, n_covariates: int = 0) -> "FamilyData":
        rel = family.relationship
        if rel is None:
            rel = relationship_matrix(family)
        notes = []
        included = []
        for j, mem in enumerate(family.members):
            if mem.primary is None:
                if mem.secondary is not None or mem.genotype is not None:
                    notes.append(
                        f"family {family.id!r}: member {mem.id!r} has data but no "
                        "primary phenotype; excluded from the likelihood"
                    )
                continue
            if len(mem.covariates) != n_covariates:
                raise ModelError(
                    f"family {family.id!r}, member {mem.id!r}: expected "
                    f"{n_covariates} covariates, found {len(mem.covariates)}"
                )
            included.append(j)
        idx = np.array(included, dtype=int)
        members = [family.members[j] for j in included]
        y = np.array([m.primary for m in members], dtype=np.int8)
        x = np.array(
            [np.nan if m.secondary is None else m.secondary for m in members], dtype=float
        )
        g = np.array(
            [np.nan if m.genotype is None else m.genotype for m in members], dtype=float
        )
        z = np.array([m.covariates for m in members], dtype=float).reshape(
            len(members), n_covariates
        )
        return cls(
            family=family,
            member_ids=tuple(m.id for m in members),
            y=y,
            x=x,
            g=g,
            z=z,
            relationship=rel[np.ix_(idx, idx)],
            included_idx=idx,
            warnings=tuple(notes),
        )


# ---------------------------------------------------------------------------
# Covariance assembly and derived quantities
# ---------------------------------------------------------------------------


def _blocks(theta: Theta, R: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    n = R.shape[0]
    eye = np.eye(n)
    s_y = theta.sigma_gy ** 2 * R + (theta.sigma_u ** 2 + 1.0) * eye
    s_x = theta.sigma_gx ** 2 * R + (
        theta.delta ** 2 * theta.sigma_u ** 2 + theta.sigma_eps ** 2
    ) * eye
    s_xy = theta.sigma_gx * theta.sigma_gy * R + theta.delta * theta.sigma_u ** 2 * eye
    return s_y, s_x, s_xy


def assemble_covariance(theta: Theta, R: np.ndarray) -> np.ndarray:
    """Joint covariance of (Y*, X) for one family, ordered Y* block first."""
    R = np.asarray(R, dtype=float)
    s_y, s_x, s_xy = _blocks(theta, R)
    return np.block([[s_y, s_xy], [s_xy, s_x]])


def derived_quantities(theta: Theta) -> dict[str, float]:
    """Heritability of X and the marginal correlations for sibling pairs.

    ``h2`` uses delta**2 in the denominator, consistent with Var(X); when
    delta != 1 the linear-delta variant is reported alongside it.
    """
    var_x = theta.sigma_gx ** 2 + theta.delta ** 2 * theta.sigma_u ** 2 + theta.sigma_eps ** 2
    var_y = theta.sigma_gy ** 2 + theta.sigma_u ** 2 + 1.0
    if var_x <= 0 or var_y <= 0:
        raise ModelError("total variance must be positive")
    cov_xy_within = theta.sigma_gx * theta.sigma_gy + theta.delta * theta.sigma_u ** 2
    out = {
        "h2": theta.sigma_gx ** 2 / var_x,
        "rho_x": 0.5 * theta.sigma_gx ** 2 / var_x,
        "rho_y": 0.5 * theta.sigma_gy ** 2 / var_y,
        "rho_xy": cov_xy_within / np.sqrt(var_x * var_y),
        "rho_xy_cross": 0.5 * theta.sigma_gx * theta.sigma_gy / np.sqrt(var_x * var_y),
    }
    if theta.delta != 1.0:
        var_x_lin = (
            theta.sigma_gx ** 2 + theta.delta * theta.sigma_u ** 2 + theta.sigma_eps ** 2
        )
        out["h2_linear_delta"] = theta.sigma_gx ** 2 / var_x_lin
    return out


# ---------------------------------------------------------------------------
# Orthant helpers
# ---------------------------------------------------------------------------


def _orthant_rectangle(y: np.ndarray) -> Rectangle:
    lower = np.where(y == 1, 0.0, -np.inf)
    upper = np.where(y == 1, np.inf, 0.0)
    return Rectangle(lower=lower, upper=upper)


def _log_orthants(
    cov: np.ndarray,
    means: np.ndarray,
    signs: np.ndarray,
    accuracy: float,
    point_cache: Optional[QmcPointCache],
    n_nodes: int = LIKELIHOOD_NODES,
) -> np.ndarray:
    """Log orthant probabilities for a batch of means under one covariance.

    Uses the deterministic one-factor quadrature whenever the covariance
    decomposes; otherwise falls back to QMC row by row.
    """
    means = np.atleast_2d(means)
    signs = np.broadcast_to(np.atleast_2d(signs), means.shape)
    fac = mvnorm.factor_decompose(cov)
    if fac is not None:
        d, u = fac
        return mvnorm.log_orthant_factor(means, signs.astype(float), d, u, n_nodes)
    out = np.empty(means.shape[0])
    for i in range(means.shape[0]):
        y = (signs[i] > 0).astype(np.int8)
        p, _ = mvnorm.rectangle_prob(
            Gaussian(mean=means[i], cov=cov),
            _orthant_rectangle(y),
            accuracy=accuracy,
            point_cache=point_cache,
        )
        out[i] = np.log(p) if p > 0 else -np.inf
    return out


def primary_orthant(
    theta: Theta,
    fd: FamilyData,
    g: Sequence[float],
    accuracy: float = 1e-6,
    point_cache: Optional[QmcPointCache] = None,
) -> float:
    """P(Y = y_observed | g) under the marginal latent model of Y*."""
    g = np.asarray(g, dtype=float)
    if g.shape[0] != fd.n:
        raise ModelError("genotype vector must cover all members with observed Y")
    s_y, _, _ = _blocks(theta, fd.relationship)
    mean = theta.alpha0 + theta.alpha1 * g + fd.z @ np.array(theta.alpha_z)
    p, _ = mvnorm.rectangle_prob(
        Gaussian(mean=mean, cov=s_y),
        _orthant_rectangle(fd.y),
        accuracy=accuracy,
        point_cache=point_cache,
    )
    return p


# ---------------------------------------------------------------------------
# Per-family log-likelihoods (general path)
# ---------------------------------------------------------------------------


def _conditional_pieces(
    s_y: np.ndarray, s_x: np.ndarray, s_xy: np.ndarray, x_obs_idx: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray, float]:
    """Cholesky of the observed X block, the regression map A = S_yx S_xx^-1
    restricted to observed X, the conditional covariance of Y* given X, and
    the observed-block log-determinant."""
    s_xx = s_x[np.ix_(x_obs_idx, x_obs_idx)]
    chol = mvnorm.cholesky_with_jitter(s_xx)
    s_yx = s_xy[:, x_obs_idx]
    tmp = np.linalg.solve(s_xx, s_yx.T)
    cond_cov = s_y - s_yx @ tmp
    cond_cov = 0.5 * (cond_cov + cond_cov.T)
    log_det = 2.0 * np.log(np.diag(chol)).sum()
    return chol, tmp.T, cond_cov, log_det


def _x_logpdf(chol: np.ndarray, log_det: float, resid: np.ndarray) -> float:
    from scipy.linalg import solve_triangular

    z = solve_triangular(chol, resid, lower=True)
    k = resid.shape[0]
    return float(-0.5 * (k * np.log(2.0 * np.pi) + log_det + z @ z))


def _restricted_dist(fd: FamilyData, q: float) -> GenotypeDist:
    dist = family_genotype_dist(fd.family, q)
    if len(dist.member_ids) == fd.n and tuple(dist.member_ids) == fd.member_ids:
        return dist
    keep = [list(dist.member_ids).index(mid) for mid in fd.member_ids]
    return dist.marginal(keep)


def family_loglik_snp(
    theta: Theta,
    fd: FamilyData,
    q: float,
    accuracy: float = 1e-6,
    point_cache: Optional[QmcPointCache] = None,
    dist: Optional[GenotypeDist] = None,
) -> float:
    """Retrospective log-likelihood contribution of one family, SNP mode.

    Members with missing X are marginalized out of the X block; members with
    missing genotype are summed out of the numerator against the family
    genotype distribution. The denominator always sums over the full
    genotype configuration space.
    """
    if fd.n == 0:
        raise ModelError(f"family {fd.family.id!r} has no members with observed Y")
    if dist is None:
        dist = _restricted_dist(fd, q)
    s_y, s_x, s_xy = _blocks(theta, fd.relationship)
    az = np.array(theta.alpha_z)
    bz = np.array(theta.beta_z)
    y_base = theta.alpha0 + fd.z @ az
    x_base = theta.beta0 + fd.z @ bz
    signs = (2.0 * fd.y - 1.0).astype(float)

    configs = dist.configs.astype(float)
    log_pg = np.log(np.maximum(dist.probs, 1e-300))

    # Denominator: sum the Y-pattern probability over all configurations.
    den_means = y_base[None, :] + theta.alpha1 * configs
    log_den = float(
        logsumexp(_log_orthants(s_y, den_means, signs, accuracy, point_cache) + log_pg)
    )

    # Numerator: configurations consistent with the observed genotypes.
    obs_g = ~np.isnan(fd.g)
    match = np.all(dist.configs[:, obs_g] == fd.g[obs_g].astype(np.int8), axis=1)
    if not np.any(match):
        raise ModelError(
            f"family {fd.family.id!r}: observed genotypes have zero prior probability"
        )
    cfg_num = configs[match]
    log_pg_num = log_pg[match]

    x_obs = ~np.isnan(fd.x)
    terms = np.empty(cfg_num.shape[0])
    if np.any(x_obs):
        xo = np.flatnonzero(x_obs)
        chol, a_map, cond_cov, log_det = _conditional_pieces(s_y, s_x, s_xy, xo)
        x_vals = fd.x[xo]
        for i, cfg in enumerate(cfg_num):
            mu_x = x_base + theta.beta1 * cfg
            resid = x_vals - mu_x[xo]
            cond_mean = y_base + theta.alpha1 * cfg + a_map @ resid
            lp_x = _x_logpdf(chol, log_det, resid)
            lp_orth = _log_orthants(
                cond_cov, cond_mean[None, :], signs, accuracy, point_cache
            )[0]
            terms[i] = lp_x + lp_orth + log_pg_num[i]
    else:
        num_means = y_base[None, :] + theta.alpha1 * cfg_num
        terms = (
            _log_orthants(s_y, num_means, signs, accuracy, point_cache) + log_pg_num
        )
    return float(logsumexp(terms)) - log_den


def family_loglik_score(
    theta: Theta,
    fd: FamilyData,
    sm: ScoreModel,
    accuracy: float = 1e-6,
    point_cache: Optional[QmcPointCache] = None,
) -> float:
    """Retrospective log-likelihood contribution of one family, score mode.

    The denominator integrates the polygenic score analytically: Y* is
    marginally Gaussian with covariance inflated by alpha1^2 sigma_g^2 R, so
    a single orthant probability suffices.
    """
    if fd.n == 0:
        raise ModelError(f"family {fd.family.id!r} has no members with observed Y")
    if np.any(np.isnan(fd.g)):
        raise ModelError(
            f"family {fd.family.id!r}: score mode requires observed scores for all "
            "members entering the likelihood"
        )
    s_y, s_x, s_xy = _blocks(theta, fd.relationship)
    az = np.array(theta.alpha_z)
    bz = np.array(theta.beta_z)
    y_base = theta.alpha0 + fd.z @ az
    x_base = theta.beta0 + fd.z @ bz
    signs = (2.0 * fd.y - 1.0).astype(float)

    den_cov = s_y + theta.alpha1 ** 2 * sm.sigma_g ** 2 * fd.relationship
    den_mean = y_base + theta.alpha1 * sm.mu_g
    log_den = float(
        _log_orthants(den_cov, den_mean[None, :], signs, accuracy, point_cache)[0]
    )

    score_law = Gaussian(
        mean=np.full(fd.n, sm.mu_g), cov=sm.sigma_g ** 2 * fd.relationship
    )
    log_pg = mvnorm.log_density(score_law, fd.g)

    x_obs = ~np.isnan(fd.x)
    mu_y = y_base + theta.alpha1 * fd.g
    if np.any(x_obs):
        xo = np.flatnonzero(x_obs)
        chol, a_map, cond_cov, log_det = _conditional_pieces(s_y, s_x, s_xy, xo)
        mu_x = x_base + theta.beta1 * fd.g
        resid = fd.x[xo] - mu_x[xo]
        lp_x = _x_logpdf(chol, log_det, resid)
        cond_mean = mu_y + a_map @ resid
        lp_orth = _log_orthants(
            cond_cov, cond_mean[None, :], signs, accuracy, point_cache
        )[0]
    else:
        lp_x = 0.0
        lp_orth = _log_orthants(s_y, mu_y[None, :], signs, accuracy, point_cache)[0]
    return lp_x + lp_orth + log_pg - log_den


def naive_loglik(params: NaiveParams, fd: FamilyData) -> float:
    """Log-likelihood of the naive linear mixed model for X (no correction)."""
    mask = ~np.isnan(fd.x) & ~np.isnan(fd.g)
    if not np.any(mask):
        return 0.0
    idx = np.flatnonzero(mask)
    bz = np.array(params.beta_z)
    mean = params.beta0 + params.beta1 * fd.g[idx] + fd.z[idx] @ bz
    cov = params.sigma_gx ** 2 * fd.relationship[np.ix_(idx, idx)] + (
        params.sigma_eps ** 2
    ) * np.eye(idx.size)
    return mvnorm.log_density(Gaussian(mean=mean, cov=cov), fd.x[idx])


# ---------------------------------------------------------------------------
# Batched cohort evaluators
# ---------------------------------------------------------------------------


def _is_pure_sibship(fd: FamilyData) -> bool:
    n = fd.n
    if n == 0:
        return False
    expected = 0.5 * np.eye(n) + 0.5 * np.ones((n, n))
    return bool(np.array_equal(fd.relationship, expected))


def _sibship_denominator_groups(
    dist: GenotypeDist, k: int
) -> tuple[np.ndarray, np.ndarray]:
    """Aggregate genotype configurations by exchangeability for the Y pattern
    with the first k members affected: configurations whose genotype multisets
    agree on the affected and unaffected blocks give identical orthants."""
    configs = dist.configs
    probs = dist.probs
    keys: dict[tuple, tuple[np.ndarray, float]] = {}
    for cfg, pr in zip(configs, probs):
        key = (tuple(sorted(cfg[:k])), tuple(sorted(cfg[k:])))
        if key in keys:
            rep, acc = keys[key]
            keys[key] = (rep, acc + pr)
        else:
            keys[key] = (np.concatenate([np.sort(cfg[:k]), np.sort(cfg[k:])]), pr)
    reps = np.array([v[0] for v in keys.values()], dtype=float)
    weights = np.array([v[1] for v in keys.values()])
    return reps, np.log(np.maximum(weights, 1e-300))


class RetrospectiveLikelihood:
    """Cohort-level retrospective log-likelihood with caching and batching.

    Families that are covariate-free complete-data pure sibships share the
    vectorized path: one covariance assembly per family size per parameter
    vector, numerators batched across families, denominators cached by
    (size, number affected). Anything else falls back to the general
    per-family functions, so the evaluator is exact for every supported
    input.
    """

    def __init__(
        self,
        cohort: Cohort,
        mode: str = "snp",
        q: Optional[float] = None,
        score_model: Optional[ScoreModel] = None,
        accuracy: float = 1e-6,
        seed: int = 0,
        n_nodes: int = LIKELIHOOD_NODES,
    ):
        if mode not in ("snp", "score"):
            raise ModelError(f"unknown mode {mode!r}")
        if mode == "snp":
            if q is None or not 0.0 < q < 1.0:
                raise ModelError(f"SNP mode requires q in (0,1), got {q}")
        elif score_model is None:
            raise ModelError("score mode requires a ScoreModel")
        self.mode = mode
        self.q = q
        self.score_model = score_model
        self.accuracy = accuracy
        self.n_nodes = n_nodes
        self.point_cache = QmcPointCache(seed=seed)
        self.n_covariates = len(cohort.covariate_names)
        self.warnings: list[str] = []

        self.family_data: list[FamilyData] = []
        for fam in cohort.families:
            fd = FamilyData.from_family(fam, self.n_covariates)
            self.family_data.append(fd)
            self.warnings.extend(fd.warnings)
            if fd.n == 0:
                self.warnings.append(
                    f"family {fam.id!r} has no observed primary phenotypes; skipped"
                )

        self._fast_idx: list[int] = []
        self._slow_idx: list[int] = []
        self._dists: dict[int, GenotypeDist] = {}
        # Pure sibships of one size share the same genotype law; build it once.
        sib_dist_cache: dict[int, GenotypeDist] = {}
        for i, fd in enumerate(self.family_data):
            if fd.n == 0:
                continue
            pure = _is_pure_sibship(fd) and fd.n == fd.family.size
            fast = (
                self.n_covariates == 0
                and pure
                and not np.any(np.isnan(fd.x))
                and not np.any(np.isnan(fd.g))
            )
            if self.mode == "snp":
                if pure:
                    if fd.n not in sib_dist_cache:
                        sib_dist_cache[fd.n] = _restricted_dist(fd, self.q)
                    self._dists[i] = sib_dist_cache[fd.n]
                else:
                    self._dists[i] = _restricted_dist(fd, self.q)
            (self._fast_idx if fast else self._slow_idx).append(i)

        self._sizes: dict[int, dict] = {}
        for i in self._fast_idx:
            fd = self.family_data[i]
            self._sizes.setdefault(fd.n, {"idx": []})["idx"].append(i)
        for n, entry in self._sizes.items():
            idx = entry["idx"]
            fds = [self.family_data[i] for i in idx]
            entry["y"] = np.array([fd.y for fd in fds], dtype=np.int8)
            entry["signs"] = 2.0 * entry["y"] - 1.0
            entry["x"] = np.array([fd.x for fd in fds])
            entry["g"] = np.array([fd.g for fd in fds])
            entry["k"] = entry["y"].sum(axis=1)
            if self.mode == "snp":
                # All pure sibships of one size share the genotype law, so the
                # exchangeable denominator grouping is shared too.
                dist = self._dists[idx[0]]
                entry["log_pg"] = np.array(
                    [
                        self._dists[i].log_prob_of(fd.g.astype(np.int8))
                        for i, fd in zip(idx, fds)
                    ]
                )
                entry["groups"] = {
                    int(k): _sibship_denominator_groups(dist, int(k))
                    for k in np.unique(entry["k"])
                }
            else:
                sm = self.score_model
                rel = fds[0].relationship
                law = Gaussian(mean=np.full(n, sm.mu_g), cov=sm.sigma_g ** 2 * rel)
                entry["log_pg"] = np.array(
                    [mvnorm.log_density(law, fd.g) for fd in fds]
                )

    @property
    def n_families(self) -> int:
        return sum(1 for fd in self.family_data if fd.n > 0)

    def per_family_loglik(self, theta: Theta) -> np.ndarray:
        """Per-family contributions, in cohort family order."""
        out = np.zeros(len(self.family_data))
        for n, entry in self._sizes.items():
            vals = self._fast_size_loglik(theta, n, entry)
            out[np.array(entry["idx"], dtype=int)] = vals
        for i in self._slow_idx:
            fd = self.family_data[i]
            if self.mode == "snp":
                out[i] = family_loglik_snp(
                    theta,
                    fd,
                    self.q,
                    accuracy=self.accuracy,
                    point_cache=self.point_cache,
                    dist=self._dists[i],
                )
            else:
                out[i] = family_loglik_score(
                    theta,
                    fd,
                    self.score_model,
                    accuracy=self.accuracy,
                    point_cache=self.point_cache,
                )
        return out

    def loglik(self, theta: Theta) -> float:
        return float(self.per_family_loglik(theta).sum())

    # -- fast path ---------------------------------------------------------

    def _fast_size_loglik(self, theta: Theta, n: int, entry: dict) -> np.ndarray:
        from scipy.linalg import solve_triangular

        sib_r = 0.5 * np.eye(n) + 0.5 * np.ones((n, n))
        s_y, s_x, s_xy = _blocks(theta, sib_r)
        chol_x = mvnorm.cholesky_with_jitter(s_x)
        log_det_x = 2.0 * np.log(np.diag(chol_x)).sum()
        a_map = np.linalg.solve(s_x, s_xy).T
        cond_cov = s_y - s_xy @ np.linalg.solve(s_x, s_xy)
        cond_cov = 0.5 * (cond_cov + cond_cov.T)

        g = entry["g"]
        x = entry["x"]
        signs = entry["signs"]

        # X marginal log-density, batched over families of this size.
        resid = x - (theta.beta0 + theta.beta1 * g)
        zmat = solve_triangular(chol_x, resid.T, lower=True)
        lp_x = -0.5 * (n * np.log(2.0 * np.pi) + log_det_x + (zmat ** 2).sum(axis=0))

        # Conditional orthant of Y* given X.
        cond_means = theta.alpha0 + theta.alpha1 * g + resid @ a_map.T
        fac = mvnorm.factor_decompose(cond_cov)
        if fac is not None:
            d, u = fac
            lp_orth = mvnorm.log_orthant_factor(cond_means, signs, d, u, self.n_nodes)
        else:
            lp_orth = _log_orthants(
                cond_cov, cond_means, signs, self.accuracy, self.point_cache, self.n_nodes
            )

        # Denominators cached by the number of affected members.
        lam_y = 0.5 * theta.sigma_gy ** 2
        d_y = np.full(n, 0.5 * theta.sigma_gy ** 2 + theta.sigma_u ** 2 + 1.0)
        if self.mode == "score":
            infl = theta.alpha1 ** 2 * self.score_model.sigma_g ** 2
            lam_y += 0.5 * infl
            d_y = d_y + 0.5 * infl
        u_y = np.full(n, np.sqrt(lam_y))

        log_den_by_k: dict[int, float] = {}
        for k in np.unique(entry["k"]):
            k = int(k)
            pattern = np.concatenate([np.ones(k), -np.ones(n - k)])
            if self.mode == "snp":
                reps, logw = entry["groups"][k]
                means = theta.alpha0 + theta.alpha1 * reps
                logs = mvnorm.log_orthant_factor(
                    means, np.broadcast_to(pattern, means.shape), d_y, u_y, self.n_nodes
                )
                log_den_by_k[k] = float(logsumexp(logs + logw))
            else:
                mean = np.full((1, n), theta.alpha0 + theta.alpha1 * self.score_model.mu_g)
                log_den_by_k[k] = float(
                    mvnorm.log_orthant_factor(
                        mean, pattern[None, :], d_y, u_y, self.n_nodes
                    )[0]
                )

        log_den = np.array([log_den_by_k[int(k)] for k in entry["k"]])
        return lp_x + lp_orth + entry["log_pg"] - log_den


class NaiveLikelihood:
    """Batched log-likelihood of the naive linear mixed model for X."""

    def __init__(self, cohort: Cohort):
        self.n_covariates = len(cohort.covariate_names)
        self.family_data = [
            FamilyData.from_family(fam, self.n_covariates) for fam in cohort.families
        ]
        # Group families by relationship structure so each parameter vector
        # needs one Cholesky per group.
        self._groups: dict[bytes, dict] = {}
        for fd in self.family_data:
            mask = ~np.isnan(fd.x) & ~np.isnan(fd.g)
            if not np.any(mask):
                continue
            idx = np.flatnonzero(mask)
            rel = fd.relationship[np.ix_(idx, idx)]
            key = rel.tobytes()
            grp = self._groups.setdefault(key, {"rel": rel, "x": [], "g": [], "z": []})
            grp["x"].append(fd.x[idx])
            grp["g"].append(fd.g[idx])
            grp["z"].append(fd.z[idx])
        for grp in self._groups.values():
            grp["x"] = np.array(grp["x"])
            grp["g"] = np.array(grp["g"])
            grp["z"] = np.array(grp["z"])

    @property
    def n_observations(self) -> int:
        return sum(grp["x"].size for grp in self._groups.values())

    def loglik(self, params: NaiveParams) -> float:
        from scipy.linalg import solve_triangular

        total = 0.0
        bz = np.array(params.beta_z)
        for grp in self._groups.values():
            rel = grp["rel"]
            n = rel.shape[0]
            cov = params.sigma_gx ** 2 * rel + params.sigma_eps ** 2 * np.eye(n)
            chol = mvnorm.cholesky_with_jitter(cov)
            log_det = 2.0 * np.log(np.diag(chol)).sum()
            mean = params.beta0 + params.beta1 * grp["g"] + grp["z"] @ bz
            resid = grp["x"] - mean
            z = solve_triangular(chol, resid.T, lower=True)
            m = grp["x"].shape[0]
            total += -0.5 * (
                m * n * np.log(2.0 * np.pi) + m * log_det + float((z ** 2).sum())
            )
        return float(total)
