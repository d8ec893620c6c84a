"""Maximum-likelihood fitting, standard errors, and likelihood-ratio tests.

Optimization runs in a transformed space: standard deviations are
log-mapped (clamped below at log 1e-8), intercepts, slopes and delta are
identity-mapped. The optimizer is BFGS with central-difference gradients
(step 1e-5 * (1 + |coordinate|)) and an Armijo backtracking line search;
convergence requires both a small relative log-likelihood change and a
small gradient sup-norm. Standard errors come from the central-difference
Hessian at the optimum, mapped back to the natural scale by the delta
method.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np
from scipy.special import log_ndtr
from scipy.stats import chi2

from ascfam.genetics import (
    ScoreModel,
    estimate_maf_controls,
    estimate_score_moments,
)
from ascfam.jointmodel import (
    ModelError,
    NaiveLikelihood,
    NaiveParams,
    RetrospectiveLikelihood,
    Theta,
    derived_quantities,
)
from ascfam.pedigree import Cohort

SD_FLOOR = 1e-8
LOG_SD_FLOOR = float(np.log(SD_FLOOR))
BOUNDARY_TOL = 1e-3  # transformed-scale distance from the floor that counts as "at it"
GRAD_STEP = 1e-5
HESS_STEP = 1e-3


class FitError(RuntimeError):
    """Raised when a likelihood cannot be evaluated or set up for fitting."""


@dataclass
class FitOptions:
    """Knobs of the fitting pipeline; defaults are the artifact's declared ones."""

    mode: str = "snp"  # "snp" or "score"
    delta_constrained: bool = True
    maf: Optional[float] = None  # estimated from controls when None (SNP mode)
    max_iterations: int = 200
    grad_tolerance: float = 1e-3
    loglik_rel_tolerance: float = 1e-9
    orthant_accuracy: float = 1e-6
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("snp", "score"):
            raise FitError(f"unknown mode {self.mode!r}")
        if self.grad_tolerance <= 0 or self.loglik_rel_tolerance <= 0:
            raise FitError("tolerances must be positive")
        if self.orthant_accuracy <= 0:
            raise FitError("orthant_accuracy must be positive")
        if self.maf is not None and not 0.0 < self.maf < 1.0:
            raise FitError(f"maf outside (0,1): {self.maf}")


@dataclass
class FitResult:
    """A fitted model: estimates, uncertainty, and bookkeeping."""

    model: str  # "retrospective" or "naive"
    theta_hat: Union[Theta, NaiveParams]
    params: dict[str, float]
    se: dict[str, Optional[float]]
    boundary: dict[str, bool]
    loglik: float
    converged: bool
    iterations: int
    n_evaluations: int
    derived: dict[str, float]
    derived_se: dict[str, Optional[float]]
    q_used: Union[float, ScoreModel, None]
    se_available: bool
    warnings: list[str] = field(default_factory=list)
    optimizer: Optional["_OptimResult"] = None


# ---------------------------------------------------------------------------
# Parameterization
# ---------------------------------------------------------------------------


class Parameterization:
    """Maps model objects to and from the unconstrained optimizer vector."""

    def __init__(
        self,
        kind: str,
        covariate_names: list[str],
        free_delta: bool = False,
        fixed: Optional[dict[str, float]] = None,
    ):
        self.kind = kind
        self.covariate_names = list(covariate_names)
        self.free_delta = free_delta
        if kind == "joint":
            names = ["alpha0", "alpha1"]
            names += [f"alpha_{c}" for c in self.covariate_names]
            names += ["beta0", "beta1"]
            names += [f"beta_{c}" for c in self.covariate_names]
            names += ["sigma_gy", "sigma_gx", "sigma_u"]
            if free_delta:
                names.append("delta")
            names.append("sigma_eps")
        elif kind == "naive":
            names = ["beta0", "beta1"]
            names += [f"beta_{c}" for c in self.covariate_names]
            names += ["sigma_gx", "sigma_eps"]
        else:
            raise FitError(f"unknown parameterization kind {kind!r}")
        self.names = names
        self.is_log = np.array([n.startswith("sigma_") for n in names])
        self.fixed = dict(fixed or {})
        unknown = set(self.fixed) - set(names)
        if unknown:
            raise FitError(f"cannot fix unknown parameters {sorted(unknown)}")
        self.free_names = [n for n in names if n not in self.fixed]
        self._free_idx = np.array(
            [i for i, n in enumerate(names) if n not in self.fixed], dtype=int
        )

    @property
    def n_free(self) -> int:
        return len(self.free_names)

    def _natural_to_vector(self, values: dict[str, float]) -> np.ndarray:
        vec = np.empty(len(self.names))
        for i, name in enumerate(self.names):
            v = values[name]
            if self.is_log[i]:
                vec[i] = np.log(v) if v > SD_FLOOR else LOG_SD_FLOOR
            else:
                vec[i] = v
        return vec

    def _vector_to_natural(self, vec: np.ndarray) -> dict[str, float]:
        out = {}
        for i, name in enumerate(self.names):
            if self.is_log[i]:
                out[name] = float(np.exp(max(vec[i], LOG_SD_FLOOR)))
            else:
                out[name] = float(vec[i])
        return out

    def model_values(self, model: Union[Theta, NaiveParams]) -> dict[str, float]:
        values: dict[str, float] = {}
        if self.kind == "joint":
            assert isinstance(model, Theta)
            values.update(
                alpha0=model.alpha0, alpha1=model.alpha1,
                beta0=model.beta0, beta1=model.beta1,
                sigma_gy=model.sigma_gy, sigma_gx=model.sigma_gx,
                sigma_u=model.sigma_u, sigma_eps=model.sigma_eps,
            )
            if self.free_delta:
                values["delta"] = model.delta
            for c, a, b in zip(self.covariate_names, model.alpha_z, model.beta_z):
                values[f"alpha_{c}"] = a
                values[f"beta_{c}"] = b
        else:
            assert isinstance(model, NaiveParams)
            values.update(
                beta0=model.beta0, beta1=model.beta1,
                sigma_gx=model.sigma_gx, sigma_eps=model.sigma_eps,
            )
            for c, b in zip(self.covariate_names, model.beta_z):
                values[f"beta_{c}"] = b
        return values

    def to_model(self, values: dict[str, float]) -> Union[Theta, NaiveParams]:
        if self.kind == "joint":
            return Theta(
                alpha0=values["alpha0"],
                alpha1=values["alpha1"],
                beta0=values["beta0"],
                beta1=values["beta1"],
                sigma_gy=values["sigma_gy"],
                sigma_gx=values["sigma_gx"],
                sigma_u=values["sigma_u"],
                sigma_eps=values["sigma_eps"],
                delta=values.get("delta", 1.0),
                alpha_z=tuple(values[f"alpha_{c}"] for c in self.covariate_names),
                beta_z=tuple(values[f"beta_{c}"] for c in self.covariate_names),
            )
        return NaiveParams(
            beta0=values["beta0"],
            beta1=values["beta1"],
            sigma_gx=values["sigma_gx"],
            sigma_eps=values["sigma_eps"],
            beta_z=tuple(values[f"beta_{c}"] for c in self.covariate_names),
        )

    def transform(self, model: Union[Theta, NaiveParams]) -> np.ndarray:
        """Full transformed vector (fixed coordinates included)."""
        return self._natural_to_vector(self.model_values(model))

    def untransform(self, vec: np.ndarray) -> Union[Theta, NaiveParams]:
        return self.to_model(self._vector_to_natural(np.asarray(vec, dtype=float)))

    def free_vector(self, model: Union[Theta, NaiveParams]) -> np.ndarray:
        return self.transform(model)[self._free_idx]

    def full_vector(self, free_vec: np.ndarray) -> np.ndarray:
        values = {name: value for name, value in self.fixed.items()}
        vec = np.empty(len(self.names))
        for i, name in enumerate(self.names):
            if name in values:
                v = values[name]
                vec[i] = (np.log(v) if v > SD_FLOOR else LOG_SD_FLOOR) if self.is_log[i] else v
        vec[self._free_idx] = free_vec
        return vec

    def model_from_free(self, free_vec: np.ndarray) -> Union[Theta, NaiveParams]:
        return self.untransform(self.full_vector(free_vec))


def transform(theta: Theta, covariate_names: Optional[list[str]] = None,
              free_delta: bool = False) -> np.ndarray:
    """Map a Theta to the unconstrained optimizer vector (SDs log-mapped)."""
    names = covariate_names if covariate_names is not None else [
        str(i) for i in range(theta.n_covariates)
    ]
    return Parameterization("joint", names, free_delta=free_delta).transform(theta)


def untransform(vec: np.ndarray, covariate_names: Optional[list[str]] = None,
                free_delta: bool = False) -> Theta:
    """Inverse of :func:`transform`; values below the SD floor clamp to it."""
    vec = np.asarray(vec, dtype=float)
    base = 9 if free_delta else 8
    if covariate_names is None:
        n_cov = (len(vec) - base) // 2
        covariate_names = [str(i) for i in range(n_cov)]
    layout = Parameterization("joint", covariate_names, free_delta=free_delta)
    if len(vec) != len(layout.names):
        raise FitError(
            f"vector of length {len(vec)} does not match the {len(layout.names)}-"
            "parameter layout"
        )
    return layout.untransform(vec)


# ---------------------------------------------------------------------------
# BFGS with numeric gradients
# ---------------------------------------------------------------------------


@dataclass
class _OptimResult:
    x: np.ndarray
    f: float
    grad: np.ndarray
    converged: bool
    iterations: int
    n_evaluations: int
    message: str
    f_history: list[float] = field(default_factory=list)


def _central_gradient(f: Callable[[np.ndarray], float], x: np.ndarray,
                      count: list[int]) -> np.ndarray:
    g = np.empty_like(x)
    for i in range(x.size):
        h = GRAD_STEP * (1.0 + abs(x[i]))
        xp = x.copy()
        xm = x.copy()
        xp[i] += h
        xm[i] -= h
        g[i] = (f(xp) - f(xm)) / (2.0 * h)
        count[0] += 2
    return g


def _minimize_bfgs(
    f: Callable[[np.ndarray], float],
    x0: np.ndarray,
    grad_tol: float,
    rel_tol: float,
    max_iter: int,
    max_step: float = 2.0,
) -> _OptimResult:
    """Quasi-Newton minimization; the approximate inverse Hessian is built
    from gradient differences only (no explicit Hessian evaluations).

    The first trial point of each line search is kept within ``max_step`` of
    the current iterate; near a stationary point the search direction is
    shorter than that, so the cap never interferes with final convergence.
    It only tames early iterations, where a likelihood ridge can otherwise
    catapult the iterate out of the sane region.
    """
    count = [0]
    x = np.asarray(x0, dtype=float).copy()
    fx = f(x)
    count[0] += 1
    if not np.isfinite(fx):
        raise FitError("objective is not finite at the starting point")
    g = _central_gradient(f, x, count)
    n = x.size
    eye = np.eye(n)
    h_inv = eye.copy()
    converged = False
    message = "max iterations reached"
    history = [fx]
    it = 0
    for it in range(1, max_iter + 1):
        if not np.all(np.isfinite(g)):
            message = "non-finite gradient"
            break
        d = -h_inv @ g
        gd = float(g @ d)
        if gd >= 0:
            h_inv = eye.copy()
            d = -g
            gd = float(g @ d)
            if gd >= 0:
                converged = bool(np.max(np.abs(g)) < grad_tol)
                message = "zero gradient direction"
                break
        step = min(1.0, max_step / max(float(np.linalg.norm(d)), 1e-300))
        fn = fx
        ok = False
        for _ in range(40):
            xn = x + step * d
            fn = f(xn)
            count[0] += 1
            if np.isfinite(fn) and fn <= fx + 1e-4 * step * gd:
                ok = True
                break
            step *= 0.5
        if not ok:
            converged = bool(np.max(np.abs(g)) < grad_tol)
            message = "line search failed"
            break
        gn = _central_gradient(f, xn, count)
        s = xn - x
        yv = gn - g
        sy = float(s @ yv)
        if it == 1 and sy > 0:
            h_inv = (sy / float(yv @ yv)) * eye
        if sy > 1e-10 * np.linalg.norm(s) * np.linalg.norm(yv):
            rho = 1.0 / sy
            v = eye - rho * np.outer(s, yv)
            h_inv = v @ h_inv @ v.T + rho * np.outer(s, s)
        rel_change = abs(fn - fx) / max(1.0, abs(fn))
        x, fx, g = xn, fn, gn
        history.append(fx)
        if rel_change < rel_tol and np.max(np.abs(g)) < grad_tol:
            converged = True
            message = "converged"
            break
    return _OptimResult(
        x=x, f=fx, grad=g, converged=converged, iterations=it,
        n_evaluations=count[0], message=message, f_history=history,
    )


# ---------------------------------------------------------------------------
# Initialization helpers
# ---------------------------------------------------------------------------


def _pooled_rows(cohort: Cohort):
    """Stack (y, g, x, z) over all members with the needed fields observed."""
    ys, gs, xs, zs = [], [], [], []
    for fam in cohort.families:
        for m in fam.members:
            if m.primary is None or m.genotype is None:
                continue
            ys.append(m.primary)
            gs.append(m.genotype)
            xs.append(np.nan if m.secondary is None else m.secondary)
            zs.append(m.covariates)
    return (
        np.array(ys, dtype=float),
        np.array(gs, dtype=float),
        np.array(xs, dtype=float),
        np.array(zs, dtype=float).reshape(len(ys), -1),
    )


def _probit_start(y: np.ndarray, g: np.ndarray, z: np.ndarray) -> np.ndarray:
    """No-random-effect probit regression of Y on (1, G, Z), ignoring
    ascertainment; cheap and inside the attraction basin for initialization."""
    design = np.column_stack([np.ones_like(g), g, z])
    signs = 2.0 * y - 1.0

    def negll(coef: np.ndarray) -> float:
        eta = design @ coef
        return -float(log_ndtr(signs * eta).sum())

    res = _minimize_bfgs(
        negll, np.zeros(design.shape[1]), grad_tol=1e-5, rel_tol=1e-12, max_iter=100
    )
    return res.x


def _least_squares_start(
    x: np.ndarray, g: np.ndarray, z: np.ndarray
) -> tuple[np.ndarray, float]:
    mask = ~np.isnan(x)
    design = np.column_stack([np.ones(mask.sum()), g[mask], z[mask]])
    coef, *_ = np.linalg.lstsq(design, x[mask], rcond=None)
    resid = x[mask] - design @ coef
    dof = max(mask.sum() - design.shape[1], 1)
    return coef, float(np.sqrt(resid @ resid / dof))


# ---------------------------------------------------------------------------
# Hessian-based standard errors
# ---------------------------------------------------------------------------


def _central_hessian(f: Callable[[np.ndarray], float], x: np.ndarray) -> np.ndarray:
    n = x.size
    h = HESS_STEP * (1.0 + np.abs(x))
    hess = np.empty((n, n))
    f0 = f(x)
    for i in range(n):
        xp = x.copy(); xp[i] += h[i]
        xm = x.copy(); xm[i] -= h[i]
        hess[i, i] = (f(xp) - 2.0 * f0 + f(xm)) / h[i] ** 2
    for i in range(n):
        for j in range(i + 1, n):
            xpp = x.copy(); xpp[[i, j]] += [h[i], h[j]]
            xpm = x.copy(); xpm[i] += h[i]; xpm[j] -= h[j]
            xmp = x.copy(); xmp[i] -= h[i]; xmp[j] += h[j]
            xmm = x.copy(); xmm[[i, j]] -= [h[i], h[j]]
            hess[i, j] = hess[j, i] = (f(xpp) - f(xpm) - f(xmp) + f(xmm)) / (
                4.0 * h[i] * h[j]
            )
    return hess


def _standard_errors(
    negll: Callable[[np.ndarray], float],
    layout: Parameterization,
    free_hat: np.ndarray,
    boundary_free: np.ndarray,
    derived_fn: Optional[Callable[[np.ndarray], dict[str, float]]] = None,
) -> tuple[dict[str, Optional[float]], bool, dict[str, Optional[float]]]:
    """Delta-method standard errors from the transformed-scale Hessian.

    Boundary coordinates are excluded from the Hessian; if the remaining
    block is not positive definite all SEs are withheld.
    """
    se: dict[str, Optional[float]] = {n: None for n in layout.names}
    derived_se: dict[str, Optional[float]] = {}
    active = np.flatnonzero(~boundary_free)
    if active.size == 0:
        return se, False, derived_se

    def restricted(v: np.ndarray) -> float:
        full = free_hat.copy()
        full[active] = v
        return negll(full)

    hess = _central_hessian(restricted, free_hat[active])
    try:
        np.linalg.cholesky(hess)
    except np.linalg.LinAlgError:
        return se, False, derived_se
    cov_t = np.linalg.inv(hess)

    free_names = [layout.free_names[i] for i in active]
    natural = layout._vector_to_natural(layout.full_vector(free_hat))
    for k, name in enumerate(free_names):
        se_t = float(np.sqrt(cov_t[k, k]))
        if name.startswith("sigma_"):
            se[name] = se_t * natural[name]  # d(exp v)/dv = sigma
        else:
            se[name] = se_t

    if derived_fn is not None:
        base = derived_fn(free_hat)
        grads = {key: np.zeros(active.size) for key in base}
        for k, i in enumerate(active):
            h = 1e-6 * (1.0 + abs(free_hat[i]))
            vp = free_hat.copy(); vp[i] += h
            vm = free_hat.copy(); vm[i] -= h
            dp, dm = derived_fn(vp), derived_fn(vm)
            for key in base:
                grads[key][k] = (dp[key] - dm[key]) / (2.0 * h)
        for key in base:
            var = float(grads[key] @ cov_t @ grads[key])
            derived_se[key] = float(np.sqrt(var)) if var >= 0 else None
    return se, True, derived_se


# ---------------------------------------------------------------------------
# Public fitting API
# ---------------------------------------------------------------------------


def _finalize(
    model_name: str,
    layout: Parameterization,
    opt: _OptimResult,
    negll: Callable[[np.ndarray], float],
    q_used,
    warnings_list: list[str],
    derive: Callable[[Union[Theta, NaiveParams]], dict[str, float]],
    compute_se: bool,
) -> FitResult:
    free_hat = opt.x
    full_hat = layout.full_vector(free_hat)
    boundary_full = np.array(
        [
            layout.is_log[i] and full_hat[i] <= LOG_SD_FLOOR + BOUNDARY_TOL
            for i in range(len(layout.names))
        ]
    )
    natural = layout._vector_to_natural(full_hat)
    params = {}
    boundary = {}
    for i, name in enumerate(layout.names):
        at_floor = bool(boundary_full[i])
        boundary[name] = at_floor
        params[name] = 0.0 if at_floor else natural[name]

    model = layout.to_model({n: params[n] if not layout.is_log[i] or params[n] > 0
                             else SD_FLOOR
                             for i, n in enumerate(layout.names)})
    # Report clamped SDs as exact zeros in the public dict but keep the
    # floored value inside the model object so likelihoods stay evaluable.
    derived = derive(model)

    se: dict[str, Optional[float]] = {n: None for n in layout.names}
    derived_se: dict[str, Optional[float]] = {k: None for k in derived}
    se_ok = False
    if compute_se and opt.converged:
        boundary_free = np.array([boundary[n] for n in layout.free_names])

        def derived_at(free_vec: np.ndarray) -> dict[str, float]:
            return derive(layout.model_from_free(free_vec))

        se, se_ok, derived_se_new = _standard_errors(
            negll, layout, free_hat, boundary_free, derived_at
        )
        if derived_se_new:
            derived_se = derived_se_new
        if not se_ok:
            warnings_list.append(
                "numeric Hessian not positive definite; standard errors withheld"
            )

    return FitResult(
        model=model_name,
        theta_hat=model,
        params=params,
        se=se,
        boundary=boundary,
        loglik=-opt.f,
        converged=opt.converged,
        iterations=opt.iterations,
        n_evaluations=opt.n_evaluations,
        derived=derived,
        derived_se=derived_se,
        q_used=q_used,
        se_available=se_ok,
        warnings=warnings_list,
        optimizer=opt,
    )


def fit_naive(
    cohort: Cohort,
    options: Optional[FitOptions] = None,
    fix: Optional[dict[str, float]] = None,
    compute_se: bool = True,
    start: Optional[NaiveParams] = None,
) -> FitResult:
    """ML fit of the comparator linear mixed model for X (no ascertainment
    correction); reports the naive heritability sigma_gx^2/(sigma_gx^2+sigma_eps^2)."""
    options = options or FitOptions()
    evaluator = NaiveLikelihood(cohort)
    if evaluator.n_observations == 0:
        raise FitError("no members with both X and G observed")
    layout = Parameterization("naive", cohort.covariate_names, fixed=fix)

    if start is None:
        y, g, x, z = _pooled_rows(cohort)
        coef, resid_sd = _least_squares_start(x, g, z)
        start = NaiveParams(
            beta0=float(coef[0]),
            beta1=float(coef[1]),
            beta_z=tuple(coef[2:]),
            sigma_gx=max(0.6 * resid_sd, 1e-3),
            sigma_eps=max(0.8 * resid_sd, 1e-3),
        )

    def negll(free_vec: np.ndarray) -> float:
        return -evaluator.loglik(layout.model_from_free(free_vec))

    opt = _minimize_bfgs(
        negll,
        layout.free_vector(start),
        grad_tol=options.grad_tolerance,
        rel_tol=options.loglik_rel_tolerance,
        max_iter=options.max_iterations,
    )

    def derive(model: NaiveParams) -> dict[str, float]:
        total = model.sigma_gx ** 2 + model.sigma_eps ** 2
        return {"h2": model.sigma_gx ** 2 / total if total > 0 else np.nan}

    return _finalize("naive", layout, opt, negll, None, [], derive, compute_se)


def fit(
    cohort: Cohort,
    options: Optional[FitOptions] = None,
    fix: Optional[dict[str, float]] = None,
    compute_se: bool = True,
    start: Optional[Theta] = None,
) -> FitResult:
    """Maximize the retrospective log-likelihood over the cohort.

    The MAF (SNP mode) or score moments (score mode) are estimated from
    controls before optimization and held fixed. Initialization takes the
    secondary-model parameters from a naive fit and the primary-model ones
    from a plain probit regression.
    """
    options = options or FitOptions()
    if cohort.n_families == 0:
        raise FitError("cohort is empty")

    q_used: Union[float, ScoreModel]
    if options.mode == "snp":
        q = options.maf if options.maf is not None else estimate_maf_controls(cohort)
        if not 0.0 < q < 1.0:
            raise FitError(
                f"minor allele frequency estimate {q} is degenerate; "
                "supply --maf or add genotyped controls"
            )
        q_used = float(q)
        evaluator = RetrospectiveLikelihood(
            cohort,
            mode="snp",
            q=q_used,
            accuracy=options.orthant_accuracy,
            seed=options.seed,
        )
    else:
        sm = estimate_score_moments(cohort)
        q_used = sm
        evaluator = RetrospectiveLikelihood(
            cohort,
            mode="score",
            score_model=sm,
            accuracy=options.orthant_accuracy,
            seed=options.seed,
        )

    layout = Parameterization(
        "joint",
        cohort.covariate_names,
        free_delta=not options.delta_constrained,
        fixed=fix,
    )

    warnings_list = list(evaluator.warnings)
    if start is None:
        y, g, x, z = _pooled_rows(cohort)
        coef_x, resid_sd = _least_squares_start(x, g, z)
        coef_y = _probit_start(y, g, z)
        start = Theta(
            alpha0=float(coef_y[0]),
            alpha1=float(coef_y[1]),
            beta0=float(coef_x[0]),
            beta1=float(coef_x[1]),
            sigma_gy=0.5,
            sigma_gx=max(0.6 * resid_sd, 1e-3),
            sigma_u=0.5,
            sigma_eps=max(0.8 * resid_sd, 1e-3),
            delta=1.0,
            alpha_z=tuple(coef_y[2:]),
            beta_z=tuple(coef_x[2:]),
        )

    def negll(free_vec: np.ndarray) -> float:
        return -evaluator.loglik(layout.model_from_free(free_vec))

    opt = _minimize_bfgs(
        negll,
        layout.free_vector(start),
        grad_tol=options.grad_tolerance,
        rel_tol=options.loglik_rel_tolerance,
        max_iter=options.max_iterations,
    )
    if not opt.converged:
        warnings_list.append(f"optimizer stopped without convergence: {opt.message}")
    if np.any(np.abs(opt.x) > 1e4):
        opt.converged = False
        warnings_list.append(
            "estimates diverged along a likelihood ridge; fit flagged as failed"
        )

    result = _finalize(
        "retrospective", layout, opt, negll, q_used, warnings_list,
        derived_quantities, compute_se,
    )
    if options.delta_constrained and "delta" not in result.params:
        result.params["delta"] = 1.0
        result.se["delta"] = None
        result.boundary["delta"] = False
    return result


def lrt(full: FitResult, null: FitResult, df: int) -> dict[str, float]:
    """Likelihood ratio test of nested fits against a chi-square reference."""
    if df < 1:
        raise ValueError("df must be >= 1")
    stat = 2.0 * (full.loglik - null.loglik)
    if stat < -1e-6:
        raise ModelError(
            f"negative LRT statistic {stat:.3g}: the full model fit is worse than "
            "the null; optimizer failure"
        )
    stat = max(stat, 0.0)
    return {"statistic": float(stat), "p_value": float(chi2.sf(stat, df)), "df": df}
