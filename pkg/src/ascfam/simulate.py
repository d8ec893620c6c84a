"""Seeded simulation engine: ascertained family cohorts and scenario grids.

Families are pure sibships. Genotypes come from two Hardy-Weinberg parents
with Mendelian transmission (SNP mode) or a family-level Gaussian with the
relationship covariance (score mode, standardized cohort-wide after
ascertainment). Latent primary errors are standard normal (probit link) or
standard logistic via inverse-CDF of uniforms (logit link, not rescaled).
Cohorts are rejection-sampled on the number of affected members.

Replicates of a scenario run in parallel with seeds derived deterministically
from the master seed and the replicate index, and are aggregated in replicate
order, so results do not depend on the worker count.
"""

from __future__ import annotations

import dataclasses
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ascfam.estimate import FitOptions, fit, fit_naive, lrt
from ascfam.genetics import hwe_probs
from ascfam.jointmodel import FamilyData, Theta, derived_quantities
from ascfam.pedigree import Cohort, Family, Individual, sibship

REJECTION_LEVELS = (0.05, 0.01, 0.001)
WALD_Z95 = 1.959963984540054  # Phi^-1(0.975)


class SimulationError(RuntimeError):
    pass


@dataclass
class Scenario:
    """One simulation configuration: generator, ascertainment rule, and fits."""

    n_families: int
    family_size: int
    ascertainment_min_cases: int
    theta_true: Theta
    link: str = "probit"
    genetic: dict = field(default_factory=lambda: {"kind": "snp", "maf": 0.3})
    n_replicates: int = 500
    master_seed: int = 0
    fit_options: FitOptions = field(default_factory=FitOptions)
    fit_naive_too: bool = True

    def __post_init__(self):
        if self.n_replicates < 1:
            raise SimulationError("empty scenario: n_replicates must be >= 1")
        if self.n_families < 1:
            raise SimulationError("n_families must be >= 1")
        if not 0 <= self.ascertainment_min_cases <= self.family_size:
            raise SimulationError(
                "ascertainment_min_cases must lie in [0, family_size]"
            )
        if self.link not in ("probit", "logit"):
            raise SimulationError(f"unknown link {self.link!r}")
        kind = self.genetic.get("kind")
        if kind == "snp":
            maf = self.genetic.get("maf")
            if maf is None or not 0.0 < maf < 1.0:
                raise SimulationError(f"SNP scenarios need maf in (0,1), got {maf}")
        elif kind != "score":
            raise SimulationError(f"unknown genetic kind {kind!r}")
        if self.theta_true.n_covariates != 0:
            raise SimulationError("simulated scenarios carry no covariates")
        if self.fit_options.mode != kind:
            raise SimulationError(
                f"fit_options.mode {self.fit_options.mode!r} does not match the "
                f"generator kind {kind!r}"
            )


@dataclass
class ParamSummary:
    true_value: Optional[float]
    mean: float
    sd: float
    rmse: Optional[float]
    coverage95: Optional[float]
    n: int


@dataclass
class SummaryMetrics:
    """Aggregates of one scenario: per-parameter accuracy and test rates."""

    n_replicates: int
    n_failed: int
    parameters: dict[str, ParamSummary]
    rejection_rates: dict[str, dict[float, float]]
    empirical_prevalence: float
    mean_acceptance_rate: float

    def flat(self) -> list[tuple[str, float]]:
        """Key-value rows for the summary CSV."""
        rows: list[tuple[str, float]] = [
            ("n_replicates", self.n_replicates),
            ("n_failed", self.n_failed),
            ("empirical_prevalence", self.empirical_prevalence),
            ("mean_acceptance_rate", self.mean_acceptance_rate),
        ]
        for name, s in self.parameters.items():
            rows.append((f"{name}.mean", s.mean))
            rows.append((f"{name}.sd", s.sd))
            if s.true_value is not None:
                rows.append((f"{name}.true", s.true_value))
                rows.append((f"{name}.rmse", s.rmse))
            if s.coverage95 is not None:
                rows.append((f"{name}.coverage95", s.coverage95))
        for method, rates in self.rejection_rates.items():
            for level, rate in rates.items():
                rows.append((f"rejection.{method}.{level}", rate))
        return rows


@dataclass
class CohortStats:
    acceptance_rate: float
    empirical_prevalence: float
    attempts: int


def _draw_logistic(rng: np.random.Generator, size: int) -> np.ndarray:
    u = rng.random(size)
    return np.log(u / (1.0 - u))


def generate_family(
    scenario: Scenario,
    rng: np.random.Generator,
    template: Optional[Family] = None,
    return_latent: bool = False,
):
    """Draw one sibship's genotypes, latent effects, and phenotypes.

    With ``return_latent`` the latent primary vector Y* is returned alongside
    the family data (useful for checking generator moments).
    """
    n = scenario.family_size
    th = scenario.theta_true
    if template is None:
        template = sibship("sim", n)

    kind = scenario.genetic["kind"]
    if kind == "snp":
        p0, p1, _ = hwe_probs(scenario.genetic["maf"])
        cuts = (p0, p0 + p1)
        gm = int(np.searchsorted(cuts, rng.random(), side="right"))
        gp = int(np.searchsorted(cuts, rng.random(), side="right"))
        g = (rng.random(n) < gm / 2.0).astype(float) + (rng.random(n) < gp / 2.0)
    else:
        # N(0, R) for a sibship: a shared and an individual standard factor.
        g = np.sqrt(0.5) * rng.standard_normal() + np.sqrt(0.5) * rng.standard_normal(n)

    b = np.sqrt(0.5) * rng.standard_normal() + np.sqrt(0.5) * rng.standard_normal(n)
    u = rng.standard_normal(n)
    eps_y = rng.standard_normal(n) if scenario.link == "probit" else _draw_logistic(rng, n)
    eps_x = rng.standard_normal(n)

    y_star = th.alpha0 + th.alpha1 * g + th.sigma_gy * b + th.sigma_u * u + eps_y
    x = (
        th.beta0
        + th.beta1 * g
        + th.sigma_gx * b
        + th.delta * th.sigma_u * u
        + th.sigma_eps * eps_x
    )
    y = (y_star > 0).astype(np.int8)

    fd = FamilyData(
        family=template,
        member_ids=tuple(m.id for m in template.members),
        y=y,
        x=x,
        g=g,
        z=np.zeros((n, 0)),
        relationship=template.relationship,
        included_idx=np.arange(n),
    )
    if return_latent:
        return fd, y_star
    return fd


def ascertain(fd: FamilyData, min_cases: int) -> bool:
    """True iff the family meets the sampling rule (>= min_cases affected)."""
    if np.any(fd.y < 0):
        raise SimulationError("ascertainment requires observed Y for all members")
    return int(fd.y.sum()) >= min_cases


def _materialize(draws: list[FamilyData], scenario: Scenario) -> Cohort:
    genetic_mode = "snp" if scenario.genetic["kind"] == "snp" else "score"
    n = scenario.family_size
    rel = sibship("template", n).relationship
    families = []
    for i, fd in enumerate(draws):
        fam_id = f"F{i:05d}"
        members = tuple(
            Individual(
                id=f"{fam_id}_{j + 1}",
                father_id=f"{fam_id}_P1",
                mother_id=f"{fam_id}_P2",
                sex="U",
                primary=int(fd.y[j]),
                secondary=float(fd.x[j]),
                genotype=float(fd.g[j]),
            )
            for j in range(n)
        )
        families.append(Family(id=fam_id, members=members, relationship=rel))
    return Cohort(families=families, covariate_names=[], genetic_mode=genetic_mode)


def generate_cohort(
    scenario: Scenario, rng: np.random.Generator
) -> tuple[Cohort, CohortStats]:
    """Rejection-sample families until the scenario's cohort size is reached.

    Score-mode genotypes are centered and standardized cohort-wide after
    ascertainment. Aborts if the empirical acceptance rate falls below 1e-6.
    """
    template = sibship("sim", scenario.family_size)
    accepted: list[FamilyData] = []
    attempts = 0
    cases = 0
    individuals = 0
    while len(accepted) < scenario.n_families:
        fd = generate_family(scenario, rng, template)
        attempts += 1
        cases += int(fd.y.sum())
        individuals += scenario.family_size
        if ascertain(fd, scenario.ascertainment_min_cases):
            accepted.append(fd)
        if attempts % 1_000_000 == 0 and len(accepted) / attempts < 1e-6:
            raise SimulationError(
                "acceptance rate below 1e-6; pathological scenario aborted"
            )

    if scenario.genetic["kind"] == "score":
        allg = np.concatenate([fd.g for fd in accepted])
        mu, sd = float(allg.mean()), float(allg.std(ddof=0))
        if sd <= 0:
            raise SimulationError("degenerate score draw (zero variance)")
        for fd in accepted:
            fd.g = (fd.g - mu) / sd

    stats = CohortStats(
        acceptance_rate=len(accepted) / attempts,
        empirical_prevalence=cases / individuals,
        attempts=attempts,
    )
    return _materialize(accepted, scenario), stats


# ---------------------------------------------------------------------------
# Scenario runner
# ---------------------------------------------------------------------------

RETRO_PARAMS = [
    "beta0", "beta1", "sigma_gx", "sigma_eps",
    "alpha0", "alpha1", "sigma_gy", "sigma_u",
]
NAIVE_PARAMS = ["beta0", "beta1", "sigma_gx", "sigma_eps"]


def _true_values(scenario: Scenario) -> dict[str, float]:
    th = scenario.theta_true
    truths = {name: getattr(th, name) for name in RETRO_PARAMS}
    h2 = derived_quantities(th)["h2"]
    truths["h2"] = h2
    for name in NAIVE_PARAMS:
        truths[f"naive_{name}"] = getattr(th, name)
    truths["naive_h2"] = h2
    return truths


def _covered(estimate: Optional[float], se: Optional[float], truth: float) -> Optional[bool]:
    if estimate is None or se is None:
        return None
    half = WALD_Z95 * se
    return bool(estimate - half <= truth <= estimate + half)


def run_replicate(scenario: Scenario, replicate: int) -> dict:
    """Generate one cohort, fit the requested models, and record everything.

    Failures are captured (not raised) so the scenario runner can count and
    exclude them.
    """
    rng = np.random.default_rng(np.random.SeedSequence((scenario.master_seed, replicate)))
    record: dict = {
        "replicate": replicate,
        "error": None,
        "converged": False,
        "estimates": {},
        "se": {},
        "lrt_p": {},
    }
    try:
        cohort, stats = generate_cohort(scenario, rng)
        record["acceptance_rate"] = stats.acceptance_rate
        record["prevalence"] = stats.empirical_prevalence

        opts = dataclasses.replace(
            scenario.fit_options, seed=scenario.fit_options.seed + replicate
        )
        full = fit(cohort, opts, compute_se=True)
        null_start = dataclasses.replace(full.theta_hat, beta1=0.0)
        null = fit(cohort, opts, fix={"beta1": 0.0}, compute_se=False, start=null_start)
        record["converged"] = full.converged and null.converged
        record["lrt_p"]["retrospective"] = lrt(full, null, 1)["p_value"]
        for name in RETRO_PARAMS:
            record["estimates"][name] = full.params[name]
            record["se"][name] = full.se[name]
        record["estimates"]["h2"] = full.derived["h2"]
        record["se"]["h2"] = full.derived_se.get("h2")

        if scenario.fit_naive_too:
            nfull = fit_naive(cohort, opts, compute_se=True)
            nnull_start = dataclasses.replace(nfull.theta_hat, beta1=0.0)
            nnull = fit_naive(
                cohort, opts, fix={"beta1": 0.0}, compute_se=False, start=nnull_start
            )
            record["converged"] = record["converged"] and nfull.converged and nnull.converged
            record["lrt_p"]["naive"] = lrt(nfull, nnull, 1)["p_value"]
            for name in NAIVE_PARAMS:
                record["estimates"][f"naive_{name}"] = nfull.params[name]
                record["se"][f"naive_{name}"] = nfull.se[name]
            record["estimates"]["naive_h2"] = nfull.derived["h2"]
            record["se"]["naive_h2"] = nfull.derived_se.get("h2")
    except Exception as exc:  # recorded, never silently dropped
        record["error"] = f"{type(exc).__name__}: {exc}"
        record["converged"] = False
    return record


def _aggregate(scenario: Scenario, records: list[dict]) -> SummaryMetrics:
    truths = _true_values(scenario)
    good = [r for r in records if r["error"] is None and r["converged"]]
    n_failed = len(records) - len(good)

    parameters: dict[str, ParamSummary] = {}
    if good:
        names = list(good[0]["estimates"].keys())
        for name in names:
            est = np.array([r["estimates"][name] for r in good], dtype=float)
            truth = truths.get(name)
            mean = float(est.mean())
            sd = float(est.std(ddof=0))
            rmse = None
            if truth is not None:
                rmse = float(np.sqrt(np.mean((est - truth) ** 2)))
            cover = None
            if truth is not None:
                flags = [
                    _covered(r["estimates"][name], r["se"].get(name), truth)
                    for r in good
                ]
                flags = [f for f in flags if f is not None]
                cover = float(np.mean(flags)) if flags else None
            parameters[name] = ParamSummary(
                true_value=truth, mean=mean, sd=sd, rmse=rmse, coverage95=cover,
                n=len(est),
            )

    rejection: dict[str, dict[float, float]] = {}
    for method in ("retrospective", "naive"):
        ps = np.array(
            [r["lrt_p"][method] for r in good if method in r["lrt_p"]], dtype=float
        )
        if ps.size:
            rejection[method] = {
                level: float((ps <= level).mean()) for level in REJECTION_LEVELS
            }

    prevalence = float(
        np.mean([r["prevalence"] for r in records if r.get("prevalence") is not None])
    )
    acceptance = float(
        np.mean(
            [r["acceptance_rate"] for r in records if r.get("acceptance_rate") is not None]
        )
    )
    return SummaryMetrics(
        n_replicates=len(records),
        n_failed=n_failed,
        parameters=parameters,
        rejection_rates=rejection,
        empirical_prevalence=prevalence,
        mean_acceptance_rate=acceptance,
    )


def replicate_rows(records: list[dict], scenario: Optional[Scenario] = None) -> list[dict]:
    """Long-format rows for the per-replicate CSV."""
    truths = _true_values(scenario) if scenario is not None else {}
    rows = []
    for r in records:
        if r["error"] is not None:
            rows.append(
                {
                    "replicate": r["replicate"], "parameter": "error", "estimate": "",
                    "se": "", "covered": "", "lrt_p": "", "converged": False,
                }
            )
            continue
        for name, est in r["estimates"].items():
            lrt_p = ""
            if name == "beta1":
                lrt_p = r["lrt_p"].get("retrospective", "")
            elif name == "naive_beta1":
                lrt_p = r["lrt_p"].get("naive", "")
            covered = ""
            if name in truths:
                flag = _covered(est, r["se"].get(name), truths[name])
                covered = "" if flag is None else int(flag)
            rows.append(
                {
                    "replicate": r["replicate"],
                    "parameter": name,
                    "estimate": est,
                    "se": "" if r["se"].get(name) is None else r["se"][name],
                    "covered": covered,
                    "lrt_p": lrt_p,
                    "converged": r["converged"],
                }
            )
    return rows


def run_scenario(
    scenario: Scenario,
    n_workers: Optional[int] = None,
    progress: bool = False,
) -> tuple[SummaryMetrics, list[dict]]:
    """Run every replicate of the scenario and aggregate the results.

    Replicates are independent; ``n_workers`` > 1 runs them in separate
    processes. Output is identical for any worker count.
    """
    reps = range(scenario.n_replicates)
    if n_workers is None or n_workers <= 1:
        records = []
        for i in reps:
            records.append(run_replicate(scenario, i))
            if progress and (i + 1) % 10 == 0:
                print(f"  replicate {i + 1}/{scenario.n_replicates}", flush=True)
    else:
        with ProcessPoolExecutor(max_workers=n_workers) as pool:
            records = []
            for i, rec in enumerate(pool.map(run_replicate, [scenario] * scenario.n_replicates, reps)):
                records.append(rec)
                if progress and (i + 1) % 10 == 0:
                    print(f"  replicate {i + 1}/{scenario.n_replicates}", flush=True)
    records.sort(key=lambda r: r["replicate"])
    return _aggregate(scenario, records), records


# ---------------------------------------------------------------------------
# Scenario (de)serialization for the CLI
# ---------------------------------------------------------------------------


def scenario_to_dict(scenario: Scenario) -> dict:
    out = dataclasses.asdict(scenario)
    out["theta_true"] = dataclasses.asdict(scenario.theta_true)
    out["fit_options"] = dataclasses.asdict(scenario.fit_options)
    return out


def scenario_from_dict(data: dict) -> Scenario:
    data = dict(data)
    theta_raw = dict(data.pop("theta_true"))
    theta_raw["alpha_z"] = tuple(theta_raw.get("alpha_z", ()))
    theta_raw["beta_z"] = tuple(theta_raw.get("beta_z", ()))
    theta = Theta(**theta_raw)
    opts_raw = data.pop("fit_options", {})
    options = FitOptions(**opts_raw)
    return Scenario(theta_true=theta, fit_options=options, **data)
