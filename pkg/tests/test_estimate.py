import dataclasses

import numpy as np
import pytest
from scipy.stats import chi2

from ascfam.estimate import (
    LOG_SD_FLOOR,
    FitError,
    FitOptions,
    fit,
    fit_naive,
    lrt,
    transform,
    untransform,
)
from ascfam.jointmodel import ModelError, Theta
from ascfam.pedigree import Cohort, Family, Individual
from ascfam.simulate import Scenario, generate_cohort


@pytest.fixture(scope="module")
def small_cohort(request):
    theta = Theta(alpha0=-1.645, alpha1=0.5, beta0=3.5, beta1=0.2,
                  sigma_gy=np.sqrt(3.0), sigma_gx=2.0, sigma_u=np.sqrt(2.0),
                  sigma_eps=np.sqrt(2.0))
    sc = Scenario(n_families=80, family_size=5, ascertainment_min_cases=2,
                  theta_true=theta, n_replicates=1, master_seed=404)
    cohort, _ = generate_cohort(sc, np.random.default_rng(404))
    return cohort


@pytest.fixture(scope="module")
def small_fit(small_cohort):
    return fit(small_cohort, FitOptions(seed=1))


class TestTransform:
    def test_unit_sd_maps_to_zero(self, reference_theta):
        th = dataclasses.replace(reference_theta, sigma_eps=1.0)
        names = ["alpha0", "alpha1", "beta0", "beta1", "sigma_gy", "sigma_gx",
                 "sigma_u", "sigma_eps"]
        vec = transform(th)
        assert vec[names.index("sigma_eps")] == pytest.approx(0.0, abs=1e-15)

    def test_round_trip_exact(self, reference_theta):
        back = untransform(transform(reference_theta))
        for field in ("alpha0", "alpha1", "beta0", "beta1", "sigma_gy", "sigma_gx",
                      "sigma_u", "sigma_eps", "delta"):
            assert getattr(back, field) == pytest.approx(
                getattr(reference_theta, field), abs=1e-14
            )

    def test_zero_sd_clamps_to_floor(self, reference_theta):
        th = dataclasses.replace(reference_theta, sigma_gy=0.0)
        vec = transform(th)
        assert vec[4] == LOG_SD_FLOOR
        assert untransform(vec).sigma_gy == pytest.approx(1e-8)

    def test_free_delta_round_trip(self, reference_theta):
        th = dataclasses.replace(reference_theta, delta=1.7)
        vec = transform(th, free_delta=True)
        assert untransform(vec, free_delta=True).delta == pytest.approx(1.7, abs=1e-14)

    def test_covariate_round_trip(self, reference_theta):
        th = dataclasses.replace(reference_theta, alpha_z=(0.7, -0.2), beta_z=(1.1, 0.4))
        vec = transform(th)
        assert len(vec) == 12
        back = untransform(vec)
        assert back.alpha_z == pytest.approx(th.alpha_z, abs=1e-14)
        assert back.beta_z == pytest.approx(th.beta_z, abs=1e-14)

    def test_length_mismatch_rejected(self, reference_theta):
        vec = transform(reference_theta)
        with pytest.raises(FitError, match="layout"):
            untransform(np.append(vec, 0.0), covariate_names=[])


class TestFit:
    def test_determinism(self, small_cohort):
        a = fit(small_cohort, FitOptions(seed=3))
        b = fit(small_cohort, FitOptions(seed=3))
        assert a.params == b.params
        assert a.se == b.se
        assert a.loglik == b.loglik
        assert a.iterations == b.iterations

    def test_converged_with_sane_estimates(self, small_fit):
        assert small_fit.converged
        assert small_fit.se_available
        assert abs(small_fit.params["beta1"] - 0.2) < 0.6
        assert small_fit.params["sigma_eps"] > 0

    def test_refit_from_optimum_is_stationary(self, small_cohort, small_fit):
        again = fit(small_cohort, FitOptions(seed=1), start=small_fit.theta_hat,
                    compute_se=False)
        assert again.iterations <= 2
        assert again.loglik == pytest.approx(small_fit.loglik, abs=1e-8)

    def test_gradient_small_at_optimum(self, small_fit):
        opts = FitOptions()
        assert np.max(np.abs(small_fit.optimizer.grad)) < opts.grad_tolerance

    def test_monotone_ascent(self, small_fit):
        # accepted objective values never increase (negative log-likelihood)
        hist = np.array(small_fit.optimizer.f_history)
        assert np.all(np.diff(hist) <= 1e-9)

    def test_empty_cohort_rejected(self):
        with pytest.raises(FitError):
            fit(Cohort(families=[]), FitOptions())

    def test_degenerate_maf_rejected(self):
        members = tuple(
            Individual(id=f"m{i}", primary=yv, secondary=float(i), genotype=0)
            for i, yv in enumerate([0, 0, 1, 1])
        )
        fam = Family(id="f", members=members, relationship=np.eye(4))
        with pytest.raises(FitError, match="degenerate"):
            fit(Cohort(families=[fam]), FitOptions())

    def test_location_scale_equivariance(self, small_cohort):
        # Rescaling X can only be absorbed exactly when delta is free (the
        # shared-effect contribution to X must scale while sigma_u stays on
        # the latent scale of Y*).
        opts = FitOptions(seed=1, grad_tolerance=3e-4, delta_constrained=False)
        base = fit(small_cohort, opts, compute_se=False)
        c = 2.5
        scaled_families = []
        for fam in small_cohort.families:
            members = tuple(
                dataclasses.replace(m, secondary=None if m.secondary is None
                                    else c * m.secondary)
                for m in fam.members
            )
            scaled_families.append(
                Family(id=fam.id, members=members, relationship=fam.relationship)
            )
        # Start at the exactly-mapped optimum: if the likelihood is truly
        # equivariant this is a stationary point of the scaled problem and
        # the fit stays there; any scale leakage would pull it away.
        mapped = dataclasses.replace(
            base.theta_hat,
            beta0=c * base.params["beta0"],
            beta1=c * base.params["beta1"],
            sigma_gx=c * base.params["sigma_gx"],
            sigma_eps=c * base.params["sigma_eps"],
            delta=c * base.params["delta"],
        )
        scaled = fit(Cohort(families=scaled_families), opts, compute_se=False,
                     start=mapped)
        for name in ("alpha0", "alpha1", "sigma_gy", "sigma_u"):
            assert scaled.params[name] == pytest.approx(base.params[name], abs=1e-4)
        assert scaled.derived["h2"] == pytest.approx(base.derived["h2"], abs=1e-4)
        for name in ("beta0", "beta1", "sigma_gx", "sigma_eps"):
            assert scaled.params[name] == pytest.approx(c * base.params[name], rel=1e-3)


class TestCovariateFit:
    def test_fit_with_covariates_runs(self):
        # Plumbing smoke test: layout, initialization and likelihood all
        # carry the covariate dimension (tight recovery is too expensive
        # here; the likelihood wiring is tested exactly in test_jointmodel).
        from ascfam.pedigree import sibship, with_data

        rng = np.random.default_rng(88)
        th = Theta(alpha0=-1.0, alpha1=0.4, beta0=3.0, beta1=0.3, sigma_gy=1.2,
                   sigma_gx=1.5, sigma_u=1.0, sigma_eps=1.1,
                   alpha_z=(0.6,), beta_z=(-0.8,))
        families = []
        kept = 0
        while kept < 30:
            n = 3
            gm = rng.choice(3, p=[0.49, 0.42, 0.09])
            gp = rng.choice(3, p=[0.49, 0.42, 0.09])
            g = (rng.random(n) < gm / 2).astype(float) + (rng.random(n) < gp / 2)
            z = rng.standard_normal(n)
            b = np.sqrt(0.5) * rng.standard_normal() + np.sqrt(0.5) * rng.standard_normal(n)
            u = rng.standard_normal(n)
            ystar = (th.alpha0 + th.alpha1 * g + th.alpha_z[0] * z
                     + th.sigma_gy * b + th.sigma_u * u + rng.standard_normal(n))
            x = (th.beta0 + th.beta1 * g + th.beta_z[0] * z + th.sigma_gx * b
                 + th.sigma_u * u + th.sigma_eps * rng.standard_normal(n))
            y = (ystar > 0).astype(int)
            if y.sum() >= 1:
                families.append(
                    with_data(sibship(f"f{kept}", n), y=list(y), x=list(x),
                              g=list(g), z=[[v] for v in z])
                )
                kept += 1
        cohort = Cohort(families=families, covariate_names=["z1"])
        res = fit(cohort, FitOptions(maf=0.3, max_iterations=4, seed=2),
                  compute_se=False)
        assert set(res.params) == {
            "alpha0", "alpha1", "alpha_z1", "beta0", "beta1", "beta_z1",
            "sigma_gy", "sigma_gx", "sigma_u", "sigma_eps", "delta",
        }
        assert np.isfinite(res.loglik)
        hist = res.optimizer.f_history
        assert hist[-1] < hist[0]  # the optimizer made progress


class TestStandardErrors:
    def test_ols_se_closed_form(self):
        # Pure linear model subcase: sigma_gx pinned at zero, independent
        # individuals; SE(beta1) must match the ML closed form.
        rng = np.random.default_rng(6)
        n = 400
        g = rng.integers(0, 3, n).astype(float)
        x = 1.0 + 0.5 * g + rng.normal(0, 1.2, n)
        members = tuple(
            Individual(id=f"m{i}", primary=0, secondary=x[i], genotype=g[i])
            for i in range(n)
        )
        families = [
            Family(id=f"f{i}", members=(members[i],), relationship=np.eye(1))
            for i in range(n)
        ]
        cohort = Cohort(families=families)
        res = fit_naive(cohort, FitOptions(), fix={"sigma_gx": 0.0})
        design = np.column_stack([np.ones(n), g])
        coef, *_ = np.linalg.lstsq(design, x, rcond=None)
        resid = x - design @ coef
        sigma2_ml = float(resid @ resid) / n
        cov_beta = sigma2_ml * np.linalg.inv(design.T @ design)
        assert res.params["beta1"] == pytest.approx(coef[1], abs=1e-6)
        assert res.se["beta1"] == pytest.approx(np.sqrt(cov_beta[1, 1]), rel=0.01)

    def test_singular_hessian_withholds_se(self, small_cohort):
        # With sigma_u pinned at zero, a free delta has no effect on the
        # likelihood: the Hessian is singular and SEs must be withheld.
        opts = FitOptions(seed=1, delta_constrained=False, max_iterations=60)
        res = fit(small_cohort, opts, fix={"sigma_u": 0.0})
        assert not res.se_available
        assert all(v is None for v in res.se.values())

    def test_boundary_parameter_se_withheld(self):
        # Generator without polygenic X variance: sigma_gx heads to the
        # boundary and its SE is withheld while others are reported.
        th = Theta(alpha0=-0.5, alpha1=0.3, beta0=1.0, beta1=0.4, sigma_gy=0.8,
                   sigma_gx=0.0, sigma_u=0.0, sigma_eps=1.0)
        sc = Scenario(n_families=150, family_size=3, ascertainment_min_cases=0,
                      theta_true=th, n_replicates=1, master_seed=77)
        cohort, _ = generate_cohort(sc, np.random.default_rng(77))
        res = fit_naive(cohort, FitOptions())
        if res.boundary["sigma_gx"]:
            assert res.params["sigma_gx"] == 0.0
            assert res.se["sigma_gx"] is None
            assert res.se["beta1"] is not None


class TestLrt:
    def _mk(self, loglik):
        from ascfam.estimate import FitResult

        return FitResult(
            model="retrospective", theta_hat=None, params={}, se={}, boundary={},
            loglik=loglik, converged=True, iterations=1, n_evaluations=1,
            derived={}, derived_se={}, q_used=0.3, se_available=True,
        )

    def test_identical_fits(self):
        r = lrt(self._mk(-100.0), self._mk(-100.0), 1)
        assert r["statistic"] == 0.0
        assert r["p_value"] == 1.0

    def test_five_percent_quantile(self):
        r = lrt(self._mk(-100.0), self._mk(-100.0 - 3.841 / 2), 1)
        assert r["statistic"] == pytest.approx(3.841, abs=1e-12)
        assert r["p_value"] == pytest.approx(0.05, abs=1e-4)
        assert r["p_value"] == pytest.approx(float(chi2.sf(3.841, 1)), abs=1e-12)

    def test_negative_statistic_rejected(self):
        with pytest.raises(ModelError, match="negative"):
            lrt(self._mk(-101.0), self._mk(-100.0), 1)


class TestFitNaive:
    def test_reduces_to_ols_on_unrelated(self):
        rng = np.random.default_rng(12)
        n = 300
        g = rng.integers(0, 3, n).astype(float)
        x = 2.0 - 0.3 * g + rng.normal(0, 0.9, n)
        families = [
            Family(
                id=f"f{i}",
                members=(Individual(id=f"m{i}", primary=0, secondary=x[i],
                                    genotype=g[i]),),
                relationship=np.eye(1),
            )
            for i in range(n)
        ]
        res = fit_naive(Cohort(families=families), FitOptions(),
                        fix={"sigma_gx": 0.0})
        design = np.column_stack([np.ones(n), g])
        coef, *_ = np.linalg.lstsq(design, x, rcond=None)
        assert res.params["beta0"] == pytest.approx(coef[0], abs=1e-6)
        assert res.params["beta1"] == pytest.approx(coef[1], abs=1e-6)

    def test_unascertained_naive_unbiased(self, reference_theta):
        # Oracle: simulation without ascertainment; the naive estimator is
        # consistent for beta1 when sampling is random.
        sc = Scenario(n_families=500, family_size=5, ascertainment_min_cases=0,
                      theta_true=reference_theta, n_replicates=1, master_seed=9)
        cohort, _ = generate_cohort(sc, np.random.default_rng(9))
        res = fit_naive(cohort, FitOptions())
        assert res.converged
        # per-replicate SD of beta1 is ~0.09 at this size
        assert res.params["beta1"] == pytest.approx(0.2, abs=0.25)

    def test_naive_h2_definition(self, small_cohort):
        res = fit_naive(small_cohort, FitOptions())
        s2 = res.params["sigma_gx"] ** 2
        assert res.derived["h2"] == pytest.approx(
            s2 / (s2 + res.params["sigma_eps"] ** 2), abs=1e-12
        )
