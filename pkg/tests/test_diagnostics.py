"""Diagnostic checks: moment oracle against closed forms, gradient FD suite,
curvature sampling, and the envelope/concentration simulations."""

import numpy as np
import pytest
from scipy import stats

from hubertucker.diagnostics import (SINGULAR_BOUND_CONSTANT,
                                     clipped_abs_moment,
                                     draw_low_rank_perturbation,
                                     estimate_fourth_moment_constant,
                                     gradient_check_suite, gradient_fd_check,
                                     noise_distribution, noise_second_moment,
                                     opnorm_concentration, rsc_check,
                                     rsc_experiment, rsc_varpi,
                                     truncated_singular_bounds)
from hubertucker.huber import HuberParams, factor_gradients, loss_gradient_full
from hubertucker.samples import SampleSet
from hubertucker.simulation import (NoiseModel, SyntheticSpec, derive_rng,
                                    gen_dataset, gen_noise)
from hubertucker.tensor_core import TuckerFactors, unfold


# --- moment oracle ----------------------------------------------------------------

def test_clipped_second_moment_gaussian_closed_form():
    # E[min(x^2, tau^2)] = (2 Phi(tau) - 1) - 2 tau phi(tau) + 2 tau^2 (1 - Phi(tau))
    for tau in (0.5, 1.0, 2.0, 3.5):
        body = (2 * stats.norm.cdf(tau) - 1) - 2 * tau * stats.norm.pdf(tau)
        tail = 2 * tau**2 * stats.norm.sf(tau)
        expected = body + tail
        got = clipped_abs_moment(NoiseModel("gaussian"), tau, 2.0)
        assert abs(got - expected) <= 1e-10


def test_raw_moments_match_analytic_values():
    # t(nu) variance = nu/(nu-2); centered-pareto (Lomax) variance =
    # alpha / ((alpha-1)^2 (alpha-2))
    assert np.isclose(noise_second_moment(NoiseModel("student_t", param=3.0)),
                      3.0, rtol=1e-8)
    assert np.isclose(noise_second_moment(NoiseModel("pareto_centered", param=3.0)),
                      3.0 / (4.0 * 1.0), rtol=1e-8)
    sigma = 0.8
    ln_var = (np.exp(sigma**2) - 1) * np.exp(sigma**2)
    assert np.isclose(
        noise_second_moment(NoiseModel("lognormal_centered", param=sigma)),
        ln_var, rtol=1e-8)


def test_clipped_moment_monotone_in_tau():
    model = NoiseModel("student_t", param=3.0)
    draws = gen_noise(model, 50_000, seed=0)
    low = float(np.quantile(np.abs(draws), 0.4))
    high = float(np.quantile(np.abs(draws), 0.99))
    assert clipped_abs_moment(model, low, 2.0) < clipped_abs_moment(model, high, 2.0)


def test_sample_moments_agree_with_quadrature():
    # ties the sampling construction to the analytic distributions
    for model in (NoiseModel("student_t", param=4.0),
                  NoiseModel("pareto_centered", param=4.0),
                  NoiseModel("lognormal_centered", param=0.5)):
        draws = gen_noise(model, 200_000, seed=1)
        tau = 2.0
        sample = float(np.mean(np.minimum(np.abs(draws), tau) ** 2))
        exact = clipped_abs_moment(model, tau, 2.0)
        assert abs(sample - exact) <= 0.03 * max(exact, 0.1)


def test_clipped_moment_rejects_divergent_raw_moment():
    with pytest.raises(ValueError):
        clipped_abs_moment(NoiseModel("student_t", param=1.6), np.inf, 2.0)


def test_noise_distribution_none_and_moment_zero():
    assert noise_distribution(NoiseModel("none")) is None
    assert clipped_abs_moment(NoiseModel("none"), 1.0, 2.0) == 0.0


# --- gradient FD check --------------------------------------------------------------

def quadratic_instance(seed=0, n=20, dims=(3, 3, 3), ranks=(2, 2, 2)):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n,) + dims)
    y = rng.standard_normal(n)
    samples = SampleSet(design=X, responses=y)
    F = TuckerFactors(rng.standard_normal(ranks),
                      tuple(rng.standard_normal((p, r)) / np.sqrt(p)
                            for p, r in zip(dims, ranks)))
    return samples, F


def test_fd_check_quadratic_regime_tight():
    samples, F = quadratic_instance()
    err = gradient_fd_check(samples, F, HuberParams(1e6), a=0.3, b=1.1,
                            h=1e-6, seed=2)
    assert err <= 1e-6


def test_fd_check_zero_data_balanced_factors():
    from hubertucker.huber import objective

    rng = np.random.default_rng(3)
    X = rng.standard_normal((10, 3, 3, 3))
    samples = SampleSet(design=X, responses=np.zeros(10))
    b = 1.2
    factors = tuple(b * np.linalg.qr(rng.standard_normal((3, 2)))[0]
                    for _ in range(3))
    F = TuckerFactors(np.zeros((2, 2, 2)), factors)
    p = HuberParams(1.0)
    G = loss_gradient_full(samples, np.zeros((3, 3, 3)), p)
    grads = factor_gradients(G, F, a=0.5, b=b)
    assert all(np.linalg.norm(g) <= 1e-10 for g in grads)
    # finite differences are as tiny: both sides of the check vanish here
    h = 1e-6
    for block in range(4):
        shape = grads[block].shape
        V = rng.standard_normal(shape)
        V /= np.linalg.norm(V)
        if block == 0:
            Fp = TuckerFactors(F.core + h * V, F.factors)
            Fm = TuckerFactors(F.core - h * V, F.factors)
        else:
            fp, fm = list(F.factors), list(F.factors)
            fp[block - 1] = fp[block - 1] + h * V
            fm[block - 1] = fm[block - 1] - h * V
            Fp = TuckerFactors(F.core, tuple(fp))
            Fm = TuckerFactors(F.core, tuple(fm))
        fd = (objective(samples, Fp, p, 0.5, b)
              - objective(samples, Fm, p, 0.5, b)) / (2 * h)
        assert abs(fd) <= 1e-10


def test_fd_suite_clipped_regime_within_tolerance():
    records = gradient_check_suite(instances=6, seed=4)
    clipped = [r for r in records if r["regime"] == "clipped"]
    assert clipped, "suite must exercise the clipped regime"
    assert max(r["max_relative_error"] for r in records) <= 1e-5


def test_fd_check_rejects_bad_step():
    samples, F = quadratic_instance()
    with pytest.raises(ValueError):
        gradient_fd_check(samples, F, HuberParams(1.0), 0.1, 1.0, h=0.0)


# --- restricted strong convexity ------------------------------------------------------

def test_perturbations_lie_in_the_constraint_set():
    rng = derive_rng(12345)
    dims, ranks, R = (6, 6, 6), (2, 2, 2), 1.5
    cranks = tuple(min(2 * r, d) for r, d in zip(ranks, dims))
    for _ in range(25):
        D = draw_low_rank_perturbation(rng, dims, cranks, R)
        assert np.linalg.norm(D) <= R * (1 + 1e-12)
        assert np.linalg.norm(D) > 0
        for mode in range(3):
            s = np.linalg.svd(unfold(D, mode), compute_uv=False)
            assert s[cranks[mode]:].max(initial=0.0) <= 1e-10 * s[0]


def test_rsc_quadratic_loss_concentrates_near_one():
    dims, ranks = (5, 5, 5), (2, 2, 2)
    df = 8 + sum(5 * 2 for _ in range(3))
    spec = SyntheticSpec(dims=dims, ranks=ranks, n=50 * df,
                         noise=NoiseModel("gaussian"), spectrum=(1.0, 2.0),
                         seed=17)
    samples, A_star = gen_dataset(spec)
    R = 0.5 * float(np.linalg.norm(A_star))
    report = rsc_check(samples, A_star, R, ranks, HuberParams(np.inf),
                       trials=100, seed=5)
    assert report.satisfied_count == report.trials
    assert 0.8 <= report.min_ratio <= 1.2


def test_rsc_experiment_end_to_end():
    spec = SyntheticSpec(dims=(6, 6, 6), ranks=(2, 2, 2), n=30 * 44,
                         noise=NoiseModel("student_t", param=3.0),
                         spectrum=(1.0, 2.0), seed=6)
    report = rsc_experiment(spec, radius_frac=0.5, trials=50, seed=6)
    assert report.satisfied_fraction >= 0.9
    assert report.config["varpi"] > 0
    assert report.config["c1"] > 1.0


def test_rsc_check_rejects_zero_trials():
    spec = SyntheticSpec(dims=(4, 4, 4), ranks=(1, 1, 1), n=10,
                         noise=NoiseModel("none"), seed=0)
    samples, A_star = gen_dataset(spec)
    with pytest.raises(ValueError):
        rsc_check(samples, A_star, 1.0, (1, 1, 1), HuberParams(1.0), trials=0)


def test_rsc_varpi_rule():
    assert rsc_varpi(3.0, 1.0, 1.0, 1.0) == max(np.sqrt(12.0), 4.0)
    assert rsc_varpi(0.1, 10.0, 1.0, 1.3) == 4 * 1.3**2 * 10.0


def test_fourth_moment_constant_near_gaussian_value():
    rng = np.random.default_rng(7)
    X = rng.standard_normal((4000, 4, 4, 4))
    samples = SampleSet(design=X, responses=np.zeros(4000))
    c1 = estimate_fourth_moment_constant(samples, trials=20, seed=8)
    # E z^4 = 3 for standard normal projections
    assert abs(c1 - 3.0**0.25) <= 0.1


# --- singular-value envelopes ----------------------------------------------------------

def test_envelopes_trivial_when_noise_absent():
    report = truncated_singular_bounds(50, 20, 4, NoiseModel("none"),
                                       tau=1.0, t=3.0, reps=20, seed=9)
    assert report.upper_coverage == 1.0
    assert report.lower_coverage == 1.0
    assert report.clipped_second_moment == 0.0


def test_envelopes_gaussian_large_tau_cover():
    report = truncated_singular_bounds(200, 100, 5, NoiseModel("gaussian"),
                                       tau=100.0, t=3.0, reps=100, seed=10)
    assert report.upper_coverage >= 0.95


def test_envelope_coverage_monotone_in_t():
    coverages = []
    for t in (1.0, 3.0, 5.0):
        report = truncated_singular_bounds(2000, 100, 5, NoiseModel("gaussian"),
                                           tau=2.0, t=t, reps=100, seed=11,
                                           constant=SINGULAR_BOUND_CONSTANT)
        coverages.append(min(report.upper_coverage, report.lower_coverage))
    assert coverages[1] >= coverages[0] - 0.02
    assert coverages[2] >= coverages[1] - 0.02


def test_envelopes_reject_bad_args():
    with pytest.raises(ValueError):
        truncated_singular_bounds(10, 5, 2, NoiseModel("gaussian"), tau=-1.0,
                                  t=1.0, reps=5)
    with pytest.raises(ValueError):
        truncated_singular_bounds(10, 5, 2, NoiseModel("gaussian"), tau=1.0,
                                  t=1.0, reps=0)


# --- operator-norm concentration -------------------------------------------------------

def test_opnorm_zero_target_no_noise_is_exactly_zero():
    report = opnorm_concentration((6, 6), NoiseModel("none"), [50, 100],
                                  reps=5, seed=12, target_frobenius=0.0,
                                  tau_rule=lambda n: 1.0)
    assert all(d == 0.0 for devs in report.deviations for d in devs)


def test_opnorm_deviation_shrinks_with_n():
    report = opnorm_concentration((8, 8), NoiseModel("student_t", param=3.0),
                                  [100, 800], reps=12, seed=13)
    assert report.median_deviation[1] < report.median_deviation[0]
    wins = sum(small > large for small, large in
               zip(report.deviations[0], report.deviations[1]))
    assert wins >= 11


def test_opnorm_requires_finite_variance_for_default_rule():
    with pytest.raises(ValueError):
        opnorm_concentration((5, 5), NoiseModel("student_t", param=1.6),
                             [50, 100], reps=2, seed=14)


def test_opnorm_rejects_unsorted_grid():
    with pytest.raises(ValueError):
        opnorm_concentration((5, 5), NoiseModel("gaussian"), [100, 50], reps=2)
