"""Generator distribution checks (CLT/LLN bands computed in-test) and the
Monte Carlo harness contract."""

import numpy as np
import pytest

from hubertucker.optimizer import default_tuning, fit
from hubertucker.simulation import (ERROR_TABLE_COLUMNS, EstimatorConfig,
                                    NoiseModel, SyntheticSpec,
                                    contaminate_responses,
                                    derive_dataset_seed, gen_dataset,
                                    gen_design, gen_noise, gen_target,
                                    monte_carlo, run_benchmark_cell)
from hubertucker.tensor_core import spectrum_summary, unfold

from dataclasses import replace


# --- gen_target ---------------------------------------------------------------

def test_gen_target_rank_one_fixed_spectrum():
    A = gen_target((4, 5, 6), (1, 1, 1), (2.0, 2.0), seed=0)
    assert np.isclose(np.linalg.norm(A), 2.0, rtol=1e-9)
    summary = spectrum_summary(A, (1, 1, 1))
    assert np.isclose(summary.lambda_bar, 2.0, rtol=1e-9)
    assert np.isclose(summary.lambda_underbar, 2.0, rtol=1e-9)
    assert np.isclose(summary.kappa, 1.0, rtol=1e-9)


def test_gen_target_spectrum_containment_vs_svd_oracle():
    for seed in range(5):
        A = gen_target((6, 7, 5), (2, 2, 2), (1.0, 3.0), seed=seed)
        for mode in range(3):
            s = np.linalg.svd(unfold(A, mode), compute_uv=False)
            assert s[0] <= 3.0 * (1 + 1e-6)
            assert s[1] >= 1.0 * (1 - 1e-6)


def test_gen_target_exact_multilinear_rank():
    A = gen_target((6, 6, 6), (2, 2, 2), (1.0, 2.0), seed=3)
    for mode in range(3):
        s = np.linalg.svd(unfold(A, mode), compute_uv=False)
        assert s[2] <= 1e-10 * s[0]


def test_gen_target_deterministic():
    A1 = gen_target((5, 5, 5), (2, 2, 2), (1.0, 2.0), seed=7)
    A2 = gen_target((5, 5, 5), (2, 2, 2), (1.0, 2.0), seed=7)
    assert np.array_equal(A1, A2)


def test_gen_target_rejects_bad_spectrum_and_ranks():
    with pytest.raises(ValueError):
        gen_target((4, 4, 4), (2, 2, 2), (0.0, 1.0), seed=0)
    with pytest.raises(ValueError):
        gen_target((4, 4, 4), (2, 2, 2), (2.0, 1.0), seed=0)
    with pytest.raises(ValueError):
        gen_target((4, 4, 4), (1, 1, 2), (1.0, 2.0), seed=0)  # infeasible triple


# --- gen_design ---------------------------------------------------------------

def test_gen_design_clt_mean_band():
    X = gen_design(10_000, (2, 2, 2), seed=1)
    total = X.size
    band = 4.0 / np.sqrt(total)
    assert abs(float(np.mean(X))) <= band


def test_gen_design_variance_band():
    X = gen_design(10_000, (2, 2, 2), seed=2)
    assert 0.97 <= float(np.var(X)) <= 1.03


def test_gen_design_deterministic():
    assert np.array_equal(gen_design(5, (3, 3, 3), seed=9),
                          gen_design(5, (3, 3, 3), seed=9))


# --- gen_noise ----------------------------------------------------------------

def test_gen_noise_none_is_zero():
    assert np.array_equal(gen_noise(NoiseModel("none"), 100, seed=0),
                          np.zeros(100))


def test_gen_noise_student_t_variance_band():
    eps = gen_noise(NoiseModel("student_t", param=3.0), 100_000, seed=3)
    assert 2.8 <= float(np.var(eps)) <= 3.2


def test_gen_noise_pareto_centered_mean_band():
    eps = gen_noise(NoiseModel("pareto_centered", param=1.5), 100_000, seed=4)
    assert abs(float(np.mean(eps))) <= 0.15


def test_gen_noise_lognormal_centered_mean_band():
    eps = gen_noise(NoiseModel("lognormal_centered", param=1.0), 100_000, seed=5)
    assert abs(float(np.mean(eps))) <= 0.05


def test_gen_noise_deterministic():
    model = NoiseModel("student_t", param=2.5, scale=1.5)
    assert np.array_equal(gen_noise(model, 50, seed=6), gen_noise(model, 50, seed=6))


def test_noise_model_rejects_moment_violations():
    with pytest.raises(ValueError):
        NoiseModel("student_t", param=1.0)
    with pytest.raises(ValueError):
        NoiseModel("pareto_centered", param=0.9)
    with pytest.raises(ValueError):
        NoiseModel("gaussian", param=2.0)
    with pytest.raises(ValueError):
        NoiseModel("banana")


# --- gen_dataset ---------------------------------------------------------------

def test_gen_dataset_noiseless_responses_exact():
    spec = SyntheticSpec(dims=(4, 4, 4), ranks=(2, 2, 2), n=50,
                         noise=NoiseModel("none"), spectrum=(1.0, 2.0), seed=8)
    samples, A_star = gen_dataset(spec)
    assert np.array_equal(samples.responses,
                          samples.design_matrix @ A_star.ravel())
    assert np.array_equal(samples.ground_truth, A_star)


def test_gen_dataset_residuals_are_exactly_the_noise():
    spec = SyntheticSpec(dims=(4, 4, 4), ranks=(2, 2, 2), n=50,
                         noise=NoiseModel("student_t", param=3.0), seed=9)
    samples, A_star = gen_dataset(spec)
    eps = gen_noise(spec.noise, spec.n, spec.seed)
    resid = samples.responses - samples.design_matrix @ A_star.ravel()
    # identical up to the roundoff of adding eps to the predictions
    scale = max(1.0, float(np.max(np.abs(samples.responses))))
    assert np.max(np.abs(resid - eps)) <= 1e-12 * scale


def test_gen_dataset_ridge_sanity_oracle():
    spec = SyntheticSpec(dims=(3, 3, 3), ranks=(2, 2, 2), n=3000,
                         noise=NoiseModel("gaussian", scale=0.3),
                         spectrum=(1.0, 2.0), seed=10)
    samples, A_star = gen_dataset(spec)
    Xm = samples.design_matrix
    beta = np.linalg.solve(Xm.T @ Xm + 1e-8 * np.eye(27),
                           Xm.T @ samples.responses)
    rel = np.linalg.norm(beta - A_star.ravel()) / np.linalg.norm(A_star)
    assert rel <= 0.05


# --- contamination ---------------------------------------------------------------

def test_contaminate_responses_fraction_and_determinism():
    spec = SyntheticSpec(dims=(3, 3, 3), ranks=(1, 1, 1), n=5000,
                         noise=NoiseModel("gaussian"), seed=11)
    samples, _ = gen_dataset(spec)
    c1 = contaminate_responses(samples, 0.05, 100.0, seed=1)
    c2 = contaminate_responses(samples, 0.05, 100.0, seed=1)
    assert np.array_equal(c1.responses, c2.responses)
    changed = np.mean(c1.responses != samples.responses)
    assert 0.03 <= changed <= 0.07
    assert np.array_equal(c1.design, samples.design)


# --- monte_carlo ------------------------------------------------------------------

def small_spec(n=150):
    return SyntheticSpec(dims=(4, 4, 4), ranks=(2, 2, 2), n=n,
                         noise=NoiseModel("student_t", param=3.0),
                         spectrum=(1.0, 2.0), seed=0)


def test_monte_carlo_single_cell_reproduces_direct_fit():
    spec = small_spec()
    table = monte_carlo([spec], reps=1, master_seed=5)
    row = table.rows[0]
    seed = derive_dataset_seed(5, 0, 0)
    assert row["seed"] == seed
    samples, A_star = gen_dataset(replace(spec, seed=seed))
    result = fit(samples, default_tuning(samples, spec.ranks), A_star)
    direct = float(np.linalg.norm(result.estimate - A_star))
    assert row["error_frobenius"] == direct
    assert row["iterations"] == result.iterations_run


def test_monte_carlo_errors_nonnegative_and_schema_complete():
    table = monte_carlo([small_spec(100), small_spec(200)], reps=2,
                        master_seed=6)
    assert len(table.rows) == 4
    for row in table.rows:
        assert set(row) == set(ERROR_TABLE_COLUMNS)
        assert row["error_frobenius"] >= 0.0
        assert row["relative_error"] >= 0.0


def test_monte_carlo_parallel_matches_serial():
    grid = [small_spec(100)]
    serial = monte_carlo(grid, reps=2, master_seed=7, threads=1)
    parallel = monte_carlo(grid, reps=2, master_seed=7, threads=2)
    for r1, r2 in zip(serial.rows, parallel.rows):
        for key in ERROR_TABLE_COLUMNS:
            if key != "runtime_ms":
                assert r1[key] == r2[key]


def test_monte_carlo_slope_helper():
    table = monte_carlo([small_spec(100), small_spec(400)], reps=2,
                        master_seed=8)
    med = dict(table.median_errors_by_n())
    assert set(med) == {100, 400}
    assert isinstance(table.loglog_slope(), float)


def test_run_benchmark_cell_contamination_path():
    result, samples, A_star = run_benchmark_cell(
        small_spec(120), EstimatorConfig(), contamination=(0.1, 50.0))
    assert samples.responses.shape == (120,)
    assert np.isfinite(result.objective_trace).all()
