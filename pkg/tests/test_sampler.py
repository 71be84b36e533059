import math

import numpy as np
import pytest
from scipy import stats as sps

from trajtrunc.errors import ParameterError, StepRangeError
from trajtrunc.gaussianity import ks_two_sample
from trajtrunc.sampler import (
    GmmDenoiser,
    GmmSpec,
    LinearDenoiser,
    ZeroDenoiser,
    ancestral_sample,
    compare_full_vs_truncated,
    denoise,
    fit_linear_denoiser,
    posterior_params,
    reverse_variance_chain,
)
from trajtrunc.schedule import make_linear_schedule
from trajtrunc.stats import Dataset, VariancePath
from trajtrunc.truncation import TruncationDecision


def _decision(schedule, t_star, fallback=False, d=2):
    from trajtrunc.gaussianity import KsResult

    ev = KsResult(np.zeros(d), 0.0, 1.0, 0.01, 10_000, 0.05)
    return TruncationDecision(
        t_star=t_star, T=schedule.T, tau=25, significance=0.05, pass_threshold=0.95, stride=10,
        fallback=fallback, evidence=None if fallback else (ev, ev), schedule_fingerprint=schedule.fingerprint(),
        seed=0, max_samples=10_000,
    )


def _unit_path(schedule, v_hat=1.0):
    return VariancePath(v_tilde=1.0 - schedule.alpha_bar * (1.0 - v_hat), avg_var=v_hat)


# ---------------------------------------------------------------- posterior


def test_posterior_first_step_collapses(schedule):
    p = posterior_params(schedule, 1)
    assert p.posterior_mean_coeff_x0 == pytest.approx(1.0, abs=1e-12)
    assert p.posterior_mean_coeff_xt == 0.0
    assert p.posterior_var == 0.0


def _posterior_chunks(schedule, t, n_chunks, chunk=1_000_000):
    # the posterior coefficients do not depend on the data law; a broad x0 law
    # lets the regression resolve the small x0 coefficient at late steps
    ab_prev, ab_t = schedule.alpha_bar[t - 1], schedule.alpha_bar[t]
    a_step = ab_t / ab_prev
    for k in range(n_chunks):
        rng = np.random.default_rng([t, k])
        x0 = rng.normal(0, 1000.0, chunk)
        x_prev = math.sqrt(ab_prev) * x0 + math.sqrt(1 - ab_prev) * rng.standard_normal(chunk)
        x_t = math.sqrt(a_step) * x_prev + math.sqrt(1 - a_step) * rng.standard_normal(chunk)
        yield np.column_stack([x0, x_t]), x_prev


@pytest.mark.parametrize("t", [2, 10, 100, 500, 999])
def test_posterior_matches_regression_oracle(schedule, t):
    # the x0 coefficient's standard error is about sqrt((1 - abar_t) / beta_t / n),
    # roughly 1% at n = 1e6, so the oracle pools 1.6e7 triples
    n_chunks = 16
    xtx, xty = np.zeros((2, 2)), np.zeros(2)
    for X, y in _posterior_chunks(schedule, t, n_chunks):
        xtx += X.T @ X
        xty += X.T @ y
    coef = np.linalg.solve(xtx, xty)
    resid_ss = sum(np.sum((y - X @ coef) ** 2) for X, y in _posterior_chunks(schedule, t, n_chunks))
    resid_var = resid_ss / (n_chunks * 1_000_000)

    p = posterior_params(schedule, t)
    assert coef[0] == pytest.approx(p.posterior_mean_coeff_x0, rel=0.01)
    assert coef[1] == pytest.approx(p.posterior_mean_coeff_xt, rel=0.01)
    assert resid_var == pytest.approx(p.posterior_var, rel=0.02)


def test_posterior_range(schedule):
    for t in (0, 1001):
        with pytest.raises(StepRangeError):
            posterior_params(schedule, t)


def test_posterior_var_nonnegative(schedule):
    assert all(posterior_params(schedule, t).posterior_var >= 0 for t in range(1, 1001))


# ---------------------------------------------------------------- denoisers


def test_gmm_spec_validation():
    with pytest.raises(ParameterError):
        GmmSpec([0.5, 0.6], [[1, -1], [-1, 1]], [1, 1])
    with pytest.raises(ParameterError):
        GmmSpec([1.0], [[1.0, 0.5]], [1.0])
    with pytest.raises(ParameterError):
        GmmSpec([1.0], [[1.0, -1.0]], [-0.1])


def test_point_mass_denoiser(schedule, rng):
    c = np.array([1.5, -0.5, -1.0])
    den = GmmDenoiser(GmmSpec([1.0], [c], [0.0]))
    out = denoise(den, rng.normal(size=(20, 3)) * 5, 300, schedule)
    np.testing.assert_allclose(out, np.tile(c, (20, 1)), atol=1e-12)


def test_single_gaussian_denoiser(schedule, rng):
    v = 0.6
    den = GmmDenoiser(GmmSpec([1.0], [[0.0, 0.0]], [v]))
    x = rng.normal(size=(10, 2))
    for t in (5, 200, 700):
        ab = schedule.alpha_bar[t]
        np.testing.assert_allclose(denoise(den, x, t, schedule), math.sqrt(ab) * v / (ab * v + 1 - ab) * x, rtol=1e-12)


def test_single_gaussian_denoiser_against_regression(schedule):
    v, t, n = 0.6, 300, 400_000
    rng = np.random.default_rng(0)
    x0 = rng.normal(0, math.sqrt(v), n)
    ab = schedule.alpha_bar[t]
    xt = math.sqrt(ab) * x0 + math.sqrt(1 - ab) * rng.standard_normal(n)
    slope = np.sum(x0 * xt) / np.sum(xt * xt)
    den = GmmDenoiser(GmmSpec([1.0], [[0.0, 0.0]], [v]))
    got = denoise(den, np.array([[1.0, 1.0]]), t, schedule)[0, 0]
    assert got == pytest.approx(slope, rel=0.01)


def test_mixture_denoiser_against_quadrature(schedule):
    gmm = GmmSpec([0.7, 0.3], [[1.0, -1.0], [-1.2, 1.2]], [0.2, 0.4])
    den = GmmDenoiser(gmm)
    t = 250
    ab = schedule.alpha_bar[t]
    g = np.linspace(-5, 5, 801)
    X, Y = np.meshgrid(g, g, indexing="ij")
    grid = np.column_stack([X.ravel(), Y.ravel()])
    prior = sum(
        w * sps.multivariate_normal(m, v * np.eye(2)).pdf(grid)
        for w, m, v in zip(gmm.weights, gmm.means, gmm.variances)
    )
    for xt in ([0.3, -0.2], [-1.0, 0.9], [2.0, 2.0]):
        lik = np.exp(-0.5 * np.sum((np.asarray(xt) - math.sqrt(ab) * grid) ** 2, axis=1) / (1 - ab))
        post = prior * lik
        oracle = (post[:, None] * grid).sum(axis=0) / post.sum()
        got = denoise(den, np.array([xt]), t, schedule)[0]
        np.testing.assert_allclose(got, oracle, atol=1e-6)


def test_denoiser_near_identity_without_noise():
    s = make_linear_schedule(10, 1e-10, 1e-2)
    gmm = GmmSpec([0.5, 0.5], [[1.0, -1.0], [-1.0, 1.0]], [0.3, 0.3])
    x = np.random.default_rng(0).normal(size=(50, 2)) * 2
    np.testing.assert_allclose(denoise(GmmDenoiser(gmm), x, 1, s), x, atol=1e-8)


def test_zero_and_linear_denoisers(schedule):
    x = np.ones((3, 2))
    np.testing.assert_array_equal(denoise(ZeroDenoiser(), x, 10, schedule), 0.0)
    lin = LinearDenoiser({10: 0.5})
    np.testing.assert_array_equal(denoise(lin, x, 10, schedule), 0.5)
    with pytest.raises(ParameterError):
        denoise(lin, x, 11, schedule)


def test_gmm_denoiser_stable_far_out(schedule):
    gmm = GmmSpec([0.5, 0.5], [[3.0, -3.0], [-3.0, 3.0]], [0.01, 0.01])
    out = denoise(GmmDenoiser(gmm), np.array([[1e3, -1e3]]), 1, schedule)
    assert np.all(np.isfinite(out))


# ---------------------------------------------------------------- linear fit


def test_linear_fit_on_standard_normal(schedule):
    data = Dataset(np.random.default_rng(1).standard_normal((20_000, 8)))
    steps = [1, 100, 300, 600, 1000]
    den = fit_linear_denoiser(data, schedule, steps, seed=0)
    for t in (1, 100, 300, 600):
        assert den.coefficients[t] == pytest.approx(math.sqrt(schedule.alpha_bar[t]), rel=0.02)
    assert abs(den.coefficients[1000]) < 0.01
    assert den.coefficients[1] == pytest.approx(1.0, abs=1e-3)
    assert den.steps == steps


def test_linear_fit_is_per_step(schedule):
    data = Dataset(np.random.default_rng(1).standard_normal((1_000, 4)))
    a = fit_linear_denoiser(data, schedule, [5, 50], seed=3, n_pairs=5_000)
    b = fit_linear_denoiser(data, schedule, range(1, 60), seed=3, n_pairs=5_000)
    assert a.coefficients[50] == b.coefficients[50]
    with pytest.raises(ParameterError):
        fit_linear_denoiser(data, schedule, [], seed=0)


# ---------------------------------------------------------------- ancestral sampling


def test_single_gaussian_chain_recovers_variance(schedule):
    v = 0.5
    den = GmmDenoiser(GmmSpec([1.0], [[0.0, 0.0, 0.0]], [v]))
    init = np.random.default_rng(0).standard_normal((10_000, 3))
    out = ancestral_sample(den, schedule, schedule.T, init, seed=1).data
    np.testing.assert_allclose(out.var(axis=0), v, rtol=0.03)


def test_zero_denoiser_variance_recursion(schedule):
    # oracle written from the schedule arrays directly
    ab, beta = schedule.alpha_bar, schedule.beta
    var = 1.0
    for t in range(schedule.T, 0, -1):
        c_xt = math.sqrt(1 - beta[t - 1]) * (1 - ab[t - 1]) / (1 - ab[t])
        noise = (1 - ab[t - 1]) * beta[t - 1] / (1 - ab[t]) if t > 1 else 0.0
        var = c_xt**2 * var + noise
    assert reverse_variance_chain(schedule, schedule.T, 1.0) == pytest.approx(var, abs=1e-300)

    # the final step carries no x_t weight and no noise, so the chain ends at 0
    assert var == 0.0
    init = np.random.default_rng(2).standard_normal((20_000, 4))
    out = ancestral_sample(ZeroDenoiser(), schedule, schedule.T, init, seed=3).data
    assert out.mean() == 0.0 and np.all(out.var(axis=0) == var)


def test_weight_recovery_two_components(schedule):
    gmm = GmmSpec([0.7, 0.3], [[2.0, -2.0], [-2.0, 2.0]], [0.1, 0.1])
    init = np.random.default_rng(4).standard_normal((10_000, 2))
    out = ancestral_sample(GmmDenoiser(gmm), schedule, schedule.T, init, seed=5).data
    freq = np.bincount(gmm.nearest_component(out), minlength=2) / len(out)
    np.testing.assert_allclose(freq, gmm.weights, atol=0.02)


@pytest.mark.slow
def test_exact_denoiser_moment_recovery():
    schedule = make_linear_schedule()
    gmm = GmmSpec([0.6, 0.4], [[0.8, -0.8], [-1.2, 1.2]], [0.3, 0.3])
    den = GmmDenoiser(gmm)
    n, reps = 10_000, 20
    gen_means, gen_vars = [], []
    for r in range(reps):
        init = np.random.default_rng(100 + r).standard_normal((n, 2))
        out = ancestral_sample(den, schedule, schedule.T, init, seed=r).data
        gen_means.append(out.mean(axis=0))
        gen_vars.append(out.var(axis=0))
    ref = [gmm.sample(n, seed=1000 + r) for r in range(reps)]
    ref_means = np.array([x.mean(axis=0) for x in ref])
    ref_vars = np.array([x.var(axis=0) for x in ref])
    true_mean = gmm.weights @ gmm.means
    true_var = gmm.weights @ (gmm.means**2) - true_mean**2 + gmm.weights @ gmm.variances
    for got, ref_stat, truth in ((gen_means, ref_means, true_mean), (gen_vars, ref_vars, true_var)):
        band = 3 * ref_stat.std(axis=0, ddof=1)
        assert np.all(np.abs(np.mean(got, axis=0) - truth) <= band)


def test_sampling_determinism_and_provenance(schedule):
    den = GmmDenoiser(GmmSpec([1.0], [[0.0, 0.0]], [0.5]))
    init = np.ones((10, 2))
    a = ancestral_sample(den, schedule, 40, init, seed=7)
    b = ancestral_sample(den, schedule, 40, init, seed=7)
    assert np.array_equal(a.data, b.data)
    assert a.provenance["start_step"] == 40 and a.provenance["n_steps"] == 40
    assert a.provenance["schedule_fingerprint"] == schedule.fingerprint()
    assert a.provenance["denoiser"].startswith("gmm-analytic")
    with pytest.raises(ParameterError):
        ancestral_sample(den, schedule, 40, np.ones((10, 3)), seed=7)


# ---------------------------------------------------------------- comparison


def test_compare_no_op_and_empty(schedule):
    den = GmmDenoiser(GmmSpec([1.0], [[0.0, 0.0]], [0.5]))
    path = _unit_path(schedule, 0.5)
    rep = compare_full_vs_truncated(den, schedule, _decision(schedule, schedule.T, fallback=True), path, 100)
    assert rep.status == "no-op" and "fallback" in rep.reason
    rep = compare_full_vs_truncated(den, schedule, _decision(schedule, 500), path, 0)
    assert rep.status == "empty" and rep.ks_max == 0.0


def test_compare_degenerate_full_length(schedule):
    den = GmmDenoiser(GmmSpec([1.0], [[0.0, 0.0]], [0.5]))
    path = _unit_path(schedule, 0.5)
    rep = compare_full_vs_truncated(den, schedule, _decision(schedule, schedule.T), path, 2_000, timing_repeats=1)
    assert rep.status == "ok"
    # identical up to the sqrt(v_tilde_T) ~ 1 - 2e-5 prior scale
    assert rep.ks_max <= 0.005
    assert rep.mean_gap < 1e-3


def test_compare_truncated_close_to_full(schedule):
    den = GmmDenoiser(GmmSpec([1.0], [[0.0, 0.0, 0.0]], [0.5]))
    path = _unit_path(schedule, 0.5)
    rep = compare_full_vs_truncated(den, schedule, _decision(schedule, 300, d=3), path, 10_000, timing_repeats=3)
    assert rep.ks_max <= 0.02
    assert rep.full.provenance["start_step"] == 1000 and rep.truncated.provenance["start_step"] == 300
    assert rep.speedup > 1
    assert rep.to_dict()["expected_time_ratio"] == 0.3


def test_compare_rejects_foreign_schedule(schedule):
    other = make_linear_schedule(1000, 1e-4, 0.03)
    den = GmmDenoiser(GmmSpec([1.0], [[0.0, 0.0]], [0.5]))
    with pytest.raises(ParameterError):
        compare_full_vs_truncated(den, other, _decision(schedule, 300), _unit_path(other), 10)
