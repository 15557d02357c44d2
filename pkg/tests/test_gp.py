import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from skillset.errors import ConditioningError
from skillset.gp import (
    Dataset,
    HyperFit,
    KernelSpec,
    NOISE_BOUNDS,
    SCALE_BOUNDS,
    VARIANCE_BOUNDS,
    _kernel_grads,
    _lml_and_grad,
    fit_hyperparameters,
    kernel_eval,
    kernel_matrix,
    log_marginal_likelihood,
    posterior,
    predict,
    stable_cholesky,
)


def dense_kernel(spec, X1, X2):
    """Entry-by-entry evaluation of the three covariance functions."""
    out = np.empty((len(X1), len(X2)))
    s = np.asarray(spec.length_scales)
    for i, a in enumerate(X1):
        for j, b in enumerate(X2):
            if spec.kind == "se":
                out[i, j] = spec.variance * math.exp(-0.5 * sum(((a - b) / s) ** 2))
            elif spec.kind == "matern52":
                r = math.sqrt(5 * sum(((a - b) / s) ** 2))
                out[i, j] = spec.variance * (1 + r + r * r / 3) * math.exp(-r)
            else:
                at, bt = np.r_[1.0, a], np.r_[1.0, b]
                num = at @ (s * bt)
                den = math.sqrt((at @ (s * at) + 1) * (bt @ (s * bt) + 1))
                out[i, j] = 2 * spec.variance / math.pi * math.asin(num / den)
    return out


def dense_posterior(spec, X, y, noise, Xq):
    K = dense_kernel(spec, X, X) + noise ** 2 * np.eye(len(X))
    Kinv = np.linalg.inv(K)
    ks = dense_kernel(spec, X, Xq)
    mean = ks.T @ Kinv @ y
    var = np.diag(dense_kernel(spec, Xq, Xq)) - np.einsum("ij,ik,kj->j", ks, Kinv, ks)
    return mean, var


def random_spec(kind, d, rng):
    n = d + 1 if kind == "mlp" else d
    return KernelSpec(kind, float(rng.uniform(0.5, 2.0)), tuple(rng.uniform(0.2, 1.5, size=n)))


# --- kernels -----------------------------------------------------------------


def test_se_and_matern_on_diagonal_return_variance():
    assert kernel_eval(KernelSpec("se", 1.0, (0.3, 2.0)), [0.1, 0.7], [0.1, 0.7]) == 1.0
    assert kernel_eval(KernelSpec("matern52", 2.5, (0.4,)), [0.2], [0.2]) == 2.5


def test_mlp_at_origin_with_identity_weights():
    # x~ = [1, 0], so x~' S x~ = 1 and the argument is 1 / 2
    val = kernel_eval(KernelSpec("mlp", 1.0, (1.0, 1.0)), [0.0], [0.0])
    assert val == pytest.approx(1.0 / 3.0, abs=1e-14)


@pytest.mark.parametrize("kind", ["se", "matern52", "mlp"])
def test_kernel_matrix_matches_entrywise_oracle(kind):
    rng = np.random.default_rng(3)
    spec = random_spec(kind, 3, rng)
    X1, X2 = rng.uniform(size=(6, 3)), rng.uniform(size=(4, 3))
    np.testing.assert_allclose(kernel_matrix(spec, X1, X2), dense_kernel(spec, X1, X2), atol=1e-13)


@pytest.mark.parametrize("kind", ["se", "matern52", "mlp"])
def test_kernel_is_symmetric(kind):
    rng = np.random.default_rng(0)
    spec = random_spec(kind, 2, rng)
    a, b = rng.uniform(size=2), rng.uniform(size=2)
    assert kernel_eval(spec, a, b) == pytest.approx(kernel_eval(spec, b, a), abs=1e-15)


def test_kernel_eval_rejects_bad_inputs():
    spec = KernelSpec("se", 1.0, (1.0, 1.0))
    with pytest.raises(ValueError):
        kernel_eval(spec, [0.1, 0.2], [0.1])
    with pytest.raises(ValueError):
        kernel_eval(spec, [0.1, np.nan], [0.1, 0.2])
    with pytest.raises(ValueError):
        kernel_eval(KernelSpec("se", 1.0, (1.0,)), [0.1, 0.2], [0.1, 0.2])


def test_kernel_spec_validation():
    with pytest.raises(ValueError):
        KernelSpec("se", -1.0, (1.0,))
    with pytest.raises(ValueError):
        KernelSpec("se", 1.0, (0.0,))
    with pytest.raises(ValueError):
        KernelSpec("rbf", 1.0, (1.0,))
    assert KernelSpec.default("mlp", 3).input_dim == 3
    assert len(KernelSpec.default("mlp", 3).length_scales) == 4


@pytest.mark.parametrize("kind", ["se", "matern52", "mlp"])
def test_gram_is_positive_semidefinite(kind):
    rng = np.random.default_rng(11)
    for _ in range(20):
        d = int(rng.integers(1, 5))
        spec = random_spec(kind, d, rng)
        X = rng.uniform(size=(int(rng.integers(2, 25)), d))
        w = np.linalg.eigvalsh(kernel_matrix(spec, X))
        assert w.min() >= -1e-8 * w.max()


@pytest.mark.parametrize("kind", ["se", "matern52", "mlp"])
def test_log_space_gradients_match_finite_differences(kind):
    rng = np.random.default_rng(5)
    spec = random_spec(kind, 2, rng)
    X = rng.uniform(size=(8, 2))
    K, grads = _kernel_grads(spec, X)
    np.testing.assert_allclose(K, kernel_matrix(spec, X), atol=1e-13)
    z = np.log(np.r_[spec.variance, spec.length_scales])
    h = 1e-6
    for j, g in enumerate(grads):
        zp, zm = z.copy(), z.copy()
        zp[j] += h
        zm[j] -= h
        kp = kernel_matrix(KernelSpec(kind, math.exp(zp[0]), tuple(np.exp(zp[1:]))), X)
        km = kernel_matrix(KernelSpec(kind, math.exp(zm[0]), tuple(np.exp(zm[1:]))), X)
        np.testing.assert_allclose(g, (kp - km) / (2 * h), atol=1e-6)


# --- posterior -----------------------------------------------------------------


def test_empty_data_gives_the_prior():
    m = posterior(Dataset.empty(2), KernelSpec("se", 1.0, (0.3, 0.3)))
    assert predict(m, np.array([0.2, 0.9])) == (0.0, 1.0)


def test_single_observation_closed_form():
    data = Dataset(np.array([[0.4]]), np.array([2.0]), 0.1)
    mean, var = predict(posterior(data, KernelSpec("se", 1.0, (0.2,))), np.array([0.4]))
    assert mean == pytest.approx(2.0 / 1.01, abs=1e-12)
    assert var == pytest.approx(1.0 - 1.0 / 1.01, abs=1e-12)


def test_far_query_reverts_to_prior():
    data = Dataset(np.array([[0.0], [0.1]]), np.array([1.0, -2.0]), 0.1)
    mean, var = predict(posterior(data, KernelSpec("se", 1.7, (0.1,))), np.array([50.0]))
    assert mean == pytest.approx(0.0, abs=1e-12)
    assert var == pytest.approx(1.7, abs=1e-12)


def test_noise_free_training_inputs_are_interpolated():
    rng = np.random.default_rng(2)
    X = rng.uniform(size=(10, 2))
    y = np.sin(5 * X[:, 0]) + X[:, 1]
    m = posterior(Dataset(X, y, 0.0), KernelSpec("se", 1.0, (0.5, 0.5)))
    mean, var = predict(m, X)
    np.testing.assert_allclose(mean, y, atol=1e-6)
    assert np.all(var >= 0)


def test_duplicated_point_matches_dense_oracle():
    spec = KernelSpec("matern52", 1.3, (0.4,))
    X = np.array([[0.3], [0.3], [0.8]])
    y = np.array([1.0, 1.0, -0.5])
    Xq = np.linspace(0, 1, 7)[:, None]
    mean, var = predict(posterior(Dataset(X, y, 0.2), spec), Xq)
    m_ref, v_ref = dense_posterior(spec, X, y, 0.2, Xq)
    np.testing.assert_allclose(mean, m_ref, atol=1e-10)
    np.testing.assert_allclose(var, v_ref, atol=1e-10)
    # two identical observations act like one with noise / sqrt(2)
    single = predict(posterior(Dataset(X[1:], y[1:], 0.2), spec), Xq)
    assert not np.allclose(single[1], var)
    halved = Dataset(np.array([[0.3], [0.8]]), np.array([1.0, -0.5]), 0.2)
    K = dense_kernel(spec, halved.points, halved.points) + np.diag([0.02, 0.04])
    ks = dense_kernel(spec, halved.points, Xq)
    np.testing.assert_allclose(mean, ks.T @ np.linalg.solve(K, halved.values), atol=1e-10)


def test_predict_single_vs_batch_and_dimension_check():
    data = Dataset(np.array([[0.1, 0.2]]), np.array([0.5]), 0.1)
    m = posterior(data, KernelSpec("se", 1.0, (0.3, 0.3)))
    mean, var = predict(m, np.array([0.3, 0.3]))
    assert isinstance(mean, float) and isinstance(var, float)
    bm, bv = predict(m, np.array([[0.3, 0.3]]))
    assert bm[0] == mean and bv[0] == var
    with pytest.raises(ValueError):
        predict(m, np.array([0.3]))


def test_prior_mean_is_the_far_field_value():
    data = Dataset(np.array([[0.5]]), np.array([1.0]), 0.1)
    m = posterior(data, KernelSpec("se", 1.0, (0.1,)), mean=-0.7)
    assert predict(m, np.array([40.0]))[0] == pytest.approx(-0.7)
    # shifting y and the mean together shifts predictions
    base = posterior(Dataset(data.points, data.values + 0.7, 0.1), KernelSpec("se", 1.0, (0.1,)))
    assert predict(m, np.array([0.5]))[0] == pytest.approx(predict(base, np.array([0.5]))[0] - 0.7)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from(["se", "matern52", "mlp"]))
def test_posterior_variance_bounded_by_prior_and_monotone(seed, kind):
    rng = np.random.default_rng(seed)
    d = int(rng.integers(1, 4))
    spec = random_spec(kind, d, rng)
    X = rng.uniform(size=(int(rng.integers(1, 12)), d))
    y = rng.normal(size=len(X))
    Xq = rng.uniform(size=(15, d))
    noise = float(rng.uniform(0.01, 0.5))
    prior = np.diag(kernel_matrix(spec, Xq))
    _, v1 = predict(posterior(Dataset(X, y, noise), spec), Xq)
    extra = rng.uniform(size=(1, d))
    _, v2 = predict(posterior(Dataset(np.vstack([X, extra]), np.r_[y, 0.3], noise), spec), Xq)
    assert np.all(v1 <= prior + 1e-10)
    assert np.all(v2 <= v1 + 1e-10)


# --- jitter --------------------------------------------------------------------


def test_jitter_rescues_near_duplicates_and_fails_when_hopeless():
    X = np.array([[0.5], [0.5 + 1e-12], [0.2]])
    m = posterior(Dataset(X, np.array([1.0, 1.0, 0.0]), 0.0), KernelSpec("se", 1.0, (0.3,)))
    assert m.jitter > 0
    L, jit = stable_cholesky(np.eye(3))
    assert jit == 0.0
    with pytest.raises(ConditioningError):
        stable_cholesky(-np.eye(3))
    with pytest.raises(np.linalg.LinAlgError):
        stable_cholesky(np.diag([1.0, -1.0]))


# --- evidence ------------------------------------------------------------------


def test_lml_single_point_closed_forms():
    spec = KernelSpec("se", 1.0, (1.0,))
    x = np.array([[0.3]])
    assert log_marginal_likelihood(Dataset(x, np.array([0.0]), 0.0), spec) == pytest.approx(
        -0.5 * math.log(2 * math.pi), abs=1e-9)
    assert log_marginal_likelihood(Dataset(x, np.array([1.0]), 0.0), spec) == pytest.approx(
        -0.5 - 0.5 * math.log(2 * math.pi), abs=1e-9)


def test_lml_of_zero_targets_is_the_determinant_term():
    rng = np.random.default_rng(1)
    X = rng.uniform(size=(6, 2))
    spec = KernelSpec("matern52", 1.2, (0.4, 0.7))
    K = dense_kernel(spec, X, X) + 0.01 * np.eye(6)
    want = -0.5 * np.linalg.slogdet(K)[1] - 3 * math.log(2 * math.pi)
    assert log_marginal_likelihood(Dataset(X, np.zeros(6), 0.1), spec) == pytest.approx(want, abs=1e-9)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_lml_is_permutation_invariant(seed):
    rng = np.random.default_rng(seed)
    X = rng.uniform(size=(7, 2))
    y = rng.normal(size=7)
    spec = random_spec("se", 2, rng)
    p = rng.permutation(7)
    a = log_marginal_likelihood(Dataset(X, y, 0.1), spec)
    b = log_marginal_likelihood(Dataset(X[p], y[p], 0.1), spec)
    assert a == pytest.approx(b, abs=1e-9)


def test_profiled_mean_is_the_gls_estimate_and_never_hurts():
    rng = np.random.default_rng(4)
    X = rng.uniform(size=(12, 1))
    y = -1.0 + 0.3 * rng.normal(size=12)
    spec = KernelSpec("se", 0.5, (0.3,))
    lml, _, m = _lml_and_grad(Dataset(X, y, 0.2), spec, 0.2, want_grad=False, mean=None)
    Kinv = np.linalg.inv(dense_kernel(spec, X, X) + 0.04 * np.eye(12))
    one = np.ones(12)
    assert m == pytest.approx(one @ Kinv @ y / (one @ Kinv @ one), abs=1e-10)
    assert lml >= log_marginal_likelihood(Dataset(X, y, 0.2), spec)
    assert lml == pytest.approx(log_marginal_likelihood(Dataset(X, y, 0.2), spec, mean=m), abs=1e-10)


# --- fitting -------------------------------------------------------------------


def _draw_se(seed, n=40, ell=0.2, noise=0.05):
    rng = np.random.default_rng(seed)
    X = rng.uniform(size=(n, 1))
    K = dense_kernel(KernelSpec("se", 1.0, (ell,)), X, X) + 1e-10 * np.eye(n)
    f = np.linalg.cholesky(K) @ rng.normal(size=n)
    return Dataset(X, f + noise * rng.normal(size=n), noise)


def test_fit_recovers_known_length_scale():
    ells = [fit_hyperparameters(_draw_se(s), "se", restarts=3, rng=s).spec.length_scales[0]
            for s in range(20)]
    assert 0.1 <= np.median(ells) <= 0.4


def test_fit_is_no_worse_than_its_starts_and_stays_in_bounds():
    data = _draw_se(7, n=25)
    init = HyperFit(KernelSpec("se", 3.0, (0.05,)), 0.3, float("nan"))
    fit = fit_hyperparameters(data, "se", restarts=2, rng=0, init=init)
    assert fit.lml >= log_marginal_likelihood(data.with_noise(0.3), init.spec) - 1e-9
    default = KernelSpec.default("se", 1, max(float(np.var(data.values)), 0.1))
    assert fit.lml >= log_marginal_likelihood(data.with_noise(0.1), default) - 1e-9
    assert VARIANCE_BOUNDS[0] <= fit.spec.variance <= VARIANCE_BOUNDS[1]
    assert all(SCALE_BOUNDS[0] <= s <= SCALE_BOUNDS[1] for s in fit.spec.length_scales)
    assert NOISE_BOUNDS[0] <= fit.noise_std <= NOISE_BOUNDS[1]
    assert fit.lml == pytest.approx(log_marginal_likelihood(data.with_noise(fit.noise_std), fit.spec))


def test_fit_with_one_restart_is_deterministic():
    data = _draw_se(3, n=20)
    a = fit_hyperparameters(data, "matern52", restarts=1, rng=5)
    b = fit_hyperparameters(data, "matern52", restarts=1, rng=5)
    assert a == b


def test_ard_prunes_an_irrelevant_dimension():
    wins = 0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        X = rng.uniform(size=(30, 2))
        y = np.sin(6 * X[:, 0]) + 0.05 * rng.normal(size=30)
        ls = fit_hyperparameters(Dataset(X, y, 0.05), "se", restarts=2, rng=seed).spec.length_scales
        # ARD weight is 1 / l**2: the irrelevant one must be smaller
        wins += ls[1] > ls[0]
    assert wins >= 16


def test_fit_needs_two_points_and_known_kind():
    with pytest.raises(ValueError):
        fit_hyperparameters(Dataset(np.array([[0.1]]), np.array([1.0]), 0.1), "se")
    with pytest.raises(ValueError):
        fit_hyperparameters(_draw_se(0, n=5), "rbf")
    with pytest.raises(ValueError):
        fit_hyperparameters(_draw_se(0, n=5), "se", mean="median")


def test_dataset_validation_and_append():
    with pytest.raises(ValueError):
        Dataset(np.zeros((3, 2)), np.zeros(2), 0.1)
    with pytest.raises(ValueError):
        Dataset(np.zeros((1, 2)), np.zeros(1), -0.1)
    d = Dataset.empty(2, 0.1).append([0.1, 0.2], 1.0)
    assert len(d) == 1 and d.dim == 2 and d.noise_std == 0.1
