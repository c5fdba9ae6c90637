import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.special import expit

from visipost import classifiers as clf
from visipost.errors import InvalidInputError, UnfitModelError


def _ordinal_data(rng, n=400, M=3, beta=(1.5, -0.8, 0.0), cuts=(-1.0, 0.0, 0.7, 2.0), offset=10):
    X = rng.normal(size=(n, M))
    eta = X @ np.asarray(beta)[:M]
    u = rng.logistic(size=n)
    y = offset + np.searchsorted(np.asarray(cuts), eta + u)
    return X, y


# ---------------------------------------------------------------- POLR predict

def test_polr_single_cutpoint():
    m = clf.PolrModel([0.0], [0.0], [False], [3, 4])
    p = clf.polr_predict(m, [2.5])
    assert p[3] == 0.5 and p[4] == 0.5 and p.sum() == 1.0


def test_polr_three_categories():
    m = clf.PolrModel([-1.0, 1.0], [0.0], [False], [0, 1, 2])
    p = clf.polr_predict(m, [0.3])
    np.testing.assert_allclose(p[:3], [0.26894142, 0.46211716, 0.26894142], atol=1e-8)
    np.testing.assert_array_equal(clf.polr_predict(m, [-7.0]), p)
    assert np.all(p[3:] == 0)


def test_polr_dimension_mismatch():
    m = clf.PolrModel([0.0], [0.0, 1.0], [False, False], [0, 1])
    with pytest.raises(InvalidInputError):
        clf.polr_predict(m, [1.0])


def test_polr_invalid_cutpoints():
    with pytest.raises(InvalidInputError):
        clf.PolrModel([1.0, 0.0], [0.0], [False], [0, 1, 2])


@settings(max_examples=50)
@given(st.lists(st.floats(-5, 5), min_size=1, max_size=6, unique=True), st.floats(-3, 3), st.floats(-10, 10))
def test_polr_cdf_monotone(cuts, beta, x):
    m = clf.PolrModel(sorted(cuts), [beta], [False], list(range(len(cuts) + 1)))
    p = clf.polr_predict(m, [x])
    assert np.all(p >= 0) and abs(p.sum() - 1) < 1e-12
    assert np.all(np.diff(np.cumsum(p)) >= -1e-15)


def test_polr_sign_convention():
    m = clf.PolrModel([-1.0, 0.0, 1.0], [2.0], [True], [0, 1, 2, 3])
    lo, hi = clf.polr_predict(m, [-1.0]), clf.polr_predict(m, [1.0])
    # larger feature with positive coefficient shifts mass to higher categories
    assert (np.arange(84) * hi).sum() > (np.arange(84) * lo).sum()
    assert abs(clf.polr_cdf(m, [1.0])[0, 1] - expit(0.0 - 2.0)) < 1e-15


# ---------------------------------------------------------------- POLR fit

def test_intercept_only_matches_empirical_cdf(rng):
    y = rng.choice([5, 6, 6, 7, 9, 9, 9, 12], size=300)  # 8, 10, 11 interior but unobserved
    m = clf.polr_fit(np.empty((300, 0)), y)
    assert m.converged
    emp = np.array([(y <= k).mean() for k in range(5, 12)])
    np.testing.assert_allclose(clf.polr_cdf(m, np.empty((1, 0)))[0], emp, atol=1e-6)
    np.testing.assert_array_equal(m.category_map, np.arange(5, 13))
    p = clf.polr_predict(m, np.empty(0))
    assert p[:5].sum() == 0 and p[13:].sum() == 0


def test_masked_anti_monotone_coefficient(rng):
    y = rng.integers(20, 30, size=200)
    x = -(y + rng.uniform(0, 0.5, size=200))
    mask = np.array([True])
    m = clf.polr_fit(x[:, None], y, mask=mask)
    assert 0.0 <= m.coefficients[0] < 1e-6
    m0 = clf.polr_fit(np.empty((200, 0)), y)
    assert abs(m.loglik - m0.loglik) < 1e-8
    free = clf.polr_fit(x[:, None], y)
    assert free.coefficients[0] < -1.0


def test_newton_matches_lbfgs_oracle(rng):
    X, y = _ordinal_data(rng)
    mask = np.array([True, False, True])
    a = clf.polr_fit(X, y, mask=mask)
    b = clf.polr_fit(X, y, mask=mask, solver="lbfgs", opts=clf.TrainOptions(max_iter=5000, tol=1e-15, gtol=1e-10))
    assert a.converged
    assert a.loglik >= b.loglik - 1e-7
    np.testing.assert_allclose(a.coefficients, b.coefficients, atol=1e-4)
    np.testing.assert_allclose(a.cutpoints, b.cutpoints, atol=1e-4)
    assert a.coefficients[1] < 0 and a.coefficients[0] > 1.0 and a.coefficients[2] >= 0


def test_recovers_generating_parameters(rng):
    X, y = _ordinal_data(rng, n=20000)
    m = clf.polr_fit(X, y)
    np.testing.assert_allclose(m.coefficients, [1.5, -0.8, 0.0], atol=0.06)
    np.testing.assert_allclose(m.cutpoints, [-1.0, 0.0, 0.7, 2.0], atol=0.06)


def test_permutation_invariance(rng):
    X, y = _ordinal_data(rng, n=300)
    a = clf.polr_fit(X, y)
    perm = rng.permutation(len(y))
    b = clf.polr_fit(X[perm], y[perm])
    np.testing.assert_allclose(a.coefficients, b.coefficients, atol=1e-8)
    np.testing.assert_allclose(a.cutpoints, b.cutpoints, atol=1e-8)


def test_intercept_absorption(rng):
    X, y = _ordinal_data(rng, n=300)
    c = 3.0
    shifted = X.copy()
    shifted[:, 0] += c
    a = clf.polr_fit(X, y)
    b = clf.polr_fit(shifted, y)
    np.testing.assert_allclose(b.coefficients, a.coefficients, atol=1e-6)
    np.testing.assert_allclose(b.cutpoints, a.cutpoints + c * a.coefficients[0], atol=1e-6)
    np.testing.assert_allclose(clf.polr_predict(b, shifted), clf.polr_predict(a, X), atol=1e-8)


def test_objective_decreases(rng):
    X, y = _ordinal_data(rng, n=300)
    m = clf.polr_fit(X, y, mask=np.array([True, True, False]))
    assert len(m.objective_trace) >= 2
    assert np.all(np.diff(m.objective_trace) <= 0)


def test_warm_start_reaches_same_optimum(rng):
    X, y = _ordinal_data(rng, n=300)
    a = clf.polr_fit(X, y)
    b = clf.polr_fit(X, y, init=a)
    assert b.n_iter <= a.n_iter
    assert abs(a.loglik - b.loglik) < 1e-8


def test_single_class_and_bad_labels():
    with pytest.raises(UnfitModelError):
        clf.polr_fit(np.ones((5, 1)), [3] * 5)
    with pytest.raises(InvalidInputError):
        clf.polr_fit(np.ones((2, 1)), [0, 84])
    with pytest.raises(InvalidInputError):
        clf.polr_fit([[np.nan], [1.0]], [0, 1])


def test_objective_gradient_and_hessian_fd(rng):
    X, y = _ordinal_data(rng, n=80)
    j = y - y.min()
    n_cat = j.max() + 1
    theta = rng.normal(scale=0.3, size=n_cat - 1 + X.shape[1])
    f, g = clf._polr_objective(theta, X, j, n_cat)
    _, g2, H = clf._polr_hessian(theta, X, j, n_cat)
    np.testing.assert_array_equal(g, g2)
    h = 1e-6
    g_fd = np.empty_like(theta)
    H_fd = np.empty((len(theta), len(theta)))
    for i in range(len(theta)):
        e = np.zeros_like(theta)
        e[i] = h
        fp, gp = clf._polr_objective(theta + e, X, j, n_cat)
        fm, gm = clf._polr_objective(theta - e, X, j, n_cat)
        g_fd[i] = (fp - fm) / (2 * h)
        H_fd[:, i] = (gp - gm) / (2 * h)
    np.testing.assert_allclose(g, g_fd, rtol=1e-6, atol=1e-8)
    np.testing.assert_allclose(H, H_fd, rtol=1e-5, atol=1e-7)


# ---------------------------------------------------------------- MLP

def _random_net(rng, n_in, hidden):
    m = clf.mlp_init(n_in, hidden, seed=int(rng.integers(1000)),
                     x_mean=rng.normal(size=n_in), x_scale=rng.uniform(0.5, 2, n_in))
    m.weights[-1] = rng.normal(scale=0.5, size=m.weights[-1].shape)
    m.biases = [rng.normal(scale=0.3, size=b.shape) for b in m.biases]
    return m


def test_mlp_zero_output_layer_is_uniform(rng):
    m = clf.mlp_init(4, (8, 5), seed=1)
    p = clf.mlp_predict(m, rng.normal(size=(3, 4)))
    np.testing.assert_allclose(p, 1 / 84, rtol=0, atol=1e-15)


def test_mlp_softmax_overflow_safe():
    m = clf.mlp_init(1, (), seed=0)
    m.biases[-1][7] = 1000.0
    p = clf.mlp_predict(m, [0.0])
    assert np.isfinite(p).all() and p[7] >= 1 - 1e-12


def test_mlp_predict_repeatable(rng):
    m = _random_net(rng, 3, (6,))
    x = rng.normal(size=3)
    a, b = clf.mlp_predict(m, x), clf.mlp_predict(m, x)
    assert a.tobytes() == b.tobytes()
    assert abs(a.sum() - 1) < 1e-9
    with pytest.raises(InvalidInputError):
        clf.mlp_predict(m, np.zeros(4))


def test_mlp_gradient_finite_differences(rng):
    h = 1e-6
    for trial in range(20):
        n_in = int(rng.integers(1, 5))
        hidden = tuple(int(v) for v in rng.integers(2, 6, size=int(rng.integers(1, 3))))
        m = _random_net(rng, n_in, hidden)
        X = rng.normal(size=(7, n_in))
        y = rng.integers(0, 84, size=7)
        l2 = float(rng.choice([0.0, 1e-3]))
        _, gw, gb = clf.mlp_loss_and_grad(m, X, y, l2)
        analytic, numeric = [], []
        for params, grads in ((m.weights, gw), (m.biases, gb)):
            for p, g in zip(params, grads):
                for idx in np.ndindex(p.shape):
                    old = p[idx]
                    p[idx] = old + h
                    fp = clf.mlp_loss_and_grad(m, X, y, l2)[0]
                    p[idx] = old - h
                    fm = clf.mlp_loss_and_grad(m, X, y, l2)[0]
                    p[idx] = old
                    analytic.append(g[idx])
                    numeric.append((fp - fm) / (2 * h))
        a, n = np.array(analytic), np.array(numeric)
        rel = np.linalg.norm(a - n) / max(np.linalg.norm(a), np.linalg.norm(n))
        assert rel < 1e-5, (trial, rel)


def test_mlp_toy_overfit(rng):
    X = rng.normal(size=(20, 3))
    y = rng.integers(0, 84, size=20)
    opts = clf.TrainOptions(max_iter=3000, validation_fraction=0.0, l2=0.0, batch_size=20, seed=3)
    m = clf.mlp_fit(X, y, hidden=(64, 64), opts=opts)
    assert m.metadata["train_loss"] < 0.05


def test_mlp_seed_determinism_and_warm_start(rng):
    X, y = _ordinal_data(rng, n=300)
    opts = clf.TrainOptions(max_iter=30, seed=11)
    a = clf.mlp_fit(X, y, hidden=(8,), opts=opts)
    b = clf.mlp_fit(X, y, hidden=(8,), opts=opts)
    assert clf.model_to_json(a) == clf.model_to_json(b)
    c = clf.mlp_fit(X, y, hidden=(8,), opts=clf.TrainOptions(max_iter=30, seed=12))
    assert clf.model_to_json(a) != clf.model_to_json(c)
    warm = clf.mlp_fit(X, y, hidden=(8,), opts=opts, init=a)
    assert warm.metadata["best_val_loss"] <= a.metadata["best_val_loss"] + 0.05
    # the initial model is not modified by warm starting
    assert clf.model_to_json(a) == clf.model_to_json(b)


def test_mlp_learns_ordinal_signal(rng):
    X, y = _ordinal_data(rng, n=2000)
    m = clf.mlp_fit(X, y, hidden=(16,), opts=clf.TrainOptions(max_iter=200, seed=0))
    p = clf.mlp_predict(m, X)
    ce = -np.mean(np.log(p[np.arange(len(y)), y]))
    clim = clf.climatology_pmf(y)
    assert ce < -np.mean(np.log(clim[y])) - 0.2


# ---------------------------------------------------------------- references, floor, serialization

def test_climatology_examples(rng):
    np.testing.assert_array_equal(clf.climatology_pmf([12] * 30), np.eye(84)[12])
    p = clf.climatology_pmf([3] * 15 + [40] * 15)
    assert p[3] == 0.5 and p[40] == 0.5
    for _ in range(20):
        assert abs(clf.climatology_pmf(rng.integers(0, 84, 30)).sum() - 1) < 1e-12
    with pytest.raises(InvalidInputError):
        clf.climatology_pmf([])


def test_ensemble_pmf():
    p = clf.ensemble_pmf([[0, 0, 5, 83]])
    assert p.shape == (1, 84) and p[0, 0] == 0.5 and p[0, 5] == 0.25 and p[0, 83] == 0.25


def test_pmf_floor_examples():
    u = np.full(84, 1 / 84)
    np.testing.assert_allclose(clf.pmf_floor(u), u, rtol=0, atol=1e-17)
    pm = np.eye(84)[10]
    f = clf.pmf_floor(pm)
    z = 1 + 83 * clf.P_MIN
    assert abs(f[10] - 1 / z) < 1e-14
    np.testing.assert_allclose(np.delete(f, 10), clf.P_MIN / z, rtol=1e-12)
    assert np.all(f >= clf.P_MIN * (1 - 3e-3))
    with pytest.raises(InvalidInputError):
        clf.pmf_floor(u, 0.1)


@settings(max_examples=50)
@given(st.integers(0, 2**32 - 1))
def test_pmf_floor_second_pass_bounded(seed):
    rng = np.random.default_rng(seed)
    p = rng.dirichlet(np.full(84, 0.05))
    once = clf.pmf_floor(p)
    twice = clf.pmf_floor(once)
    assert abs(once.sum() - 1) < 1e-12
    # not exactly idempotent: each of up to 83 floored entries is lifted again by at most
    # 83 * p_min**2, and renormalising moves any entry by at most that total
    assert np.max(np.abs(twice - once)) <= 83 ** 2 * clf.P_MIN ** 2
    assert np.max(np.abs(clf.pmf_floor(twice) - twice)) <= np.max(np.abs(twice - once))


def test_json_round_trip(rng):
    X, y = _ordinal_data(rng, n=200)
    for model in (clf.polr_fit(X, y, mask=np.array([True, False, False])),
                  clf.mlp_fit(X, y, hidden=(5,), opts=clf.TrainOptions(max_iter=5))):
        text = clf.model_to_json(model)
        back = clf.model_from_json(text)
        assert clf.model_to_json(back) == text
        np.testing.assert_array_equal(clf.predict(back, X[:5]), clf.predict(model, X[:5]))
