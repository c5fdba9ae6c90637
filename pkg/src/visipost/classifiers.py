"""Predictive distributions over the 84 visibility categories.

Two classifiers are provided, a proportional odds logistic regression
(POLR) and a multilayer perceptron with a softmax output layer, together
with the empirical climatology and the probability floor applied before
logarithmic scoring. Every model returns probability vectors of length 84.
"""
import json
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit, log_expit, softmax

from .domain import N_CATEGORIES
from .errors import InvalidInputError, NumericError, UnfitModelError

P_MIN = 2.75e-5
# lower bound on log cutpoint increments; keeps unobserved interior categories finite
_MIN_LOG_STEP = -20.0


def check_pmf(probs, atol=1e-9):
    """Raise if ``probs`` (shape ``(..., 84)``) is not a valid probability vector."""
    probs = np.asarray(probs, dtype=float)
    if probs.shape[-1] != N_CATEGORIES:
        raise InvalidInputError(f"PMF must have {N_CATEGORIES} entries, got {probs.shape[-1]}")
    if np.any(probs < 0) or not np.all(np.isfinite(probs)):
        raise InvalidInputError("PMF entries must be finite and nonnegative")
    if np.any(np.abs(probs.sum(axis=-1) - 1.0) > atol):
        raise InvalidInputError("PMF must sum to one")
    return probs


@dataclass
class TrainOptions:
    """Optimiser settings shared by both classifiers.

    ``max_iter`` counts quasi-Newton iterations for POLR and epochs for the
    MLP. ``tol`` is the relative objective change at which POLR stops.
    """

    max_iter: int = 1000
    tol: float = 1e-10
    gtol: float = 1e-9
    learning_rate: float = 0.01
    batch_size: int = 128
    validation_fraction: float = 0.1
    patience: int = 20
    l2: float = 1e-4
    seed: int = 0

    def __post_init__(self):
        if self.tol <= 0:
            raise InvalidInputError("tolerance must be positive")
        if not 0 <= self.validation_fraction < 1:
            raise InvalidInputError("validation fraction must lie in [0, 1)")


def _check_training_data(features, labels):
    X = np.asarray(features, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(labels)
    if X.shape[0] != y.shape[0]:
        raise InvalidInputError("features and labels differ in length")
    if not np.all(np.isfinite(X)):
        raise InvalidInputError("features must be finite")
    if y.size == 0 or np.any(y < 0) or np.any(y >= N_CATEGORIES):
        raise InvalidInputError("labels must be category indices 0..83")
    y = y.astype(np.int64)
    if np.unique(y).size < 2:
        raise UnfitModelError("at least two distinct categories are needed to fit a classifier")
    return X, y


def _standardize(X):
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    scale = np.where(scale > 1e-12, scale, 1.0)
    return mean, scale


# --------------------------------------------------------------------------
# proportional odds logistic regression
# --------------------------------------------------------------------------

@dataclass
class PolrModel:
    """Fitted ordered-logit model.

    ``P(Y <= category_map[j] | x) = logistic(cutpoints[j] - x @ coefficients)``
    for ``j < len(cutpoints)``; categories outside ``category_map`` get zero
    probability.
    """

    cutpoints: np.ndarray
    coefficients: np.ndarray
    constraint_mask: np.ndarray
    category_map: np.ndarray
    converged: bool = True
    message: str = ""
    n_iter: int = 0
    loglik: float = float("nan")
    n_train: int = 0
    objective_trace: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        self.cutpoints = np.asarray(self.cutpoints, dtype=float)
        self.coefficients = np.asarray(self.coefficients, dtype=float)
        self.constraint_mask = np.asarray(self.constraint_mask, dtype=bool)
        self.category_map = np.asarray(self.category_map, dtype=np.int64)
        if len(self.cutpoints) != len(self.category_map) - 1:
            raise InvalidInputError("need one cutpoint fewer than retained categories")
        if np.any(np.diff(self.cutpoints) <= 0):
            raise InvalidInputError("cutpoints must be strictly increasing")

    @property
    def n_features(self):
        return len(self.coefficients)


def _polr_unpack(theta, n_cut):
    steps = np.exp(theta[1:n_cut])
    alpha = theta[0] + np.concatenate(([0.0], np.cumsum(steps)))
    return alpha, steps, theta[n_cut:]


def _polr_objective(theta, Z, j, n_cat):
    """Mean negative log-likelihood and gradient in the unconstrained parameters."""
    n_cut = n_cat - 1
    alpha, steps, beta = _polr_unpack(theta, n_cut)
    eta = Z @ beta
    ext = np.concatenate(([np.inf], alpha, [np.inf]))  # placeholders at both ends
    lower_ok = j > 0
    upper_ok = j < n_cut
    a = np.where(upper_ok, ext[np.minimum(j, n_cut - 1) + 1] - eta, np.inf)
    b = np.where(lower_ok, ext[np.maximum(j, 1)] - eta, -np.inf)

    logp = np.zeros_like(eta)
    da = np.zeros_like(eta)
    db = np.zeros_like(eta)
    both = lower_ok & upper_ok
    only_up = upper_ok & ~lower_ok
    only_low = lower_ok & ~upper_ok

    # P = sigma(a) - sigma(b) = sigma(a) sigma(-b) (1 - exp(b - a))
    ab, bb = a[both], b[both]
    gap = ab - bb
    logp[both] = log_expit(ab) + log_expit(-bb) + np.log(-np.expm1(-gap))
    inv = 1.0 / np.expm1(gap)
    da[both] = expit(-ab) + inv
    db[both] = -expit(bb) - inv

    logp[only_up] = log_expit(a[only_up])
    da[only_up] = expit(-a[only_up])
    logp[only_low] = log_expit(-b[only_low])
    db[only_low] = -expit(b[only_low])

    n = len(eta)
    f = -logp.sum() / n

    g_alpha = np.zeros(n_cut)
    np.add.at(g_alpha, j[upper_ok], -da[upper_ok])
    np.add.at(g_alpha, j[lower_ok] - 1, -db[lower_ok])
    g_beta = Z.T @ (da + db)

    grad = np.empty_like(theta)
    grad[0] = g_alpha.sum()
    tail = np.cumsum(g_alpha[::-1])[::-1]
    grad[1:n_cut] = steps * tail[1:]
    grad[n_cut:] = g_beta
    return f, grad / n


def _polr_trial_value(theta, Z, j, n_cat):
    """Objective at a line-search trial point; overflowing points count as +inf."""
    with np.errstate(all="ignore"):
        f = _polr_objective(theta, Z, j, n_cat)[0]
    return f if np.isfinite(f) else np.inf


def _polr_hessian(theta, Z, j, n_cat):
    """Objective, gradient and Hessian in the unconstrained parameters."""
    n_cut = n_cat - 1
    alpha, steps, beta = _polr_unpack(theta, n_cut)
    f, grad = _polr_objective(theta, Z, j, n_cat)
    n, M = Z.shape
    eta = Z @ beta
    lower_ok = j > 0
    upper_ok = j < n_cut
    a = np.where(upper_ok, alpha[np.minimum(j, n_cut - 1)] - eta, np.inf)
    b = np.where(lower_ok, alpha[np.maximum(j - 1, 0)] - eta, -np.inf)

    # curvature of -log P with respect to the upper (a) and lower (b) arguments
    haa = np.where(upper_ok, expit(a) * expit(-a), 0.0)
    hbb = np.where(lower_ok, expit(b) * expit(-b), 0.0)
    hab = np.zeros(n)
    both = lower_ok & upper_ok
    q = 1.0 / np.expm1(a[both] - b[both])
    r = q * (1.0 + q)
    haa[both] += r
    hbb[both] += r
    hab[both] = -r

    up, lo = j[upper_ok], j[lower_ok] - 1
    H_aa = np.zeros((n_cut, n_cut))
    np.add.at(H_aa, (up, up), haa[upper_ok])
    np.add.at(H_aa, (lo, lo), hbb[lower_ok])
    jb = j[both]
    np.add.at(H_aa, (jb, jb - 1), hab[both])
    np.add.at(H_aa, (jb - 1, jb), hab[both])

    H_ab = np.zeros((n_cut, M))
    np.add.at(H_ab, up, -(haa + hab)[upper_ok, None] * Z[upper_ok])
    np.add.at(H_ab, lo, -(hab + hbb)[lower_ok, None] * Z[lower_ok])
    H_bb = Z.T @ ((haa + 2 * hab + hbb)[:, None] * Z)

    J = np.zeros((n_cut, n_cut))
    J[:, 0] = 1.0
    J[1:, 1:] = np.tril(np.ones((n_cut - 1, n_cut - 1))) * steps[None, :]
    H = np.empty((len(theta), len(theta)))
    H[:n_cut, :n_cut] = J.T @ H_aa @ J / n
    H[1:n_cut, 1:n_cut] += np.diag(grad[1:n_cut])
    H[:n_cut, n_cut:] = J.T @ H_ab / n
    H[n_cut:, :n_cut] = H[:n_cut, n_cut:].T
    H[n_cut:, n_cut:] = H_bb / n
    return f, grad, H


def _projected_newton(fun, hess, x0, lower, max_iter, tol, gtol):
    """Minimise a smooth function subject to ``x >= lower`` (entries may be -inf).

    Newton steps on the free variables, projection onto the bounds and
    Armijo backtracking; every accepted step lowers the objective.
    Returns ``(x, f, n_iter, converged, message, trace)``.
    """
    x = np.maximum(x0, lower)
    f, g, H = hess(x)
    trace = [f]
    for it in range(1, max_iter + 1):
        active = (x <= lower) & (g > 0)
        free = ~active
        if np.max(np.abs(g[free]), initial=0.0) < gtol:
            return x, f, it - 1, True, "projected gradient below tolerance", trace
        Hf = H[np.ix_(free, free)]
        gf = g[free]
        mu = 0.0
        scale = max(1e-12, np.max(np.abs(np.diag(Hf)), initial=1.0))
        while True:
            try:
                c = np.linalg.cholesky(Hf + mu * np.eye(len(gf)))
                break
            except np.linalg.LinAlgError:
                mu = max(10 * mu, 1e-8 * scale)
        step = np.zeros_like(x)
        step[free] = -np.linalg.solve(c.T, np.linalg.solve(c, gf))
        t = 1.0
        while True:
            x_new = np.maximum(x + t * step, lower)
            f_new = fun(x_new)
            if np.isfinite(f_new) and f_new <= f + 1e-4 * g @ (x_new - x):
                break
            t *= 0.5
            if t < 1e-12:
                return x, f, it, True, "line search cannot improve further", trace
        improvement = f - f_new
        x = x_new
        f, g, H = hess(x)
        trace.append(f)
        if improvement <= tol * max(1.0, abs(f)):
            return x, f, it, True, "relative reduction below tolerance", trace
    return x, f, max_iter, False, "iteration limit reached", trace


def polr_fit(features, labels, mask=None, opts=None, init=None, solver="newton"):
    """Fit a POLR model by constrained maximum likelihood.

    Parameters
    ----------
    features : array_like, shape (n, M)
        Feature rows. ``M`` may be zero (intercept-only model).
    labels : array_like of int, shape (n,)
        Observed category indices.
    mask : array_like of bool, shape (M,), optional
        Coefficients flagged ``True`` are constrained to be nonnegative.
    opts : TrainOptions, optional
    init : PolrModel, optional
        Warm start for the coefficients; cutpoints always start from the
        empirical cumulative frequencies.
    solver : {"newton", "lbfgs"}
        Projected Newton on the exact Hessian, or scipy's L-BFGS-B.

    Returns
    -------
    PolrModel
        ``converged`` is ``False`` (and a warning is issued) when the
        iteration limit is hit.

    Notes
    -----
    Linear predictor is ``cutpoint_k - x @ beta``, so a positive coefficient
    moves probability towards higher visibility categories. Cutpoints are
    parametrised as a first value plus exponentiated increments; bound
    constraints handle the nonnegative coefficients. Features are centred
    and scaled internally and the estimates mapped back.
    """
    opts = opts or TrainOptions()
    X, y = _check_training_data(features, labels)
    n, M = X.shape
    mask = np.zeros(M, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if mask.shape != (M,):
        raise InvalidInputError("constraint mask length differs from the feature count")

    lo, hi = int(y.min()), int(y.max())
    n_cat = hi - lo + 1
    n_cut = n_cat - 1
    j = y - lo
    mean, scale = _standardize(X)
    Z = (X - mean) / scale

    counts = np.bincount(j, minlength=n_cat)
    cum = np.clip(np.cumsum(counts)[:-1] / n, 1e-6, 1 - 1e-6)
    alpha0 = np.log(cum) - np.log1p(-cum)
    log_steps0 = np.log(np.maximum(np.diff(alpha0), np.exp(_MIN_LOG_STEP)))
    beta0 = np.zeros(M)
    if init is not None and init.n_features == M:
        beta0 = np.asarray(init.coefficients) * scale
        beta0 = np.where(mask, np.maximum(beta0, 0.0), beta0)
    theta0 = np.concatenate(([alpha0[0]], log_steps0, beta0))
    lower = np.concatenate(([-np.inf], np.full(n_cut - 1, _MIN_LOG_STEP),
                            np.where(mask, 0.0, -np.inf)))

    if solver == "newton":
        theta, fval, nit, converged, message, trace = _projected_newton(
            lambda t: _polr_trial_value(t, Z, j, n_cat),
            lambda t: _polr_hessian(t, Z, j, n_cat),
            theta0, lower, opts.max_iter, opts.tol, opts.gtol)
    elif solver == "lbfgs":
        trace = []
        bounds = [(None if np.isinf(b) else b, None) for b in lower]
        res = minimize(_polr_objective, theta0, args=(Z, j, n_cat), jac=True, method="L-BFGS-B",
                       bounds=bounds, callback=lambda intermediate_result: trace.append(
                           float(intermediate_result.fun)),
                       options={"maxiter": opts.max_iter, "ftol": opts.tol, "gtol": opts.gtol,
                                "maxcor": 20})
        theta, fval, nit, message = res.x, float(res.fun), int(res.nit), str(res.message)
        converged = nit < opts.max_iter
    else:
        raise InvalidInputError(f"unknown solver {solver!r}")

    if not np.all(np.isfinite(theta)):
        raise NumericError("POLR optimisation produced non-finite parameters")
    if not converged:
        warnings.warn(f"POLR did not converge in {opts.max_iter} iterations", RuntimeWarning)
    alpha_z, _, beta_z = _polr_unpack(theta, n_cut)
    beta = beta_z / scale
    alpha = alpha_z + mean @ beta
    return PolrModel(
        cutpoints=alpha, coefficients=np.where(mask, np.maximum(beta, 0.0), beta),
        constraint_mask=mask, category_map=np.arange(lo, hi + 1), converged=converged,
        message=message, n_iter=nit, loglik=float(-fval * n), n_train=n,
        objective_trace=trace,
    )


def polr_cdf(model, features):
    """Cumulative probabilities ``P(Y <= category_map[j] | x)``, shape ``(n, C - 1)``."""
    X = np.asarray(features, dtype=float)
    if X.ndim == 1:
        X = X.reshape(1, -1)
    if X.shape[-1] != model.n_features:
        raise InvalidInputError(f"expected {model.n_features} features, got {X.shape[-1]}")
    eta = X @ model.coefficients
    return expit(model.cutpoints[None, :] - eta[:, None])


def polr_predict(model, features):
    """Predictive PMF(s) over the 84 categories.

    A single feature vector gives shape ``(84,)``, a matrix ``(n, 84)``.
    """
    x = np.asarray(features, dtype=float)
    single = x.ndim == 1
    X = x.reshape(1, -1) if single else x
    cdf = polr_cdf(model, X)
    n = cdf.shape[0]
    local = np.diff(np.concatenate([np.zeros((n, 1)), cdf, np.ones((n, 1))], axis=1), axis=1)
    local = np.maximum(local, 0.0)
    local /= local.sum(axis=1, keepdims=True)
    probs = np.zeros((n, N_CATEGORIES))
    probs[:, model.category_map] = local
    return probs[0] if single else probs


# --------------------------------------------------------------------------
# multilayer perceptron
# --------------------------------------------------------------------------

@dataclass
class MlpModel:
    """Feed-forward network with tanh hidden layers and an 84-way softmax."""

    layer_sizes: tuple
    weights: list
    biases: list
    x_mean: np.ndarray
    x_scale: np.ndarray
    activation: str = "tanh"
    seed: int = 0
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.layer_sizes = tuple(int(s) for s in self.layer_sizes)
        self.weights = [np.asarray(w, dtype=float) for w in self.weights]
        self.biases = [np.asarray(b, dtype=float) for b in self.biases]
        self.x_mean = np.asarray(self.x_mean, dtype=float)
        self.x_scale = np.asarray(self.x_scale, dtype=float)
        if self.layer_sizes[-1] != N_CATEGORIES:
            raise InvalidInputError(f"output layer must have {N_CATEGORIES} units")
        if self.activation != "tanh":
            raise InvalidInputError(f"unsupported activation {self.activation!r}")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (self.layer_sizes[i], self.layer_sizes[i + 1]) or b.shape != (self.layer_sizes[i + 1],):
                raise InvalidInputError(f"layer {i} has incompatible dimensions")

    @property
    def n_features(self):
        return self.layer_sizes[0]

    def copy(self):
        return MlpModel(self.layer_sizes, [w.copy() for w in self.weights],
                        [b.copy() for b in self.biases], self.x_mean.copy(), self.x_scale.copy(),
                        self.activation, self.seed, dict(self.metadata))


def mlp_init(n_features, hidden=(32, 16), seed=0, x_mean=None, x_scale=None):
    """Glorot-uniform hidden layers and a zero output layer (uniform initial PMF)."""
    rng = np.random.default_rng(seed)
    sizes = (n_features,) + tuple(hidden) + (N_CATEGORIES,)
    weights, biases = [], []
    for i in range(len(sizes) - 1):
        fan_in, fan_out = sizes[i], sizes[i + 1]
        if i == len(sizes) - 2:
            weights.append(np.zeros((fan_in, fan_out)))
        else:
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    x_mean = np.zeros(n_features) if x_mean is None else x_mean
    x_scale = np.ones(n_features) if x_scale is None else x_scale
    return MlpModel(sizes, weights, biases, x_mean, x_scale, seed=seed)


def _mlp_forward(model, X):
    acts = [(X - model.x_mean) / model.x_scale]
    last = len(model.weights) - 1
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = acts[-1] @ w + b
        acts.append(z if i == last else np.tanh(z))
    return acts


def mlp_logits(model, features):
    X = np.atleast_2d(np.asarray(features, dtype=float))
    if X.shape[-1] != model.n_features:
        raise InvalidInputError(f"expected {model.n_features} features, got {X.shape[-1]}")
    return _mlp_forward(model, X)[-1]


def mlp_loss_and_grad(model, X, y, l2=0.0):
    """Mean cross-entropy plus ``l2/2 * sum(W**2)`` and its gradients.

    Returns ``(loss, weight_grads, bias_grads)``.
    """
    acts = _mlp_forward(model, X)
    logits = acts[-1]
    shifted = logits - logits.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(shifted).sum(axis=1))
    n = X.shape[0]
    rows = np.arange(n)
    loss = float(np.mean(logsum - shifted[rows, y]))
    loss += 0.5 * l2 * sum(float(np.sum(w * w)) for w in model.weights)

    delta = np.exp(shifted - logsum[:, None])
    delta[rows, y] -= 1.0
    delta /= n
    gw = [None] * len(model.weights)
    gb = [None] * len(model.weights)
    for i in range(len(model.weights) - 1, -1, -1):
        gw[i] = acts[i].T @ delta + l2 * model.weights[i]
        gb[i] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ model.weights[i].T) * (1.0 - acts[i] ** 2)
    return loss, gw, gb


def _cross_entropy(model, X, y):
    logits = _mlp_forward(model, X)[-1]
    shifted = logits - logits.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(shifted).sum(axis=1))
    return float(np.mean(logsum - shifted[np.arange(len(y)), y]))


def mlp_fit(features, labels, hidden=(32, 16), opts=None, init=None):
    """Train an MLP classifier by minibatch Adam on the mean cross-entropy.

    A random ``opts.validation_fraction`` of the rows is held out; training
    stops after ``opts.patience`` epochs without validation improvement and
    the best weights are restored. With no validation split the network runs
    for ``opts.max_iter`` epochs. All randomness comes from ``opts.seed``.

    ``init`` warm-starts from an existing model with matching layer sizes.

    Raises
    ------
    NumericError
        If the loss becomes non-finite.
    """
    opts = opts or TrainOptions()
    X, y = _check_training_data(features, labels)
    n, M = X.shape
    rng = np.random.default_rng(opts.seed)
    mean, scale = _standardize(X)

    sizes = (M,) + tuple(hidden) + (N_CATEGORIES,)
    if init is not None and init.layer_sizes == sizes:
        model = init.copy()
        model.x_mean, model.x_scale = mean, scale
        model.seed = opts.seed
    else:
        model = mlp_init(M, hidden, seed=int(rng.integers(2**31)), x_mean=mean, x_scale=scale)
        model.seed = opts.seed

    n_val = int(round(opts.validation_fraction * n)) if opts.validation_fraction > 0 else 0
    n_val = min(n_val, n - 1)
    perm = rng.permutation(n)
    val_idx, tr_idx = perm[:n_val], perm[n_val:]
    Xtr, ytr = X[tr_idx], y[tr_idx]
    Xval, yval = X[val_idx], y[val_idx]

    # all parameters live in one flat buffer so an Adam step is a few vector ops
    params = model.weights + model.biases
    sizes_flat = np.cumsum([0] + [p.size for p in params])
    flat = np.concatenate([p.ravel() for p in params])
    views = [flat[a:b].reshape(p.shape) for a, b, p in zip(sizes_flat[:-1], sizes_flat[1:], params)]
    L = len(model.weights)
    model.weights, model.biases = views[:L], views[L:]
    m1 = np.zeros_like(flat)
    m2 = np.zeros_like(flat)
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    step = 0
    batch = max(1, min(opts.batch_size, len(tr_idx)))

    best_val = np.inf
    best = None
    best_epoch = 0
    wait = 0
    epoch = 0
    for epoch in range(1, opts.max_iter + 1):
        order = rng.permutation(len(tr_idx))
        for start in range(0, len(order), batch):
            sel = order[start:start + batch]
            loss, gw, gb = mlp_loss_and_grad(model, Xtr[sel], ytr[sel], opts.l2)
            if not np.isfinite(loss):
                raise NumericError(f"non-finite training loss at epoch {epoch}")
            step += 1
            g = np.concatenate([a.ravel() for a in gw + gb])
            lr = opts.learning_rate * np.sqrt(1 - beta2 ** step) / (1 - beta1 ** step)
            m1 *= beta1
            m1 += (1 - beta1) * g
            m2 *= beta2
            m2 += (1 - beta2) * g * g
            flat -= lr * m1 / (np.sqrt(m2) + eps)
        if n_val:
            val = _cross_entropy(model, Xval, yval)
            if not np.isfinite(val):
                raise NumericError(f"non-finite validation loss at epoch {epoch}")
            if val < best_val - 1e-10:
                best_val, best_epoch, wait = val, epoch, 0
                best = flat.copy()
            else:
                wait += 1
                if wait >= opts.patience:
                    break
    if best is not None:
        flat[:] = best
    model.weights = [w.copy() for w in model.weights]
    model.biases = [b.copy() for b in model.biases]
    model.metadata = {
        "epochs": epoch,
        "best_epoch": best_epoch if n_val else epoch,
        "best_val_loss": float(best_val) if n_val else None,
        "train_loss": _cross_entropy(model, X, y),
        "n_train": n,
        "l2": opts.l2,
        "learning_rate": opts.learning_rate,
    }
    return model


def mlp_predict(model, features):
    """Softmax PMF(s) over the 84 categories (max-subtracted, overflow-safe)."""
    x = np.asarray(features, dtype=float)
    single = x.ndim == 1
    probs = softmax(mlp_logits(model, x), axis=1)
    return probs[0] if single else probs


# --------------------------------------------------------------------------
# references and adjustments
# --------------------------------------------------------------------------

def climatology_pmf(observations):
    """Relative frequencies of observed category indices."""
    obs = np.asarray(observations, dtype=np.int64).ravel()
    if obs.size == 0:
        raise InvalidInputError("climatology window contains no observations")
    if np.any(obs < 0) or np.any(obs >= N_CATEGORIES):
        raise InvalidInputError("observations must be category indices 0..83")
    return np.bincount(obs, minlength=N_CATEGORIES) / obs.size


def ensemble_pmf(member_indices):
    """Empirical PMF of discretized ensemble members, shape ``(..., 84)``."""
    idx = np.asarray(member_indices, dtype=np.int64)
    flat = idx.reshape(-1, idx.shape[-1])
    out = np.zeros((flat.shape[0], N_CATEGORIES))
    rows = np.repeat(np.arange(flat.shape[0]), flat.shape[1])
    np.add.at(out, (rows, flat.ravel()), 1.0)
    out /= flat.shape[1]
    return out.reshape(idx.shape[:-1] + (N_CATEGORIES,))


def pmf_floor(pmf, p_min=P_MIN):
    """Raise entries below ``p_min`` to ``p_min`` and renormalise."""
    if not 0 < p_min < 1.0 / N_CATEGORIES:
        raise InvalidInputError("p_min must lie in (0, 1/84)")
    p = np.maximum(np.asarray(pmf, dtype=float), p_min)
    return p / p.sum(axis=-1, keepdims=True)


# --------------------------------------------------------------------------
# serialization
# --------------------------------------------------------------------------

def model_to_json(model):
    """Self-describing JSON text for a fitted model; identical input gives identical bytes."""
    if isinstance(model, PolrModel):
        doc = {
            "type": "polr",
            "category_map": model.category_map.tolist(),
            "cutpoints": model.cutpoints.tolist(),
            "coefficients": model.coefficients.tolist(),
            "constraint_mask": model.constraint_mask.tolist(),
            "training": {"converged": model.converged, "message": model.message,
                         "n_iter": model.n_iter, "loglik": model.loglik, "n_train": model.n_train},
        }
    elif isinstance(model, MlpModel):
        doc = {
            "type": "mlp",
            "category_map": list(range(N_CATEGORIES)),
            "layer_sizes": list(model.layer_sizes),
            "activation": model.activation,
            "weights": [w.tolist() for w in model.weights],
            "biases": [b.tolist() for b in model.biases],
            "x_mean": model.x_mean.tolist(),
            "x_scale": model.x_scale.tolist(),
            "seed": model.seed,
            "training": model.metadata,
        }
    else:
        raise InvalidInputError(f"cannot serialise {type(model).__name__}")
    return json.dumps(doc, sort_keys=True, indent=1)


def model_from_json(text):
    doc = json.loads(text)
    kind = doc.get("type")
    if kind == "polr":
        t = doc["training"]
        return PolrModel(doc["cutpoints"], doc["coefficients"], doc["constraint_mask"],
                         doc["category_map"], converged=t["converged"], message=t["message"],
                         n_iter=t["n_iter"], loglik=t["loglik"], n_train=t["n_train"])
    if kind == "mlp":
        return MlpModel(doc["layer_sizes"], doc["weights"], doc["biases"], doc["x_mean"],
                        doc["x_scale"], activation=doc["activation"], seed=doc["seed"],
                        metadata=doc["training"])
    raise InvalidInputError(f"unknown model type {kind!r}")


def predict(model, features):
    """Dispatch to :func:`polr_predict` or :func:`mlp_predict`."""
    if isinstance(model, PolrModel):
        return polr_predict(model, features)
    return mlp_predict(model, features)
