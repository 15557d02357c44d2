"""
Gaussian process regression with a zero prior mean.

Three covariance functions are supported, all with automatic relevance
determination (one scale per input dimension):

``se``
    squared exponential, ``s2 * exp(-r / 2)`` with
    ``r = sum_d (x_d - x'_d)**2 / l_d**2``.
``matern52``
    Matern with roughness 5/2 in closed form,
    ``s2 * (1 + sqrt(5 r) + 5 r / 3) * exp(-sqrt(5 r))``.
``mlp``
    the arcsine ("neural network") kernel on the augmented input
    ``[1, x]``; ``length_scales`` then holds the diagonal of the weight
    covariance, one entry longer than the input.

The posterior is computed from a Cholesky factor of ``K + noise**2 I``.
Hyperparameters are fitted by maximising the log marginal likelihood
in log space with L-BFGS-B and analytic gradients.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import linalg as sla
from scipy import optimize

from .errors import ConditioningError

KERNEL_KINDS = ("se", "matern52", "mlp")

VARIANCE_BOUNDS = (1e-3, 1e3)
SCALE_BOUNDS = (1e-3, 1e3)
NOISE_BOUNDS = (1e-4, 1.0)

_JITTER_START = 1e-10
_JITTER_MAX = 1e-4
_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class KernelSpec:
    """Covariance function and its hyperparameters.

    For ``se`` and ``matern52`` the ``length_scales`` are ordinary
    length-scales, one per input dimension. For ``mlp`` they are the
    diagonal of the weight covariance over ``[1, x]`` (bias first).
    """

    kind: str
    variance: float
    length_scales: tuple[float, ...]

    def __post_init__(self):
        if self.kind not in KERNEL_KINDS:
            raise ValueError(f"unknown kernel kind {self.kind!r}")
        scales = tuple(float(s) for s in np.atleast_1d(self.length_scales))
        object.__setattr__(self, "length_scales", scales)
        object.__setattr__(self, "variance", float(self.variance))
        if not self.variance > 0:
            raise ValueError("kernel variance must be positive")
        if not scales or not all(s > 0 for s in scales):
            raise ValueError("length scales must be positive")

    @property
    def input_dim(self) -> int:
        n = len(self.length_scales)
        return n - 1 if self.kind == "mlp" else n

    @property
    def scales(self) -> np.ndarray:
        return np.asarray(self.length_scales, dtype=float)

    @classmethod
    def default(cls, kind: str, dim: int, variance: float = 1.0, scale: float = 0.5):
        n = dim + 1 if kind == "mlp" else dim
        return cls(kind, variance, (scale,) * n)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "variance": self.variance,
                "length_scales": list(self.length_scales)}

    @classmethod
    def from_dict(cls, d: dict) -> "KernelSpec":
        return cls(d["kind"], d["variance"], tuple(d["length_scales"]))


@dataclass
class Dataset:
    """Observations ``(x_t, y_t)`` with Gaussian noise of std ``noise_std``."""

    points: np.ndarray
    values: np.ndarray
    noise_std: float = 0.0

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts.reshape(-1, 1) if pts.size else pts.reshape(0, 0)
        vals = np.asarray(self.values, dtype=float).reshape(-1)
        if pts.ndim != 2:
            raise ValueError("points must be a 2-D array")
        if pts.shape[0] != vals.shape[0]:
            raise ValueError(f"{pts.shape[0]} points but {vals.shape[0]} values")
        if self.noise_std < 0:
            raise ValueError("noise_std must be >= 0")
        if not (np.all(np.isfinite(pts)) and np.all(np.isfinite(vals))):
            raise ValueError("dataset contains non-finite entries")
        self.points = pts
        self.values = vals
        self.noise_std = float(self.noise_std)

    @classmethod
    def empty(cls, dim: int, noise_std: float = 0.0) -> "Dataset":
        return cls(np.zeros((0, dim)), np.zeros(0), noise_std)

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def append(self, x, y) -> "Dataset":
        """Return a new dataset with one more observation."""
        x = np.asarray(x, dtype=float).reshape(1, -1)
        return Dataset(np.vstack([self.points, x]), np.append(self.values, float(y)),
                       self.noise_std)

    def with_noise(self, noise_std: float) -> "Dataset":
        return replace(self, noise_std=float(noise_std))


# ---------------------------------------------------------------------------
# kernels
# ---------------------------------------------------------------------------


def _check_inputs(spec: KernelSpec, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(1, -1)
    if X.shape[1] != spec.input_dim:
        raise ValueError(f"input has dimension {X.shape[1]}, kernel expects {spec.input_dim}")
    if not np.all(np.isfinite(X)):
        raise ValueError("non-finite kernel input")
    return X


def _scaled_sqdist(X1, X2, scales):
    A = X1 / scales
    B = X2 / scales
    d = (A * A).sum(1)[:, None] + (B * B).sum(1)[None, :] - 2.0 * A @ B.T
    return np.maximum(d, 0.0)


def _augment(X):
    return np.hstack([np.ones((X.shape[0], 1)), X])


def _mlp_parts(X1, X2, sigma2):
    A = _augment(X1)
    B = _augment(X2)
    cross = (A * sigma2) @ B.T
    na = 1.0 + (A * A) @ sigma2
    nb = 1.0 + (B * B) @ sigma2
    return A, B, cross, na, nb


def kernel_matrix(spec: KernelSpec, X1, X2=None) -> np.ndarray:
    """Covariance matrix between the rows of ``X1`` and ``X2``."""
    X1 = _check_inputs(spec, X1)
    X2 = X1 if X2 is None else _check_inputs(spec, X2)
    s = spec.scales
    if spec.kind == "se":
        return spec.variance * np.exp(-0.5 * _scaled_sqdist(X1, X2, s))
    if spec.kind == "matern52":
        r = np.sqrt(5.0 * _scaled_sqdist(X1, X2, s))
        return spec.variance * (1.0 + r + r * r / 3.0) * np.exp(-r)
    _, _, cross, na, nb = _mlp_parts(X1, X2, s)
    u = np.clip(cross / np.sqrt(np.outer(na, nb)), -1.0, 1.0)
    return (2.0 * spec.variance / math.pi) * np.arcsin(u)


def kernel_diag(spec: KernelSpec, X) -> np.ndarray:
    """``k(x, x)`` for every row of ``X``."""
    X = _check_inputs(spec, X)
    if spec.kind in ("se", "matern52"):
        return np.full(X.shape[0], spec.variance)
    A = _augment(X)
    q = (A * A) @ spec.scales
    return (2.0 * spec.variance / math.pi) * np.arcsin(q / (1.0 + q))


def kernel_eval(spec: KernelSpec, x, x2) -> float:
    x = np.asarray(x, dtype=float).reshape(-1)
    x2 = np.asarray(x2, dtype=float).reshape(-1)
    if x.shape != x2.shape:
        raise ValueError(f"dimension mismatch: {x.shape[0]} vs {x2.shape[0]}")
    return float(kernel_matrix(spec, x[None, :], x2[None, :])[0, 0])


def _kernel_grads(spec: KernelSpec, X) -> tuple[np.ndarray, list[np.ndarray]]:
    """Gram matrix and its derivatives w.r.t. log variance and log scales."""
    s = spec.scales
    if spec.kind in ("se", "matern52"):
        diffs = [(X[:, d, None] - X[None, :, d]) ** 2 / s[d] ** 2 for d in range(X.shape[1])]
        r2 = np.sum(diffs, axis=0) if diffs else np.zeros((X.shape[0],) * 2)
        if spec.kind == "se":
            K = spec.variance * np.exp(-0.5 * r2)
            return K, [K] + [K * D for D in diffs]
        r = np.sqrt(5.0 * r2)
        e = np.exp(-r)
        K = spec.variance * (1.0 + r + r * r / 3.0) * e
        common = spec.variance * (5.0 / 3.0) * (1.0 + r) * e
        return K, [K] + [common * D for D in diffs]
    A, _, cross, na, _ = _mlp_parts(X, X, s)
    denom = np.sqrt(np.outer(na, na))
    u = np.clip(cross / denom, -1.0, 1.0)
    pref = 2.0 * spec.variance / math.pi
    K = pref * np.arcsin(u)
    dk_du = pref / np.sqrt(np.maximum(1.0 - u * u, 1e-300))
    grads = [K]
    for j in range(A.shape[1]):
        a = A[:, j]
        du = np.outer(a, a) / denom - 0.5 * u * ((a * a / na)[:, None] + (a * a / na)[None, :])
        grads.append(dk_du * du * s[j])
    return K, grads


# ---------------------------------------------------------------------------
# posterior
# ---------------------------------------------------------------------------


def stable_cholesky(A: np.ndarray) -> tuple[np.ndarray, float]:
    """Lower Cholesky factor of ``A``, adding escalating diagonal jitter.

    Returns the factor and the absolute jitter that was added (0 when the
    plain factorisation succeeded).
    """
    n = A.shape[0]
    if n == 0:
        return np.zeros((0, 0)), 0.0
    try:
        return np.linalg.cholesky(A), 0.0
    except np.linalg.LinAlgError:
        pass
    scale = max(float(np.trace(A)) / n, 1e-300)
    rel = _JITTER_START
    while rel <= _JITTER_MAX * (1 + 1e-9):
        jitter = rel * scale
        try:
            return np.linalg.cholesky(A + jitter * np.eye(n)), jitter
        except np.linalg.LinAlgError:
            rel *= 10.0
    raise ConditioningError(
        f"matrix of size {n} is not positive definite even with jitter {_JITTER_MAX:g} x mean diagonal"
    )


@dataclass(frozen=True, eq=False)
class GpModel:
    """Posterior GP. Immutable; build it with :func:`posterior`."""

    kernel: KernelSpec
    data: Dataset
    factor: np.ndarray
    alpha_vec: np.ndarray
    jitter: float = 0.0
    mean: float = 0.0  # constant prior mean
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def dim(self) -> int:
        return self.kernel.input_dim

    def predict(self, X):
        return predict(self, X)


def posterior(data: Dataset, spec: KernelSpec, mean: float = 0.0) -> GpModel:
    if len(data) and data.dim != spec.input_dim:
        raise ValueError(f"data dimension {data.dim} does not match kernel ({spec.input_dim})")
    n = len(data)
    if n == 0:
        return GpModel(spec, data, np.zeros((0, 0)), np.zeros(0), mean=float(mean))
    K = kernel_matrix(spec, data.points)
    K[np.diag_indices(n)] += data.noise_std ** 2
    L, jitter = stable_cholesky(K)
    alpha = sla.cho_solve((L, True), data.values - mean)
    return GpModel(spec, data, L, alpha, jitter, float(mean))


def predict(model: GpModel, X):
    """Posterior mean and variance.

    A single 1-D input returns two floats; a 2-D array of queries returns two
    arrays. Variances are clamped at zero.
    """
    X = np.asarray(X, dtype=float)
    single = X.ndim == 1
    Xq = _check_inputs(model.kernel, X)
    prior = kernel_diag(model.kernel, Xq)
    if len(model.data) == 0:
        mean, var = np.full(Xq.shape[0], model.mean), prior
    else:
        Ks = kernel_matrix(model.kernel, model.data.points, Xq)
        mean = model.mean + Ks.T @ model.alpha_vec
        v = sla.solve_triangular(model.factor, Ks, lower=True)
        var = np.maximum(prior - (v * v).sum(0), 0.0)
    if single:
        return float(mean[0]), float(var[0])
    return mean, var


def log_marginal_likelihood(data: Dataset, spec: KernelSpec, mean: float = 0.0) -> float:
    """Gaussian evidence ``log p(y | X, spec, noise)`` under a constant prior mean."""
    if len(data) == 0:
        raise ValueError("log marginal likelihood needs at least one observation")
    return _lml_and_grad(data, spec, data.noise_std, want_grad=False, mean=mean)[0]


def _lml_and_grad(data: Dataset, spec: KernelSpec, noise: float, want_grad: bool = True,
                  mean: float | None = 0.0):
    """Evidence and its gradient in log hyperparameters.

    With ``mean=None`` the constant mean is profiled out at its maximiser
    ``1'K^-1 y / 1'K^-1 1``; the gradient is unchanged by the profiling
    because the mean is stationary there. The returned tuple then carries
    the mean as a third element.
    """
    X, y = data.points, data.values
    n = len(y)
    if want_grad:
        K, dKs = _kernel_grads(spec, X)
    else:
        K, dKs = kernel_matrix(spec, X), []
    K = K.copy()
    K[np.diag_indices(n)] += noise ** 2
    L, _ = stable_cholesky(K)
    profiled = mean is None
    if profiled:
        k1 = sla.cho_solve((L, True), np.ones(n))
        mean = float(k1 @ y / k1.sum())
    r = y - mean
    alpha = sla.cho_solve((L, True), r)
    lml = -0.5 * r @ alpha - np.log(np.diag(L)).sum() - 0.5 * n * _LOG_2PI
    if not want_grad:
        return (float(lml), None, mean) if profiled else (float(lml), None)
    Kinv = sla.cho_solve((L, True), np.eye(n))
    W = np.outer(alpha, alpha) - Kinv
    grads = [0.5 * np.sum(W * dK) for dK in dKs]
    grads.append(0.5 * np.trace(W) * 2.0 * noise ** 2)  # d/dlog(noise)
    if profiled:
        return float(lml), np.asarray(grads), mean
    return float(lml), np.asarray(grads)


# ---------------------------------------------------------------------------
# hyperparameter fitting
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class HyperFit:
    spec: KernelSpec
    noise_std: float
    lml: float
    mean: float = 0.0

    def model(self, data: Dataset) -> GpModel:
        return posterior(data.with_noise(self.noise_std), self.spec, self.mean)


def _pack(spec: KernelSpec, noise: float) -> np.ndarray:
    return np.log(np.concatenate([[spec.variance], spec.scales, [noise]]))


def _unpack(kind: str, z: np.ndarray) -> tuple[KernelSpec, float]:
    v = np.exp(z)
    return KernelSpec(kind, v[0], tuple(v[1:-1])), float(v[-1])


def fit_hyperparameters(
    data: Dataset,
    kind: str,
    restarts: int = 3,
    rng: np.random.Generator | int | None = None,
    fit_noise: bool = True,
    init: HyperFit | None = None,
    maxiter: int = 200,
    mean: float | str = 0.0,
) -> HyperFit:
    """Maximise the evidence over variance, scales and (optionally) noise.

    ``mean`` is the constant prior mean; ``"fit"`` profiles it out of the
    evidence so it is chosen jointly with the other hyperparameters.

    ``restarts`` counts the fixed default start (variance scaled to the
    data, scales 0.5, noise 0.1) plus ``restarts - 1`` starts drawn
    log-uniformly within the bounds. A previous fit passed as ``init`` is
    tried as one extra start. The result is never worse than any start.
    """
    if len(data) < 2:
        raise ValueError("need at least two observations to fit hyperparameters")
    if kind not in KERNEL_KINDS:
        raise ValueError(f"unknown kernel kind {kind!r}")
    if isinstance(mean, str) and mean != "fit":
        raise ValueError(f"mean must be a number or 'fit', got {mean!r}")
    fixed_mean = None if mean == "fit" else float(mean)
    restarts = max(int(restarts), 1)
    rng = np.random.default_rng(rng)
    nscale = data.dim + 1 if kind == "mlp" else data.dim

    lo = [math.log(VARIANCE_BOUNDS[0])] + [math.log(SCALE_BOUNDS[0])] * nscale
    hi = [math.log(VARIANCE_BOUNDS[1])] + [math.log(SCALE_BOUNDS[1])] * nscale
    if fit_noise:
        lo.append(math.log(NOISE_BOUNDS[0]))
        hi.append(math.log(NOISE_BOUNDS[1]))
    else:
        fixed = max(data.noise_std, 1e-300)
        lo.append(math.log(fixed))
        hi.append(math.log(fixed))
    lo, hi = np.array(lo), np.array(hi)

    var0 = float(np.clip(np.var(data.values), *VARIANCE_BOUNDS))
    first = _pack(KernelSpec.default(kind, data.dim, max(var0, 0.1)),
                  0.1 if fit_noise else data.noise_std)
    starts = [np.clip(first, lo, hi)]
    if init is not None and init.spec.kind == kind:
        warm = _pack(init.spec, init.noise_std if fit_noise else data.noise_std)
        starts.append(np.clip(warm, lo, hi))
    for _ in range(restarts - 1):
        starts.append(rng.uniform(lo, hi))

    def objective(z):
        spec, noise = _unpack(kind, z)
        try:
            lml, g = _lml_and_grad(data, spec, noise, mean=fixed_mean)[:2]
        except ConditioningError:
            return 1e25, np.zeros_like(z)
        if not fit_noise:
            g[-1] = 0.0
        return -lml, -g

    best_z, best_val = None, math.inf
    for z0 in starts:
        f0, _ = objective(z0)
        if f0 < best_val:
            best_z, best_val = z0, f0
        res = optimize.minimize(objective, z0, jac=True, method="L-BFGS-B",
                                bounds=list(zip(lo, hi)), options={"maxiter": maxiter})
        if np.all(np.isfinite(res.x)) and res.fun < best_val:
            best_z, best_val = res.x, float(res.fun)
    if best_val >= 1e25:
        raise ConditioningError("every restart failed to factorise the Gram matrix")
    spec, noise = _unpack(kind, best_z)
    m = fixed_mean
    if m is None:
        m = _lml_and_grad(data, spec, noise, want_grad=False, mean=None)[2]
    return HyperFit(spec, noise, -best_val, m)
