"""
High-probability super-level sets of a GP posterior.

For a context ``alpha`` the set is ``{theta : mu / sigma > beta}``. The
threshold is either the union-bound value ``sqrt(2 log(pi_i / (2 delta)))``
or, by default, the relaxed value ``Phi^-1(q * Phi(phi*))`` where ``phi*`` is
the best confidence ratio found in the box, so the set is never empty.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy import special

from .gp import GpModel, predict
from .search import SearchConfig, maximize_on_box

PHI_SENTINEL = 1e12
_SIGMA_FLOOR = 1e-12

PI_SCHEMES = ("single", "uniform", "infinite")


def joint_inputs(thetas, alpha) -> np.ndarray:
    """Stack control rows with a fixed context into GP inputs."""
    thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
    alpha = np.asarray(alpha, dtype=float).reshape(-1)
    if alpha.size == 0:
        return thetas
    return np.hstack([thetas, np.broadcast_to(alpha, (thetas.shape[0], alpha.size))])


def ratio_from_moments(mean, var):
    mean = np.asarray(mean, dtype=float)
    sd = np.sqrt(np.asarray(var, dtype=float))
    degenerate = sd < _SIGMA_FLOOR
    safe = np.where(degenerate, 1.0, sd)
    out = np.where(degenerate, np.sign(mean) * PHI_SENTINEL, mean / safe)
    return out


def confidence_ratios(model: GpModel, thetas, alpha) -> np.ndarray:
    mean, var = predict(model, joint_inputs(thetas, alpha))
    return ratio_from_moments(mean, var)


def confidence_ratio(model: GpModel, theta, alpha) -> float:
    """``mu / sigma`` at ``(theta, alpha)``.

    Where sigma is below 1e-12 this returns ``sign(mu) * 1e12`` instead of
    dividing.
    """
    return float(confidence_ratios(model, np.asarray(theta, dtype=float)[None, :], alpha)[0])


def pi_value(i: int, scheme: str, horizon: int | None = None) -> float:
    if i < 1:
        raise ValueError("sample index starts at 1")
    if scheme == "single":
        if i != 1:
            raise ValueError("the single scheme covers one sample only")
        return 1.0
    if scheme == "uniform":
        if horizon is None or horizon < i:
            raise ValueError("the uniform scheme needs a horizon T >= i")
        return float(horizon)
    if scheme == "infinite":
        return math.pi ** 2 * i * i / 6.0
    raise ValueError(f"unknown pi scheme {scheme!r}")


def beta_union_bound(delta: float, i: int = 1, scheme: str = "infinite",
                     horizon: int | None = None) -> float:
    """Per-sample threshold ``sqrt(2 log(pi_i / (2 delta)))``.

    The weights ``1/pi_i`` of every scheme sum to at most one, so if each of
    the samples clears its threshold, all are feasible with probability at
    least ``1 - delta``.
    """
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    pi_i = pi_value(i, scheme, horizon)
    ratio = pi_i / (2.0 * delta)
    if ratio <= 1.0:
        raise ValueError(f"pi_i = {pi_i:g} <= 2 delta: the bound is vacuous")
    return math.sqrt(2.0 * math.log(ratio))


def relaxed_beta(phi_star: float, quantile: float) -> float:
    """``Phi^-1(quantile * Phi(phi_star))``, evaluated in log space."""
    if not 0 < quantile < 1:
        raise ValueError("quantile must lie in (0, 1)")
    return float(special.ndtri_exp(special.log_ndtr(phi_star) + math.log(quantile)))


@dataclass(frozen=True, eq=False)
class SuperLevelSet:
    model: GpModel
    context: np.ndarray
    beta: float
    theta_star: np.ndarray
    phi_star: float
    confidence_quantile: float = 0.95

    @property
    def d_theta(self) -> int:
        return self.theta_star.shape[0]

    def phi(self, thetas) -> np.ndarray:
        return confidence_ratios(self.model, thetas, self.context)

    def members(self, thetas) -> np.ndarray:
        """Boolean membership for each row of ``thetas``."""
        return self.phi(thetas) > self.beta

    def with_beta(self, beta: float) -> "SuperLevelSet":
        return replace(self, beta=float(beta))


def build(
    model: GpModel,
    alpha,
    d_theta: int,
    quantile: float = 0.95,
    rng: np.random.Generator | int | None = None,
    search: SearchConfig = SearchConfig(refine_top_k=5),
) -> SuperLevelSet:
    """Locate the most confident control and set the relaxed threshold."""
    if not 0 < quantile < 1:
        raise ValueError("quantile must lie in (0, 1)")
    rng = np.random.default_rng(rng)
    alpha = np.asarray(alpha, dtype=float).reshape(-1)
    if d_theta + alpha.size != model.dim:
        raise ValueError(f"d_theta + d_alpha = {d_theta + alpha.size}, model expects {model.dim}")
    extra = None
    if len(model.data):
        extra = model.data.points[:, :d_theta]
    theta_star, phi_star = maximize_on_box(
        lambda X: confidence_ratios(model, X, alpha), d_theta, search, rng, extra=extra)
    beta = relaxed_beta(phi_star, quantile)
    if not beta < phi_star:  # round-off at the sentinel values
        beta = float(np.nextafter(phi_star, -np.inf))
    return SuperLevelSet(model, alpha, beta, theta_star, phi_star, quantile)


def membership(s: SuperLevelSet, theta) -> bool:
    return bool(s.members(np.asarray(theta, dtype=float)[None, :])[0])
