"""Gaussian randomization of the score variable.

Two equivalent ways of injecting noise are supported:

* outcome noise: draw scalar ``w_i ~ N(0, v_i)`` with ``v_i`` the working
  variance of ``y_i`` and form ``y + gamma * w`` (selection copy) and
  ``y - w / gamma`` (inference copy);
* gradient noise: draw ``W ~ N(0, Sigma)`` with ``Sigma`` the plug-in score
  covariance and add ``gamma * n^{-1/2} * W @ theta`` to the objective.

For a canonical-link GLM the loss is affine in ``y`` with slope ``-x_i``, so
the outcome noise ``w`` corresponds to gradient noise
``W = -n^{-1/2} X^T w``; :func:`gradient_noise_from_outcome_noise` maps one
to the other exactly.

The noise scale is ``alpha_hat * bddot(x_i @ theta_pilot)``, the working-model
variance of ``y_i``.  (Printed forms of this recipe divide by the
overdispersion and use an outer product ``x_i x_i^T`` for scalar noise; we
follow the working-model variance instead so the two constructions agree.)
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ConditioningError, DegenerateError, PreconditionError
from .glm import Dataset, get_family, overdispersion, score_variance, working_variance
from .solver import DEFAULT_TOL, PenalizedProblem, solve_submodel


def make_rng(seed) -> np.random.Generator:
    """Counter-based (Philox) generator; ``Generator`` instances pass through."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))


def derive_seed(master_seed: int, index: int) -> int:
    """Deterministic per-task seed from a master seed and a task index."""
    ss = np.random.SeedSequence([int(master_seed), int(index)])
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


@dataclass(frozen=True)
class ThinnedPair:
    y_select: np.ndarray
    y_infer: np.ndarray
    noise: np.ndarray
    gamma: float
    noise_variances: np.ndarray

    def recombine(self) -> np.ndarray:
        g2 = self.gamma**2
        return (self.y_select + g2 * self.y_infer) / (1.0 + g2)


@dataclass(frozen=True)
class GradientNoise:
    w_hat: np.ndarray
    covariance: np.ndarray
    gamma: float


def pilot_fit(family, data: Dataset, tol: float = DEFAULT_TOL) -> np.ndarray:
    """Unpenalized, unrandomized full-model fit."""
    if data.n <= data.p:
        raise PreconditionError(f"pilot fit needs n > p, got n={data.n}, p={data.p}")
    res = solve_submodel(PenalizedProblem(family, data, support=np.arange(data.p)), tol=tol)
    return res.theta


def plugin_variances(
    family, data: Dataset, theta_pilot, alpha_hat: Optional[float] = None,
    denominator: str = "bdot",
) -> np.ndarray:
    """Per-row ``alpha_hat * bddot(x_i @ theta_pilot)``; ``alpha_hat`` estimated if None."""
    if alpha_hat is None:
        alpha_hat = overdispersion(family, data, theta_pilot, denominator=denominator)
    return working_variance(family, data, theta_pilot, alpha_hat)


def _check_gamma(gamma):
    if not gamma > 0:
        raise PreconditionError(f"gamma must be positive, got {gamma}")


def _pair_from_noise(y, noise, gamma, variances):
    return ThinnedPair(
        y_select=y + gamma * noise,
        y_infer=y - noise / gamma,
        noise=noise,
        gamma=float(gamma),
        noise_variances=variances,
    )


def thin_outcomes(
    data: Dataset,
    family,
    theta_pilot,
    gamma: float = 1.0,
    rng=None,
    *,
    variances=None,
    alpha_hat: Optional[float] = None,
    denominator: str = "bdot",
) -> ThinnedPair:
    """Split ``y`` into selection and inference copies with independent row noise.

    ``variances`` overrides the plug-in per-row noise variances (zeros allowed,
    which switches the noise off); ``alpha_hat`` overrides only the
    overdispersion.
    """
    _check_gamma(gamma)
    rng = make_rng(rng)
    if variances is None:
        v = plugin_variances(family, data, theta_pilot, alpha_hat, denominator)
        bad = ~(v > 0)
        if bad.any():
            row = int(np.flatnonzero(bad)[0])
            raise DegenerateError(f"noise variance estimate is nonpositive at row {row}", row=row)
    else:
        v = np.broadcast_to(np.asarray(variances, float), (data.n,)).copy()
        if (v < 0).any():
            raise PreconditionError("variance override must be nonnegative")
    noise = rng.standard_normal(data.n) * np.sqrt(v)
    return _pair_from_noise(data.y, noise, gamma, v)


def thin_outcomes_clustered(
    data: Dataset,
    theta_pilot,
    gamma: float = 1.0,
    rng=None,
) -> tuple[ThinnedPair, float, float]:
    """Outcome thinning with equicorrelated within-cluster noise (gaussian working model).

    The marginal variance is the pooled pilot residual variance and the
    equicorrelation is the mean within-cluster residual cross-product over
    that variance, clipped to [0, 0.99].  Noise for each cluster is drawn
    from ``N(0, s2 * ((1 - rho) I + rho 11^T))``.  Returns the pair together
    with ``(s2, rho)``.
    """
    _check_gamma(gamma)
    if data.cluster_ids is None:
        raise PreconditionError("clustered thinning needs cluster_ids")
    rng = make_rng(rng)
    s2, rho = equicorrelation_moments(data, theta_pilot)
    labels, inv = np.unique(data.cluster_ids, return_inverse=True)
    shared = rng.standard_normal(labels.size)[inv]
    own = rng.standard_normal(data.n)
    noise = np.sqrt(s2) * (np.sqrt(rho) * shared + np.sqrt(1.0 - rho) * own)
    return _pair_from_noise(data.y, noise, gamma, np.full(data.n, s2)), s2, rho


def equicorrelation_moments(data: Dataset, theta_pilot) -> tuple[float, float]:
    """Method-of-moments marginal variance and equicorrelation of pilot residuals."""
    n, p = data.n, data.p
    if n <= p:
        raise PreconditionError("need n > p")
    r = data.y - data.X @ np.asarray(theta_pilot, float)
    s2 = float(r @ r / (n - p))
    if not s2 > 0:
        raise DegenerateError("pilot residual variance is zero")
    _, inv = np.unique(data.cluster_ids, return_inverse=True)
    sums = np.bincount(inv, weights=r)
    sq = np.bincount(inv, weights=r * r)
    sizes = np.bincount(inv)
    pairs = float(np.sum(sizes * (sizes - 1)))
    if pairs == 0:
        return s2, 0.0
    cross = float(np.sum(sums**2 - sq))  # sum over ordered pairs i != j
    rho = cross / pairs / s2
    return s2, float(np.clip(rho, 0.0, 0.99))


def _sym_sqrt(C):
    vals, vecs = np.linalg.eigh(0.5 * (C + C.T))
    top = max(vals.max(initial=0.0), 0.0)
    if vals.min(initial=0.0) < -1e-10 * max(top, 1e-300) and vals.min() < -1e-300:
        raise ConditioningError("noise covariance is materially indefinite")
    return (vecs * np.sqrt(np.clip(vals, 0.0, None))) @ vecs.T


def gradient_covariance(
    family, data: Dataset, theta_pilot, alpha_hat: Optional[float] = None,
    denominator: str = "bdot",
) -> np.ndarray:
    """Plug-in score covariance at the pilot fit."""
    if alpha_hat is None:
        alpha_hat = overdispersion(family, data, theta_pilot, denominator=denominator)
    return score_variance(family, data, theta_pilot, alpha_hat).sigma


def thin_gradient(
    data: Dataset,
    family,
    theta_pilot,
    gamma: float = 1.0,
    rng=None,
    *,
    alpha_hat: Optional[float] = None,
    denominator: str = "bdot",
) -> GradientNoise:
    """Draw aggregate gradient noise ``W ~ N(0, Sigma_hat)`` via a symmetric square root."""
    _check_gamma(gamma)
    rng = make_rng(rng)
    cov = gradient_covariance(family, data, theta_pilot, alpha_hat, denominator)
    try:
        root = _sym_sqrt(cov)
    except np.linalg.LinAlgError as exc:
        raise ConditioningError(f"cannot factor noise covariance: {exc}") from exc
    w = root @ rng.standard_normal(data.p)
    return GradientNoise(w_hat=w, covariance=cov, gamma=float(gamma))


def gradient_noise_from_outcome_noise(data: Dataset, pair: ThinnedPair) -> np.ndarray:
    """Gradient noise ``-n^{-1/2} X^T w`` equivalent to the outcome noise ``w``."""
    noise = np.asarray(pair.noise, float)
    if noise.shape != (data.n,):
        raise PreconditionError("noise length must equal n")
    return -(data.X.T @ noise) / np.sqrt(data.n)


def matched_gradient_noise(data: Dataset, pair: ThinnedPair) -> GradientNoise:
    """Gradient noise built from outcome noise, with its exact covariance.

    The covariance is ``(1/n) sum v_i x_i x_i^T`` with ``v_i`` the row noise
    variances, i.e. the distribution ``W`` actually has.
    """
    v = np.asarray(pair.noise_variances, float)
    cov = (data.X * v[:, None]).T @ data.X / data.n
    return GradientNoise(
        w_hat=gradient_noise_from_outcome_noise(data, pair),
        covariance=0.5 * (cov + cov.T),
        gamma=pair.gamma,
    )
