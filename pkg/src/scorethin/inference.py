"""Sandwich variances, Wald intervals and the select-then-infer pipeline.

Inference after thinning is ordinary fixed-model inference: fit the selected
sub-model on the inference copy of the data, form a model-robust sandwich
``H^{-1} M H^{-1}``, and report ``xi @ theta +/- n^{-1/2} z * sqrt(xi' S xi)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import linalg
from scipy.stats import norm

from .errors import ConditioningError, MatrixValidityError, PreconditionError
from .glm import Dataset, get_family
from .solver import (
    DEFAULT_TOL,
    ZERO_TOL,
    PenalizedProblem,
    SolverResult,
    default_lambda,
    solve_penalized,
    solve_submodel,
    support_of,
)
from .thinning import (
    GradientNoise,
    ThinnedPair,
    make_rng,
    matched_gradient_noise,
    pilot_fit,
    plugin_variances,
    thin_gradient,
    thin_outcomes,
    thin_outcomes_clustered,
)


@dataclass(frozen=True)
class SandwichEstimate:
    S: np.ndarray
    E: np.ndarray
    kind: str
    degenerate: bool = False


@dataclass(frozen=True)
class Interval:
    contrast: np.ndarray
    alpha: float
    lower: float
    upper: float

    @property
    def estimate(self) -> float:
        return 0.5 * (self.lower + self.upper)

    @property
    def width(self) -> float:
        return self.upper - self.lower


@dataclass(frozen=True)
class SelectiveFit:
    """Result of :func:`select_and_infer`.

    ``E`` holds 0-based column indices; ``theta_E`` is aligned with ``E``.
    """

    E: np.ndarray
    theta_E: np.ndarray
    sandwich: Optional[SandwichEstimate]
    intervals: list
    gamma: float
    lam: float
    seed: object
    mode: str
    no_selection: bool
    selection: Optional[SolverResult] = field(default=None, repr=False)
    refit: Optional[SolverResult] = field(default=None, repr=False)
    thinned: Optional[ThinnedPair] = field(default=None, repr=False)
    noise: Optional[GradientNoise] = field(default=None, repr=False)


def _restricted_bread(family, X_E, theta_E):
    eta = X_E @ theta_E
    w = family.bddot(eta)
    return (X_E * w[:, None]).T @ X_E / X_E.shape[0], eta


def _sandwich(H, M, E, kind):
    try:
        Hinv = linalg.inv(H, check_finite=True)
    except (linalg.LinAlgError, ValueError):
        raise ConditioningError("sandwich bread (restricted Hessian) is singular") from None
    if not np.isfinite(Hinv).all() or np.linalg.cond(H) > 1e14:
        raise ConditioningError("sandwich bread (restricted Hessian) is singular")
    S = Hinv @ M @ Hinv
    S = 0.5 * (S + S.T)
    if not np.any(S):
        return SandwichEstimate(S, E, kind, degenerate=True)
    trace = float(np.trace(S))
    vals = np.linalg.eigvalsh(S)
    if vals.min() < -1e-10 * abs(trace):
        raise MatrixValidityError(f"sandwich has eigenvalue {vals.min():.3g} < 0")
    return SandwichEstimate(S, E, kind, degenerate=bool(vals.min() <= 1e-14 * trace))


def _as_support(E):
    E = np.asarray(E, dtype=int).ravel()
    if E.size == 0:
        raise PreconditionError("support must be non-empty")
    return E


def sandwich_outcome(family, data: Dataset, y_infer, E, theta_E) -> SandwichEstimate:
    """HC0-type sandwich with residuals taken on the inference outcomes ``y_infer``."""
    family = get_family(family)
    E = _as_support(E)
    X_E = data.X[:, E]
    theta_E = np.asarray(theta_E, float)
    H, eta = _restricted_bread(family, X_E, theta_E)
    r = np.asarray(y_infer, float) - family.bdot(eta)
    M = (X_E * (r * r)[:, None]).T @ X_E / data.n
    return _sandwich(H, M, E, "outcome_noised")


def sandwich_gradient(family, data: Dataset, E, theta_E, noise: GradientNoise) -> SandwichEstimate:
    """Sandwich for gradient-noised fits.

    The meat is ``Cov(W)_EE / gamma^2`` plus the outer product of residuals on
    the ORIGINAL outcomes ``data.y``.
    """
    family = get_family(family)
    E = _as_support(E)
    X_E = data.X[:, E]
    theta_E = np.asarray(theta_E, float)
    H, eta = _restricted_bread(family, X_E, theta_E)
    r = data.y - family.bdot(eta)
    M = np.asarray(noise.covariance)[np.ix_(E, E)] / noise.gamma**2
    M = M + (X_E * (r * r)[:, None]).T @ X_E / data.n
    return _sandwich(H, M, E, "gradient_noised")


def sandwich_cluster(family, data: Dataset, y_infer, E, theta_E) -> SandwichEstimate:
    """Cluster-robust sandwich: the meat sums scores within each cluster first."""
    family = get_family(family)
    if data.cluster_ids is None:
        raise PreconditionError("cluster sandwich needs cluster_ids")
    labels, inv = np.unique(data.cluster_ids, return_inverse=True)
    if labels.size < 2:
        raise PreconditionError("cluster sandwich needs at least 2 clusters")
    E = _as_support(E)
    X_E = data.X[:, E]
    theta_E = np.asarray(theta_E, float)
    H, eta = _restricted_bread(family, X_E, theta_E)
    r = np.asarray(y_infer, float) - family.bdot(eta)
    G = np.zeros((labels.size, E.size))
    np.add.at(G, inv, X_E * r[:, None])
    M = G.T @ G / data.n
    return _sandwich(H, M, E, "cluster_robust")


def confidence_interval(theta_E, S, xi, alpha: float, n: int) -> tuple[float, float]:
    """Wald interval ``xi @ theta +/- n^{-1/2} z_{1-alpha/2} sqrt(xi' S xi)``."""
    if not 0.0 < alpha < 1.0:
        raise PreconditionError(f"alpha must lie in (0, 1), got {alpha}")
    theta_E = np.atleast_1d(np.asarray(theta_E, float))
    xi = np.atleast_1d(np.asarray(xi, float))
    S = np.atleast_2d(np.asarray(S, float))
    if xi.shape != theta_E.shape:
        raise PreconditionError("contrast length must equal |E|")
    q = float(xi @ S @ xi)
    if q < 0:
        if q > -1e-12 * max(float(np.abs(S).max()), 1e-300) * float(xi @ xi):
            q = 0.0
        else:
            raise MatrixValidityError(f"xi' S xi = {q:.3g} is negative")
    center = float(xi @ theta_E)
    half = norm.ppf(1.0 - alpha / 2.0) * np.sqrt(q) / np.sqrt(n)
    return center - half, center + half


def intervals_for(theta_E, S, alpha, n, contrasts=None) -> list:
    """Intervals for each contrast (rows of ``contrasts``; default: basis vectors)."""
    k = len(theta_E)
    C = np.eye(k) if contrasts is None else np.atleast_2d(np.asarray(contrasts, float))
    out = []
    for xi in C:
        lo, hi = confidence_interval(theta_E, S, xi, alpha, n)
        out.append(Interval(contrast=xi.copy(), alpha=alpha, lower=lo, upper=hi))
    return out


def select_and_infer(
    family,
    data: Dataset,
    lam: float,
    gamma: float = 1.0,
    alpha: float = 0.1,
    contrasts=None,
    mode: str = "outcome",
    rng=None,
    *,
    penalty_weights=None,
    clustered: Optional[bool] = None,
    alpha_hat: Optional[float] = None,
    variances=None,
    denominator: str = "bdot",
    noise_source: str = "outcome",
    lambda_scale: float = 1.0,
    tol: float = DEFAULT_TOL,
    zero_tol: float = ZERO_TOL,
) -> SelectiveFit:
    """Thin, select with an L1 fit, refit the selected sub-model, and build intervals.

    ``mode="outcome"`` noises the outcomes; ``mode="gradient"`` adds the
    noise to the objectives instead.  In gradient mode the noise vector is,
    by default, assembled from the same per-row draws outcome mode would use
    (``noise_source="outcome"``), which is an exact ``N(0, Sigma_hat)`` draw
    and makes the two modes agree under the same seed; pass
    ``noise_source="direct"`` to sample it from the covariance instead.

    ``clustered`` (default: whenever ``data.cluster_ids`` is set) switches to
    equicorrelated within-cluster noise and the cluster-robust sandwich;
    it requires the gaussian family and outcome mode.

    ``contrasts`` is an ``(m, |E|)`` array or a callable ``E -> array``; the
    default gives one interval per selected coefficient.

    ``lam="auto"`` applies :func:`default_lambda` (times ``lambda_scale``) to
    the outcomes the selection step sees: the selection copy ``y + gamma * w``.
    With directly sampled gradient noise, where no such copy exists, its
    expected standard deviation is used instead.
    """
    family = get_family(family)
    if mode not in ("outcome", "gradient"):
        raise ValueError(f"mode must be 'outcome' or 'gradient', got {mode!r}")
    if noise_source not in ("outcome", "direct"):
        raise ValueError("noise_source must be 'outcome' or 'direct'")
    if data.n <= data.p:
        raise PreconditionError(f"select_and_infer needs n > p, got n={data.n}, p={data.p}")
    if clustered is None:
        clustered = data.cluster_ids is not None
    if clustered and (family.kind != "gaussian" or mode != "outcome"):
        raise PreconditionError("clustered thinning supports the gaussian family in outcome mode")
    seed = rng
    rng = make_rng(rng)

    theta_pilot = pilot_fit(family, data, tol=tol)
    pair = None
    noise = None
    if clustered:
        pair, _, _ = thin_outcomes_clustered(data, theta_pilot, gamma, rng)
    elif mode == "outcome" or noise_source == "outcome":
        pair = thin_outcomes(
            data, family, theta_pilot, gamma, rng,
            variances=variances, alpha_hat=alpha_hat, denominator=denominator,
        )
        if mode == "gradient":
            noise = matched_gradient_noise(data, pair)
    else:
        noise = thin_gradient(
            data, family, theta_pilot, gamma, rng, alpha_hat=alpha_hat, denominator=denominator
        )

    if isinstance(lam, str):
        if lam != "auto":
            raise ValueError(f"lam must be a number or 'auto', got {lam!r}")
        lam = _auto_lambda(family, data, theta_pilot, gamma, pair, lambda_scale,
                           alpha_hat, denominator)

    if mode == "outcome":
        sel_problem = PenalizedProblem(
            family, data.with_outcome(pair.y_select), lam=lam, gamma=gamma,
            penalty_weights=penalty_weights,
        )
    else:
        sel_problem = PenalizedProblem(
            family, data, lam=lam, gamma=gamma, linear_term=gamma * noise.w_hat,
            penalty_weights=penalty_weights,
        )
    selection = solve_penalized(sel_problem, tol=tol)
    E = support_of(selection.theta, zero_tol)

    common = dict(gamma=float(gamma), lam=float(lam), seed=seed, mode=mode,
                  selection=selection, thinned=pair, noise=noise)
    if E.size == 0:
        return SelectiveFit(E=E, theta_E=np.zeros(0), sandwich=None, intervals=[],
                            no_selection=True, refit=None, **common)

    if mode == "outcome":
        inf_data = data.with_outcome(pair.y_infer)
        refit = solve_submodel(PenalizedProblem(family, inf_data, support=E, gamma=gamma), tol=tol)
        theta_E = refit.theta[E]
        if clustered:
            sw = sandwich_cluster(family, data, pair.y_infer, E, theta_E)
        else:
            sw = sandwich_outcome(family, data, pair.y_infer, E, theta_E)
    else:
        refit = solve_submodel(
            PenalizedProblem(family, data, support=E, gamma=gamma,
                             linear_term=-noise.w_hat / gamma),
            tol=tol,
        )
        theta_E = refit.theta[E]
        sw = sandwich_gradient(family, data, E, theta_E, noise)

    C = contrasts(E) if callable(contrasts) else contrasts
    intervals = intervals_for(theta_E, sw.S, alpha, data.n, C)
    return SelectiveFit(E=E, theta_E=theta_E, sandwich=sw, intervals=intervals,
                        no_selection=False, refit=refit, **common)


def _auto_lambda(family, data, theta_pilot, gamma, pair, scale, alpha_hat, denominator):
    if pair is not None:
        return default_lambda(data.with_outcome(pair.y_select), scale)
    v = plugin_variances(family, data, theta_pilot, alpha_hat, denominator)
    sd = np.sqrt(np.var(data.y, ddof=1) + gamma**2 * np.mean(v))
    return float(scale * np.sqrt(np.log(data.p)) * sd)


def fixed_model_fit(family, data: Dataset, E, alpha: float = 0.1, contrasts=None,
                    cluster_robust: bool = False, tol: float = DEFAULT_TOL):
    """Classical fit-and-interval on a given support with no randomization.

    Returns ``(theta_E, SandwichEstimate, intervals)``.
    """
    family = get_family(family)
    E = _as_support(E)
    refit = solve_submodel(PenalizedProblem(family, data, support=E), tol=tol)
    theta_E = refit.theta[E]
    if cluster_robust:
        sw = sandwich_cluster(family, data, data.y, E, theta_E)
    else:
        sw = sandwich_outcome(family, data, data.y, E, theta_E)
    return theta_E, sw, intervals_for(theta_E, sw.S, alpha, data.n, contrasts)
