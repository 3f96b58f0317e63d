"""Canonical-link GLM families and the empirical quantities built on them.

Every family is described by its cumulant function ``b`` and the first two
derivatives.  With linear predictor ``eta = X @ theta`` the per-observation
loss is ``-y * eta + b(eta)``; the mean gradient, Hessian, overdispersion and
score variance follow from ``bdot`` and ``bddot``.

Outcomes are accepted as arbitrary reals for every family.  The loss is linear
in ``y``, so convexity in ``theta`` survives when noisy (non-binary, possibly
negative) outcomes are plugged in.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.special import expit

from .errors import DegenerateError, DomainError, PreconditionError

# exp() overflows a double just above 709.
ETA_CLAMP = 700.0


def _softplus(eta):
    return np.logaddexp(0.0, eta)


def _logistic_var(eta):
    p = expit(eta)
    return p * (1.0 - p)


def _clamped_exp(eta):
    return np.exp(np.clip(eta, -ETA_CLAMP, ETA_CLAMP))


@dataclass(frozen=True)
class GlmFamily:
    """A canonical-link exponential family working model."""

    kind: str
    b: Callable[[np.ndarray], np.ndarray]
    bdot: Callable[[np.ndarray], np.ndarray]
    bddot: Callable[[np.ndarray], np.ndarray]

    def __repr__(self):
        return f"GlmFamily({self.kind!r})"


GAUSSIAN = GlmFamily(
    "gaussian",
    b=lambda eta: 0.5 * np.square(eta),
    bdot=lambda eta: np.asarray(eta, dtype=float) * 1.0,
    bddot=lambda eta: np.ones_like(np.asarray(eta, dtype=float)),
)
BERNOULLI = GlmFamily("bernoulli", b=_softplus, bdot=expit, bddot=_logistic_var)
POISSON = GlmFamily("poisson", b=_clamped_exp, bdot=_clamped_exp, bddot=_clamped_exp)

FAMILIES = {f.kind: f for f in (GAUSSIAN, BERNOULLI, POISSON)}
FAMILIES["logistic"] = BERNOULLI
FAMILIES["binomial"] = BERNOULLI


def get_family(family) -> GlmFamily:
    """Look up a family by name; ``GlmFamily`` instances pass through."""
    if isinstance(family, GlmFamily):
        return family
    try:
        return FAMILIES[str(family).lower()]
    except KeyError:
        raise ValueError(
            f"unknown family {family!r}; expected one of gaussian, bernoulli, poisson"
        ) from None


@dataclass(frozen=True)
class Dataset:
    """Fixed design ``X`` (n x p), real outcome ``y`` and optional cluster labels."""

    X: np.ndarray
    y: np.ndarray
    cluster_ids: Optional[np.ndarray] = None

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        y = np.asarray(self.y, dtype=float).ravel()
        if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] < 1:
            raise PreconditionError(f"X must be a non-empty matrix, got shape {X.shape}")
        if y.shape[0] != X.shape[0]:
            raise PreconditionError(f"y has length {y.shape[0]}, X has {X.shape[0]} rows")
        bad = ~np.isfinite(X).all(axis=1)
        if bad.any():
            row = int(np.flatnonzero(bad)[0])
            raise DomainError(f"X has a non-finite entry in row {row}", row=row)
        bad = ~np.isfinite(y)
        if bad.any():
            row = int(np.flatnonzero(bad)[0])
            raise DomainError(f"y is non-finite at row {row}", row=row)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        if self.cluster_ids is not None:
            c = np.asarray(self.cluster_ids).ravel()
            if c.shape[0] != X.shape[0]:
                raise PreconditionError(
                    f"cluster_ids has length {c.shape[0]}, expected {X.shape[0]}"
                )
            object.__setattr__(self, "cluster_ids", c.astype(np.int64))

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    def with_outcome(self, y) -> "Dataset":
        return Dataset(self.X, y, self.cluster_ids)

    def rows(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        c = None if self.cluster_ids is None else self.cluster_ids[idx]
        return Dataset(self.X[idx], self.y[idx], c)


@dataclass(frozen=True)
class ScoreVariance:
    """Plug-in estimate of the score covariance and the overdispersion used."""

    sigma: np.ndarray
    alpha_hat: float


def _eta(data: Dataset, theta) -> np.ndarray:
    theta = np.asarray(theta, dtype=float).ravel()
    if theta.shape[0] != data.p:
        raise PreconditionError(f"theta has length {theta.shape[0]}, expected p={data.p}")
    eta = data.X @ theta
    _check_finite(eta, "linear predictor")
    return eta


def _check_finite(values, what):
    bad = ~np.isfinite(values)
    if bad.any():
        row = int(np.flatnonzero(bad)[0])
        raise DomainError(f"{what} is non-finite at row {row}", row=row)


def loss(family, data: Dataset, theta, y=None) -> float:
    """Empirical mean loss ``(1/n) sum(-y_i eta_i + b(eta_i))``.

    ``y`` overrides ``data.y`` without rebuilding the dataset.
    """
    family = get_family(family)
    y = data.y if y is None else y
    eta = _eta(data, theta)
    terms = -y * eta + family.b(eta)
    _check_finite(terms, "loss")
    return float(np.mean(terms))


def score(family, data: Dataset, theta, y=None) -> np.ndarray:
    """Mean loss gradient ``(1/n) X^T (bdot(eta) - y)``.

    This is not scaled by ``sqrt(n)``; multiply when the normalized score
    variable is wanted.
    """
    family = get_family(family)
    y = data.y if y is None else y
    eta = _eta(data, theta)
    resid = family.bdot(eta) - y
    _check_finite(resid, "score residual")
    return data.X.T @ resid / data.n


def hessian(family, data: Dataset, theta) -> np.ndarray:
    """Mean Hessian ``(1/n) sum bddot(eta_i) x_i x_i^T`` (symmetric PSD)."""
    family = get_family(family)
    eta = _eta(data, theta)
    w = family.bddot(eta)
    _check_finite(w, "bddot")
    H = (data.X * w[:, None]).T @ data.X / data.n
    return 0.5 * (H + H.T)


def overdispersion(family, data: Dataset, theta, denominator: str = "bdot") -> float:
    """Pearson-type overdispersion ``(1/(n-p)) sum (y_i - mu_i)^2 / v_i``.

    ``denominator="bdot"`` divides by the fitted mean ``bdot(eta_i)``;
    ``"bddot"`` divides by the working variance function ``bddot(eta_i)``.
    For poisson the two agree.  The gaussian family always uses a unit
    denominator, giving the usual residual variance ``RSS / (n - p)``.
    """
    family = get_family(family)
    if denominator not in ("bdot", "bddot"):
        raise ValueError(f"denominator must be 'bdot' or 'bddot', got {denominator!r}")
    n, p = data.n, data.p
    if n <= p:
        raise PreconditionError(f"overdispersion needs n > p, got n={n}, p={p}")
    eta = _eta(data, theta)
    resid_sq = np.square(data.y - family.bdot(eta))
    if family.kind == "gaussian":
        return float(resid_sq.sum() / (n - p))
    v = family.bdot(eta) if denominator == "bdot" else family.bddot(eta)
    small = np.abs(v) < 1e-12
    if small.any():
        row = int(np.flatnonzero(small)[0])
        raise DegenerateError(
            f"variance denominator {denominator}(eta) vanishes at row {row}", row=row
        )
    return float(np.sum(resid_sq / v) / (n - p))


def working_variance(family, data: Dataset, theta, alpha_hat: float) -> np.ndarray:
    """Working-model ``Var(y_i) = alpha * bddot(eta_i)`` for each row."""
    family = get_family(family)
    return alpha_hat * family.bddot(_eta(data, theta))


def score_variance(family, data: Dataset, theta, alpha_hat: float) -> ScoreVariance:
    """Plug-in score covariance ``(1/n) sum alpha * bddot(eta_i) x_i x_i^T``."""
    if alpha_hat < 0:
        raise PreconditionError(f"alpha_hat must be nonnegative, got {alpha_hat}")
    v = working_variance(family, data, theta, alpha_hat)
    sigma = (data.X * v[:, None]).T @ data.X / data.n
    return ScoreVariance(sigma=0.5 * (sigma + sigma.T), alpha_hat=float(alpha_hat))
