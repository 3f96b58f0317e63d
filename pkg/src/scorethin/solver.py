"""Solvers for the randomized L1-penalized and restricted GLM objectives.

Both objectives share the smooth part

    f(theta) = P_n loss(theta) + n^{-1/2} * c^T theta

where ``c`` is an optional linear (randomization) term.  The penalized
problem adds ``n^{-1/2} * lam * sum_j w_j |theta_j|``; the restricted problem
pins coordinates outside a support set to zero and drops the penalty.

The penalized problem is solved by proximal gradient descent with
backtracking.  Once the active set has been stable for a few iterations a
sign-constrained Newton step on the active coordinates is tried; it is
accepted only when it decreases the full objective, so the objective path is
monotone.  Convergence is declared from the KKT residual, never from the
change in iterates.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import linalg

from .errors import ConditioningError, DivergenceError, PreconditionError
from .glm import Dataset, GlmFamily, get_family

DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITER = 100_000
ZERO_TOL = 1e-8


@dataclass(frozen=True)
class PenalizedProblem:
    """Inputs of a randomized penalized (or support-restricted) GLM fit.

    ``lam`` is the unscaled penalty level; the solver applies ``n^{-1/2}``.
    ``linear_term`` enters the objective as ``n^{-1/2} * linear_term @ theta``
    verbatim, so callers fold ``gamma`` and signs in beforehand.  ``gamma`` is
    carried for provenance only.  ``penalty_weights`` rescales the penalty per
    coordinate; a zero weight leaves that coordinate unpenalized.
    """

    family: GlmFamily
    data: Dataset
    lam: float = 0.0
    gamma: float = 1.0
    linear_term: Optional[np.ndarray] = None
    support: Optional[Sequence[int]] = None
    penalty_weights: Optional[np.ndarray] = None

    def __post_init__(self):
        object.__setattr__(self, "family", get_family(self.family))
        p = self.data.p
        if not self.lam >= 0:
            raise PreconditionError(f"lambda must be nonnegative, got {self.lam}")
        if not self.gamma > 0:
            raise PreconditionError(f"gamma must be positive, got {self.gamma}")
        c = np.zeros(p) if self.linear_term is None else np.asarray(self.linear_term, float)
        if c.shape != (p,) or not np.isfinite(c).all():
            raise PreconditionError("linear_term must be a finite vector of length p")
        object.__setattr__(self, "linear_term", c)
        w = np.ones(p) if self.penalty_weights is None else np.asarray(self.penalty_weights, float)
        if w.shape != (p,) or (w < 0).any() or not np.isfinite(w).all():
            raise PreconditionError("penalty_weights must be a nonnegative vector of length p")
        object.__setattr__(self, "penalty_weights", w)
        if self.support is not None:
            E = np.unique(np.asarray(self.support, dtype=int))
            if E.size == 0 or E.min() < 0 or E.max() >= p:
                raise PreconditionError(f"support must be a non-empty subset of 0..{p - 1}")
            object.__setattr__(self, "support", E)

    @property
    def thresholds(self) -> np.ndarray:
        """Per-coordinate scaled penalty level ``n^{-1/2} * lam * w_j``."""
        return self.lam * self.penalty_weights / np.sqrt(self.data.n)

    @property
    def scaled_linear_term(self) -> np.ndarray:
        return self.linear_term / np.sqrt(self.data.n)


@dataclass(frozen=True)
class SolverResult:
    theta: np.ndarray
    objective: float
    kkt_residual: float
    iterations: int
    converged: bool
    history: Optional[np.ndarray] = field(default=None, repr=False)


def soft_threshold(x, t):
    """Proximal map of ``t * |.|``: ``sign(x) * max(|x| - t, 0)``."""
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise PreconditionError("threshold must be nonnegative")
    out = np.sign(x) * np.maximum(np.abs(x) - t, 0.0)
    return float(out) if np.ndim(out) == 0 else out


def support_of(theta, zero_tol: float = ZERO_TOL) -> np.ndarray:
    """Indices ``j`` with ``|theta_j| > zero_tol`` (0-based)."""
    if zero_tol < 0:
        raise PreconditionError("zero_tol must be nonnegative")
    return np.flatnonzero(np.abs(np.asarray(theta, dtype=float)) > zero_tol)


def default_lambda(data: Dataset, c: float = 1.0) -> float:
    """Penalty level ``c * sqrt(log p) * sd(y)`` (sample sd, ddof=1).

    ``c`` is a free calibration constant.  A constant outcome yields 0 and a
    ``RuntimeWarning``.
    """
    if data.n < 2:
        raise PreconditionError("default_lambda needs n >= 2")
    sd = float(np.std(data.y, ddof=1))
    if sd == 0.0:
        warnings.warn("outcome has zero variance; default lambda is 0", RuntimeWarning)
        return 0.0
    return float(c * np.sqrt(np.log(data.p)) * sd)


class _Smooth:
    """Value/gradient/Hessian of ``P_n loss + c^T theta`` (``c`` pre-scaled)."""

    def __init__(self, family, X, y, c):
        self.family, self.X, self.y, self.c = family, X, y, c
        self.n = X.shape[0]

    def value(self, theta):
        eta = self.X @ theta
        v = np.mean(-self.y * eta + self.family.b(eta)) + self.c @ theta
        return float(v) if np.isfinite(v) else np.inf

    def grad(self, theta):
        eta = self.X @ theta
        return self.X.T @ (self.family.bdot(eta) - self.y) / self.n + self.c

    def value_grad(self, theta):
        eta = self.X @ theta
        v = np.mean(-self.y * eta + self.family.b(eta)) + self.c @ theta
        g = self.X.T @ (self.family.bdot(eta) - self.y) / self.n + self.c
        return (float(v) if np.isfinite(v) else np.inf), g

    def hess(self, theta):
        w = self.family.bddot(self.X @ theta)
        return (self.X * w[:, None]).T @ self.X / self.n


def _power_max_eig(H, iters=100, seed=0):
    v = np.random.default_rng(seed).standard_normal(H.shape[0])
    lam = 0.0
    for _ in range(iters):
        w = H @ v
        nrm = np.linalg.norm(w)
        if nrm == 0.0:
            return 0.0
        v = w / nrm
        new = float(v @ (H @ v))
        if abs(new - lam) <= 1e-10 * max(new, 1e-300):
            return new
        lam = new
    return lam


def kkt_residual(problem: PenalizedProblem, theta) -> float:
    """Sup-norm violation of the L1 stationarity conditions at ``theta``.

    Uses a fresh gradient evaluation; nothing is shared with the solver loop.
    """
    theta = np.asarray(theta, dtype=float)
    sm = _Smooth(problem.family, problem.data.X, problem.data.y, problem.scaled_linear_term)
    g = sm.grad(theta)
    thr = problem.thresholds
    nz = theta != 0.0
    r = np.where(
        nz,
        np.abs(g + thr * np.sign(theta)),
        np.maximum(np.abs(g) - thr, 0.0),
    )
    return float(r.max()) if r.size else 0.0


def _penalty(theta, thr):
    return float(thr @ np.abs(theta))


def _newton_polish(sm, theta, thr, tol, max_steps=50):
    """Sign-constrained Newton on the active coordinates of ``theta``.

    Returns the polished vector and the number of Newton steps taken, or
    ``None`` when the active set is not consistent with the optimum.
    """
    active = (theta != 0.0) | (thr == 0.0)
    if not active.any():
        return None
    A = np.flatnonzero(active)
    s = np.sign(theta[A])
    free = thr[A] == 0.0
    lin = np.where(free, 0.0, thr[A] * s)
    x = theta.copy()
    f = sm.value(x) + _penalty(x, thr)
    for step in range(1, max_steps + 1):
        g = sm.grad(x)[A] + lin
        if np.max(np.abs(g)) <= 0.1 * tol:
            return x, step
        H = sm.hess(x)[np.ix_(A, A)]
        try:
            d = -linalg.cho_solve(linalg.cho_factor(H, check_finite=False), g)
        except linalg.LinAlgError:
            return None
        t = 1.0
        while True:
            cand = x.copy()
            cand[A] = x[A] + t * d
            signs_ok = np.all(free | (np.sign(cand[A]) == s))
            if signs_ok:
                fc = sm.value(cand) + _penalty(cand, thr)
                if fc <= f + 1e-4 * t * (g @ d) + 1e-15 * abs(f):
                    break
            t *= 0.5
            if t < 1e-10:
                return (x, step) if np.max(np.abs(g)) <= tol else None
        x, f = cand, fc
    return x, max_steps


def solve_penalized(
    problem: PenalizedProblem,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    theta0=None,
    record_history: bool = False,
) -> SolverResult:
    """Minimize ``f(theta) + n^{-1/2} lam * sum w_j |theta_j|`` over R^p.

    Returns ``converged=False`` (rather than raising) when ``max_iter`` is
    exhausted; a non-finite objective raises :class:`DivergenceError`.
    """
    if problem.support is not None:
        raise PreconditionError("solve_penalized does not take a support restriction")
    data = problem.data
    sm = _Smooth(problem.family, data.X, data.y, problem.scaled_linear_term)
    thr = problem.thresholds
    theta = np.zeros(data.p) if theta0 is None else np.asarray(theta0, float).copy()

    f, g = sm.value_grad(theta)
    if not np.isfinite(f):
        raise DivergenceError("objective is non-finite at the starting point")
    obj = f + _penalty(theta, thr)
    L = _power_max_eig(sm.hess(theta))
    step = 1.0 / L if L > 0 else 1.0
    history = [obj] if record_history else None

    stable, wait, fails = 0, 10, 0
    prev_active = theta != 0.0
    it = 0
    converged = False
    while it < max_iter:
        res = _kkt_from_grad(theta, g, thr)
        if res <= tol:
            converged = True
            break
        if stable >= wait:
            polished = _newton_polish(sm, theta, thr, tol)
            stable = 0
            if polished is not None:
                cand, k = polished
                fc, gc = sm.value_grad(cand)
                oc = fc + _penalty(cand, thr)
                it += k
                if oc <= obj + 1e-14 * abs(obj):
                    theta, f, g, obj = cand, fc, gc, oc
                    if record_history:
                        history.append(obj)
                    if _kkt_from_grad(theta, g, thr) <= tol:
                        converged = True
                        break
            fails += 1
            wait = 10 * (fails + 1)
        # proximal gradient step with backtracking on the smooth part
        while True:
            cand = soft_threshold(theta - step * g, step * thr)
            d = cand - theta
            fc = sm.value(cand)
            if fc <= f + g @ d + (d @ d) / (2.0 * step) + 1e-15 * abs(f):
                break
            step *= 0.5
            if step < 1e-300:
                raise DivergenceError("backtracking failed to find a descent step")
        if not np.isfinite(fc):
            raise DivergenceError("objective became non-finite")
        theta = cand
        f, g = sm.value_grad(theta)
        obj = f + _penalty(theta, thr)
        if record_history:
            history.append(obj)
        active = theta != 0.0
        stable = stable + 1 if np.array_equal(active, prev_active) else 0
        prev_active = active
        it += 1

    return SolverResult(
        theta=theta,
        objective=obj,
        kkt_residual=kkt_residual(problem, theta),
        iterations=it,
        converged=converged,
        history=None if history is None else np.asarray(history),
    )


def _kkt_from_grad(theta, g, thr):
    r = np.where(theta != 0.0, np.abs(g + thr * np.sign(theta)), np.maximum(np.abs(g) - thr, 0.0))
    return float(r.max()) if r.size else 0.0


def solve_submodel(
    problem: PenalizedProblem,
    tol: float = DEFAULT_TOL,
    max_iter: int = 200,
    theta0=None,
) -> SolverResult:
    """Minimize ``f(theta)`` with coordinates outside ``problem.support`` fixed at 0.

    Damped Newton with Armijo backtracking.  ``lam`` is ignored.  The returned
    ``theta`` has length p with exact zeros off the support.
    """
    if problem.support is None:
        raise PreconditionError("solve_submodel needs a support restriction")
    E = problem.support
    data = problem.data
    XE = data.X[:, E]
    if np.linalg.matrix_rank(XE) < E.size:
        raise ConditioningError(f"design restricted to support {E.tolist()} is rank deficient")
    sm = _Smooth(problem.family, XE, data.y, problem.scaled_linear_term[E])
    x = np.zeros(E.size) if theta0 is None else np.asarray(theta0, float)[E].copy()
    f, g = sm.value_grad(x)
    if not np.isfinite(f):
        raise DivergenceError("objective is non-finite at the starting point")
    it = 0
    converged = False
    while it < max_iter:
        if np.max(np.abs(g)) <= tol:
            converged = True
            break
        H = sm.hess(x)
        try:
            d = -linalg.cho_solve(linalg.cho_factor(H, check_finite=False), g)
        except linalg.LinAlgError:
            raise ConditioningError("restricted Hessian is not positive definite") from None
        slope = g @ d
        t = 1.0
        while True:
            cand = x + t * d
            fc = sm.value(cand)
            if fc <= f + 1e-4 * t * slope + 1e-15 * abs(f):
                break
            t *= 0.5
            if t < 1e-12:
                break
        if t < 1e-12:
            # no further decrease is representable; accept if stationary
            break
        x = cand
        f, g = sm.value_grad(x)
        if not np.isfinite(f) or np.max(np.abs(x)) > 1e8:
            raise DivergenceError("restricted objective appears unbounded below")
        it += 1
    if not converged and np.max(np.abs(g)) <= tol:
        converged = True

    theta = np.zeros(data.p)
    theta[E] = x
    return SolverResult(
        theta=theta,
        objective=f,
        kkt_residual=float(np.max(np.abs(g))),
        iterations=it,
        converged=converged,
    )
