"""Monte Carlo harness comparing thinning, sample splitting and double dipping.

A scenario fixes the data-generating process; each replication draws a fresh
design, truth and outcome vector from a seed derived from
``(master_seed, replication)`` and runs every requested method on the same
draw.  Coverage is judged against the population sub-model target of the
selected support, computed here from the known mean of ``y``.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields, replace
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy import optimize
from scipy.special import expit

from .errors import ConfigError, ScoreThinError
from .glm import BERNOULLI, GAUSSIAN, Dataset
from .inference import fixed_model_fit, select_and_infer
from .solver import PenalizedProblem, default_lambda, solve_penalized, support_of
from .thinning import derive_seed, make_rng

KINDS = ("linear_gaussian", "logistic", "clustered")
METHODS = ("thinning", "splitting", "classical")

DEFAULT_AMPLITUDE = {"linear_gaussian": 0.1, "logistic": 0.2, "clustered": 0.2}


@dataclass(frozen=True)
class SimScenario:
    """Data-generating process and run settings for one simulation cell.

    ``signal_amplitude=None`` picks the per-kind calibration default.
    """

    kind: str = "linear_gaussian"
    n: int = 400
    p: int = 40
    n_nonzero: int = 10
    design_equicorrelation: float = 0.3
    signal_amplitude: Optional[float] = None
    cluster_size: int = 10
    replications: int = 1000
    master_seed: int = 0
    noise_variance: float = 1.0
    alpha: float = 0.1
    gamma: float = 1.0
    lambda_scale: float = 1.0
    variance_denominator: str = "bdot"
    name: Optional[str] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown scenario kind {self.kind!r}; expected one of {KINDS}")
        if not 0.0 <= self.design_equicorrelation < 1.0:
            raise ConfigError("design_equicorrelation must lie in [0, 1)")
        if not 0 <= self.n_nonzero <= self.p:
            raise ConfigError("n_nonzero must lie in [0, p]")
        if self.n < 2 or self.p < 1 or self.replications < 1:
            raise ConfigError("need n >= 2, p >= 1 and replications >= 1")
        if self.kind == "clustered" and (self.cluster_size < 1 or self.n % self.cluster_size):
            raise ConfigError("clustered scenarios need n divisible by cluster_size")
        if not 0.0 < self.alpha < 1.0 or not self.gamma > 0 or not self.noise_variance > 0:
            raise ConfigError("need alpha in (0, 1), gamma > 0 and noise_variance > 0")
        if self.signal_amplitude is None:
            object.__setattr__(self, "signal_amplitude", DEFAULT_AMPLITUDE[self.kind])

    @property
    def label(self) -> str:
        return self.name or self.kind

    @classmethod
    def from_dict(cls, d: dict) -> "SimScenario":
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown scenario keys: {sorted(extra)}")
        return cls(**d)


@dataclass
class ReplicationMetrics:
    method: str
    selected: tuple
    covered: np.ndarray
    widths: np.ndarray
    fdr: float
    no_selection: bool
    scenario: str = ""
    n: int = 0
    replication: int = 0
    seed: int = 0
    skipped: bool = False
    error: str = ""
    estimates: np.ndarray = field(default_factory=lambda: np.zeros(0))
    targets: np.ndarray = field(default_factory=lambda: np.zeros(0))


# ---------------------------------------------------------------- generators


def gen_design(n: int, p: int, rho: float, rng) -> np.ndarray:
    """Rows i.i.d. N(0, (1 - rho) I + rho 11^T) via a shared latent factor."""
    if not 0.0 <= rho < 1.0:
        raise ConfigError("rho must lie in [0, 1)")
    rng = make_rng(rng)
    z0 = rng.standard_normal((n, 1))
    return np.sqrt(rho) * z0 + np.sqrt(1.0 - rho) * rng.standard_normal((n, p))


def gen_truth(p: int, k: int, amplitude: float, rng) -> np.ndarray:
    """Sparse vector: ``k`` random coordinates set to ``+/- amplitude``."""
    if not 0 <= k <= p:
        raise ConfigError("need 0 <= k <= p")
    rng = make_rng(rng)
    theta = np.zeros(p)
    idx = rng.choice(p, size=k, replace=False)
    theta[idx] = amplitude * rng.choice([-1.0, 1.0], size=k)
    return theta


def gen_outcomes(scenario: SimScenario, X, theta_star, rng):
    """Outcomes (and cluster ids for the clustered kind) given design and truth."""
    rng = make_rng(rng)
    n = X.shape[0]
    eta = X @ theta_star
    if scenario.kind == "linear_gaussian":
        return eta + np.sqrt(scenario.noise_variance) * rng.standard_normal(n), None
    if scenario.kind == "logistic":
        return (rng.random(n) < expit(eta)).astype(float), None
    m = scenario.cluster_size
    ids = np.repeat(np.arange(n // m), m)
    nu = np.sqrt(0.5) * rng.standard_normal(n // m)
    # Laplace with scale b has variance 2 b^2; b = 0.5 gives variance 0.5.
    eps = rng.laplace(0.0, 0.5, size=n)
    return eta + nu[ids] + eps, ids


def mean_outcome(scenario: SimScenario, X, theta_star) -> np.ndarray:
    eta = X @ theta_star
    return expit(eta) if scenario.kind == "logistic" else eta


# ---------------------------------------------------------------- estimand


def submodel_target(kind: str, X, mu, E) -> np.ndarray:
    """Population sub-model coefficients for support ``E`` given ``E[y] = mu``.

    The GLM loss is linear in ``y``, so the expected loss equals the loss
    evaluated at ``y = mu``.  Gaussian targets use least squares; logistic
    targets minimize the expected loss with a generic quasi-Newton method,
    independent of the package solvers.
    """
    XE = X[:, E]
    if kind != "logistic":
        return np.linalg.lstsq(XE, mu, rcond=None)[0]
    n = XE.shape[0]

    def f(t):
        eta = XE @ t
        return np.mean(-mu * eta + np.logaddexp(0.0, eta))

    def g(t):
        return XE.T @ (expit(XE @ t) - mu) / n

    res = optimize.minimize(f, np.zeros(len(E)), jac=g, method="BFGS",
                            options={"gtol": 1e-11, "maxiter": 10_000})
    return res.x


# ---------------------------------------------------------------- methods


@dataclass
class ReplicationData:
    data: Dataset
    theta_star: np.ndarray
    mu: np.ndarray
    seed: int


def draw_replication(scenario: SimScenario, replication: int) -> ReplicationData:
    seed = derive_seed(scenario.master_seed, replication)
    rng = make_rng(seed)
    X = gen_design(scenario.n, scenario.p, scenario.design_equicorrelation, rng)
    theta_star = gen_truth(scenario.p, scenario.n_nonzero, scenario.signal_amplitude, rng)
    y, ids = gen_outcomes(scenario, X, theta_star, rng)
    return ReplicationData(Dataset(X, y, ids), theta_star, mean_outcome(scenario, X, theta_star), seed)


def fdr(selected, true_support) -> float:
    """Fraction of selected indices outside the true support (0 when nothing selected)."""
    selected = set(int(j) for j in selected)
    if not selected:
        return 0.0
    return len(selected - set(int(j) for j in true_support)) / len(selected)


def _family(scenario):
    return BERNOULLI if scenario.kind == "logistic" else GAUSSIAN


def _lasso_support(family, data, lam):
    res = solve_penalized(PenalizedProblem(family, data, lam=lam))
    return support_of(res.theta)


def _split_rows(scenario, data, rng):
    n = data.n
    if data.cluster_ids is not None:
        labels = np.unique(data.cluster_ids)
        chosen = rng.permutation(labels)[: labels.size // 2]
        mask = np.isin(data.cluster_ids, chosen)
    else:
        mask = np.zeros(n, dtype=bool)
        mask[rng.permutation(n)[: n // 2]] = True
    return np.flatnonzero(mask), np.flatnonzero(~mask)


def run_method(method: str, scenario: SimScenario, rep: ReplicationData, seed: int) -> ReplicationMetrics:
    """Run one inference method on one replication's data.

    Solver or conditioning failures are recorded as a skipped replication
    rather than raised.
    """
    if method not in METHODS:
        raise ConfigError(f"unknown method {method!r}")
    family = _family(scenario)
    data = rep.data
    truth = np.flatnonzero(rep.theta_star)
    cluster = data.cluster_ids is not None
    rng = make_rng(seed)
    base = dict(method=method, scenario=scenario.label, n=scenario.n, seed=int(seed))
    try:
        if method == "thinning":
            fit = select_and_infer(family, data, "auto", gamma=scenario.gamma,
                                   alpha=scenario.alpha, rng=rng,
                                   lambda_scale=scenario.lambda_scale,
                                   denominator=scenario.variance_denominator)
            E, ivs, rows = fit.E, fit.intervals, np.arange(data.n)
        elif method == "classical":
            E = _lasso_support(family, data, default_lambda(data, scenario.lambda_scale))
            rows = np.arange(data.n)
            ivs = []
            if E.size:
                _, _, ivs = fixed_model_fit(family, data, E, scenario.alpha, cluster_robust=cluster)
        else:
            sel_rows, rows = _split_rows(scenario, data, rng)
            d_sel, d_inf = data.rows(sel_rows), data.rows(rows)
            E = _lasso_support(family, d_sel, default_lambda(d_sel, scenario.lambda_scale))
            ivs = []
            if E.size:
                _, _, ivs = fixed_model_fit(family, d_inf, E, scenario.alpha, cluster_robust=cluster)
    except (ScoreThinError, np.linalg.LinAlgError, FloatingPointError) as exc:
        return ReplicationMetrics(selected=(), covered=np.zeros(0, bool), widths=np.zeros(0),
                                  fdr=float("nan"), no_selection=False, skipped=True,
                                  error=f"{type(exc).__name__}: {exc}", **base)
    E = np.asarray(E, dtype=int)
    if E.size == 0:
        return ReplicationMetrics(selected=(), covered=np.zeros(0, bool), widths=np.zeros(0),
                                  fdr=0.0, no_selection=True, **base)
    target = submodel_target(scenario.kind, data.X[rows], rep.mu[rows], E)
    lo = np.array([iv.lower for iv in ivs])
    hi = np.array([iv.upper for iv in ivs])
    return ReplicationMetrics(
        selected=tuple(int(j) for j in E),
        covered=(lo <= target) & (target <= hi),
        widths=hi - lo,
        fdr=fdr(E, truth),
        no_selection=False,
        estimates=0.5 * (lo + hi),
        targets=target,
        **base,
    )


def run_replication(scenario: SimScenario, replication: int,
                    methods: Sequence[str] = METHODS) -> list:
    rep = draw_replication(scenario, replication)
    out = []
    for k, method in enumerate(methods):
        # method seeds are independent of the method list order
        m = run_method(method, scenario, rep, derive_seed(rep.seed, METHODS.index(method) + 1))
        m.replication = replication
        out.append(m)
    return out


def run_scenario(scenario: SimScenario, methods: Sequence[str] = METHODS,
                 jobs: int = 1, replications: Optional[Iterable[int]] = None) -> list:
    """All replications of a scenario; results are ordered by replication index."""
    reps = range(scenario.replications) if replications is None else list(replications)
    if jobs <= 1:
        chunks = [run_replication(scenario, r, methods) for r in reps]
    else:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            chunks = list(pool.map(lambda r: run_replication(scenario, r, methods), reps))
    return [m for chunk in chunks for m in chunk]


# ---------------------------------------------------------------- aggregation

SUMMARY_COLUMNS = (
    "scenario", "method", "n", "replications", "completed", "skipped", "no_selection_rate",
    "n_indicators", "coverage", "coverage_se", "mean_width", "width_se", "width_q10",
    "width_q50", "width_q90", "mean_fdr",
)

REPLICATION_COLUMNS = (
    "scenario", "method", "n", "replication", "coefficient", "covered", "width", "fdr",
    "no_selection", "seed",
)


def aggregate(metrics: Sequence[ReplicationMetrics]) -> list:
    """Summary rows keyed by ``(scenario, method, n)``.

    Coverage and widths pool indicators from replications with a non-empty
    selection; FDR averages over every completed replication.
    """
    if not metrics:
        raise ValueError("aggregate needs at least one replication")
    groups: dict = {}
    for m in metrics:
        groups.setdefault((m.scenario, m.method, m.n), []).append(m)
    rows = []
    for (scen, method, n), ms in sorted(groups.items(), key=lambda kv: (kv[0][0], METHODS.index(kv[0][1]) if kv[0][1] in METHODS else 99, kv[0][2])):
        done = [m for m in ms if not m.skipped]
        cov = np.concatenate([m.covered for m in done]) if done else np.zeros(0, bool)
        widths = np.concatenate([m.widths for m in done]) if done else np.zeros(0)
        k = cov.size
        c = float(cov.mean()) if k else float("nan")
        rows.append({
            "scenario": scen,
            "method": method,
            "n": n,
            "replications": len(ms),
            "completed": len(done),
            "skipped": len(ms) - len(done),
            "no_selection_rate": float(np.mean([m.no_selection for m in done])) if done else float("nan"),
            "n_indicators": k,
            "coverage": c,
            "coverage_se": math.sqrt(c * (1.0 - c) / k) if k else float("nan"),
            "mean_width": float(widths.mean()) if k else float("nan"),
            "width_se": float(widths.std(ddof=1) / math.sqrt(k)) if k > 1 else float("nan"),
            "width_q10": float(np.quantile(widths, 0.1)) if k else float("nan"),
            "width_q50": float(np.quantile(widths, 0.5)) if k else float("nan"),
            "width_q90": float(np.quantile(widths, 0.9)) if k else float("nan"),
            "mean_fdr": float(np.mean([m.fdr for m in done])) if done else float("nan"),
        })
    return rows


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def replication_rows(metrics: Sequence[ReplicationMetrics]) -> list:
    """Long-format rows: one per selected coefficient, one for an empty or skipped replication."""
    rows = []
    for m in metrics:
        common = {"scenario": m.scenario, "method": m.method, "n": m.n,
                  "replication": m.replication, "fdr": m.fdr,
                  "no_selection": m.no_selection, "seed": m.seed}
        if m.skipped or m.no_selection:
            rows.append({**common, "coefficient": "", "covered": "", "width": ""})
            continue
        for j, cov, w in zip(m.selected, m.covered, m.widths):
            rows.append({**common, "coefficient": j, "covered": bool(cov), "width": float(w)})
    return rows


def write_csv(path, rows, columns):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in columns])
