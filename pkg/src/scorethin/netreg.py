"""Principal-components network regression.

Node covariates are augmented with the leading left and right singular
vectors of the (directed, binary) adjacency matrix, and a thinned L1
logistic fit picks which singular vectors to keep.  Covariates and the
intercept are never penalized, so the focal covariate's odds ratio is always
reported.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import DegenerateError, PreconditionError
from .glm import BERNOULLI, Dataset
from .inference import select_and_infer
from .thinning import make_rng


@dataclass
class Graph:
    """Directed graph with per-node covariates and outcome (0-based node ids)."""

    n_nodes: int
    edges: np.ndarray
    node_covariates: np.ndarray
    covariate_names: Sequence[str]
    outcome: np.ndarray

    def __post_init__(self):
        self.edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        if self.edges.size and (self.edges.min() < 0 or self.edges.max() >= self.n_nodes):
            raise PreconditionError("edge endpoint out of range")
        self.node_covariates = np.asarray(self.node_covariates, dtype=float).reshape(self.n_nodes, -1)
        self.covariate_names = list(self.covariate_names)
        if len(self.covariate_names) != self.node_covariates.shape[1]:
            raise PreconditionError("one name per covariate column is required")
        self.outcome = np.asarray(self.outcome, dtype=float).ravel()
        if self.outcome.shape[0] != self.n_nodes:
            raise PreconditionError("outcome length must equal n_nodes")

    def reversed(self) -> "Graph":
        return Graph(self.n_nodes, self.edges[:, ::-1], self.node_covariates,
                     self.covariate_names, self.outcome)

    def permuted(self, perm) -> "Graph":
        """Relabel nodes so that old node ``perm[k]`` becomes new node ``k``."""
        perm = np.asarray(perm)
        new_id = np.empty_like(perm)
        new_id[perm] = np.arange(perm.size)
        return Graph(self.n_nodes, new_id[self.edges], self.node_covariates[perm],
                     self.covariate_names, self.outcome[perm])


def adjacency(graph: Graph) -> np.ndarray:
    """Binary, possibly non-symmetric adjacency: ``A[s, t] = 1`` for each edge."""
    A = np.zeros((graph.n_nodes, graph.n_nodes))
    if graph.edges.size:
        counts = np.zeros_like(A)
        np.add.at(counts, (graph.edges[:, 0], graph.edges[:, 1]), 1.0)
        dup = int(np.sum(counts[counts > 1] - 1))
        if dup:
            warnings.warn(f"collapsed {dup} duplicate edge(s)", RuntimeWarning)
        A[counts > 0] = 1.0
    return A


def _fix_signs(M):
    idx = np.argmax(np.abs(M), axis=0)
    s = np.sign(M[idx, np.arange(M.shape[1])])
    s[s == 0] = 1.0
    return M * s


@dataclass
class SvdFeatures:
    U: np.ndarray
    V: np.ndarray
    singular_values: np.ndarray
    rank_deficient: bool = False


def svd_features(A, r: int, tol: float = 1e-10) -> SvdFeatures:
    """Top-``r`` left/right singular vectors, sign-fixed for determinism.

    Each vector is flipped so its largest-magnitude entry is positive.  The
    right vector is flipped together with its left partner when the sign of
    the left one is decided, keeping ``A v = s u``; vectors for zero singular
    values are sign-fixed independently.  ``rank_deficient`` flags ``r``
    beyond the numerical rank.
    """
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    if not 1 <= r <= min(A.shape):
        raise PreconditionError(f"need 1 <= r <= {min(A.shape)}, got {r}")
    U, s, Vt = np.linalg.svd(A)
    U, V, s = U[:, :r], Vt[:r].T, s[:r]
    tiny = s <= tol * max(s[0] if s.size else 0.0, 1e-300)
    U_fixed = _fix_signs(U)
    flip = np.sign(np.sum(U_fixed * U, axis=0))
    V = V * flip
    if tiny.any():
        V[:, tiny] = _fix_signs(V[:, tiny])
    return SvdFeatures(U_fixed, V, s, rank_deficient=bool(tiny.any()))


@dataclass
class NetworkDesign:
    data: Dataset
    column_names: list
    unpenalized: np.ndarray
    svd: SvdFeatures


def build_design(graph: Graph, r: int, intercept: bool = True,
                 scale_vectors: bool = True) -> NetworkDesign:
    """Columns ``[intercept?, covariates..., U_1..U_r, V_1..V_r]``.

    With ``scale_vectors`` the unit-norm singular vectors are multiplied by
    ``sqrt(n)`` so each column has unit mean square, putting them on the
    scale the penalty level assumes.
    """
    if r < 1:
        raise PreconditionError("r must be at least 1")
    feats = svd_features(adjacency(graph), r)
    cov = graph.node_covariates
    if cov.shape[0] != feats.U.shape[0]:
        raise PreconditionError("covariate rows and SVD rows disagree")
    scale = np.sqrt(graph.n_nodes) if scale_vectors else 1.0
    blocks = [cov, scale * feats.U, scale * feats.V]
    names = list(graph.covariate_names)
    names += [f"U{k + 1}" for k in range(r)] + [f"V{k + 1}" for k in range(r)]
    if intercept:
        blocks.insert(0, np.ones((graph.n_nodes, 1)))
        names.insert(0, "intercept")
    X = np.hstack(blocks)
    n_fixed = cov.shape[1] + int(intercept)
    return NetworkDesign(Dataset(X, graph.outcome), names, np.arange(n_fixed), feats)


@dataclass
class NetworkReport:
    focal: str
    coefficient: float
    lower: float
    upper: float
    alpha: float
    selected_vectors: list
    selected_columns: list
    lam: float
    gamma: float
    no_selection: bool = False
    extra: dict = field(default_factory=dict)

    @property
    def odds_ratio(self) -> float:
        return float(np.exp(self.coefficient))

    @property
    def odds_ratio_interval(self) -> tuple:
        return float(np.exp(self.lower)), float(np.exp(self.upper))

    def as_row(self) -> dict:
        lo, hi = self.odds_ratio_interval
        return {
            "focal": self.focal, "coefficient": self.coefficient, "lower": self.lower,
            "upper": self.upper, "odds_ratio": self.odds_ratio, "or_lower": lo,
            "or_upper": hi, "alpha": self.alpha, "lambda": self.lam, "gamma": self.gamma,
            "selected_vectors": " ".join(self.selected_vectors),
        }

    def to_text(self) -> str:
        lo, hi = self.odds_ratio_interval
        level = round(100 * (1 - self.alpha), 6)
        return (
            f"focal covariate: {self.focal}\n"
            f"log-odds coefficient: {self.coefficient:.6g} "
            f"({level:g}% CI {self.lower:.6g}, {self.upper:.6g})\n"
            f"odds ratio: {self.odds_ratio:.4g} ({level:g}% CI {lo:.4g}, {hi:.4g})\n"
            f"selected singular vectors: {' '.join(self.selected_vectors) or '(none)'}\n"
            f"lambda: {self.lam:.6g}  gamma: {self.gamma:g}\n"
        )


def analyze_network(
    graph: Graph,
    r: int,
    lam="auto",
    gamma: float = 1.0,
    alpha: float = 0.05,
    focal_covariate: str = "sex",
    rng=None,
    *,
    intercept: bool = True,
    scale_vectors: bool = True,
    lambda_scale: float = 1.0,
    denominator: str = "bdot",
) -> NetworkReport:
    """Thinned L1 logistic selection of singular vectors, inference on the focal covariate."""
    y = graph.outcome
    if not np.isin(y, (0.0, 1.0)).all():
        raise PreconditionError("outcome must be coded 0/1 for the logistic analysis")
    if focal_covariate not in graph.covariate_names:
        raise PreconditionError(f"unknown focal covariate {focal_covariate!r}")
    design = build_design(graph, r, intercept=intercept, scale_vectors=scale_vectors)
    weights = np.ones(design.data.p)
    weights[design.unpenalized] = 0.0
    try:
        fit = select_and_infer(
            BERNOULLI, design.data, lam, gamma=gamma, alpha=alpha, rng=make_rng(rng),
            penalty_weights=weights, lambda_scale=lambda_scale, denominator=denominator,
        )
    except DegenerateError as exc:
        raise DegenerateError(
            f"{exc}; the full-model pilot fit looks separated, try a smaller r",
            row=exc.row,
        ) from exc
    col = design.column_names.index(focal_covariate)
    names = [design.column_names[j] for j in fit.E]
    k = int(np.flatnonzero(fit.E == col)[0])
    iv = fit.intervals[k]
    vectors = [nm for nm in names if nm[0] in "UV" and nm[1:].isdigit()]
    return NetworkReport(
        focal=focal_covariate, coefficient=float(fit.theta_E[k]), lower=iv.lower,
        upper=iv.upper, alpha=alpha, selected_vectors=vectors, selected_columns=names,
        lam=float(fit.lam), gamma=float(gamma),
    )


# ---------------------------------------------------------------- I/O


def read_edge_list(path) -> tuple:
    """Whitespace-separated ``source target`` lines; returns ``(edges, base)``.

    Indexing is taken as 1-based when the smallest id is 1, else 0-based.
    Blank lines and ``#`` comments are skipped.
    """
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) < 2:
                raise ValueError(f"{path}:{lineno}: expected 'source target'")
            try:
                pairs.append((int(parts[0]), int(parts[1])))
            except ValueError:
                raise ValueError(f"{path}:{lineno}: node ids must be integers") from None
    edges = np.array(pairs, dtype=np.int64).reshape(-1, 2)
    base = 1 if edges.size and edges.min() == 1 else 0
    return edges - base, base


def read_graph(edge_path, node_path, outcome: str, covariates: Sequence[str],
               node_column: str = "node") -> Graph:
    """Load a graph from an edge list and a node CSV keyed by node id."""
    edges, base = read_edge_list(edge_path)
    with open(node_path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ValueError(f"{node_path}: no node rows")
    ids = np.array([int(r[node_column]) for r in rows]) - base
    n = len(rows)
    if sorted(ids.tolist()) != list(range(n)):
        raise ValueError(f"{node_path}: node ids must cover 0..{n - 1} after re-basing")
    order = np.argsort(ids)
    cov = np.array([[float(rows[i][c]) for c in covariates] for i in order])
    y = np.array([float(rows[i][outcome]) for i in order])
    return Graph(n, edges, cov.reshape(n, len(covariates)), list(covariates), y)


def synthetic_graph(
    n_nodes: int = 150,
    n_blocks: int = 3,
    p_in: float = 0.4,
    p_out: float = 0.05,
    effect: float = 1.0,
    focal_effect: float = 0.0,
    rng=None,
) -> Graph:
    """Directed block-model graph whose outcome depends on the leading left singular vector.

    Covariates are ``age`` (standardized), ``sex`` and ``church`` (binary).
    The outcome is Bernoulli with log-odds ``effect * sqrt(n) * (U_1 - mean)``
    plus ``focal_effect * sex``.
    """
    rng = make_rng(rng)
    blocks = rng.integers(0, n_blocks, size=n_nodes)
    same = blocks[:, None] == blocks[None, :]
    prob = np.where(same, p_in, p_out)
    A = rng.random((n_nodes, n_nodes)) < prob
    np.fill_diagonal(A, False)
    src, dst = np.nonzero(A)
    edges = np.column_stack([src, dst])
    age = rng.standard_normal(n_nodes)
    sex = (rng.random(n_nodes) < 0.5).astype(float)
    church = (rng.random(n_nodes) < 0.3).astype(float)
    U1 = svd_features(A.astype(float), 1).U[:, 0]
    eta = effect * np.sqrt(n_nodes) * (U1 - U1.mean()) + focal_effect * sex
    y = (rng.random(n_nodes) < 1.0 / (1.0 + np.exp(-eta))).astype(float)
    return Graph(n_nodes, edges, np.column_stack([age, sex, church]), ["age", "sex", "church"], y)
