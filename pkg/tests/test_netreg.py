import math

import numpy as np
import pytest
from scipy import linalg

from scorethin import DegenerateError, PreconditionError
from scorethin.netreg import (
    Graph,
    NetworkReport,
    adjacency,
    analyze_network,
    build_design,
    read_graph,
    svd_features,
    synthetic_graph,
)
from scorethin.thinning import derive_seed


def _graph(n, edges, rng=None):
    rng = np.random.default_rng(0) if rng is None else rng
    cov = np.column_stack([rng.standard_normal(n), rng.integers(0, 2, n), rng.integers(0, 2, n)])
    return Graph(n, edges, cov, ["age", "sex", "church"], rng.integers(0, 2, n))


def test_adjacency_examples():
    assert not adjacency(_graph(4, np.zeros((0, 2)))).any()
    A = adjacency(_graph(3, [[0, 1]]))
    assert A.sum() == 1 and A[0, 1] == 1 and A[1, 0] == 0
    with pytest.warns(RuntimeWarning):
        assert adjacency(_graph(3, [[0, 1], [0, 1]])).sum() == 1


def test_single_edge_svd():
    A = np.zeros((4, 4))
    A[0, 1] = 1.0
    f = svd_features(A, 1)
    assert f.singular_values[0] == pytest.approx(1.0)
    np.testing.assert_allclose(np.abs(f.U[:, 0]), [1, 0, 0, 0])
    np.testing.assert_allclose(np.abs(f.V[:, 0]), [0, 1, 0, 0])
    assert svd_features(A, 2).rank_deficient


def test_symmetric_adjacency_vectors_match_up_to_sign():
    g = synthetic_graph(60, rng=1)
    A = adjacency(g)
    A = np.maximum(A, A.T)
    f = svd_features(A, 5)
    for k in range(5):
        assert min(np.abs(f.U[:, k] - f.V[:, k]).max(), np.abs(f.U[:, k] + f.V[:, k]).max()) < 1e-8


def test_sign_rule_and_pairing():
    A = adjacency(synthetic_graph(50, rng=2))
    f = svd_features(A, 4)
    idx = np.argmax(np.abs(f.U), axis=0)
    assert np.all(f.U[idx, np.arange(4)] > 0)
    np.testing.assert_allclose(A @ f.V, f.U * f.singular_values, atol=1e-10)
    g = svd_features(A, 4)
    assert f.U.tobytes() == g.U.tobytes()


def test_permutation_invariance_of_subspace():
    g = synthetic_graph(120, rng=3)
    perm = np.random.default_rng(4).permutation(120)
    h = g.permuted(perm)
    a, b = svd_features(adjacency(g), 10), svd_features(adjacency(h), 10)
    assert np.max(linalg.subspace_angles(a.U[perm], b.U)) < 1e-6
    assert np.max(linalg.subspace_angles(a.V[perm], b.V)) < 1e-6
    da, db = build_design(g, 3), build_design(h, 3)
    np.testing.assert_array_equal(da.data.X[perm, :4], db.data.X[:, :4])


def test_design_column_accounting():
    g = synthetic_graph(80, rng=5)
    d = build_design(g, 25)
    assert d.data.p == 3 + 2 * 25 + 1
    assert d.column_names[:4] == ["intercept", "age", "sex", "church"]
    assert d.column_names[4] == "U1" and d.column_names[29] == "V1"
    np.testing.assert_array_equal(d.unpenalized, [0, 1, 2, 3])
    assert build_design(g, 25, intercept=False).data.p == 53
    # scaled singular vectors have unit mean square
    np.testing.assert_allclose(np.mean(d.data.X[:, 4:] ** 2, axis=0), 1.0)
    raw = build_design(g, 2, scale_vectors=False)
    np.testing.assert_allclose(np.sum(raw.data.X[:, 4:] ** 2, axis=0), 1.0)


def test_r1_trivial_graph_runs():
    g = _graph(30, [[0, 1], [1, 2], [2, 0]], np.random.default_rng(6))
    d = build_design(g, 1)
    assert np.all(np.isfinite(d.data.X))
    rep = analyze_network(g, 1, rng=0)
    assert rep.lower < rep.coefficient < rep.upper


def test_report_odds_ratios():
    rep = NetworkReport("sex", 0.0, -0.5, 0.5, 0.05, [], [], 1.0, 1.0)
    assert rep.odds_ratio == 1.0
    lo, hi = rep.odds_ratio_interval
    assert lo < 1 < hi and math.log(lo) == pytest.approx(-math.log(hi))
    fmt = NetworkReport("sex", -0.8440, -2.81, 1.13, 0.05, ["U1"], [], 1.0, 1.0)
    assert fmt.odds_ratio == pytest.approx(0.43, abs=0.005)
    assert fmt.odds_ratio_interval[0] == pytest.approx(0.06, abs=0.005)
    assert fmt.odds_ratio_interval[1] == pytest.approx(3.1, abs=0.05)
    assert "odds ratio: 0.43 (95% CI 0.0602, 3.096)" in fmt.to_text()


def test_planted_network_focal_interval_contains_one():
    hits = runs = separated = 0
    for s in range(200):
        g = synthetic_graph(150, rng=derive_seed(s, 1))
        try:
            rep = analyze_network(g, 25, rng=s)
        except DegenerateError:  # separated full-model pilot, reported as an error
            separated += 1
            continue
        runs += 1
        lo, hi = rep.odds_ratio_interval
        hits += lo < 1.0 < hi
        assert lo < rep.odds_ratio < hi
    assert separated <= 4
    assert hits / runs >= 0.9


def test_analyze_errors():
    g = _graph(20, [[0, 1]])
    with pytest.raises(PreconditionError):
        analyze_network(g, 1, focal_covariate="income", rng=0)
    bad = Graph(20, [[0, 1]], g.node_covariates, g.covariate_names, np.full(20, 0.5))
    with pytest.raises(PreconditionError):
        analyze_network(bad, 1, rng=0)
    with pytest.raises(PreconditionError):
        Graph(3, [[0, 3]], np.zeros((3, 1)), ["a"], np.zeros(3))


def test_read_graph_one_based(tmp_path):
    (tmp_path / "e.txt").write_text("# edges\n1 2\n2 3\n\n3 1\n", encoding="utf-8")
    (tmp_path / "n.csv").write_text("node,sex,y\n3,1,0\n1,0,1\n2,1,1\n", encoding="utf-8")
    g = read_graph(tmp_path / "e.txt", tmp_path / "n.csv", "y", ["sex"])
    assert g.edges.tolist() == [[0, 1], [1, 2], [2, 0]]
    assert g.outcome.tolist() == [1.0, 1.0, 0.0]
    assert g.node_covariates[:, 0].tolist() == [0.0, 1.0, 1.0]
    (tmp_path / "bad.txt").write_text("1 x\n", encoding="utf-8")
    with pytest.raises(ValueError, match="bad.txt:1"):
        read_graph(tmp_path / "bad.txt", tmp_path / "n.csv", "y", ["sex"])
