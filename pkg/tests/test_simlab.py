import math

import numpy as np
import pytest

from scorethin import BERNOULLI, ConfigError, Dataset, PenalizedProblem, solve_submodel
from scorethin.simlab import (
    ReplicationMetrics,
    SimScenario,
    _split_rows,
    aggregate,
    draw_replication,
    fdr,
    gen_design,
    gen_outcomes,
    gen_truth,
    replication_rows,
    run_method,
    run_scenario,
    submodel_target,
)
from scorethin.thinning import make_rng


def test_design_independent_columns():
    n = 4000
    X = gen_design(n, 5, 0.0, 1)
    C = np.corrcoef(X.T)
    assert np.max(np.abs(C[np.triu_indices(5, 1)])) < 4 / math.sqrt(n)


def test_design_equicorrelation_and_variance():
    X = gen_design(100_000, 6, 0.3, 2)
    C = np.corrcoef(X.T)
    assert np.mean(C[np.triu_indices(6, 1)]) == pytest.approx(0.3, abs=0.01)
    np.testing.assert_allclose(X.var(axis=0), 1.0, rtol=0.05)


def test_truth_sparsity():
    np.testing.assert_array_equal(gen_truth(8, 0, 0.5, 0), np.zeros(8))
    t = gen_truth(8, 8, 0.5, 0)
    assert np.all(t != 0) and set(np.abs(t)) == {0.5}
    assert np.count_nonzero(gen_truth(40, 10, 0.2, 1)) == 10


def test_logistic_null_mean():
    n = 20_000
    sc = SimScenario(kind="logistic", n=n)
    y, ids = gen_outcomes(sc, np.zeros((n, 3)), np.zeros(3), 3)
    assert ids is None
    assert abs(y.mean() - 0.5) < 4 / math.sqrt(n)


def test_clustered_error_structure():
    m, n = 10, 100_000
    sc = SimScenario(kind="clustered", n=n, cluster_size=m)
    y, ids = gen_outcomes(sc, np.zeros((n, 1)), np.zeros(1), 4)
    assert np.array_equal(ids, np.repeat(np.arange(n // m), m))
    R = y.reshape(-1, m)
    within = np.mean(R[:, 0] * R[:, 1])
    across = np.mean(R[:-1, 0] * R[1:, 0])
    assert within == pytest.approx(0.5, abs=0.03)
    assert abs(across) < 0.03
    assert y.var() == pytest.approx(1.0, rel=0.05)  # 0.5 cluster + 0.5 Laplace


def test_laplace_component_variance():
    eps = make_rng(5).laplace(0.0, 0.5, size=100_000)
    assert eps.var() == pytest.approx(0.5, rel=0.05)


def test_fdr():
    assert fdr({1, 2, 3}, {1, 2, 5, 7}) == pytest.approx(1 / 3)
    assert fdr((), {1}) == 0.0
    assert fdr([4], [4]) == 0.0


def test_scenario_validation():
    with pytest.raises(ConfigError):
        SimScenario(kind="probit")
    with pytest.raises(ConfigError):
        SimScenario(kind="clustered", n=105, cluster_size=10)
    with pytest.raises(ConfigError):
        SimScenario.from_dict({"kind": "logistic", "rows": 5})
    assert SimScenario(kind="logistic").signal_amplitude == 0.2


def test_split_rows_disjoint_and_cluster_level():
    sc = SimScenario(kind="clustered", n=200, cluster_size=10)
    rep = draw_replication(sc, 0)
    a, b = _split_rows(sc, rep.data, make_rng(0))
    assert set(a).isdisjoint(b) and len(a) + len(b) == 200
    ids = rep.data.cluster_ids
    assert set(ids[a]).isdisjoint(ids[b])
    sc2 = SimScenario(n=101)
    a, b = _split_rows(sc2, draw_replication(sc2, 0).data, make_rng(0))
    assert len(a) == 50 and len(b) == 51 and set(a).isdisjoint(b)


def test_degenerate_split_is_skipped():
    sc = SimScenario(n=2, p=1, n_nonzero=1, replications=1)
    m = run_method("splitting", sc, draw_replication(sc, 0), seed=0)
    assert m.skipped and m.error
    row = aggregate([m])[0]
    assert row["skipped"] == 1 and row["completed"] == 0


def test_aggregate_single_replication_all_covered():
    m = ReplicationMetrics("thinning", (1, 2), np.array([True, True]), np.array([0.2, 0.4]),
                           0.5, False, scenario="s", n=10)
    row = aggregate([m])[0]
    assert row["coverage"] == 1.0 and row["n_indicators"] == 2
    assert row["mean_width"] == pytest.approx(0.3) and row["mean_fdr"] == 0.5


def test_aggregate_fdr_counts_empty_selections():
    full = ReplicationMetrics("thinning", (1,), np.array([False]), np.array([1.0]), 1.0, False,
                              scenario="s", n=10)
    empty = ReplicationMetrics("thinning", (), np.zeros(0, bool), np.zeros(0), 0.0, True,
                               scenario="s", n=10)
    row = aggregate([full, empty])[0]
    assert row["mean_fdr"] == 0.5 and row["no_selection_rate"] == 0.5 and row["coverage"] == 0.0


def test_logistic_target_matches_package_solver():
    sc = SimScenario(kind="logistic", n=300)
    rep = draw_replication(sc, 1)
    E = np.array([0, 3, 7])
    t = submodel_target("logistic", rep.data.X, rep.mu, E)
    ref = solve_submodel(PenalizedProblem(BERNOULLI, Dataset(rep.data.X, rep.mu), support=E))
    np.testing.assert_allclose(t, ref.theta[E], atol=1e-6)


def test_reproducible_and_thread_independent():
    sc = SimScenario(kind="linear_gaussian", n=100, p=10, n_nonzero=3, replications=4,
                     signal_amplitude=0.5, master_seed=9)
    a = aggregate(run_scenario(sc))
    b = aggregate(run_scenario(sc, jobs=3))
    assert repr(a) == repr(b)  # repr compares NaN fields as equal
    rows = replication_rows(run_scenario(sc, methods=["classical"]))
    assert {r["method"] for r in rows} == {"classical"}


def test_fdr_depends_only_on_selection():
    base = dict(kind="logistic", n=200, p=10, n_nonzero=3, replications=3, signal_amplitude=0.6)
    a = run_scenario(SimScenario(alpha=0.1, **base), methods=["thinning"])
    b = run_scenario(SimScenario(alpha=0.3, **base), methods=["thinning"])
    assert [m.fdr for m in a] == [m.fdr for m in b]
    assert any(not np.array_equal(x.widths, y.widths) for x, y in zip(a, b) if x.widths.size)
