import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scorethin import (
    BERNOULLI,
    GAUSSIAN,
    POISSON,
    Dataset,
    DegenerateError,
    DomainError,
    PreconditionError,
    get_family,
    hessian,
    loss,
    overdispersion,
    score,
    score_variance,
)
from scorethin.glm import working_variance

from conftest import random_dataset

FAMILIES = [GAUSSIAN, BERNOULLI, POISSON]


# ---------------------------------------------------------------- examples


def test_loss_examples():
    assert loss(GAUSSIAN, Dataset([[1.0]], [0.0]), [0.0]) == 0.0
    assert loss(BERNOULLI, Dataset([[1.0]], [1.0]), [0.0]) == pytest.approx(math.log(2), abs=1e-15)
    assert loss(GAUSSIAN, Dataset([[1.0], [2.0]], [1.0, 1.0]), [1.0]) == pytest.approx(-0.25)


def test_score_examples():
    np.testing.assert_array_equal(score(GAUSSIAN, Dataset([[1.0]], [0.0]), [0.0]), [0.0])
    np.testing.assert_allclose(score(BERNOULLI, Dataset([[1.0]], [1.0]), [0.0]), [-0.5])


def test_hessian_examples(rng):
    X = rng.standard_normal((7, 3))
    H = hessian(GAUSSIAN, Dataset(X, np.zeros(7)), rng.standard_normal(3))
    np.testing.assert_allclose(H, X.T @ X / 7, rtol=1e-14)
    np.testing.assert_allclose(hessian(BERNOULLI, Dataset([[1.0]], [0.0]), [0.0]), [[0.25]])


def test_overdispersion_examples():
    assert overdispersion(POISSON, Dataset([[1.0], [1.0]], [2.0, 0.0]), [0.0]) == pytest.approx(2.0)
    # gaussian: fitted values (0, 0), residuals (1, -1), n - p = 1
    assert overdispersion(GAUSSIAN, Dataset([[1.0], [1.0]], [1.0, -1.0]), [0.0]) == pytest.approx(2.0)


@pytest.mark.parametrize("family", FAMILIES)
def test_overdispersion_zero_residuals(family, rng):
    X = rng.standard_normal((10, 2))
    theta = np.array([0.3, -0.2])
    mu = family.bdot(X @ theta)
    assert overdispersion(family, Dataset(X, mu), theta) == pytest.approx(0.0, abs=1e-28)


def test_overdispersion_denominators_differ_for_bernoulli(rng):
    data, theta = random_dataset(BERNOULLI, 50, 2, rng)
    a = overdispersion(BERNOULLI, data, theta, denominator="bdot")
    b = overdispersion(BERNOULLI, data, theta, denominator="bddot")
    assert a != pytest.approx(b)
    # poisson: bdot == bddot
    data, theta = random_dataset(POISSON, 50, 2, rng)
    assert overdispersion(POISSON, data, theta, "bdot") == overdispersion(POISSON, data, theta, "bddot")


def test_overdispersion_errors():
    with pytest.raises(PreconditionError):
        overdispersion(GAUSSIAN, Dataset([[1.0]], [1.0]), [0.0])
    with pytest.raises(DegenerateError) as info:
        overdispersion(POISSON, Dataset([[1.0], [1.0], [-1.0]], [0.0, 0.0, 1.0]), [40.0])
    assert info.value.row == 2
    with pytest.raises(ValueError):
        overdispersion(POISSON, Dataset([[1.0], [1.0]], [0.0, 1.0]), [0.0], denominator="mean")


def test_score_variance_examples(rng):
    X = rng.standard_normal((9, 3))
    data = Dataset(X, np.zeros(9))
    theta = rng.standard_normal(3)
    np.testing.assert_array_equal(score_variance(GAUSSIAN, data, theta, 0.0).sigma, np.zeros((3, 3)))
    np.testing.assert_allclose(score_variance(GAUSSIAN, data, theta, 2.5).sigma, 2.5 * X.T @ X / 9,
                               rtol=1e-14)
    np.testing.assert_allclose(score_variance(BERNOULLI, Dataset([[1.0]], [0.0]), [0.0], 1.0).sigma,
                               [[0.25]])
    with pytest.raises(PreconditionError):
        score_variance(GAUSSIAN, data, theta, -1.0)


def test_working_variance_is_alpha_times_bddot(rng):
    data, theta = random_dataset(BERNOULLI, 20, 3, rng)
    p = 1 / (1 + np.exp(-(data.X @ theta)))
    np.testing.assert_allclose(working_variance(BERNOULLI, data, theta, 1.7), 1.7 * p * (1 - p))


# ---------------------------------------------------------------- domain and lookup


def test_non_finite_inputs_identify_row():
    with pytest.raises(DomainError) as info:
        Dataset([[1.0], [np.nan]], [0.0, 1.0])
    assert info.value.row == 1
    with pytest.raises(DomainError) as info:
        Dataset([[1.0], [2.0], [3.0]], [0.0, 1.0, np.inf])
    assert info.value.row == 2


def test_shape_errors():
    with pytest.raises(PreconditionError):
        Dataset(np.ones((3, 2)), np.ones(2))
    with pytest.raises(PreconditionError):
        loss(GAUSSIAN, Dataset(np.ones((3, 2)), np.ones(3)), [1.0])


def test_get_family_aliases():
    assert get_family("logistic") is BERNOULLI
    assert get_family("Poisson") is POISSON
    assert get_family(GAUSSIAN) is GAUSSIAN
    with pytest.raises(ValueError):
        get_family("gamma")


def test_bernoulli_accepts_real_outcomes(rng):
    X = rng.standard_normal((30, 2))
    y = rng.standard_normal(30) * 3  # thinned outcomes are not binary
    assert np.isfinite(loss(BERNOULLI, Dataset(X, y), [0.4, -0.1]))


# ---------------------------------------------------------------- invariants


@pytest.mark.parametrize("family", FAMILIES)
def test_cumulant_derivatives_on_grid(family):
    eta = np.linspace(-30, 30, 241)
    for f, df in ((family.b, family.bdot), (family.bdot, family.bddot)):
        h = 1e-6 * (1 + np.abs(eta))
        fd = (f(eta + h) - f(eta - h)) / (2 * h)
        exact = df(eta)
        # 1e-6 relative, plus the cancellation floor of a central difference
        roundoff = 4 * np.finfo(float).eps * np.abs(f(eta)) / h
        assert np.all(np.abs(fd - exact) <= 1e-6 * np.abs(exact) + roundoff)


def test_bernoulli_overflow_safe():
    eta = np.array([-700.0, 700.0, -1e4, 1e4])
    assert np.all(np.isfinite(BERNOULLI.b(eta)))
    assert BERNOULLI.b(np.array([700.0]))[0] == pytest.approx(700.0)
    assert np.all(np.isfinite(BERNOULLI.bddot(eta)))
    assert np.all(np.isfinite(POISSON.b(np.array([700.0, 1e4]))))


@pytest.mark.parametrize("family", FAMILIES)
def test_score_matches_finite_difference(family, rng):
    for _ in range(10):
        data, theta = random_dataset(family, 40, 4, rng)
        theta = theta + rng.standard_normal(4) * 0.3
        s = score(family, data, theta)
        for j in range(4):
            h = 1e-6 * (1 + abs(theta[j]))
            e = np.zeros(4)
            e[j] = h
            fd = (loss(family, data, theta + e) - loss(family, data, theta - e)) / (2 * h)
            assert abs(fd - s[j]) / abs(s[j]) < 1e-6


@pytest.mark.parametrize("family", FAMILIES)
def test_hessian_matches_finite_difference(family, rng):
    data, theta = random_dataset(family, 40, 4, rng)
    H = hessian(family, data, theta)
    for j in range(4):
        h = 1e-6 * (1 + abs(theta[j]))
        e = np.zeros(4)
        e[j] = h
        col = (score(family, data, theta + e) - score(family, data, theta - e)) / (2 * h)
        np.testing.assert_allclose(col, H[:, j], rtol=1e-5)


@settings(max_examples=60, deadline=None)
@given(
    family=st.sampled_from(FAMILIES),
    n=st.integers(1, 30),
    p=st.integers(1, 5),
    seed=st.integers(0, 2**32 - 1),
    scale=st.floats(0.01, 5.0),
)
def test_hessian_psd_and_loss_convex(family, n, p, seed, scale):
    r = np.random.default_rng(seed)
    X = r.standard_normal((n, p)) * scale
    y = r.standard_normal(n)
    data = Dataset(X, y)
    t1, t2 = r.standard_normal(p), r.standard_normal(p)
    H = hessian(family, data, t1)
    assert np.linalg.eigvalsh(H).min() >= -1e-10 * max(np.trace(H), 1e-300)
    t = r.uniform(0.01, 0.99)
    mid = loss(family, data, t * t1 + (1 - t) * t2)
    assert mid <= t * loss(family, data, t1) + (1 - t) * loss(family, data, t2) + 1e-10 * (1 + abs(mid))


def test_y_override_matches_rebuilt_dataset(rng):
    data, theta = random_dataset(POISSON, 25, 3, rng)
    y2 = data.y + 1.0
    assert loss(POISSON, data, theta, y=y2) == loss(POISSON, data.with_outcome(y2), theta)
    np.testing.assert_array_equal(score(POISSON, data, theta, y=y2),
                                  score(POISSON, data.with_outcome(y2), theta))
