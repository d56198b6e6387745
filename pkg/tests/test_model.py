import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from pacb.errors import InstabilityError
from pacb.model import (
    ARX,
    CorrelatedGaussian,
    Dataset,
    IIDIsotropic,
    empirical_loss,
    generalization_loss,
    squared_loss,
    v_and_rho_terms,
)

finite = st.floats(-1e6, 1e6, allow_nan=False)


@pytest.mark.parametrize("y_hat,y,expected", [(2, 3, 1), (5, 5, 0), (-1.5, 2.5, 16)])
def test_squared_loss_examples(y_hat, y, expected):
    assert squared_loss(y_hat, y) == expected


@pytest.mark.parametrize("bad", [math.nan, math.inf, -math.inf])
def test_squared_loss_rejects_non_finite(bad):
    with pytest.raises(ValueError):
        squared_loss(bad, 1.0)
    with pytest.raises(ValueError):
        squared_loss(1.0, bad)


@given(finite, finite)
def test_squared_loss_non_negative_and_symmetric(a, b):
    assert squared_loss(a, b) >= 0
    assert squared_loss(a, b) == squared_loss(b, a)


def test_empirical_loss_perfect_fit(rng):
    x = rng.normal(size=(20, 3))
    w = np.array([0.3, -1.0, 2.0])
    assert empirical_loss(w, Dataset(x, x @ w)) == 0.0


def test_empirical_loss_hand_example():
    S = Dataset([[1.0], [2.0]], [1.0, 2.0])
    assert empirical_loss([0.0], S) == 2.5


def test_empirical_loss_matches_naive_loop(rng):
    x = rng.normal(size=(500, 4))
    y = rng.normal(size=500)
    w = rng.normal(size=4)
    naive = 0.0
    for i in range(500):
        pred = sum(w[j] * x[i, j] for j in range(4))
        naive += (y[i] - pred) ** 2
    naive /= 500
    assert empirical_loss(w, Dataset(x, y)) == pytest.approx(naive, rel=1e-12)


def test_empirical_loss_dimension_mismatch():
    with pytest.raises(ValueError):
        empirical_loss([1.0, 2.0], Dataset([[1.0]], [1.0]))


def test_dataset_validation():
    with pytest.raises(ValueError):
        Dataset(np.ones((3, 2)), np.ones(2))
    with pytest.raises(ValueError):
        Dataset(np.ones((1, 2)), [math.nan])
    assert Dataset(np.ones((3, 2)), np.ones(3)).head(2).n == 2


def test_generalization_loss_at_w_star(iid2):
    assert generalization_loss(iid2.w_star, iid2) == 0.25


def test_generalization_loss_hand_example():
    m = IIDIsotropic([1.0], 1.0, 0.5)
    assert generalization_loss([0.0], m) == 1.25


def test_correlated_with_isotropic_q_matches_iid(rng):
    m = IIDIsotropic([1.0, -0.5, 2.0], 1.7, 0.3)
    c = CorrelatedGaussian(m.w_star, 1.7**2 * np.eye(3), 0.3)
    for _ in range(20):
        w = rng.normal(size=3)
        assert generalization_loss(w, c) == generalization_loss(w, m)


def test_generalization_loss_errors(iid2):
    with pytest.raises(ValueError):
        generalization_loss([1.0], iid2)
    with pytest.raises(InstabilityError):
        generalization_loss([0.0, 0.0], ARX((1.0,), (0.0,), 1.0, 1.0))


def test_v_and_rho_examples(iid2, rng):
    assert v_and_rho_terms(iid2.w_star, iid2, 0.7) == (0.25, 0.25)
    w = rng.normal(size=2)
    v, r = v_and_rho_terms(w, iid2, iid2.sigma_x**2)
    assert v == r
    with pytest.raises(ValueError):
        v_and_rho_terms(w, iid2, -0.1)


def test_rho_term_below_v_under_eigen_floor(rng):
    Q = np.array([[2.0, 0.6], [0.6, 1.0]])
    m = CorrelatedGaussian([0.5, 1.0], Q, 0.4)
    floor = np.linalg.eigvalsh(Q)[0]
    W = rng.normal(0, 3, size=(10_000, 2))
    for w in W[:200]:
        v, r = v_and_rho_terms(w, m, 0.9 * floor)
        u = w - m.w_star
        assert v == pytest.approx(u @ Q @ u + 0.16, rel=1e-14)
        assert r == pytest.approx(0.9 * floor * (u @ u) + 0.16, rel=1e-14)
        assert r < v
    U = W - m.w_star
    v_all = np.einsum("ij,jk,ik->i", U, Q, U) + 0.16
    r_all = floor * np.sum(U * U, axis=1) + 0.16
    assert np.all(r_all <= v_all + 1e-12)


@given(st.lists(st.floats(-50, 50), min_size=2, max_size=2), st.floats(0.1, 5), st.floats(0.05, 3))
def test_generalization_loss_properties(w, sx, se):
    m = IIDIsotropic([0.3, -1.2], sx, se)
    w = np.array(w)
    g = generalization_loss(w, m)
    assert g >= se**2
    assert generalization_loss(2 * m.w_star - w, m) == pytest.approx(g, rel=1e-12)
    if np.any(w != m.w_star):
        assert g > se**2 or sx**2 * np.sum((w - m.w_star) ** 2) < 1e-300


@given(st.lists(st.floats(-10, 10), min_size=2, max_size=2))
def test_correlated_quadratic_form_positive_definite(w):
    m = CorrelatedGaussian([1.0, 2.0], [[1.0, 0.8], [0.8, 1.0]], 0.5)
    w = np.array(w)
    q = generalization_loss(w, m) - 0.25
    if np.allclose(w, m.w_star, atol=1e-8):
        assert abs(q) < 1e-12
    else:
        assert q > 0


def test_empirical_loss_non_negative(rng):
    for _ in range(50):
        x = rng.normal(size=(10, 2))
        assert empirical_loss(rng.normal(size=2), Dataset(x, rng.normal(size=10))) >= 0


def test_arx_stability_margin():
    assert ARX((0.5,), (0.1,), 1, 1).is_stable()
    assert not ARX((1.0 - 1e-10,), (0.0,), 1, 1).is_stable()
    assert not ARX((0.5, 0.6), (0.0, 0.0), 1, 1).is_stable()  # root outside the disc
    with pytest.raises(ValueError):
        ARX((0.5,), (0.1, 0.2), 1, 1)
    with pytest.raises(ValueError):
        ARX((0.5,), (0.1,), 0.0, 1)


def test_arx_weights_and_dimension():
    m = ARX((0.5, -0.2), (0.3, 0.1), 1.0, 2.0)
    assert m.d == 4
    np.testing.assert_array_equal(m.w_star, [0.5, -0.2, 0.3, 0.1])
