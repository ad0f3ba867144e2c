"""Tests for the pairwise objectives.

Gradients are checked against central finite differences in float64;
loss values against independent per-pair reimplementations (plain loops,
no shared code with the module under test).
"""

import math

import numpy as np
import pytest

from hashlearn.errors import ConfigError
from hashlearn.losses import (
    CauchyLoss, SrhParams, cauchy_gradient, cauchy_pairwise_loss,
    cauchy_probability, dsh_gradient, dsh_loss, pair_count,
    pair_squared_distances, srh_gradient, srh_loss, srh_terms,
)


def fd_grad(scalar_fn, x, eps=1e-6):
    g = np.zeros_like(x)
    flat = x.ravel()
    gf = g.ravel()
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + eps
        hi = scalar_fn()
        flat[i] = old - eps
        lo = scalar_fn()
        flat[i] = old
        gf[i] = (hi - lo) / (2 * eps)
    return g


def rel_err(a, b):
    denom = max(np.abs(a).max(), np.abs(b).max(), 1e-12)
    return np.abs(a - b).max() / denom


def random_pair_labels(rng, m):
    y = rng.integers(0, 2, size=(m, m))
    y = np.triu(y, k=1)
    y = y + y.T
    return y


# ---------------------------------------------------------------------------
# pair_squared_distances
# ---------------------------------------------------------------------------

def test_pair_squared_distances_matches_loops():
    rng = np.random.default_rng(3)
    B = rng.standard_normal((7, 4))
    D = pair_squared_distances(B)
    for i in range(7):
        for j in range(7):
            want = np.sum((B[i] - B[j]) ** 2)
            assert np.isclose(D[i, j], want, atol=1e-12)
    assert np.all(D >= 0)


# ---------------------------------------------------------------------------
# srh_loss
# ---------------------------------------------------------------------------

def test_srh_loss_zero_at_perfect_configuration():
    # similar pair sitting exactly on its shadow with row norm^2 = bits
    k = 3
    B = np.ones((2, k))
    U = np.ones((2, k))
    Y = np.zeros((2, 2))
    for alpha, beta in [(0.0, 0.0), (1.0, 0.01), (5.0, 2.0)]:
        p = SrhParams(bits=k, alpha=alpha, beta=beta)
        assert srh_loss(B, U, Y, p) == 0.0


def test_srh_loss_dissimilar_pair_full_margin_violation():
    # identical codes labelled dissimilar: hinge pays margin/2 = 2
    B = np.ones((2, 2))
    U = np.ones((2, 2))
    Y = np.array([[0, 1], [1, 0]])
    p = SrhParams(bits=2, alpha=0.7, beta=0.3)
    assert p.margin == 4.0
    assert srh_loss(B, U, Y, p) == pytest.approx(2.0)


def test_srh_loss_dissimilar_pair_beyond_margin():
    B = np.array([[1.0], [-1.0]])
    U = np.sign(B)
    Y = np.array([[0, 1], [1, 0]])
    p = SrhParams(bits=1, alpha=1.0, beta=1.0)
    assert p.margin == 2.0
    assert srh_loss(B, U, Y, p) == 0.0  # distance 4 clears margin 2


def test_srh_terms_sum_to_loss():
    rng = np.random.default_rng(5)
    B = rng.standard_normal((6, 4))
    U = np.where(rng.random((6, 4)) < 0.5, -1.0, 1.0)
    Y = random_pair_labels(rng, 6)
    p = SrhParams(bits=4, alpha=0.8, beta=0.05)
    pair, shadow, norm = srh_terms(B, U, Y, p)
    assert pair >= 0 and shadow >= 0 and norm >= 0
    assert srh_loss(B, U, Y, p) == pytest.approx(pair + shadow + norm)


def test_srh_loss_matches_pair_loop():
    rng = np.random.default_rng(7)
    m, k = 5, 3
    B = rng.standard_normal((m, k))
    U = np.where(rng.random((m, k)) < 0.5, -1.0, 1.0)
    Y = random_pair_labels(rng, m)
    p = SrhParams(bits=k, alpha=0.4, beta=0.2, margin=5.0)
    want = 0.0
    for i in range(m):
        for j in range(i + 1, m):
            d2 = float(np.sum((B[i] - B[j]) ** 2))
            if Y[i, j] == 0:
                want += 0.5 * d2
            else:
                want += 0.5 * max(p.margin - d2, 0.0)
    for i in range(m):
        want += 0.5 * p.alpha * float(np.sum((B[i] - U[i]) ** 2))
        want += 0.5 * p.beta * (float(np.sum(B[i] ** 2)) - k) ** 2
    assert srh_loss(B, U, Y, p) == pytest.approx(want, rel=1e-12)


def test_srh_loss_nonnegative_sweep():
    rng = np.random.default_rng(11)
    for _ in range(30):
        m = int(rng.integers(2, 8))
        k = int(rng.integers(1, 6))
        B = 2.0 * rng.standard_normal((m, k))
        U = np.where(rng.random((m, k)) < 0.5, -1.0, 1.0)
        Y = random_pair_labels(rng, m)
        p = SrhParams(bits=k, alpha=float(rng.random()),
                      beta=float(rng.random()))
        assert srh_loss(B, U, Y, p) >= 0.0


def test_srh_rejects_bad_shadow_and_labels():
    B = np.ones((2, 2))
    Y = np.zeros((2, 2))
    p = SrhParams(bits=2, alpha=1.0, beta=1.0)
    with pytest.raises(ValueError, match="shadow"):
        srh_loss(B, np.array([[1.0, 0.5], [1.0, 1.0]]), Y, p)
    with pytest.raises(ValueError, match="shape"):
        srh_loss(B, np.ones((3, 2)), Y, p)
    with pytest.raises(ValueError, match="labels"):
        srh_loss(B, np.ones((2, 2)), np.full((2, 2), 2.0), p)


def test_srh_params_validation():
    assert SrhParams(bits=12, alpha=1.0, beta=1.0).margin == 24.0
    with pytest.raises(ConfigError):
        SrhParams(bits=0, alpha=1.0, beta=1.0)
    with pytest.raises(ConfigError):
        SrhParams(bits=2, alpha=-0.1, beta=1.0)
    with pytest.raises(ConfigError):
        SrhParams(bits=2, alpha=1.0, beta=1.0, margin=0.0)


# ---------------------------------------------------------------------------
# srh_gradient
# ---------------------------------------------------------------------------

def test_srh_gradient_zero_at_minimum():
    B = np.ones((2, 3))
    U = np.ones((2, 3))
    Y = np.zeros((2, 2))
    p = SrhParams(bits=3, alpha=2.0, beta=0.5)
    assert np.array_equal(srh_gradient(B, U, Y, p), np.zeros((2, 3)))


def test_srh_gradient_shadow_term_alone():
    # no pairs: only the alpha pull toward the shadow remains
    B = np.array([[0.5]])
    U = np.array([[1.0]])
    Y = np.zeros((1, 1))
    p = SrhParams(bits=1, alpha=1.0, beta=0.0)
    g = srh_gradient(B, U, Y, p)
    assert g == pytest.approx(np.array([[-0.5]]))


def test_srh_gradient_matches_finite_differences():
    rng = np.random.default_rng(13)
    worst = 0.0
    for _ in range(60):
        m = int(rng.integers(2, 9))
        k = int(rng.integers(1, 9))
        B = 1.5 * rng.standard_normal((m, k))
        U = np.where(rng.random((m, k)) < 0.5, -1.0, 1.0)
        Y = random_pair_labels(rng, m)
        p = SrhParams(bits=k, alpha=float(0.1 + rng.random()),
                      beta=float(0.01 + 0.5 * rng.random()),
                      margin=float(0.5 + 3.0 * rng.random()))
        g = srh_gradient(B, U, Y, p)
        num = fd_grad(lambda: srh_loss(B, U, Y, p), B)
        worst = max(worst, rel_err(g, num))
    assert worst < 1e-4


def test_srh_hinge_inactive_at_exact_margin():
    # a dissimilar pair sitting exactly on the margin must not push
    p = SrhParams(bits=1, alpha=0.0, beta=0.0, margin=4.0)
    B = np.array([[1.0], [-1.0]])  # d2 = 4 = margin
    U = np.sign(B)
    Y = np.array([[0, 1], [1, 0]])
    assert np.array_equal(srh_gradient(B, U, Y, p), np.zeros((2, 1)))


def test_losses_permutation_equivariant():
    rng = np.random.default_rng(17)
    m, k = 6, 4
    B = rng.standard_normal((m, k))
    U = np.where(rng.random((m, k)) < 0.5, -1.0, 1.0)
    Y = random_pair_labels(rng, m)
    p = SrhParams(bits=k, alpha=0.5, beta=0.1)
    perm = rng.permutation(m)
    Bp, Up, Yp = B[perm], U[perm], Y[np.ix_(perm, perm)]

    assert srh_loss(Bp, Up, Yp, p) == pytest.approx(srh_loss(B, U, Y, p))
    assert np.allclose(srh_gradient(B, U, Y, p)[perm],
                       srh_gradient(Bp, Up, Yp, p))
    assert dsh_loss(Bp, Yp, 8.0, 0.01) == pytest.approx(
        dsh_loss(B, Y, 8.0, 0.01))
    a = cauchy_pairwise_loss(B, Y, 1.0).value
    b = cauchy_pairwise_loss(Bp, Yp, 1.0).value
    assert a == pytest.approx(b)


def test_pair_count_matches_batch_of_160():
    assert pair_count(160) == 12720
    assert pair_count(2) == 1
    assert pair_count(1) == 0


# ---------------------------------------------------------------------------
# dsh_loss
# ---------------------------------------------------------------------------

def test_dsh_loss_zero_for_aligned_similar_pair():
    B = np.ones((2, 4))
    Y = np.zeros((2, 2))
    assert dsh_loss(B, Y, 8.0, 0.5) == 0.0


def test_dsh_regularizer_counts_full_magnitude_gap():
    # zero codes: each code pays alpha * bits in the single pair
    k, alpha = 3, 0.25
    B = np.zeros((2, k))
    Y = np.zeros((2, 2))
    assert dsh_loss(B, Y, 8.0, alpha) == pytest.approx(2 * alpha * k)


def test_dsh_loss_matches_pair_loop():
    rng = np.random.default_rng(19)
    m, k, margin, alpha = 6, 3, 5.0, 0.1
    B = rng.standard_normal((m, k))
    Y = random_pair_labels(rng, m)
    want = 0.0
    for i in range(m):
        for j in range(i + 1, m):
            d2 = float(np.sum((B[i] - B[j]) ** 2))
            if Y[i, j] == 0:
                want += 0.5 * d2
            else:
                want += 0.5 * max(margin - d2, 0.0)
            want += alpha * float(np.sum(np.abs(np.abs(B[i]) - 1.0)))
            want += alpha * float(np.sum(np.abs(np.abs(B[j]) - 1.0)))
    assert dsh_loss(B, Y, margin, alpha) == pytest.approx(want, rel=1e-12)


def test_dsh_gradient_matches_finite_differences():
    rng = np.random.default_rng(23)
    for _ in range(20):
        m = int(rng.integers(2, 7))
        k = int(rng.integers(1, 5))
        B = rng.standard_normal((m, k))
        # stay away from the subgradient kinks at 0 and +-1
        B = np.where(np.abs(np.abs(B) - 1.0) < 0.05, B * 1.2, B)
        B = np.where(np.abs(B) < 0.05, B + 0.1, B)
        Y = random_pair_labels(rng, m)
        margin = float(0.5 + 3.0 * rng.random())
        alpha = float(0.1 * rng.random())
        g = dsh_gradient(B, Y, margin, alpha)
        num = fd_grad(lambda: dsh_loss(B, Y, margin, alpha), B)
        assert rel_err(g, num) < 1e-4


# ---------------------------------------------------------------------------
# cauchy
# ---------------------------------------------------------------------------

def test_cauchy_probability_anchor_points():
    assert cauchy_probability(0.0, 2.0) == 1.0
    assert cauchy_probability(2.0, 2.0) == 0.5
    assert cauchy_probability(6.0, 2.0) == 0.25


def test_cauchy_probability_range_and_monotonicity():
    rng = np.random.default_rng(29)
    d = np.sort(rng.random(50) * 100)
    p = cauchy_probability(d, 1.5)
    assert np.all(p > 0) and np.all(p <= 1)
    assert np.all(np.diff(p) < 0)


def test_cauchy_probability_rejects_bad_inputs():
    with pytest.raises(ConfigError):
        cauchy_probability(1.0, 0.0)
    with pytest.raises(ValueError):
        cauchy_probability(-0.5, 1.0)


def test_cauchy_similar_coincident_pair_is_free():
    B = np.ones((2, 3))
    Y = np.zeros((2, 2))
    out = cauchy_pairwise_loss(B, Y, 1.0)
    assert isinstance(out, CauchyLoss)
    assert out.value == 0.0
    assert out.clamped_pairs == 0


def test_cauchy_dissimilar_coincident_pair_is_clamped():
    B = np.ones((2, 3))
    Y = np.array([[0, 1], [1, 0]])
    out = cauchy_pairwise_loss(B, Y, 1.0)
    assert out.clamped_pairs == 1
    assert out.value == pytest.approx(-math.log(1e-12))


def test_cauchy_loss_matches_scalar_loop():
    rng = np.random.default_rng(31)
    m, k, gamma = 6, 4, 1.3
    B = rng.standard_normal((m, k))
    Y = random_pair_labels(rng, m)
    W = 0.5 + rng.random((m, m))
    W = (W + W.T) / 2
    want = 0.0
    for i in range(m):
        for j in range(i + 1, m):
            d = float(np.sum((B[i] - B[j]) ** 2)) / 4.0
            sigma = gamma / (gamma + d)
            if Y[i, j] == 0:
                want += W[i, j] * -math.log(max(sigma, 1e-12))
            else:
                want += W[i, j] * -math.log(max(1.0 - sigma, 1e-12))
    got = cauchy_pairwise_loss(B, Y, gamma, weights=W)
    assert got.value == pytest.approx(want, rel=1e-12)


def test_cauchy_gradient_matches_finite_differences():
    rng = np.random.default_rng(37)
    for _ in range(20):
        m = int(rng.integers(2, 7))
        k = int(rng.integers(1, 5))
        B = rng.standard_normal((m, k))
        Y = random_pair_labels(rng, m)
        gamma = float(0.5 + rng.random())
        g = cauchy_gradient(B, Y, gamma)
        num = fd_grad(lambda: cauchy_pairwise_loss(B, Y, gamma).value, B)
        assert rel_err(g, num) < 1e-4
