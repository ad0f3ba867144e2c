"""Tests for the asymmetric solver and the similarity factorization.

Closed-form updates are checked against exhaustive enumeration over all
+-1 code matrices (instances kept small enough for 2^(n*c) search).
"""

import itertools

import numpy as np
import pytest

from hashlearn.alt_solvers import (
    AdshConfig, adsh_objective, adsh_train, adsh_update_V,
    check_sign_similarity, cnnh_factorize, factorization_error,
)
from hashlearn.data_cifar import LabeledImageSet, SimilarityOracle
from hashlearn.errors import ConfigError
from hashlearn.retrieval import binarize_and_pack, hamming
from hashlearn.shadow_optimizer import sign_pm


def naive_adsh_objective(U, V, S, c, gamma, query_rows):
    total = 0.0
    for i in range(U.shape[0]):
        for j in range(V.shape[0]):
            total += (float(U[i] @ V[j]) - c * S[i, j]) ** 2
        total += gamma * float(np.sum((V[query_rows[i]] - U[i]) ** 2))
    return total


def all_sign_matrices(n, c):
    for flat in itertools.product((-1.0, 1.0), repeat=n * c):
        yield np.array(flat).reshape(n, c)


def labels_similarity(labels):
    return SimilarityOracle(labels).s(np.arange(len(labels))).astype(float)


# ---------------------------------------------------------------------------
# objective
# ---------------------------------------------------------------------------

def test_objective_perfect_agreement_is_near_zero():
    c = 3
    U = np.full((1, c), 1.0 - 1e-9)
    V = np.ones((1, c))
    S = np.ones((1, 1))
    assert adsh_objective(U, V, S, c, gamma=1.0) < 1e-12


def test_objective_zero_outputs_counts_pairs():
    c = 4
    U = np.zeros((3, c))
    V = sign_pm(np.ones((5, c)))
    rng = np.random.default_rng(31)
    S = np.where(rng.random((3, 5)) < 0.5, -1.0, 1.0)
    got = adsh_objective(U, V, S, c, gamma=0.0)
    assert np.isclose(got, c * c * 15)


def test_objective_matches_double_loop():
    rng = np.random.default_rng(32)
    U = rng.uniform(-1, 1, size=(4, 3))
    V = sign_pm(rng.standard_normal((6, 3)))
    S = np.where(rng.random((4, 6)) < 0.5, -1.0, 1.0)
    rows = np.array([2, 0, 5, 3])
    got = adsh_objective(U, V, S, 3, gamma=0.7, query_rows=rows)
    want = naive_adsh_objective(U, V, S, 3, 0.7, rows)
    assert np.isclose(got, want, rtol=1e-12)


def test_objective_rejects_bad_shapes():
    U = np.zeros((2, 3))
    V = np.ones((4, 3))
    with pytest.raises(ValueError):
        adsh_objective(U, V, np.ones((2, 5)), 3, 1.0)
    with pytest.raises(ValueError):
        adsh_objective(U, np.ones((4, 2)), np.ones((2, 4)), 3, 1.0)
    with pytest.raises(ValueError):
        adsh_objective(2 * U + 5, V, np.ones((2, 4)), 3, 1.0)


# ---------------------------------------------------------------------------
# code update
# ---------------------------------------------------------------------------

def test_update_aligned_scalar():
    V = adsh_update_V(np.array([[0.9]]), np.array([[1.0]]), gamma=1.0,
                      V_init=np.array([[-1.0]]))
    assert V[0, 0] == 1.0


def test_update_antialigned_flips_negative():
    U = np.full((2, 2), 0.8)
    S = -np.ones((2, 3))
    V = adsh_update_V(U, S, gamma=0.0, V_init=np.ones((3, 2)),
                      query_rows=np.array([0, 1]))
    assert np.all(V == -1.0)


def test_update_reaches_exhaustive_optimum_or_stalls_coordinatewise():
    rng = np.random.default_rng(33)
    for trial in range(6):
        n, c = int(rng.integers(2, 6)), int(rng.integers(1, 4))
        m = int(rng.integers(1, n + 1))
        U = rng.uniform(-1, 1, size=(m, c))
        S = np.where(rng.random((m, n)) < 0.5, -1.0, 1.0)
        gamma = float(rng.uniform(0, 2))
        rows = rng.choice(n, size=m, replace=False)
        V0 = sign_pm(rng.standard_normal((n, c)))
        V = adsh_update_V(U, S, gamma, V0, query_rows=rows)
        got = adsh_objective(U, V, S, c, gamma, rows)

        best = min(adsh_objective(U, W, S, c, gamma, rows)
                   for W in all_sign_matrices(n, c))
        if got > best + 1e-9:
            # a stalled sweep must still be columnwise unimprovable
            for k in range(c):
                for column in itertools.product((-1.0, 1.0), repeat=n):
                    W = V.copy()
                    W[:, k] = column
                    alt = adsh_objective(U, W, S, c, gamma, rows)
                    assert got <= alt + 1e-9


def test_update_with_huge_gamma_copies_query_signs():
    rng = np.random.default_rng(34)
    U = rng.uniform(-1, 1, size=(3, 4))
    S = np.where(rng.random((3, 6)) < 0.5, -1.0, 1.0)
    rows = np.array([1, 4, 2])
    V = adsh_update_V(U, S, gamma=1e9, V_init=sign_pm(
        rng.standard_normal((6, 4))), query_rows=rows)
    assert np.array_equal(V[rows], sign_pm(U))


# ---------------------------------------------------------------------------
# alternating training
# ---------------------------------------------------------------------------

def tiny_image_set(rng, labels, shade_by_label):
    labels = np.asarray(labels)
    images = np.empty((len(labels), 3, 32, 32), dtype=np.float32)
    for i, lab in enumerate(labels):
        base = shade_by_label[int(lab)]
        images[i] = base + rng.normal(0, 0.02, size=(3, 32, 32))
    return LabeledImageSet(np.clip(images, 0, 1), labels.astype(np.int64))


def test_adsh_objective_decreases_on_degenerate_data():
    rng = np.random.default_rng(35)
    queries = tiny_image_set(rng, [0] * 8, {0: 0.5})
    cfg = AdshConfig(bits=4, gamma=1.0, alternations=4, epochs=2,
                     batch_size=4, lr=1e-3, seed=3)
    result = adsh_train(queries, queries.labels, cfg)
    values = [t.after_codes for t in result.trace]
    assert all(b <= a + 1e-9 for a, b in zip(values, values[1:]))


def test_adsh_separates_two_classes():
    rng = np.random.default_rng(36)
    labels = [0, 1] * 8
    queries = tiny_image_set(rng, labels, {0: 0.25, 1: 0.75})
    cfg = AdshConfig(bits=8, gamma=10.0, alternations=6, epochs=3,
                     batch_size=8, lr=2e-3, seed=4)
    result = adsh_train(queries, queries.labels, cfg)
    codes = binarize_and_pack(result.V)
    same, cross = [], []
    for i in range(len(labels)):
        for j in range(i + 1, len(labels)):
            d = hamming(codes.row(i), codes.row(j))
            (same if labels[i] == labels[j] else cross).append(d)
    assert np.mean(same) < np.mean(cross)


def test_adsh_config_rejects_bad_values():
    with pytest.raises(ConfigError):
        AdshConfig(bits=0)
    with pytest.raises(ConfigError):
        AdshConfig(gamma=-1.0)
    with pytest.raises(ConfigError):
        AdshConfig(alternations=0)
    with pytest.raises(ConfigError):
        AdshConfig(lr=0.0)


# ---------------------------------------------------------------------------
# similarity validation
# ---------------------------------------------------------------------------

def test_sign_similarity_validation():
    good = labels_similarity([0, 1, 0])
    assert np.array_equal(check_sign_similarity(good), good)
    with pytest.raises(ValueError):
        check_sign_similarity(np.array([[1.0, 0.5], [0.5, 1.0]]))
    with pytest.raises(ValueError):
        check_sign_similarity(np.array([[1.0, 1.0], [-1.0, 1.0]]))
    with pytest.raises(ValueError):
        check_sign_similarity(np.array([[-1.0, 1.0], [1.0, -1.0]]))


# ---------------------------------------------------------------------------
# factorization
# ---------------------------------------------------------------------------

def test_factorize_one_class_is_exact():
    S = np.ones((5, 5))
    H = cnnh_factorize(S, q=1, sweeps=5, seed=0)
    assert np.all(np.abs(H) == 1.0)
    assert np.all(H == H[0, 0])
    assert factorization_error(S, H, 1) == 0.0


def test_factorize_two_classes_is_exact():
    S = np.array([[1.0, -1.0], [-1.0, 1.0]])
    H = cnnh_factorize(S, q=1, sweeps=5, seed=1)
    assert np.all(np.abs(H) == 1.0)
    assert H[0, 0] == -H[1, 0]
    assert factorization_error(S, H, 1) == 0.0


def test_factorize_error_never_increases():
    rng = np.random.default_rng(37)
    labels = rng.integers(0, 3, size=6)
    S = labels_similarity(labels)
    _, errors = cnnh_factorize(S, q=2, sweeps=3, seed=2,
                               track_errors=True)
    assert all(b <= a + 1e-9 for a, b in zip(errors, errors[1:]))


def test_factorize_close_to_exhaustive_optimum():
    rng = np.random.default_rng(38)
    for trial in range(4):
        n = int(rng.integers(4, 7))
        q = int(rng.integers(1, 3))
        labels = rng.integers(0, 3, size=n)
        S = labels_similarity(labels)
        H = cnnh_factorize(S, q=q, sweeps=8, seed=trial)
        got = factorization_error(S, sign_pm(H), q)
        best = min(factorization_error(S, W, q)
                   for W in all_sign_matrices(n, q))
        if best == 0.0:
            assert got <= 1e-9
        else:
            assert got <= 1.05 * best


def test_factorize_objective_symmetric_under_column_flip():
    rng = np.random.default_rng(39)
    S = labels_similarity(rng.integers(0, 2, size=5))
    H = rng.uniform(-1, 1, size=(5, 3))
    flipped = H.copy()
    flipped[:, 1] *= -1
    assert np.isclose(factorization_error(S, H, 3),
                      factorization_error(S, flipped, 3), rtol=1e-12)


def test_factorize_deterministic_under_seed():
    S = labels_similarity([0, 1, 1, 0, 2])
    a = cnnh_factorize(S, q=2, sweeps=2, seed=9)
    b = cnnh_factorize(S, q=2, sweeps=2, seed=9)
    assert np.array_equal(a, b)
