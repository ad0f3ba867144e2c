"""Pairwise training objectives over a mini-batch of code vectors.

A batch is an M x k real matrix B whose rows are the network outputs for M
images. Supervision comes as an M x M label matrix Y with y_ij = 0 for
similar pairs and y_ij = 1 for dissimilar pairs; Y is symmetric and the
diagonal is ignored. All pair sums run over the M(M-1)/2 unordered pairs.

Three objectives live here:
  - the shadow-regularized contrastive loss and its analytic gradient
    (the main training objective);
  - a contrastive loss with an L1 pull toward +-1 magnitudes (dsh_*);
  - a Cauchy negative log-likelihood over a squared-distance surrogate
    (cauchy_*).

Gradients are plain functions of the same arguments as their losses and
are finite-difference checked in the tests.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError


@dataclass
class SrhParams:
    """Weights for the shadow-regularized loss.

    margin defaults to 2 * bits, the squared-distance threshold below
    which dissimilar pairs are pushed apart.
    """

    bits: int
    alpha: float
    beta: float
    margin: float | None = None

    def __post_init__(self):
        if self.bits <= 0:
            raise ConfigError(f"bits must be positive, got {self.bits}")
        if self.alpha < 0 or self.beta < 0:
            raise ConfigError(f"alpha and beta must be nonnegative, got "
                              f"alpha={self.alpha} beta={self.beta}")
        if self.margin is None:
            self.margin = 2.0 * self.bits
        if self.margin <= 0:
            raise ConfigError(f"margin must be positive, got {self.margin}")


def _check_labels(B, Y):
    m = B.shape[0]
    Y = np.asarray(Y)
    if Y.shape != (m, m):
        raise ValueError(f"label matrix shape {Y.shape} does not match "
                         f"batch of {m} codes")
    if not np.all((Y == 0) | (Y == 1)):
        raise ValueError("labels must be 0 (similar) or 1 (dissimilar)")
    return Y.astype(B.dtype)


def _check_shadow(B, U):
    U = np.asarray(U)
    if U.shape != B.shape:
        raise ValueError(f"shadow shape {U.shape} does not match batch "
                         f"shape {B.shape}")
    if not np.all(np.abs(U) == 1):
        raise ValueError("shadow entries must be exactly -1 or +1")
    return U.astype(B.dtype)


def pair_squared_distances(B):
    """M x M matrix of squared euclidean distances between rows of B.

    Computed from the expanded product so it costs one GEMM; tiny
    negatives from cancellation are clipped to zero.
    """
    sq = np.sum(B * B, axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (B @ B.T)
    return np.maximum(d2, 0.0)


def srh_terms(B, U, labels, p):
    """The three components of the shadow-regularized loss.

    Returns (pair, shadow, norm):
      pair   = sum over i<j of 1/2 (1-y) d2 + 1/2 y max(margin - d2, 0)
      shadow = alpha/2 * sum_i ||b_i - u_i||^2
      norm   = beta/2 * sum_i (||b_i||^2 - bits)^2
    """
    B = np.asarray(B)
    Y = _check_labels(B, labels)
    U = _check_shadow(B, U)
    iu = np.triu_indices(B.shape[0], k=1)
    d2 = pair_squared_distances(B)[iu]
    y = Y[iu]
    pair = 0.5 * float(np.sum((1.0 - y) * d2)) \
        + 0.5 * float(np.sum(y * np.maximum(p.margin - d2, 0.0)))
    shadow = 0.5 * p.alpha * float(np.sum((B - U) ** 2))
    norm = 0.5 * p.beta * float(np.sum(
        (np.sum(B * B, axis=1) - p.bits) ** 2))
    return pair, shadow, norm


def srh_loss(B, U, labels, p):
    pair, shadow, norm = srh_terms(B, U, labels, p)
    return pair + shadow + norm


def srh_gradient(B, U, labels, p):
    """Analytic gradient of srh_loss with respect to B.

    Row i receives
      sum_{j != i} [(1-y_ij) - y_ij 1{d2_ij < margin}] (b_i - b_j)
      + alpha (b_i - u_i) + 2 beta (||b_i||^2 - bits) b_i.
    The hinge gate is strict, so pairs exactly at the margin contribute
    nothing (consistent with max(., 0) having right-derivative 0 there).
    """
    B = np.asarray(B)
    Y = _check_labels(B, labels)
    U = _check_shadow(B, U)
    d2 = pair_squared_distances(B)
    active = (d2 < p.margin).astype(B.dtype)
    W = (1.0 - Y) - Y * active
    np.fill_diagonal(W, 0.0)
    g = W.sum(axis=1)[:, None] * B - W @ B
    g += p.alpha * (B - U)
    g += 2.0 * p.beta * (np.sum(B * B, axis=1) - p.bits)[:, None] * B
    return g


def dsh_loss(B, labels, margin, alpha):
    """Contrastive loss with an L1 regularizer pulling |b| toward 1.

    Per unordered pair: 1/2 (1-y) d2 + 1/2 y max(margin - d2, 0)
    + alpha (|| |b_i| - 1 ||_1 + || |b_j| - 1 ||_1). The regularizer is
    inside the pair sum, so each code is counted once per pair it joins.
    """
    B = np.asarray(B)
    Y = _check_labels(B, labels)
    m = B.shape[0]
    iu = np.triu_indices(m, k=1)
    d2 = pair_squared_distances(B)[iu]
    y = Y[iu]
    pair = 0.5 * float(np.sum((1.0 - y) * d2)) \
        + 0.5 * float(np.sum(y * np.maximum(margin - d2, 0.0)))
    reg = alpha * (m - 1) * float(np.sum(np.abs(np.abs(B) - 1.0)))
    return pair + reg


def dsh_gradient(B, labels, margin, alpha):
    """Subgradient of dsh_loss; matches finite differences away from the
    hinge boundary and the kinks at b = 0 and |b| = 1 (np.sign gives the
    zero subgradient at those points)."""
    B = np.asarray(B)
    Y = _check_labels(B, labels)
    m = B.shape[0]
    d2 = pair_squared_distances(B)
    active = (d2 < margin).astype(B.dtype)
    W = (1.0 - Y) - Y * active
    np.fill_diagonal(W, 0.0)
    g = W.sum(axis=1)[:, None] * B - W @ B
    g += alpha * (m - 1) * np.sign(B) * np.sign(np.abs(B) - 1.0)
    return g


def cauchy_probability(d, gamma):
    """Similarity probability gamma / (gamma + d), decreasing in d."""
    if gamma <= 0:
        raise ConfigError(f"gamma must be positive, got {gamma}")
    d = np.asarray(d, dtype=float)
    if np.any(d < 0):
        raise ValueError("distances must be nonnegative")
    return gamma / (gamma + d)


CLAMP = 1e-12


@dataclass
class CauchyLoss:
    """Weighted negative log-likelihood plus a clamp diagnostic.

    clamped_pairs counts dissimilar pairs whose probability of being
    dissimilar hit the 1e-12 floor (coincident codes), where the exact
    likelihood would be -log 0.
    """

    value: float
    clamped_pairs: int


def _check_weights(weights, m, iu, B):
    if weights is None:
        return np.ones(len(iu[0]), dtype=B.dtype)
    weights = np.asarray(weights)
    if weights.shape != (m, m):
        raise ValueError(f"weight matrix shape {weights.shape} does not "
                         f"match batch of {m} codes")
    if np.any(weights[iu] <= 0):
        raise ValueError("pair weights must be positive")
    return weights[iu]


def cauchy_pairwise_loss(B, labels, gamma, weights=None):
    """Negative weighted log-likelihood of the pair labels.

    Each pair contributes w * [s (-log sigma) + (1-s)(-log(1-sigma))]
    with sigma = gamma/(gamma + d), d = ||b_i-b_j||^2 / 4, and s = 1 for
    similar pairs. Probabilities are clamped at 1e-12 before the log.
    """
    B = np.asarray(B)
    Y = _check_labels(B, labels)
    m = B.shape[0]
    iu = np.triu_indices(m, k=1)
    y = Y[iu]
    d = 0.25 * pair_squared_distances(B)[iu]  # Hamming distance on +-1
    w = _check_weights(weights, m, iu, B)
    sigma = cauchy_probability(d, gamma)
    s = 1.0 - y
    p_sim = np.maximum(sigma, CLAMP)
    p_dis = np.maximum(1.0 - sigma, CLAMP)
    clamped = int(np.sum((y == 1) & (1.0 - sigma < CLAMP)))
    value = float(np.sum(w * (s * -np.log(p_sim)
                              + (1.0 - s) * -np.log(p_dis))))
    return CauchyLoss(value, clamped)


def cauchy_gradient(B, labels, gamma, weights=None):
    """Gradient of cauchy_pairwise_loss with respect to B.

    d(-log sigma)/dd = 1/(gamma+d); d(-log(1-sigma))/dd = -gamma/(d(gamma+d)).
    The dissimilar branch clamps d away from 0 to mirror the loss clamp.
    """
    B = np.asarray(B)
    Y = _check_labels(B, labels)
    m = B.shape[0]
    d = 0.25 * pair_squared_distances(B)
    if weights is None:
        W = np.ones((m, m), dtype=B.dtype)
    else:
        W = np.asarray(weights).astype(B.dtype)
        if W.shape != (m, m):
            raise ValueError(f"weight matrix shape {W.shape} does not "
                             f"match batch of {m} codes")
    if gamma <= 0:
        raise ConfigError(f"gamma must be positive, got {gamma}")
    s = 1.0 - Y
    d_safe = np.maximum(d, CLAMP)
    dl_dd = s / (gamma + d) - (1.0 - s) * gamma / (d_safe * (gamma + d))
    C = W * dl_dd
    np.fill_diagonal(C, 0.0)
    return 0.5 * (C.sum(axis=1)[:, None] * B - C @ B)


def pair_count(m):
    """Unordered pairs in a batch of m items: m(m-1)/2."""
    return m * (m - 1) // 2
