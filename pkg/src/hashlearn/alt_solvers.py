"""Alternating solvers that pair with or replace the shadow trainer.

Two procedures live here. The asymmetric solver (ADSH style) learns a
tanh-head network for queries while the database codes V stay discrete,
alternating SGD on the network with an exact per-column update of V.
The factorization solver (CNNH stage one) skips networks entirely and
fits codes H in [-1,1]^{n x q} so that (1/q) H H^T reproduces a signed
similarity matrix, by cyclic exact single-entry minimization.

Both are deterministic under a fixed seed, and both expose their
objective so tests can assert the promised monotonicity.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data_cifar import SimilarityOracle
from .errors import ConfigError
from .shadow_optimizer import _checked_step, sign_pm
from .tensor_nn import SGD, forward_in_batches, hash_net, xavier_init


def _check_pm_one(M, name):
    M = np.asarray(M)
    if not np.all(np.abs(M) == 1):
        raise ValueError(f"{name} entries must be exactly -1 or +1")
    return M.astype(np.float64)


def check_sign_similarity(S):
    """Validate a +-1 similarity matrix: symmetric, +1 diagonal."""
    S = _check_pm_one(S, "similarity")
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise ValueError(f"similarity must be square, got {S.shape}")
    if not np.array_equal(S, S.T):
        raise ValueError("similarity must be symmetric")
    if not np.all(np.diag(S) == 1):
        raise ValueError("similarity diagonal must be +1")
    return S


# ---------------------------------------------------------------------------
# Asymmetric solver
# ---------------------------------------------------------------------------

def _check_adsh_shapes(Utilde, V, S, c, query_rows):
    Utilde = np.asarray(Utilde, dtype=np.float64)
    if Utilde.ndim != 2:
        raise ValueError(f"query outputs must be 2-D, got {Utilde.shape}")
    m, width = Utilde.shape
    if width != c:
        raise ValueError(f"code length mismatch: c={c} but outputs "
                         f"have {width} columns")
    if not np.all(np.isfinite(Utilde)) or np.any(np.abs(Utilde) > 1):
        raise ValueError("query outputs must lie in [-1, 1]")
    if V.shape[1] != c:
        raise ValueError(f"database codes have {V.shape[1]} columns, "
                         f"expected {c}")
    n = V.shape[0]
    if S.shape != (m, n):
        raise ValueError(f"similarity shape {S.shape} does not match "
                         f"{m} queries x {n} database items")
    if query_rows is None:
        query_rows = np.arange(m)
    query_rows = np.asarray(query_rows)
    if query_rows.shape != (m,) or np.any(query_rows < 0) \
            or np.any(query_rows >= n):
        raise ValueError("query_rows must give one database row per query")
    return Utilde, query_rows


def adsh_objective(Utilde, V, S, c, gamma, query_rows=None):
    """Asymmetric fitting objective between query outputs and codes.

    sum over (query i, database j) of (u_i . v_j - c S_ij)^2, plus
    gamma * sum over queries of ||v_at(i) - u_i||^2, where at(i) is the
    database row holding query i (row i itself by default).
    """
    V = _check_pm_one(V, "database codes")
    S = _check_pm_one(S, "similarity")
    Utilde, query_rows = _check_adsh_shapes(Utilde, V, S, c, query_rows)
    fit = Utilde @ V.T - c * S
    tie = V[query_rows] - Utilde
    return float(np.sum(fit * fit) + gamma * np.sum(tie * tie))


def adsh_solve_column(Utilde, V, S, gamma, k, query_rows=None):
    """Exact conditional minimizer of code column k, the rest held fixed.

    The new column is -sign(2 V_k' (U_k'^T U_k) + Q_k) where the primed
    matrices drop column k and Q = -2c S^T U - 2 gamma P^T U (P selects
    the database rows that hold queries). Ties at zero resolve to -1.
    """
    V = _check_pm_one(V, "database codes")
    S = _check_pm_one(S, "similarity")
    c = V.shape[1]
    Utilde, query_rows = _check_adsh_shapes(Utilde, S=S, V=V, c=c,
                                            query_rows=query_rows)
    if not 0 <= k < c:
        raise ValueError(f"column index {k} outside 0..{c - 1}")
    PtU_k = np.zeros(V.shape[0])
    PtU_k[query_rows] = Utilde[:, k]
    Q_k = -2.0 * c * (S.T @ Utilde[:, k]) - 2.0 * gamma * PtU_k
    rest = np.delete(np.arange(c), k)
    coupling = V[:, rest] @ (Utilde[:, rest].T @ Utilde[:, k])
    return -sign_pm(2.0 * coupling + Q_k)


def adsh_update_V(Utilde, S, gamma, V_init, query_rows=None):
    """One cyclic pass of exact column refreshes over the database codes.

    Each column moves to its conditional minimizer, so the objective
    cannot rise; that is asserted per column.
    """
    V = _check_pm_one(V_init, "database codes").copy()
    S = _check_pm_one(S, "similarity")
    c = V.shape[1]
    Utilde, query_rows = _check_adsh_shapes(Utilde, S=S, V=V, c=c,
                                            query_rows=query_rows)
    before = adsh_objective(Utilde, V, S, c, gamma, query_rows)
    for k in range(c):
        V[:, k] = adsh_solve_column(Utilde, V, S, gamma, k, query_rows)
        after = adsh_objective(Utilde, V, S, c, gamma, query_rows)
        assert after <= before + 1e-9 + 1e-12 * abs(before), \
            f"objective rose on column {k}: {before} -> {after}"
        before = after
    return V


@dataclass
class AdshConfig:
    """Knobs for the alternating asymmetric run."""

    bits: int = 12
    gamma: float = 200.0
    alternations: int = 5
    epochs: int = 3
    batch_size: int = 32
    lr: float = 1e-3
    momentum: float = 0.9
    weight_decay: float = 0.004
    seed: int = 0

    def __post_init__(self):
        if self.bits < 1:
            raise ConfigError(f"bits must be >= 1, got {self.bits}")
        if self.gamma < 0:
            raise ConfigError(f"gamma must be >= 0, got {self.gamma}")
        for field in ("alternations", "epochs", "batch_size"):
            if getattr(self, field) < 1:
                raise ConfigError(f"{field} must be >= 1, "
                                  f"got {getattr(self, field)}")
        if self.lr <= 0:
            raise ConfigError(f"learning rate must be positive, "
                              f"got {self.lr}")


@dataclass
class AdshStats:
    alternation: int
    after_net: float
    after_codes: float


@dataclass
class AdshResult:
    net: object
    V: np.ndarray
    trace: list


def adsh_train(query_set, database_labels, cfg, query_rows=None):
    """Alternate network SGD and exact code refreshes.

    query_set is a LabeledImageSet of the sampled queries; they occupy
    database rows query_rows (rows 0..m-1 by default). database_labels
    covers the whole database and defines the +-1 similarity against the
    query labels. Batch losses are divided by (batch size x database
    size), the pair-count convention the shadow trainer uses.
    """
    m = len(query_set)
    n = len(database_labels)
    if m == 0 or n == 0:
        raise ConfigError("need at least one query and one database item")
    if query_rows is None:
        query_rows = np.arange(m)
    query_rows = np.asarray(query_rows)

    S = SimilarityOracle(query_set.labels, database_labels) \
        .s(np.arange(m), np.arange(n)).astype(np.float64)
    c = cfg.bits

    root = np.random.SeedSequence(cfg.seed)
    init_stream, shuffle_stream, codes_stream = root.spawn(3)
    net = xavier_init(hash_net(c, tanh_head=True), init_stream)
    opt = SGD(cfg.lr, cfg.momentum, cfg.weight_decay)
    shuffle_rng = np.random.default_rng(shuffle_stream)
    V = np.random.default_rng(codes_stream) \
        .choice([-1.0, 1.0], size=(n, c))

    images = query_set.images

    def full_outputs():
        return forward_in_batches(net, images, cfg.batch_size).astype(
            np.float64)

    trace = []
    for alternation in range(1, cfg.alternations + 1):
        for epoch in range(1, cfg.epochs + 1):
            order = shuffle_rng.permutation(m)
            for bi, start in enumerate(range(0, m, cfg.batch_size)):
                batch = order[start:start + cfg.batch_size]
                scale = 1.0 / (len(batch) * n)
                Ub = net.forward(images[batch]).astype(np.float64)
                fit = Ub @ V.T - c * S[batch]
                tie = Ub - V[query_rows[batch]]
                loss = np.sum(fit * fit) + cfg.gamma * np.sum(tie * tie)
                dU = 2.0 * fit @ V + 2.0 * cfg.gamma * tie
                net.backward(scale * dU)
                _checked_step(net, opt, np.array([scale * loss, 0.0, 0.0]),
                              epoch, bi)
        after_net = adsh_objective(full_outputs(), V, S, c, cfg.gamma,
                                   query_rows)
        V = adsh_update_V(full_outputs(), S, cfg.gamma, V, query_rows)
        after_codes = adsh_objective(full_outputs(), V, S, c, cfg.gamma,
                                     query_rows)
        trace.append(AdshStats(alternation, after_net, after_codes))
    return AdshResult(net, V, trace)


# ---------------------------------------------------------------------------
# Similarity factorization
# ---------------------------------------------------------------------------

def factorization_error(S, H, q):
    """||S - (1/q) H H^T||_F^2."""
    R = S - (H @ H.T) / q
    return float(np.sum(R * R))


def _best_entry_value(p, r, fn):
    """Minimize the entry's quartic slice: its stationary points are the
    real roots of h^3 + p h + r = 0; compare them with the box ends."""
    roots = np.roots([1.0, 0.0, p, r])
    real = roots[np.abs(roots.imag) <= 1e-9 * np.maximum(
        1.0, np.abs(roots.real))].real
    candidates = [-1.0, 1.0] + sorted(float(h) for h in real
                                      if -1.0 < h < 1.0)
    candidates.sort()
    values = [fn(h) for h in candidates]
    return candidates[int(np.argmin(values))]


def cnnh_factorize(S, q, sweeps, seed, track_errors=False):
    """Fit codes H so (1/q) H H^T approximates the signed similarity.

    Cyclic coordinate descent in row-major entry order: each H_ij moves
    to the exact minimizer of the objective over [-1, 1] with every
    other entry fixed (ties resolved toward the smaller value), so the
    reconstruction error never increases. Gram products are updated
    incrementally. With track_errors the per-entry error history is
    returned alongside H.
    """
    S = check_sign_similarity(S)
    n = S.shape[0]
    if q < 1:
        raise ConfigError(f"bits must be >= 1, got {q}")
    if sweeps < 0:
        raise ConfigError(f"sweeps must be >= 0, got {sweeps}")
    rng = np.random.default_rng(seed)
    H = rng.uniform(-1.0, 1.0, size=(n, q))
    G = H @ H.T
    errors = []
    for _ in range(sweeps):
        for i in range(n):
            for j in range(q):
                h_old = H[i, j]
                col = H[:, j]
                # costs along row i with the (i,j) contribution removed
                a = G[i] - h_old * col
                a[i] = G[i, i] - h_old * h_old
                c_vec = S[i] - a / q
                b = col / q
                off = np.ones(n, dtype=bool)
                off[i] = False
                p_coef = q * q * float(b[off] @ b[off]) - q * c_vec[i]
                r_coef = -q * q * float(b[off] @ c_vec[off])

                def slice_cost(h):
                    fit = c_vec[off] - b[off] * h
                    return 2.0 * float(fit @ fit) \
                        + (c_vec[i] - h * h / q) ** 2

                h_new = _best_entry_value(p_coef, r_coef, slice_cost)
                H[i, j] = h_new
                G[i] = a + h_new * col
                G[:, i] = G[i]
                G[i, i] = a[i] + h_new * h_new
                if track_errors:
                    errors.append(factorization_error(S, H, q))
    if track_errors:
        return H, np.array(errors)
    return H
