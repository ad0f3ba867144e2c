"""Bit-packed binary codes, Hamming scan, ranking, and retrieval metrics.

Real-valued code matrices are binarized by sign (sign(0) = +1, the same
convention the shadow codes use) and packed 64 bits to a word, low bit
first: bit j of code i lands in word j // 64 at position j % 64. Padding
bits above k are kept at zero so a word-level XOR + popcount over the
whole row is exactly the Hamming distance.

Retrieval is a linear scan over the packed database. Rankings order by
(distance, database id); the id tiebreak keeps reported metrics
reproducible, since mean average precision is otherwise ambiguous under
equal-distance permutations of mixed relevance. PackedCodes is immutable
after construction and scans are read-only, so scans may be sharded
freely as long as partial results merge in shard order; at this scale a
single pass is already fast.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import DataError, NumericError

CODES_MAGIC = b"HLPC"
CODES_VERSION = 1


def _words_per_code(k):
    return (k + 63) // 64


@dataclass(frozen=True, eq=False)
class PackedCodes:
    """n binary codes of k bits packed into ceil(k/64) words per code."""

    words: np.ndarray
    k: int

    def __post_init__(self):
        w = np.asarray(self.words)
        if w.ndim != 2 or w.dtype.kind != "u" or w.dtype.itemsize != 8:
            raise ValueError("words must be a 2-D uint64 array, got "
                             f"shape {w.shape} dtype {w.dtype}")
        object.__setattr__(self, "words", w.astype(np.uint64, copy=False))
        if self.k < 1:
            raise ValueError(f"bit width must be >= 1, got {self.k}")
        if w.shape[1] != _words_per_code(self.k):
            raise ValueError(f"expected {_words_per_code(self.k)} words "
                             f"for k={self.k}, got {w.shape[1]}")
        if np.any(_mask_padding(self.words, self.k) != self.words):
            raise ValueError("padding bits above bit k-1 must be zero")

    @property
    def n(self):
        return self.words.shape[0]

    def __len__(self):
        return self.n

    def row(self, i):
        """Single code i as a one-row PackedCodes."""
        return PackedCodes(self.words[i:i + 1], self.k)


def _mask_padding(words, k):
    # zero every bit at position >= k (only the last word can have any)
    used = k - 64 * (words.shape[1] - 1)
    if used == 64:
        return words
    out = words.copy()
    out[:, -1] &= np.uint64((1 << used) - 1)
    return out


def binarize_and_pack(B):
    """Pack sign(B) rows into binary codes (bit set iff entry >= 0)."""
    B = np.asarray(B)
    if B.ndim != 2:
        raise ValueError(f"expected a 2-D code matrix, got shape {B.shape}")
    if not np.all(np.isfinite(B)):
        raise NumericError("cannot binarize non-finite codes")
    n, k = B.shape
    bits = (B >= 0).astype(np.uint8)
    packed = np.packbits(bits, axis=1, bitorder="little")
    by = np.zeros((n, 8 * _words_per_code(k)), dtype=np.uint8)
    by[:, :packed.shape[1]] = packed
    return PackedCodes(by.view("<u8"), k)


def unpack(codes):
    """Codes back to a +-1 float matrix; inverse of binarize_and_pack
    on +-1 input."""
    by = np.ascontiguousarray(codes.words.astype("<u8")).view(np.uint8)
    by = by.reshape(codes.n, -1)
    bits = np.unpackbits(by, axis=1, bitorder="little", count=codes.k)
    return 2.0 * bits - 1.0


def _check_same_k(a, b):
    if a.k != b.k:
        raise ValueError(f"bit width mismatch: {a.k} vs {b.k}")


def hamming(a, b):
    """Hamming distance between two single codes."""
    _check_same_k(a, b)
    if a.n != 1 or b.n != 1:
        raise ValueError("hamming compares single codes; use "
                         "hamming_to_all for one-vs-many")
    return int(np.bitwise_count(a.words[0] ^ b.words[0]).sum())


def hamming_to_all(query, db):
    """Distances from one query code to every database code."""
    _check_same_k(query, db)
    if query.n != 1:
        raise ValueError(f"expected a single query code, got {query.n}")
    diff = db.words ^ query.words[0]
    return np.bitwise_count(diff).sum(axis=1, dtype=np.int64)


@dataclass
class RankedResult:
    """One query's ranking: ids ascending by (distance, id)."""

    query_id: int
    ids: np.ndarray
    distances: np.ndarray

    def __len__(self):
        return len(self.ids)

    def __iter__(self):
        return iter(zip(self.ids.tolist(), self.distances.tolist()))


def rank_database(query, db, top=None, query_id=0):
    """Linear-scan ranking of db against one query.

    top=None ranks the whole database. Stable argsort on the distance
    vector realizes the (distance, id) tie rule because ids are the
    positions themselves.
    """
    d = hamming_to_all(query, db)
    order = np.argsort(d, kind="stable")
    if top is not None:
        order = order[:top]
    return RankedResult(query_id, order.astype(np.int64), d[order])


def hamming_radius_retrieve(query, db, r):
    """Ids of all database codes within Hamming distance r."""
    if not 0 <= r <= query.k:
        raise ValueError(f"radius must be in [0, {query.k}], got {r}")
    d = hamming_to_all(query, db)
    return set(np.flatnonzero(d <= r).tolist())


@dataclass
class MapScore:
    """Mean average precision plus the count of excluded queries.

    Queries whose considered ranking contains no relevant item have no
    defined average precision; they are left out of the mean and counted
    in ``skipped``.
    """

    value: float
    skipped: int


def _relevance_row(result, relevance, at):
    ids = result.ids if at is None else result.ids[:at]
    return relevance.mask([result.query_id], ids)[0]


def mean_average_precision(rankings, relevance, at=None):
    """mAP over rankings; relevance judged by a cross-set oracle.

    Average precision of one query is the mean of precision-at-r over
    the relevant ranks r within the considered prefix (all of the
    ranking, or the first ``at`` entries).
    """
    aps = []
    skipped = 0
    for result in rankings:
        rel = _relevance_row(result, relevance, at)
        n_rel = int(rel.sum())
        if n_rel == 0:
            skipped += 1
            continue
        prec = np.cumsum(rel) / np.arange(1, len(rel) + 1)
        aps.append(float(prec[rel].sum() / n_rel))
    if not aps:
        raise DataError("no query had a relevant database item; "
                        "mean average precision is undefined")
    return MapScore(float(np.mean(aps)), skipped)


def radius_recall(rankings, relevance, r):
    """Mean fraction of each query's relevant items within distance r.

    Needs full rankings (they carry the distances). Queries without any
    relevant item are excluded, as in mean_average_precision.
    """
    fractions = []
    for result in rankings:
        rel = _relevance_row(result, relevance, None)
        n_rel = int(rel.sum())
        if n_rel == 0:
            continue
        inside = int(rel[result.distances <= r].sum())
        fractions.append(inside / n_rel)
    if not fractions:
        raise DataError("no query had a relevant database item; "
                        "radius recall is undefined")
    return float(np.mean(fractions))


def precision_at(rankings, relevance, at):
    """Mean fraction of relevant items in the top ``at`` of each ranking.

    Rankings shorter than ``at`` count the missing tail as irrelevant.
    """
    if at < 1:
        raise ValueError(f"cutoff must be >= 1, got {at}")
    fractions = []
    for result in rankings:
        rel = _relevance_row(result, relevance, at)
        fractions.append(float(rel.sum()) / at)
    if not fractions:
        raise DataError("cannot average precision over zero rankings")
    return float(np.mean(fractions))


# ---------------------------------------------------------------------------
# Codes file format
# ---------------------------------------------------------------------------

def save_codes(path, codes):
    with open(path, "wb") as f:
        f.write(CODES_MAGIC)
        f.write(struct.pack("<IQI", CODES_VERSION, codes.n, codes.k))
        f.write(np.ascontiguousarray(codes.words.astype("<u8")).tobytes())


def _read_exact(f, n, path, what):
    buf = f.read(n)
    if len(buf) != n:
        raise DataError(f"{path}: truncated while reading {what} "
                        f"(wanted {n} bytes, got {len(buf)})")
    return buf


def load_codes(path):
    with open(path, "rb") as f:
        magic = _read_exact(f, 4, path, "magic")
        if magic != CODES_MAGIC:
            raise DataError(f"{path}: not a codes file (magic {magic!r})")
        version, n, k = struct.unpack("<IQI",
                                      _read_exact(f, 16, path, "header"))
        if version != CODES_VERSION:
            raise DataError(f"{path}: unsupported codes version {version}")
        w = _words_per_code(k)
        raw = _read_exact(f, 8 * n * w, path, f"{n} codes")
        words = np.frombuffer(raw, dtype="<u8").reshape(n, w)
    try:
        return PackedCodes(words.astype(np.uint64), k)
    except ValueError as e:
        raise DataError(f"{path}: invalid codes ({e})") from None
