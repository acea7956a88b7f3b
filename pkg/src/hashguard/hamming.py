"""Bit-packed hash codes, hamming distance, top-k retrieval and mAP.

Codes are sequences of K symbols from {-1,+1}, stored packed into uint64
words with the convention bit=1 <-> symbol=+1, LSB-first inside each word.
Unused tail bits of the last word are always zero, so equality and popcount
need no masking.
"""

from __future__ import annotations

import json
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import UsageError

WORD_BITS = 64


def words_for(k: int) -> int:
    return (k + WORD_BITS - 1) // WORD_BITS


def _tail_mask(k: int) -> np.uint64:
    rem = k % WORD_BITS
    if rem == 0:
        return np.uint64(0xFFFFFFFFFFFFFFFF)
    return np.uint64((1 << rem) - 1)


def pack_signs(signs: np.ndarray) -> np.ndarray:
    """Pack an array of {-1,+1} symbols (last axis length K) into uint64 words."""
    signs = np.asarray(signs)
    bits = (signs > 0).astype(np.uint8)
    packed = np.packbits(bits, axis=-1, bitorder="little")
    w = words_for(signs.shape[-1])
    pad = w * 8 - packed.shape[-1]
    if pad:
        pad_widths = [(0, 0)] * (packed.ndim - 1) + [(0, pad)]
        packed = np.pad(packed, pad_widths)
    return np.ascontiguousarray(packed).view(np.uint64)


def unpack_words(words: np.ndarray, k: int) -> np.ndarray:
    """Inverse of pack_signs: uint64 words (last axis) -> {-1,+1} int8 symbols."""
    words = np.ascontiguousarray(np.asarray(words, dtype=np.uint64))
    bits = np.unpackbits(words.view(np.uint8), axis=-1, bitorder="little")
    bits = bits[..., :k]
    return np.where(bits > 0, 1, -1).astype(np.int8)


@dataclass(frozen=True)
class HashCode:
    """A K-bit binary code over {-1,+1}, packed into uint64 words."""

    words: np.ndarray
    length: int

    def __post_init__(self):
        words = np.ascontiguousarray(np.asarray(self.words, dtype=np.uint64))
        if words.ndim != 1 or words.shape[0] != words_for(self.length):
            raise UsageError(
                f"expected {words_for(self.length)} words for K={self.length}, "
                f"got shape {words.shape}"
            )
        words = words.copy()
        words[-1] &= _tail_mask(self.length)
        words.flags.writeable = False
        object.__setattr__(self, "words", words)

    @classmethod
    def from_signs(cls, signs) -> "HashCode":
        signs = np.asarray(signs)
        if signs.ndim != 1:
            raise UsageError("from_signs expects a 1-D sign vector")
        return cls(pack_signs(signs), len(signs))

    @classmethod
    def random(cls, k: int, rng: np.random.Generator) -> "HashCode":
        signs = rng.integers(0, 2, size=k) * 2 - 1
        return cls.from_signs(signs)

    def to_signs(self) -> np.ndarray:
        return unpack_words(self.words, self.length)

    def negate(self) -> "HashCode":
        return HashCode(~self.words & _full_mask(self.length), self.length)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, HashCode)
            and self.length == other.length
            and np.array_equal(self.words, other.words)
        )

    def __hash__(self):
        return hash((self.length, self.words.tobytes()))


def _full_mask(k: int) -> np.ndarray:
    mask = np.full(words_for(k), 0xFFFFFFFFFFFFFFFF, dtype=np.uint64)
    mask[-1] = _tail_mask(k)
    return mask


def hamming_distance(a: HashCode, b: HashCode) -> int:
    """Number of positions where two codes differ."""
    if a.length != b.length:
        raise UsageError(f"code length mismatch: {a.length} vs {b.length}")
    return int(np.bitwise_count(a.words ^ b.words).sum())


def soft_hamming(u: np.ndarray, v: np.ndarray) -> float:
    """Differentiable hamming relaxation (K - u.v)/2 for vectors in [-1,1]^K.

    Equals the integer hamming distance of the packed signs whenever both
    inputs are exactly +-1.
    """
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise UsageError(f"vector length mismatch: {u.shape} vs {v.shape}")
    k = u.shape[-1]
    return float(0.5 * (k - u @ v))


def quadratic_hamming(u: np.ndarray, v: np.ndarray) -> float:
    """Squared-distance hamming relaxation |u - v|^2 / 4.

    Also equals the integer hamming distance on exact +-1 inputs, but unlike
    the inner-product form it vanishes whenever u == v, which makes it the
    right relaxation for comparing two continuous logit vectors.
    """
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise UsageError(f"vector length mismatch: {u.shape} vs {v.shape}")
    diff = u - v
    return float(0.25 * (diff @ diff))


@dataclass(frozen=True)
class RetrievalResult:
    """Top-k neighbors: ids and non-decreasing hamming distances."""

    neighbor_ids: np.ndarray
    distances: np.ndarray


class CodeDatabase:
    """Immutable collection of (item-id, code, label-set) rows of a fixed K.

    All read operations are safe to call concurrently; the backing arrays
    are marked read-only after construction.
    """

    def __init__(self, ids, codes, labels, code_length: int):
        ids = np.ascontiguousarray(np.asarray(ids, dtype=np.uint64))
        codes = np.ascontiguousarray(np.asarray(codes, dtype=np.uint64))
        labels = np.ascontiguousarray(np.asarray(labels, dtype=bool))
        if codes.ndim != 2 or codes.shape[1] != words_for(code_length):
            raise UsageError("codes must be (N, ceil(K/64)) uint64")
        if len(ids) != len(codes) or len(ids) != len(labels):
            raise UsageError("ids/codes/labels row counts differ")
        if len(np.unique(ids)) != len(ids):
            raise UsageError("item ids must be unique")
        mask = _tail_mask(code_length)
        codes[:, -1] &= mask
        for arr in (ids, codes, labels):
            arr.flags.writeable = False
        self.ids = ids
        self.codes = codes
        self.labels = labels
        self.code_length = code_length

    @classmethod
    def from_entries(cls, entries, code_length: int, num_classes: int):
        """Build from an iterable of (id, HashCode, label bool vector)."""
        ids, codes, labels = [], [], []
        for item_id, code, label in entries:
            if code.length != code_length:
                raise UsageError("all codes must share the database K")
            ids.append(item_id)
            codes.append(code.words)
            labels.append(np.asarray(label, dtype=bool))
        labels = np.asarray(labels, dtype=bool).reshape(len(ids), num_classes)
        return cls(np.asarray(ids), np.asarray(codes), labels, code_length)

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def num_classes(self) -> int:
        return self.labels.shape[1]

    def code_at(self, row: int) -> HashCode:
        return HashCode(self.codes[row].copy(), self.code_length)


def scan_distances(codes: np.ndarray, q: HashCode, num_shards: int = 1) -> np.ndarray:
    """Hamming distance from q to every packed row. Sharding never changes results."""
    xored_count = lambda rows: np.bitwise_count(rows ^ q.words).sum(
        axis=1, dtype=np.uint32
    )
    n = len(codes)
    if num_shards <= 1 or n < num_shards:
        return xored_count(codes)
    bounds = np.linspace(0, n, num_shards + 1, dtype=np.int64)
    out = np.empty(n, dtype=np.uint32)
    with ThreadPoolExecutor(max_workers=num_shards) as pool:
        futures = {
            pool.submit(xored_count, codes[lo:hi]): (lo, hi)
            for lo, hi in zip(bounds[:-1], bounds[1:])
        }
        for fut, (lo, hi) in futures.items():
            out[lo:hi] = fut.result()
    return out


def batch_distances(codes: np.ndarray, query_words: np.ndarray,
                    chunk: int = 32) -> np.ndarray:
    """(B, N) hamming distances between packed query rows and database rows.

    Vectorized xor/popcount over query chunks; equivalent to stacking
    scan_distances per query but without per-query call overhead.  The chunk
    bound keeps the xor temporaries cache-sized for large batches.
    """
    query_words = np.atleast_2d(np.asarray(query_words, dtype=np.uint64))
    b, w = query_words.shape
    out = np.empty((b, len(codes)), dtype=np.uint32)
    for start in range(0, b, chunk):
        rows = query_words[start : start + chunk]
        acc = np.bitwise_count(codes[:, 0][None, :] ^ rows[:, 0][:, None]).astype(np.uint32)
        for col in range(1, w):
            acc += np.bitwise_count(codes[:, col][None, :] ^ rows[:, col][:, None])
        out[start : start + chunk] = acc
    return out


def top_k_batch(db: "CodeDatabase", query_words: np.ndarray, k: int) -> list:
    """top_k for a packed batch of queries; identical results, one fused scan."""
    if len(db) == 0:
        raise UsageError("cannot query an empty database")
    if k < 1 or k > len(db):
        raise UsageError(f"k={k} out of range for database of size {len(db)}")
    dist = batch_distances(db.codes, query_words)
    return [_select_top_k(db.ids, row, k) for row in dist]


def _select_top_k(ids: np.ndarray, dist: np.ndarray, k: int) -> RetrievalResult:
    """Exact top-k by (distance, id), O(N) selection plus small sorts."""
    n = len(dist)
    if k < n:
        kth = np.partition(dist, k - 1)[k - 1]
        below = np.flatnonzero(dist < kth)
        equal = np.flatnonzero(dist == kth)
        need = k - len(below)
        if need < len(equal):
            eq_ids = ids[equal]
            take = equal[np.argsort(eq_ids, kind="stable")[:need]]
        else:
            take = equal
        cand = np.concatenate([below, take])
    else:
        cand = np.arange(n)
    order = np.lexsort((ids[cand], dist[cand]))
    cand = cand[order]
    return RetrievalResult(ids[cand].copy(), dist[cand].astype(np.int64))


def top_k(db: CodeDatabase, q: HashCode, k: int, num_shards: int = 1) -> RetrievalResult:
    """The k database entries nearest to q; ties broken by ascending item-id."""
    if len(db) == 0:
        raise UsageError("cannot query an empty database")
    if k < 1 or k > len(db):
        raise UsageError(f"k={k} out of range for database of size {len(db)}")
    if q.length != db.code_length:
        raise UsageError("query code length does not match database")
    dist = scan_distances(db.codes, q, num_shards=num_shards)
    return _select_top_k(db.ids, dist, k)


def labels_similar(a: np.ndarray, b: np.ndarray) -> bool:
    """Similarity s(y_i, y_j): +1 iff the label sets share any class."""
    return bool(np.any(np.logical_and(a, b)))


def average_precision(relevant_flags: np.ndarray) -> float:
    """AP over a ranked list with the divide-by-retrieved-relevant convention."""
    rel = np.asarray(relevant_flags, dtype=bool)
    hits = np.cumsum(rel)
    total = hits[-1] if len(hits) else 0
    if total == 0:
        return 0.0
    ranks = np.arange(1, len(rel) + 1)
    return float(np.sum(hits[rel] / ranks[rel]) / total)


def mean_average_precision(db: CodeDatabase, queries, k: int) -> float:
    """Mean over queries of AP of the top-k ranked list.

    Queries with no relevant retrieved items contribute AP = 0.
    """
    queries = list(queries)
    if not queries:
        raise UsageError("mean_average_precision needs at least one query")
    id_to_row = {int(i): r for r, i in enumerate(db.ids)}
    aps = []
    for code, label in queries:
        result = top_k(db, code, k)
        rows = [id_to_row[int(i)] for i in result.neighbor_ids]
        rel = (db.labels[rows] & np.asarray(label, dtype=bool)).any(axis=1)
        aps.append(average_precision(rel))
    return float(np.mean(aps))


# --- HGDB binary database format (little-endian) -------------------------

_DB_MAGIC = b"HGDB"
_DB_VERSION = 1


def save_database(db: CodeDatabase, path) -> None:
    """Write the HGDB binary file plus a JSON metadata sidecar."""
    path = str(path)
    w = words_for(db.code_length)
    c_bytes = (db.num_classes + 7) // 8
    label_bytes = np.packbits(db.labels, axis=-1, bitorder="little")
    with open(path, "wb") as fh:
        fh.write(_DB_MAGIC)
        fh.write(struct.pack("<IIIQ", _DB_VERSION, db.code_length, db.num_classes, len(db)))
        for row in range(len(db)):
            fh.write(struct.pack("<Q", int(db.ids[row])))
            fh.write(db.codes[row].astype("<u8").tobytes())
            fh.write(label_bytes[row, :c_bytes].tobytes())
    sidecar = {
        "magic": _DB_MAGIC.decode(),
        "version": _DB_VERSION,
        "code_length": db.code_length,
        "num_classes": db.num_classes,
        "count": len(db),
        "words_per_code": w,
    }
    with open(path + ".json", "w") as fh:
        json.dump(sidecar, fh, indent=2)


def load_database(path) -> CodeDatabase:
    with open(str(path), "rb") as fh:
        magic = fh.read(4)
        if magic != _DB_MAGIC:
            raise UsageError(f"not an HGDB file: bad magic {magic!r}")
        version, k, c, count = struct.unpack("<IIIQ", fh.read(20))
        if version != _DB_VERSION:
            raise UsageError(f"unsupported HGDB version {version}")
        w = words_for(k)
        c_bytes = (c + 7) // 8
        row_size = 8 + 8 * w + c_bytes
        raw = fh.read(row_size * count)
    if len(raw) != row_size * count:
        raise UsageError("truncated HGDB file")
    rows = np.frombuffer(raw, dtype=np.uint8).reshape(count, row_size)
    ids = rows[:, :8].copy().view("<u8").reshape(count)
    codes = rows[:, 8 : 8 + 8 * w].copy().view("<u8").reshape(count, w)
    label_bits = np.unpackbits(rows[:, 8 + 8 * w :], axis=-1, bitorder="little")
    labels = label_bits[:, :c].astype(bool)
    return CodeDatabase(ids, codes.astype(np.uint64), labels, k)
