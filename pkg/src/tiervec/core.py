"""Vector data model, distance metrics, exact-search oracle and recall.

Everything here is the ground truth the indexes are measured against, so the
contracts are strict: distances are exact (integer elements widen to int64
magnitudes held exactly in float64, float32 widens to float64), and every
tie anywhere is broken toward the smaller vector id.
"""

from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import kernels

ELEM_DTYPES = {
    "int8": np.dtype(np.int8),
    "uint8": np.dtype(np.uint8),
    "float32": np.dtype(np.float32),
}
_DTYPE_NAMES = {v: k for k, v in ELEM_DTYPES.items()}


class Metric(Enum):
    """Distance metrics. Lower is closer for both."""

    L2SQ = "l2sq"
    IP = "ip"  # inner-product distance: -<a, b>


class VectorDataset:
    """A fixed-dimension collection of vectors with implicit ids 0..count-1.

    Vectors live in one contiguous row-major array of a single element type
    (int8, uint8 or float32).
    """

    def __init__(self, vectors: np.ndarray):
        vectors = np.ascontiguousarray(vectors)
        if vectors.ndim != 2:
            raise ValueError(f"expected a 2-D array, got shape {vectors.shape}")
        if vectors.dtype not in _DTYPE_NAMES:
            raise ValueError(f"unsupported element type {vectors.dtype}")
        if vectors.shape[1] == 0 and vectors.shape[0] > 0:
            raise ValueError("vector dimension must be positive")
        self.vectors = vectors

    @property
    def count(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    @property
    def elem_type(self) -> str:
        return _DTYPE_NAMES[self.vectors.dtype]

    @property
    def elem_bytes(self) -> int:
        return self.vectors.dtype.itemsize

    @property
    def vector_bytes(self) -> int:
        """Serialized size of one vector."""
        return self.dim * self.elem_bytes

    @property
    def raw_bytes(self) -> int:
        """Total dataset payload, the denominator of index amplification."""
        return self.count * self.vector_bytes

    def __len__(self) -> int:
        return self.count

    def __repr__(self) -> str:
        return f"VectorDataset(count={self.count}, dim={self.dim}, elem_type={self.elem_type})"


@dataclass
class TopKResult:
    """ids sorted by non-decreasing distance, ties by smaller id."""

    ids: np.ndarray
    distances: np.ndarray
    k: int

    def __post_init__(self):
        self.ids = np.asarray(self.ids, dtype=np.int64)
        self.distances = np.asarray(self.distances, dtype=np.float64)


def _check_pair(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    if a.dtype != b.dtype:
        raise ValueError(f"element type mismatch: {a.dtype} vs {b.dtype}")


def distance(a: np.ndarray, b: np.ndarray, metric: Metric = Metric.L2SQ) -> float:
    """Exact distance between two vectors of the same dim and element type."""
    a = np.asarray(a)
    b = np.asarray(b)
    _check_pair(a, b)
    a64 = a.astype(np.float64)
    b64 = b.astype(np.float64)
    if metric is Metric.L2SQ:
        return kernels.l2sq_pair(a64, b64)
    return -kernels.ip_pair(a64, b64)


def batch_distances(ds: VectorDataset, q: np.ndarray, metric: Metric = Metric.L2SQ) -> np.ndarray:
    """Exact float64 distances from ``q`` to every vector of the dataset."""
    q = np.asarray(q)
    if q.ndim != 1 or q.shape[0] != ds.dim:
        raise ValueError(f"query shape {q.shape} does not match dim {ds.dim}")
    # queries always travel as float64: lossless for every supported element
    # type and keeps one kernel signature per dataset dtype
    q64 = np.ascontiguousarray(q, dtype=np.float64)
    if metric is Metric.L2SQ:
        return kernels.l2sq_one(ds.vectors, q64)
    return -kernels.ip_one(ds.vectors, q64)


def brute_force_topk(ds: VectorDataset, q: np.ndarray, k: int,
                     metric: Metric = Metric.L2SQ) -> TopKResult:
    """Exact k nearest vectors; the oracle every index is scored against.

    Ties break toward the smaller id. Asking for more results than the
    dataset holds returns everything; an empty dataset returns an empty
    result rather than an error.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if ds.count == 0:
        return TopKResult(np.empty(0, np.int64), np.empty(0, np.float64), k)
    dists = batch_distances(ds, q, metric)
    kk = min(k, ds.count)
    if kk < ds.count:
        # argpartition alone breaks boundary ties arbitrarily; refill the
        # boundary distance class with its smallest ids
        part = np.argpartition(dists, kk - 1)[:kk]
        tau = dists[part].max()
        cand = np.flatnonzero(dists < tau)
        ties = np.flatnonzero(dists == tau)
        cand = np.concatenate([cand, ties[:kk - cand.size]])
    else:
        cand = np.arange(ds.count)
    order = np.lexsort((cand, dists[cand]))
    ids = cand[order].astype(np.int64)
    return TopKResult(ids, dists[ids], k)


def recall(result_ids, truth_ids, k: int) -> float:
    """Fraction of the exact top-k also present in the returned ids."""
    truth = set(int(i) for i in truth_ids)
    if len(truth) != k:
        raise ValueError(f"ground truth must hold exactly k={k} distinct ids, got {len(truth)}")
    hits = sum(1 for i in set(int(i) for i in result_ids) if i in truth)
    return hits / k


def medoid(ds: VectorDataset) -> int:
    """Id of the vector nearest the dataset mean (deterministic entry point)."""
    if ds.count == 0:
        raise ValueError("empty dataset has no medoid")
    mean = ds.vectors.mean(axis=0, dtype=np.float64)
    return int(np.argmin(batch_distances(ds, mean)))
