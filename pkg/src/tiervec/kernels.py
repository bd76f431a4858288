"""Hot numeric kernels with numba-compiled and pure-numpy implementations.

The numba path is the default. Set ``TIERVEC_NUMBA=0`` (or ``false``/``off``)
to force the numpy fallback; the fallback is also selected automatically when
numba is not importable. Both paths are deterministic for a fixed input; for
integer inputs they produce bit-identical results, for float32 inputs they
agree to float64 rounding. ``benchmarks/bench_kernels.py`` times the two paths
against each other.

All distance kernels accumulate in float64 (or int64-exact values that are
representable in float64), never in the element type.
"""

import os

import numpy as np

try:
    from numba import njit, prange

    _HAS_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    _HAS_NUMBA = False

_FLAG = os.environ.get("TIERVEC_NUMBA", "1").strip().lower()
USE_NUMBA = _HAS_NUMBA and _FLAG not in ("0", "false", "off")

BACKEND = "numba" if USE_NUMBA else "numpy"

# Chunk length for the numpy fallbacks: bounds the float64 scratch arrays.
_NP_CHUNK = 8192


# ---------------------------------------------------------------------------
# numpy implementations
# ---------------------------------------------------------------------------

def _l2sq_one_np(mat, q):
    out = np.empty(mat.shape[0], dtype=np.float64)
    q64 = q.astype(np.float64)
    for s in range(0, mat.shape[0], _NP_CHUNK):
        d = mat[s:s + _NP_CHUNK].astype(np.float64) - q64
        out[s:s + _NP_CHUNK] = np.einsum("ij,ij->i", d, d)
    return out


def _ip_one_np(mat, q):
    out = np.empty(mat.shape[0], dtype=np.float64)
    q64 = q.astype(np.float64)
    for s in range(0, mat.shape[0], _NP_CHUNK):
        out[s:s + _NP_CHUNK] = mat[s:s + _NP_CHUNK].astype(np.float64) @ q64
    return out


def _l2sq_pair_np(a, b):
    d = a - b
    return float(d @ d)


def _ip_pair_np(a, b):
    return float(a @ b)


def _topk_select_np(dists, kk):
    m, n = dists.shape
    kk = min(kk, n)
    part = np.argpartition(dists, kk - 1, axis=1)[:, :kk]
    vals = np.take_along_axis(dists, part, axis=1)
    # order each row by (value, id) so both backends agree exactly
    order = np.lexsort((part, vals), axis=1)
    out = np.take_along_axis(part, order, axis=1).astype(np.int64)
    # argpartition breaks ties at the selection boundary arbitrarily; repair
    # rows where the boundary distance class extends past the selection
    tau = vals.max(axis=1)
    boundary = np.count_nonzero(dists == tau[:, None], axis=1)
    chosen = np.count_nonzero(vals == tau[:, None], axis=1)
    for i in np.flatnonzero(boundary > chosen).tolist():
        strict = np.flatnonzero(dists[i] < tau[i])
        ties = np.flatnonzero(dists[i] == tau[i])
        cand = np.concatenate([strict, ties[:kk - strict.size]])
        row_order = np.lexsort((cand, dists[i][cand]))
        out[i] = cand[row_order]
    return out


def _gather_l2sq_np(data, qidx, cands):
    m, kk = cands.shape
    out = np.empty((m, kk), dtype=np.float64)
    for s in range(0, m, 256):
        e = min(m, s + 256)
        a = data[qidx[s:e]].astype(np.float64)[:, None, :]
        b = data[cands[s:e]].astype(np.float64)
        d = a - b
        out[s:e] = np.einsum("ijk,ijk->ij", d, d)
    return out


def _capacity_assign_np(order, cands, cap, n_clusters):
    n, t = cands.shape
    assign = np.full(n, -1, dtype=np.int32)
    sizes = np.zeros(n_clusters, dtype=np.int64)
    for v in order:
        row = cands[v]
        for i in range(t):
            c = row[i]
            if sizes[c] < cap:
                assign[v] = c
                sizes[c] += 1
                break
    return assign, sizes


def _sng_prune_np(pair_d, node_d, ncand, max_keep, alpha):
    m, c = node_d.shape
    kept = np.full((m, max_keep), -1, dtype=np.int32)
    kcount = np.zeros(m, dtype=np.int32)
    for i in range(m):
        nk = 0
        for t in range(ncand[i]):
            pruned = False
            for s in range(nk):
                if alpha * pair_d[i, kept[i, s], t] < node_d[i, t]:
                    pruned = True
                    break
            if not pruned:
                kept[i, nk] = t
                nk += 1
                if nk == max_keep:
                    break
        kcount[i] = nk
    return kept, kcount


# ---------------------------------------------------------------------------
# numba implementations
# ---------------------------------------------------------------------------

if _HAS_NUMBA:

    @njit(cache=True, parallel=True)
    def _l2sq_one_nb(mat, q, out):
        n, d = mat.shape
        for i in prange(n):
            acc = 0.0
            for j in range(d):
                diff = np.float64(mat[i, j]) - np.float64(q[j])
                acc += diff * diff
            out[i] = acc

    @njit(cache=True, parallel=True)
    def _ip_one_nb(mat, q, out):
        n, d = mat.shape
        for i in prange(n):
            acc = 0.0
            for j in range(d):
                acc += np.float64(mat[i, j]) * np.float64(q[j])
            out[i] = acc

    @njit(cache=True)
    def _l2sq_pair_nb(a, b):
        acc = 0.0
        for j in range(a.shape[0]):
            diff = a[j] - b[j]
            acc += diff * diff
        return acc

    @njit(cache=True)
    def _ip_pair_nb(a, b):
        acc = 0.0
        for j in range(a.shape[0]):
            acc += a[j] * b[j]
        return acc

    @njit(cache=True, parallel=True)
    def _topk_select_nb(dists, kk, out):
        m, n = dists.shape
        for i in prange(m):
            vals = np.full(kk, np.inf, dtype=np.float64)
            ids = np.full(kk, -1, dtype=np.int64)
            filled = 0
            for j in range(n):
                v = np.float64(dists[i, j])
                # ids scan upward, so an equal value never displaces the
                # smaller id already stored at the boundary
                if filled == kk and v >= vals[kk - 1]:
                    continue
                # insertion position by (value, id); ties keep smaller id first
                p = filled if filled < kk else kk - 1
                while p > 0 and (vals[p - 1] > v or (vals[p - 1] == v and ids[p - 1] > j)):
                    if p < kk:
                        vals[p] = vals[p - 1]
                        ids[p] = ids[p - 1]
                    p -= 1
                if p < kk:
                    vals[p] = v
                    ids[p] = j
                if filled < kk:
                    filled += 1
            out[i, :] = ids

    @njit(cache=True, parallel=True)
    def _gather_l2sq_nb(data, qidx, cands, out):
        m, kk = cands.shape
        d = data.shape[1]
        for i in prange(m):
            qi = qidx[i]
            for t in range(kk):
                ci = cands[i, t]
                acc = 0.0
                for j in range(d):
                    diff = np.float64(data[qi, j]) - np.float64(data[ci, j])
                    acc += diff * diff
                out[i, t] = acc

    @njit(cache=True)
    def _capacity_assign_nb(order, cands, cap, n_clusters):
        n, t = cands.shape
        assign = np.full(n, -1, dtype=np.int32)
        sizes = np.zeros(n_clusters, dtype=np.int64)
        for k in range(n):
            v = order[k]
            for i in range(t):
                c = cands[v, i]
                if sizes[c] < cap:
                    assign[v] = c
                    sizes[c] += 1
                    break
        return assign, sizes

    @njit(cache=True, parallel=True)
    def _sng_prune_nb(pair_d, node_d, ncand, kept, kcount, alpha):
        m = node_d.shape[0]
        max_keep = kept.shape[1]
        for i in prange(m):
            nk = 0
            for t in range(ncand[i]):
                pruned = False
                for s in range(nk):
                    if alpha * np.float64(pair_d[i, kept[i, s], t]) < np.float64(node_d[i, t]):
                        pruned = True
                        break
                if not pruned:
                    kept[i, nk] = t
                    nk += 1
                    if nk == max_keep:
                        break
            kcount[i] = nk


# ---------------------------------------------------------------------------
# dispatchers
# ---------------------------------------------------------------------------

def l2sq_one(mat, q):
    """Squared L2 distance from ``q`` to every row of ``mat`` (float64)."""
    if USE_NUMBA:
        out = np.empty(mat.shape[0], dtype=np.float64)
        _l2sq_one_nb(mat, q, out)
        return out
    return _l2sq_one_np(mat, q)


def ip_one(mat, q):
    """Raw inner product of ``q`` with every row of ``mat`` (float64)."""
    if USE_NUMBA:
        out = np.empty(mat.shape[0], dtype=np.float64)
        _ip_one_nb(mat, q, out)
        return out
    return _ip_one_np(mat, q)


def l2sq_pair(a, b):
    """Squared L2 distance between two float64 vectors."""
    if USE_NUMBA:
        return float(_l2sq_pair_nb(a, b))
    return _l2sq_pair_np(a, b)


def ip_pair(a, b):
    """Raw inner product between two float64 vectors."""
    if USE_NUMBA:
        return float(_ip_pair_nb(a, b))
    return _ip_pair_np(a, b)


def topk_select(dists, kk):
    """Per-row ids of the ``kk`` smallest entries, sorted by (value, id).

    ``dists`` is an (m, n) block of approximate distances; ties and final
    ordering are resolved identically on both backends.
    """
    kk = min(kk, dists.shape[1])
    if USE_NUMBA:
        out = np.empty((dists.shape[0], kk), dtype=np.int64)
        _topk_select_nb(dists, kk, out)
        return out
    return _topk_select_np(dists, kk)


def gather_l2sq(data, qidx, cands):
    """Exact float64 squared L2 between ``data[qidx[i]]`` and ``data[cands[i, t]]``."""
    qidx = np.ascontiguousarray(qidx, dtype=np.int64)
    cands = np.ascontiguousarray(cands, dtype=np.int64)
    if USE_NUMBA:
        out = np.empty(cands.shape, dtype=np.float64)
        _gather_l2sq_nb(data, qidx, cands, out)
        return out
    return _gather_l2sq_np(data, qidx, cands)


def capacity_assign(order, cands, cap, n_clusters):
    """Greedy capacitated assignment.

    Vectors are visited in ``order``; each takes the first cluster in its
    candidate row ``cands[v]`` whose size is below ``cap``. Returns
    ``(assign, sizes)`` with ``assign[v] = -1`` when every candidate was full.
    """
    order = np.ascontiguousarray(order, dtype=np.int64)
    cands = np.ascontiguousarray(cands, dtype=np.int32)
    if USE_NUMBA:
        return _capacity_assign_nb(order, cands, cap, n_clusters)
    return _capacity_assign_np(order, cands, cap, n_clusters)


def sng_prune(pair_d, node_d, ncand, max_keep, alpha):
    """Occlusion-style edge pruning over per-node candidate rows.

    Candidates are scanned nearest-first; candidate ``t`` survives unless an
    already-kept candidate ``s`` satisfies ``alpha * d(s, t) < d(node, t)``.
    ``pair_d`` is (m, c, c) distances among candidates, ``node_d`` is (m, c)
    node-to-candidate distances, ``ncand[i]`` the number of valid candidates
    in row i. Returns (kept local indices padded with -1, counts).
    """
    ncand = np.ascontiguousarray(ncand, dtype=np.int32)
    if USE_NUMBA:
        m = node_d.shape[0]
        kept = np.full((m, max_keep), -1, dtype=np.int32)
        kcount = np.zeros(m, dtype=np.int32)
        _sng_prune_nb(pair_d, node_d, ncand, kept, kcount, alpha)
        return kept, kcount
    return _sng_prune_np(pair_d, node_d, ncand, max_keep, alpha)


def pairwise_l2sq_blas(x, c):
    """Approximate (m, k) squared L2 block via the norm expansion and BLAS.

    float32 arithmetic: fast candidate generation for index builds, always
    followed by an exact rerank where exactness matters. Negative values from
    cancellation are clamped to zero.
    """
    x32 = x.astype(np.float32, copy=False)
    c32 = c.astype(np.float32, copy=False)
    xn = np.einsum("ij,ij->i", x32, x32)
    cn = np.einsum("ij,ij->i", c32, c32)
    d2 = xn[:, None] + cn[None, :] - 2.0 * (x32 @ c32.T)
    np.maximum(d2, 0.0, out=d2)
    return d2
