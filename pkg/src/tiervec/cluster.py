"""Cluster-based vector index.

Build: capacity-bounded Lloyd iterations (greedy margin-ordered assignment to
the nearest non-full cluster), then boundary replication: a vector joins every
cluster whose centroid lies within (1 + replica_eps) of its nearest-centroid
distance, nearest first, capped at max_replicas, primary cluster always
included.

Storage layouts over one record vocabulary:
  coupled    one record per cluster holding member ids and full vector copies
             (replicas duplicate vector bytes),
  decoupled  a vector heap (every vector exactly once, id order) plus per-
             cluster lists of 8-byte heap addresses,
  grouped    the heap reordered so each vector sits inside exactly one
             cluster's contiguous segment (a group assignment decides which),
             plus per-cluster overflow address lists for replicas grouped
             elsewhere.

Search reads the top-c nearest clusters' postings and ranks every fetched
vector exactly; layouts change the I/O pattern, never the candidates.
"""

import math
import struct
from dataclasses import dataclass

import numpy as np

from . import kernels
from .core import ELEM_DTYPES, Metric, TopKResult, VectorDataset, brute_force_topk
from .device import Device, IoStats, StorageRegion
from .graph import (GraphBuildParams, GraphIndex, SearchParams, SearchTrace,
                    build_graph_index, search_in_memory)

CLUSTER_MAGIC = b"CVX1"
_LAYOUTS = {"coupled": 0, "decoupled": 1, "grouped": 2}
_LAYOUT_NAMES = {v: k for k, v in _LAYOUTS.items()}
_ELEM_CODES = {"int8": 0, "uint8": 1, "float32": 2}
_ELEM_NAMES = {v: k for k, v in _ELEM_CODES.items()}

# exact centroid scan below this cluster count; graph navigation above
EXACT_SCAN_MAX_CLUSTERS = 4096


@dataclass
class ClusterBuildParams:
    n_clusters: int
    kmeans_iters: int = 10
    balance_slack: float = 0.1      # max cluster size = (1 + slack) * count / n_clusters
    replica_eps: float = 0.1        # closeness threshold for boundary replication
    max_replicas: int = 8

    def __post_init__(self):
        if self.n_clusters < 1:
            raise ValueError(f"n_clusters must be >= 1, got {self.n_clusters}")
        if self.max_replicas < 1:
            raise ValueError(f"max_replicas must be >= 1, got {self.max_replicas}")
        if self.balance_slack < 0 or self.replica_eps < 0:
            raise ValueError("balance_slack and replica_eps must be >= 0")


@dataclass
class ClusterSearchParams:
    top_c: int
    k: int

    def __post_init__(self):
        if not self.top_c >= 1:
            raise ValueError(f"top_c must be >= 1, got {self.top_c}")
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")


def _dists_f64(x: np.ndarray, c: np.ndarray, metric: Metric, chunk: int = 8192):
    """Exact-ish float64 (n, k) distance matrix via the norm expansion."""
    c64 = c.astype(np.float64)
    out = np.empty((x.shape[0], c.shape[0]), dtype=np.float64)
    if metric is Metric.L2SQ:
        cn = np.einsum("ij,ij->i", c64, c64)
        for s in range(0, x.shape[0], chunk):
            x64 = x[s:s + chunk].astype(np.float64)
            xn = np.einsum("ij,ij->i", x64, x64)
            d = xn[:, None] + cn[None, :] - 2.0 * (x64 @ c64.T)
            np.maximum(d, 0.0, out=d)
            out[s:s + chunk] = d
    else:
        for s in range(0, x.shape[0], chunk):
            out[s:s + chunk] = -(x[s:s + chunk].astype(np.float64) @ c64.T)
    return out


def balanced_kmeans(ds: VectorDataset, params: ClusterBuildParams, seed: int = 0,
                    metric: Metric = Metric.L2SQ):
    """Capacity-bounded Lloyd iterations.

    Each assignment pass visits vectors in decreasing assignment margin (gap
    between second-nearest and nearest centroid: the most constrained first)
    and places each in its nearest non-full cluster. Returns (centroids as a
    float32 VectorDataset, primary assignment int32 array).
    """
    n, k = ds.count, params.n_clusters
    if k > n:
        raise ValueError(f"n_clusters={k} exceeds count={n}")
    if math.isinf(params.balance_slack):
        cap = n
    else:
        cap = max(1, math.ceil((1.0 + params.balance_slack) * n / k))
    rng = np.random.default_rng(seed)
    x = ds.vectors
    centroids = x[np.sort(rng.choice(n, k, replace=False))].astype(np.float64)
    t = min(k, 16)

    def assign_pass(cents):
        d = _dists_f64(x, cents, metric)
        cand = kernels.topk_select(d, t).astype(np.int32)
        if t >= 2:
            margin = np.take_along_axis(d, cand[:, 1:2].astype(np.int64), 1)[:, 0] - \
                np.take_along_axis(d, cand[:, 0:1].astype(np.int64), 1)[:, 0]
        else:
            margin = np.zeros(n)
        order = np.lexsort((np.arange(n), -margin))
        out, sizes = kernels.capacity_assign(order, cand, cap, k)
        for v in np.flatnonzero(out == -1).tolist():
            # every near candidate was full; walk the full preference list
            pref = np.lexsort((np.arange(k), d[v]))
            for c in pref.tolist():
                if sizes[c] < cap:
                    out[v] = c
                    sizes[c] += 1
                    break
        return out

    assign = np.full(n, -1, dtype=np.int32)
    for _ in range(max(1, params.kmeans_iters)):
        new_assign = assign_pass(centroids)
        if np.array_equal(new_assign, assign):
            break
        assign = new_assign
        counts = np.bincount(assign, minlength=k)
        acc = np.zeros((k, ds.dim), dtype=np.float64)
        for j in range(ds.dim):
            acc[:, j] = np.bincount(assign, weights=x[:, j].astype(np.float64), minlength=k)
        nonempty = counts > 0
        centroids[nonempty] = acc[nonempty] / counts[nonempty, None]
    # final pass against the rounded centroids the caller will see, so the
    # primary assignment is exactly nearest-non-full under them
    final = VectorDataset(centroids.astype(np.float32))
    assign = assign_pass(final.vectors)
    return final, assign


def replicate_boundary(ds: VectorDataset, centroids: VectorDataset,
                       primary: np.ndarray, replica_eps: float, max_replicas: int,
                       metric: Metric = Metric.L2SQ):
    """Per-vector replica cluster lists (ascending cluster id, primary included).

    A vector with nearest-centroid distance d0 joins clusters nearest-first
    while their centroid distance stays within (1 + replica_eps) * d0, up to
    max_replicas copies in total.
    """
    n = ds.count
    d = _dists_f64(ds.vectors, centroids.vectors, metric)
    t = min(centroids.count, max_replicas + 8)
    cand = kernels.topk_select(d, t)          # (n, t) sorted by (distance, id)
    cd = np.take_along_axis(d, cand, axis=1)
    d0 = cd[:, 0]
    thr = (1.0 + replica_eps) * d0
    ok = cd <= thr[:, None]
    replicas = [None] * n
    for v in range(n):
        row = cand[v][ok[v]][:max_replicas].tolist()
        p = int(primary[v])
        if p not in row:
            if len(row) >= max_replicas:
                row[-1] = p
            else:
                row.append(p)
        replicas[v] = np.array(sorted(row), dtype=np.int32)
    return replicas


class ClusterIndex:
    """Built cluster index prior to serialization."""

    def __init__(self, dataset: VectorDataset, centroids: VectorDataset,
                 primary: np.ndarray, replicas, params: ClusterBuildParams,
                 navigator: GraphIndex = None, metric: Metric = Metric.L2SQ):
        self.dataset = dataset
        self.centroids = centroids
        self.primary = primary
        self.replicas = replicas
        self.params = params
        self.navigator = navigator
        self.metric = metric
        self.members = _invert(replicas, centroids.count)

    @property
    def n_clusters(self) -> int:
        return self.centroids.count

    @property
    def replication_factor(self) -> float:
        return sum(len(r) for r in self.replicas) / max(1, self.dataset.count)

    def select_clusters(self, q: np.ndarray, top_c: int, mode: str = "auto") -> np.ndarray:
        return select_clusters(self.centroids, q, top_c, mode=mode,
                               navigator=self.navigator, metric=self.metric)


def _invert(replicas, n_clusters):
    members = [[] for _ in range(n_clusters)]
    for v, row in enumerate(replicas):
        for c in row.tolist():
            members[c].append(v)
    return [np.array(m, dtype=np.int32) for m in members]


def build_cluster_index(ds: VectorDataset, params: ClusterBuildParams, seed: int = 0,
                        metric: Metric = Metric.L2SQ,
                        build_navigator: bool = True) -> ClusterIndex:
    centroids, primary = balanced_kmeans(ds, params, seed=seed, metric=metric)
    replicas = replicate_boundary(ds, centroids, primary, params.replica_eps,
                                  params.max_replicas, metric)
    navigator = None
    if build_navigator and centroids.count >= 4:
        knn_k = min(32, centroids.count - 1)
        nav_params = GraphBuildParams(knn_k=knn_k, max_degree=min(16, knn_k))
        navigator = build_graph_index(centroids, nav_params, metric)
    return ClusterIndex(ds, centroids, primary, replicas, params, navigator, metric)


def select_clusters(centroids: VectorDataset, q: np.ndarray, top_c: int,
                    mode: str = "auto", navigator: GraphIndex = None,
                    metric: Metric = Metric.L2SQ) -> np.ndarray:
    """Ids of the top_c nearest clusters (exact scan or graph navigation)."""
    if not 1 <= top_c <= centroids.count:
        raise ValueError(f"top_c must lie in [1, {centroids.count}], got {top_c}")
    if mode == "auto":
        mode = "exact" if centroids.count <= EXACT_SCAN_MAX_CLUSTERS or navigator is None \
            else "graph"
    if mode == "exact":
        return brute_force_topk(centroids, q, top_c, metric).ids.astype(np.int32)
    if navigator is None:
        raise ValueError("graph navigation requested but no navigator built")
    res = search_in_memory(navigator, q, SearchParams(L=max(2 * top_c, 16), k=top_c), metric)
    return res.ids.astype(np.int32)


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

class StoredCluster:
    """Serialized cluster index: centroids in memory, postings on the device."""

    def __init__(self, region: StorageRegion, layout: str, centroids: VectorDataset,
                 directory: dict, dim: int, elem_type: str, count: int,
                 replica_eps: float, max_replicas: int, metric: Metric = Metric.L2SQ,
                 navigator: GraphIndex = None):
        self.region = region
        self.layout = layout
        self.centroids = centroids
        self.directory = directory
        self.dim = dim
        self.elem_type = elem_type
        self.count = count
        self.replica_eps = replica_eps
        self.max_replicas = max_replicas
        self.metric = metric
        self.navigator = navigator
        self.vector_bytes = dim * ELEM_DTYPES[elem_type].itemsize

    @property
    def n_clusters(self) -> int:
        return self.centroids.count

    @property
    def raw_dataset_bytes(self) -> int:
        return self.count * self.vector_bytes

    def amplification(self) -> float:
        """Region plus centroid bytes over the raw dataset bytes."""
        centroid_bytes = self.centroids.count * self.centroids.vector_bytes
        return (self.region.length + centroid_bytes) / self.raw_dataset_bytes

    def select_clusters(self, q: np.ndarray, top_c: int, mode: str = "auto") -> np.ndarray:
        return select_clusters(self.centroids, q, top_c, mode=mode,
                               navigator=self.navigator, metric=self.metric)

    def cluster_read_bytes(self, cluster: int) -> int:
        """Payload bytes one query spends reading this cluster's postings."""
        d = self.directory
        if self.layout == "coupled":
            return int(d["offsets"][cluster + 1] - d["offsets"][cluster])
        if self.layout == "decoupled":
            m = int(d["list_lens"][cluster])
            return 8 * m + self.vector_bytes * m
        g = int(d["seg_lens"][cluster])
        o = int(d["ovf_lens"][cluster])
        return self.vector_bytes * g + 8 * o + self.vector_bytes * o


def serialize_cluster(index: ClusterIndex, layout: str,
                      group_assignment=None) -> StoredCluster:
    """Build the on-device byte image for one of the three layouts."""
    if layout not in _LAYOUTS:
        raise ValueError(f"unknown layout {layout!r}")
    ds = index.dataset
    vb = ds.vector_bytes
    n = ds.count
    k = index.n_clusters
    vec_bytes = np.ascontiguousarray(ds.vectors).view(np.uint8).reshape(n, vb)
    directory = {}

    if layout == "coupled":
        sizes = np.array([4 + (4 + vb) * len(m) for m in index.members], dtype=np.int64)
        offsets = np.zeros(k + 1, dtype=np.int64)
        np.cumsum(sizes, out=offsets[1:])
        buf = np.zeros(int(offsets[-1]), dtype=np.uint8)
        for j, m in enumerate(index.members):
            off = int(offsets[j])
            buf[off:off + 4] = np.array([len(m)], dtype=np.uint32).view(np.uint8)
            ids_off = off + 4
            buf[ids_off:ids_off + 4 * len(m)] = m.astype(np.uint32).view(np.uint8)
            v_off = ids_off + 4 * len(m)
            if len(m):
                buf[v_off:v_off + vb * len(m)] = vec_bytes[m].reshape(-1)
        directory["offsets"] = offsets

    elif layout == "decoupled":
        list_lens = np.array([len(m) for m in index.members], dtype=np.int64)
        heap_len = n * vb
        list_offsets = np.zeros(k + 1, dtype=np.int64)
        np.cumsum(list_lens * 8, out=list_offsets[1:])
        list_offsets += heap_len
        buf = np.zeros(heap_len + int(list_lens.sum()) * 8, dtype=np.uint8)
        buf[:heap_len] = vec_bytes.reshape(-1)
        for j, m in enumerate(index.members):
            addrs = (m.astype(np.int64) * vb).astype(np.uint64)
            off = int(list_offsets[j])
            buf[off:off + 8 * len(m)] = addrs.view(np.uint8)
        directory["list_offsets"] = list_offsets
        directory["list_lens"] = list_lens

    else:
        if group_assignment is None:
            raise ValueError("grouped layout requires a group assignment")
        group = np.asarray(group_assignment.group if hasattr(group_assignment, "group")
                           else group_assignment, dtype=np.int32)
        if group.shape[0] != n:
            raise ValueError("group assignment length does not match dataset")
        grouped_ids = [[] for _ in range(k)]
        for v in range(n):
            g = int(group[v])
            if not 0 <= g < k:
                raise ValueError(f"vector {v} grouped into invalid cluster {g}")
            grouped_ids[g].append(v)
        replica_sets = [set(r.tolist()) for r in index.replicas]
        for v in range(n):
            if int(group[v]) not in replica_sets[v]:
                raise ValueError(f"vector {v} grouped into cluster {group[v]} "
                                 "it is not replicated in")
        grouped_ids = [np.array(g, dtype=np.int32) for g in grouped_ids]
        heap_order = np.concatenate([g for g in grouped_ids if len(g)]) \
            if n else np.empty(0, dtype=np.int32)
        heap_pos = np.empty(n, dtype=np.int64)
        heap_pos[heap_order] = np.arange(n)
        seg_lens = np.array([len(g) for g in grouped_ids], dtype=np.int64)
        seg_offsets = np.zeros(k + 1, dtype=np.int64)
        np.cumsum(seg_lens * vb, out=seg_offsets[1:])
        heap_len = n * vb
        overflow = []
        for j, m in enumerate(index.members):
            ovf = m[group[m] != j]
            overflow.append((heap_pos[ovf] * vb).astype(np.uint64))
        ovf_lens = np.array([len(o) for o in overflow], dtype=np.int64)
        ovf_offsets = np.zeros(k + 1, dtype=np.int64)
        np.cumsum(ovf_lens * 8, out=ovf_offsets[1:])
        ovf_offsets += heap_len
        buf = np.zeros(heap_len + int(ovf_lens.sum()) * 8, dtype=np.uint8)
        buf[:heap_len] = vec_bytes[heap_order].reshape(-1)
        for j, o in enumerate(overflow):
            off = int(ovf_offsets[j])
            buf[off:off + 8 * len(o)] = o.view(np.uint8)
        directory.update(seg_offsets=seg_offsets, seg_lens=seg_lens,
                         ovf_offsets=ovf_offsets, ovf_lens=ovf_lens,
                         grouped_ids=grouped_ids, heap_ids=heap_order.astype(np.int64))

    return StoredCluster(StorageRegion(buf), layout, index.centroids, directory,
                         ds.dim, ds.elem_type, n, index.params.replica_eps,
                         index.params.max_replicas, index.metric, index.navigator)


# ---------------------------------------------------------------------------
# search
# ---------------------------------------------------------------------------

def _bytes_to_vectors(raw: np.ndarray, vb: int, dtype) -> np.ndarray:
    flat = np.frombuffer(raw.tobytes(), dtype=dtype)
    return flat.reshape(-1, vb // dtype.itemsize)


def search(stored: StoredCluster, q: np.ndarray, params: ClusterSearchParams,
           device: Device, stats: IoStats = None, mode: str = "auto") -> SearchTrace:
    """Read the top-c clusters' postings and rank every fetched vector."""
    io = IoStats()
    q64 = np.ascontiguousarray(q, dtype=np.float64)
    dtype = ELEM_DTYPES[stored.elem_type]
    vb = stored.vector_bytes
    l2 = stored.metric is Metric.L2SQ
    cids = stored.select_clusters(q, params.top_c, mode=mode)
    d = stored.directory

    all_ids = []
    all_d = []
    for j in cids.tolist():
        if stored.layout == "coupled":
            off = int(d["offsets"][j])
            ln = int(d["offsets"][j + 1] - off)
            rec = device.read(stored.region, off, ln, io)
            m = int.from_bytes(rec[:4].tobytes(), "little")
            ids = np.frombuffer(rec[4:4 + 4 * m].tobytes(), dtype="<u4").astype(np.int64)
            vecs = _bytes_to_vectors(rec[4 + 4 * m:4 + (4 + vb) * m], vb, dtype)
        elif stored.layout == "decoupled":
            m = int(d["list_lens"][j])
            if m == 0:
                continue
            off = int(d["list_offsets"][j])
            lst = device.read(stored.region, off, 8 * m, io)
            addrs = np.frombuffer(lst.tobytes(), dtype="<u8").astype(np.int64)
            raw = device.read_many(stored.region, addrs, vb, io)
            ids = addrs // vb
            vecs = _bytes_to_vectors(raw, vb, dtype)
        else:
            g = int(d["seg_lens"][j])
            o = int(d["ovf_lens"][j])
            ids_parts, vec_parts = [], []
            if g:
                off = int(d["seg_offsets"][j])
                seg = device.read(stored.region, off, vb * g, io)
                ids_parts.append(d["grouped_ids"][j].astype(np.int64))
                vec_parts.append(_bytes_to_vectors(seg, vb, dtype))
            if o:
                off = int(d["ovf_offsets"][j])
                lst = device.read(stored.region, off, 8 * o, io)
                addrs = np.frombuffer(lst.tobytes(), dtype="<u8").astype(np.int64)
                raw = device.read_many(stored.region, addrs, vb, io)
                ids_parts.append(d["heap_ids"][addrs // vb])
                vec_parts.append(_bytes_to_vectors(raw, vb, dtype))
            if not ids_parts:
                continue
            ids = np.concatenate(ids_parts)
            vecs = np.vstack(vec_parts)
        dist = kernels.l2sq_one(vecs, q64) if l2 else -kernels.ip_one(vecs, q64)
        all_ids.append(ids)
        all_d.append(dist)

    if all_ids:
        ids = np.concatenate(all_ids)
        dist = np.concatenate(all_d)
        uniq, first = np.unique(ids, return_index=True)
        ids, dist = uniq, dist[first]
        order = np.lexsort((ids, dist))[:params.k]
        result = TopKResult(ids[order], dist[order], params.k)
    else:
        result = TopKResult(np.empty(0, np.int64), np.empty(0, np.float64), params.k)
    if stats is not None:
        stats.merge(io)
    return SearchTrace(io.ops, io, result)


def predict_cluster_throughput(profile, top_c: int, avg_cluster_bytes: int) -> float:
    """Queries/s bound for reading top_c cluster records per query."""
    if top_c < 1 or avg_cluster_bytes <= 0:
        raise ValueError("top_c and avg_cluster_bytes must be positive")
    return min(
        profile.bandwidth_bytes_per_s / (top_c * profile.charged(avg_cluster_bytes)),
        profile.iops_cap / top_c,
    )


# ---------------------------------------------------------------------------
# file format
# ---------------------------------------------------------------------------

_HEADER = struct.Struct("<4sIIIIQIdQ")
# magic, layout, n_clusters, dim, elem, count, max_replicas, replica_eps, region_len


def _write_arr(fh, arr, dtype):
    a = np.ascontiguousarray(arr, dtype=dtype)
    fh.write(struct.pack("<Q", a.shape[0]))
    fh.write(a.tobytes())


def _read_arr(fh, dtype):
    (n,) = struct.unpack("<Q", fh.read(8))
    item = np.dtype(dtype).itemsize
    return np.frombuffer(fh.read(n * item), dtype=dtype).copy()


def save_cluster(stored: StoredCluster, path: str) -> None:
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(CLUSTER_MAGIC, _LAYOUTS[stored.layout],
                              stored.n_clusters, stored.dim,
                              _ELEM_CODES[stored.elem_type], stored.count,
                              stored.max_replicas, stored.replica_eps,
                              stored.region.length))
        fh.write(np.ascontiguousarray(stored.centroids.vectors).tobytes())
        d = stored.directory
        if stored.layout == "coupled":
            _write_arr(fh, d["offsets"], "<i8")
        elif stored.layout == "decoupled":
            _write_arr(fh, d["list_offsets"], "<i8")
            _write_arr(fh, d["list_lens"], "<i8")
        else:
            _write_arr(fh, d["seg_offsets"], "<i8")
            _write_arr(fh, d["seg_lens"], "<i8")
            _write_arr(fh, d["ovf_offsets"], "<i8")
            _write_arr(fh, d["ovf_lens"], "<i8")
            _write_arr(fh, d["heap_ids"], "<i8")
        fh.write(stored.region.buf.tobytes())


def load_cluster(path: str) -> StoredCluster:
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        if len(head) < _HEADER.size:
            raise ValueError(f"{path}: truncated header at byte {len(head)}")
        magic, layout, k, dim, elem, count, max_rep, eps_r, region_len = _HEADER.unpack(head)
        if magic != CLUSTER_MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r} at byte 0")
        layout = _LAYOUT_NAMES[layout]
        cent = np.frombuffer(fh.read(k * dim * 4), dtype=np.float32).reshape(k, dim)
        directory = {}
        if layout == "coupled":
            directory["offsets"] = _read_arr(fh, "<i8")
        elif layout == "decoupled":
            directory["list_offsets"] = _read_arr(fh, "<i8")
            directory["list_lens"] = _read_arr(fh, "<i8")
        else:
            directory["seg_offsets"] = _read_arr(fh, "<i8")
            directory["seg_lens"] = _read_arr(fh, "<i8")
            directory["ovf_offsets"] = _read_arr(fh, "<i8")
            directory["ovf_lens"] = _read_arr(fh, "<i8")
            directory["heap_ids"] = _read_arr(fh, "<i8")
            grouped = [[] for _ in range(k)]
            pos = 0
            for j in range(k):
                g = int(directory["seg_lens"][j])
                grouped[j] = directory["heap_ids"][pos:pos + g].astype(np.int32)
                pos += g
            directory["grouped_ids"] = grouped
        buf = fh.read(region_len)
        if len(buf) != region_len:
            raise ValueError(f"{path}: truncated region, expected {region_len} bytes")
    return StoredCluster(StorageRegion(buf), layout, VectorDataset(cent.copy()),
                         directory, dim, _ELEM_NAMES[elem], count, eps_r, max_rep)
