"""Graph-based vector index.

Build: exact kNN lists pruned to a bounded degree with an occlusion rule,
reverse-edge fill, and a connectivity repair pass so every node is reachable
from the entry point (the dataset medoid).

Storage: two on-device layouts over the same records. ``padded`` stores a
fixed-size record per node (vector, degree, max_degree edge slots with
0xFFFFFFFF sentinels) aligned to a block multiple; ``csr`` packs
variable-length records back to back with an offsets table.

Search: classic best-first traversal with a candidate set capped at L.
Every hop reads exactly one node record (vector and edges live together);
neighbour insertion is ordered by full-precision in-memory distances, the
navigation hint that stands in for the compressed in-memory structures of
production systems. The expanded node's result distance is recomputed from
the fetched bytes, so storage stays authoritative and layouts with identical
records return identical results. Traversal stops when no unvisited
candidate remains among the best L.
"""

import struct
from bisect import insort
from dataclasses import dataclass

import numpy as np

from . import kernels
from .core import ELEM_DTYPES, Metric, TopKResult, VectorDataset, medoid
from .device import Device, IoStats, StorageRegion

EDGE_SENTINEL = 0xFFFFFFFF
_CAND_PAD = 8  # extra approximate candidates reranked exactly during build

GRAPH_MAGIC = b"GVX1"
_LAYOUTS = {"padded": 0, "csr": 1}
_LAYOUT_NAMES = {v: k for k, v in _LAYOUTS.items()}
_ELEM_CODES = {"int8": 0, "uint8": 1, "float32": 2}
_ELEM_NAMES = {v: k for k, v in _ELEM_CODES.items()}


@dataclass
class GraphBuildParams:
    knn_k: int = 64
    max_degree: int = 32
    prune_alpha: float = 1.2

    def __post_init__(self):
        if not 1 <= self.max_degree <= self.knn_k:
            raise ValueError(f"need 1 <= max_degree <= knn_k, got {self}")
        if self.prune_alpha < 1.0:
            raise ValueError(f"prune_alpha must be >= 1, got {self.prune_alpha}")


@dataclass
class SearchParams:
    L: int
    k: int

    def __post_init__(self):
        if not self.L >= self.k >= 1:
            raise ValueError(f"need L >= k >= 1, got L={self.L} k={self.k}")


@dataclass
class SearchTrace:
    hops: int
    io: IoStats
    result: TopKResult


class GraphIndex:
    """In-memory adjacency form of the index (pre-serialization)."""

    def __init__(self, dataset: VectorDataset, adjacency, start_node: int, max_degree: int):
        self.dataset = dataset
        self.adjacency = adjacency
        self.start_node = int(start_node)
        self.max_degree = int(max_degree)
        self._nav64 = None

    def nav_vectors(self) -> np.ndarray:
        if self._nav64 is None:
            self._nav64 = self.dataset.vectors.astype(np.float64)
        return self._nav64

    @property
    def avg_degree(self) -> float:
        if not self.adjacency:
            return 0.0
        return sum(len(a) for a in self.adjacency) / len(self.adjacency)


def build_knn_graph(ds: VectorDataset, knn_k: int, metric: Metric = Metric.L2SQ,
                    chunk: int = 1024):
    """Exact kNN lists for every vector, sorted by (distance, id), self excluded.

    Candidates come from a float32 BLAS pass and are reranked with exact
    float64 distances, so the returned lists match the brute-force oracle.
    """
    n = ds.count
    if knn_k < 1:
        raise ValueError(f"knn_k must be >= 1, got {knn_k}")
    if knn_k >= n:
        raise ValueError(f"knn_k={knn_k} must be smaller than count={n}")
    x = ds.vectors
    kk = min(n, knn_k + 1 + _CAND_PAD)
    adjacency = [None] * n
    for s in range(0, n, chunk):
        e = min(n, s + chunk)
        rows = np.arange(s, e, dtype=np.int64)
        if metric is Metric.L2SQ:
            approx = kernels.pairwise_l2sq_blas(x[s:e], x)
        else:
            x32 = x.astype(np.float32, copy=False)
            approx = -(x32[s:e] @ x32.T)
        cand = kernels.topk_select(approx, kk)
        if metric is Metric.L2SQ:
            exact = kernels.gather_l2sq(x, rows, cand)
        else:
            a = x[rows].astype(np.float64)
            b = x[cand].astype(np.float64)
            exact = -np.einsum("ij,itj->it", a, b)
        order = np.lexsort((cand, exact), axis=1)
        cand = np.take_along_axis(cand, order, axis=1)
        for i in range(e - s):
            row = cand[i]
            row = row[row != s + i][:knn_k]
            adjacency[s + i] = row.astype(np.int32)
    return adjacency


def _pair_dists(ds: VectorDataset, node_ids, cand_matrix, metric: Metric):
    """(m, 1+c, 1+c) float32 distance blocks over {node} U candidates."""
    x32 = ds.vectors.astype(np.float32, copy=False)
    idx = np.concatenate([node_ids[:, None], cand_matrix], axis=1)
    v = x32[idx]  # (m, 1+c, dim)
    if metric is Metric.L2SQ:
        sq = np.einsum("mcd,mcd->mc", v, v)
        g = v @ v.transpose(0, 2, 1)
        d = sq[:, :, None] + sq[:, None, :] - 2.0 * g
        np.maximum(d, 0.0, out=d)
        return d
    return -(v @ v.transpose(0, 2, 1))


def prune_sng(raw_adjacency, ds: VectorDataset, max_degree: int, alpha: float = 1.2,
              metric: Metric = Metric.L2SQ, chunk: int = 1024):
    """Degree-bounded pruning, reverse-edge fill and connectivity repair.

    Raw candidate lists must be sorted nearest-first (``build_knn_graph``
    output). Returns new adjacency lists, each sorted by (distance, id) and
    at most ``max_degree`` long, with every node reachable from the medoid.
    """
    n = ds.count
    cmax = max(len(a) for a in raw_adjacency) if n else 0
    kept_lists = [None] * n
    for s in range(0, n, chunk):
        e = min(n, s + chunk)
        m = e - s
        node_ids = np.arange(s, e, dtype=np.int64)
        cand = np.zeros((m, cmax), dtype=np.int64)
        ncand = np.zeros(m, dtype=np.int32)
        for i in range(m):
            row = raw_adjacency[s + i]
            cand[i, :len(row)] = row
            ncand[i] = len(row)
        d = _pair_dists(ds, node_ids, cand, metric)
        kept, kcount = kernels.sng_prune(d[:, 1:, 1:], d[:, 0, 1:], ncand, max_degree, alpha)
        for i in range(m):
            kept_lists[s + i] = cand[i, kept[i, :kcount[i]]].astype(np.int32)

    # reverse-edge fill: a pruned edge p->c earns c->p when c has room
    id_sorted = [np.sort(a) for a in kept_lists]
    extra = [[] for _ in range(n)]
    for p in range(n):
        for c in kept_lists[p].tolist():
            room = len(kept_lists[c]) + len(extra[c])
            if room >= max_degree:
                continue
            j = np.searchsorted(id_sorted[c], p)
            if j < len(id_sorted[c]) and id_sorted[c][j] == p:
                continue
            if p not in extra[c]:
                extra[c].append(p)

    adjacency = _merge_sorted(ds, kept_lists, extra, metric)
    _repair_connectivity(ds, adjacency, medoid(ds), max_degree, metric)
    return adjacency


def _merge_sorted(ds, kept_lists, extra, metric):
    """Merge pruned and reverse edges, each list sorted by (distance, id)."""
    adjacency = [None] * ds.count
    for p in range(ds.count):
        ids = kept_lists[p]
        if extra[p]:
            ids = np.concatenate([ids, np.asarray(extra[p], dtype=np.int32)])
        if len(ids) == 0:
            adjacency[p] = ids.astype(np.int32)
            continue
        d = _edge_dists(ds, p, ids, metric)
        order = np.lexsort((ids, d))
        adjacency[p] = ids[order].astype(np.int32)
    return adjacency


def _edge_dists(ds, p, ids, metric):
    a = ds.vectors[p].astype(np.float64)
    b = ds.vectors[ids].astype(np.float64)
    if metric is Metric.L2SQ:
        d = b - a
        return np.einsum("ij,ij->i", d, d)
    return -(b @ a)


def _reachable(adjacency, start: int) -> np.ndarray:
    n = len(adjacency)
    seen = np.zeros(n, dtype=bool)
    seen[start] = True
    stack = [start]
    while stack:
        p = stack.pop()
        for c in adjacency[p].tolist():
            if not seen[c]:
                seen[c] = True
                stack.append(c)
    return seen


def _repair_connectivity(ds, adjacency, start, max_degree, metric, max_rounds=256):
    """Link every unreachable node from its nearest reachable neighbour.

    A full list loses its farthest edge to make room, but edges added by the
    repair itself are never evicted so progress is monotone even at tiny
    degree bounds.
    """
    protected = set()
    x32 = ds.vectors.astype(np.float32, copy=False)
    for _ in range(max_rounds):
        seen = _reachable(adjacency, start)
        un = np.flatnonzero(~seen)
        if un.size == 0:
            return
        reach = np.flatnonzero(seen)
        if metric is Metric.L2SQ:
            d = kernels.pairwise_l2sq_blas(x32[un], x32[reach])
        else:
            d = -(x32[un] @ x32[reach].T)
        t = min(reach.size, 64)
        cand = reach[kernels.topk_select(d, t)]
        for i, u in enumerate(un.tolist()):
            for r in cand[i].tolist():
                if _insert_edge(ds, adjacency, r, u, max_degree, metric, protected):
                    break
    raise RuntimeError("connectivity repair did not converge")


def _insert_edge(ds, adjacency, r, u, max_degree, metric, protected):
    lst = adjacency[r]
    if u in lst:
        protected.add((r, u))
        return True
    if len(lst) < max_degree:
        ids = np.append(lst, np.int32(u))
    else:
        victim = None
        for j in range(len(lst) - 1, -1, -1):  # farthest unprotected edge
            if (r, int(lst[j])) not in protected:
                victim = j
                break
        if victim is None:
            return False
        ids = lst.copy()
        ids[victim] = u
    dd = _edge_dists(ds, r, ids, metric)
    order = np.lexsort((ids, dd))
    adjacency[r] = ids[order].astype(np.int32)
    protected.add((r, u))
    return True


def build_graph_index(ds: VectorDataset, params: GraphBuildParams,
                      metric: Metric = Metric.L2SQ) -> GraphIndex:
    raw = build_knn_graph(ds, params.knn_k, metric)
    return prune_from_raw(ds, raw, params, metric)


def prune_from_raw(ds: VectorDataset, raw_adjacency, params: GraphBuildParams,
                   metric: Metric = Metric.L2SQ) -> GraphIndex:
    """Prune a prebuilt kNN graph; lets one kNN pass serve several degrees."""
    adjacency = prune_sng(raw_adjacency, ds, params.max_degree, params.prune_alpha, metric)
    return GraphIndex(ds, adjacency, medoid(ds), params.max_degree)


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

class StoredGraph:
    """Serialized graph: a storage region plus in-memory navigation metadata.

    The region holds one record per node: vector bytes, a uint32 degree and
    uint32 edge ids. The offsets table (and for the padded layout the fixed
    record length) stays in memory; a search reads exactly one record per hop.
    """

    def __init__(self, region: StorageRegion, offsets: np.ndarray, layout: str,
                 dim: int, elem_type: str, count: int, max_degree: int,
                 start_node: int, block_bytes: int, dataset: VectorDataset = None):
        self.region = region
        self.offsets = offsets  # (count + 1) int64 record starts
        self.layout = layout
        self.dim = dim
        self.elem_type = elem_type
        self.count = count
        self.max_degree = max_degree
        self.start_node = start_node
        self.block_bytes = block_bytes
        self.dataset = dataset  # in-memory vectors used as the navigation hint
        self.vector_bytes = dim * ELEM_DTYPES[elem_type].itemsize
        self._nav64 = None
        # a padded record is read without its alignment tail
        self._read_len = self.vector_bytes + 4 + 4 * max_degree if layout == "padded" else 0

    def nav_vectors(self) -> np.ndarray:
        """float64 view of the dataset used to order neighbour insertions."""
        if self._nav64 is None:
            if self.dataset is None:
                raise ValueError("search needs the dataset attached for navigation; "
                                 "pass it to load_graph or set stored.dataset")
            self._nav64 = self.dataset.vectors.astype(np.float64)
        return self._nav64

    def record_span(self, node: int):
        off = int(self.offsets[node])
        if self.layout == "padded":
            return off, self._read_len
        return off, int(self.offsets[node + 1] - self.offsets[node])

    @property
    def raw_dataset_bytes(self) -> int:
        return self.count * self.vector_bytes

    def amplification(self) -> float:
        return self.region.length / self.raw_dataset_bytes


def serialize(graph: GraphIndex, layout: str, block_bytes: int = 4096) -> StoredGraph:
    """Produce the on-device byte image of the graph in the given layout."""
    if layout not in _LAYOUTS:
        raise ValueError(f"unknown layout {layout!r}")
    ds = graph.dataset
    n = ds.count
    vb = ds.vector_bytes
    r = graph.max_degree
    vec_bytes = np.ascontiguousarray(ds.vectors).view(np.uint8).reshape(n, vb)

    if layout == "padded":
        logical = vb + 4 + 4 * r
        rec_len = -(-logical // block_bytes) * block_bytes
        if rec_len <= 0:
            raise ValueError("record does not fit a feasible padded layout")
        buf = np.zeros(n * rec_len, dtype=np.uint8)
        recs = buf.reshape(n, rec_len)
        recs[:, :vb] = vec_bytes
        edges = np.full((n, r), EDGE_SENTINEL, dtype=np.uint32)
        degs = np.zeros(n, dtype=np.uint32)
        for i, adj in enumerate(graph.adjacency):
            degs[i] = len(adj)
            edges[i, :len(adj)] = adj
        recs[:, vb:vb + 4] = degs.view(np.uint8).reshape(n, 4)
        recs[:, vb + 4:vb + 4 + 4 * r] = edges.view(np.uint8).reshape(n, 4 * r)
        offsets = np.arange(n + 1, dtype=np.int64) * rec_len
        region = StorageRegion(buf)
    else:
        lens = np.array([vb + 4 + 4 * len(a) for a in graph.adjacency], dtype=np.int64)
        offsets = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(lens, out=offsets[1:])
        buf = np.zeros(int(offsets[-1]), dtype=np.uint8)
        for i, adj in enumerate(graph.adjacency):
            off = int(offsets[i])
            buf[off:off + vb] = vec_bytes[i]
            hdr = np.array([len(adj)], dtype=np.uint32)
            buf[off + vb:off + vb + 4] = hdr.view(np.uint8)
            if len(adj):
                buf[off + vb + 4:off + vb + 4 + 4 * len(adj)] = \
                    adj.astype(np.uint32).view(np.uint8)
        region = StorageRegion(buf)

    return StoredGraph(region, offsets, layout, ds.dim, ds.elem_type, n,
                       graph.max_degree, graph.start_node, block_bytes, dataset=ds)


_HEADER = struct.Struct("<4sIIIQIIIQ")  # magic, layout, dim, elem, count, R, start, block, region_len


def save_graph(stored: StoredGraph, path: str) -> None:
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(GRAPH_MAGIC, _LAYOUTS[stored.layout], stored.dim,
                              _ELEM_CODES[stored.elem_type], stored.count,
                              stored.max_degree, stored.start_node,
                              stored.block_bytes, stored.region.length))
        fh.write(stored.offsets.astype("<i8").tobytes())
        fh.write(stored.region.buf.tobytes())


def load_graph(path: str, dataset: VectorDataset = None) -> StoredGraph:
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        if len(head) < _HEADER.size:
            raise ValueError(f"{path}: truncated header at byte {len(head)}")
        magic, layout, dim, elem, count, r, start, block, region_len = _HEADER.unpack(head)
        if magic != GRAPH_MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r} at byte 0")
        offsets = np.frombuffer(fh.read((count + 1) * 8), dtype="<i8")
        buf = fh.read(region_len)
        if len(buf) != region_len:
            raise ValueError(f"{path}: truncated region, expected {region_len} bytes")
    if dataset is not None and (dataset.count != count or dataset.dim != dim):
        raise ValueError(f"{path}: dataset shape {dataset.count}x{dataset.dim} "
                         f"does not match index {count}x{dim}")
    return StoredGraph(StorageRegion(buf), offsets.astype(np.int64),
                       _LAYOUT_NAMES[layout], dim, _ELEM_NAMES[elem], count, r,
                       start, block, dataset=dataset)


# ---------------------------------------------------------------------------
# search
# ---------------------------------------------------------------------------

def _decode_record(rec: np.ndarray, vb: int, dtype) -> tuple:
    vec = np.frombuffer(rec[:vb].tobytes(), dtype=dtype).astype(np.float64)
    deg = int.from_bytes(rec[vb:vb + 4].tobytes(), "little")
    if 4 + vb + 4 * deg > len(rec):
        raise ValueError("corrupt record: degree exceeds record length")
    edges = np.frombuffer(rec[vb + 4:vb + 4 + 4 * deg].tobytes(), dtype="<u4")
    return vec, edges


class _Beam:
    """Best-first candidate set shared by the storage and in-memory searches.

    Holds at most L (distance, id) candidates. The closest unexpanded
    candidate is expanded next; its neighbours are inserted ordered by their
    navigation distance, evicting anything past L. Results are the expanded
    (visited) nodes.
    """

    def __init__(self, L: int):
        self.L = L
        self.cand = []          # sorted (dist, id), at most L entries
        self.seen = set()       # ids ever inserted, never re-inserted
        self.visited = {}       # expanded id -> exact distance from storage

    def next_node(self):
        """Closest unexpanded candidate, or None when traversal is done."""
        for d, nid in self.cand:
            if nid not in self.visited:
                return nid
        return None

    def insert(self, nid: int, dist: float) -> None:
        if nid in self.seen:
            return
        self.seen.add(nid)
        insort(self.cand, (dist, nid))
        del self.cand[self.L:]

    def topk(self, k: int) -> TopKResult:
        top = sorted((d, i) for i, d in self.visited.items())[:k]
        return TopKResult(np.array([i for _, i in top], dtype=np.int64),
                          np.array([d for d, _ in top], dtype=np.float64), k)


def _nav_distances(nav64: np.ndarray, ids, q64: np.ndarray, l2: bool) -> np.ndarray:
    v = nav64[ids]
    if l2:
        d = v - q64
        return np.einsum("ij,ij->i", d, d)
    return -(v @ q64)


def _search_steps(stored: StoredGraph, q: np.ndarray, params: SearchParams,
                  device: Device, io: IoStats, metric: Metric):
    """Generator form of the traversal: yields once per hop (device read)."""
    q64 = np.ascontiguousarray(q, dtype=np.float64)
    dtype = ELEM_DTYPES[stored.elem_type]
    vb = stored.vector_bytes
    l2 = metric is Metric.L2SQ
    nav64 = stored.nav_vectors()

    beam = _Beam(params.L)
    beam.insert(stored.start_node,
                float(_nav_distances(nav64, [stored.start_node], q64, l2)[0]))
    hops = 0
    while True:
        nid = beam.next_node()
        if nid is None:
            break
        off, ln = stored.record_span(nid)
        rec = device.read(stored.region, off, ln, io)
        hops += 1
        vec, edges = _decode_record(rec, vb, dtype)
        # exact distance from the fetched bytes; identical to the navigation
        # value because both views hold the same vector
        d = kernels.l2sq_pair(q64, vec) if l2 else -kernels.ip_pair(q64, vec)
        beam.visited[nid] = d
        fresh = [c for c in edges.tolist() if c not in beam.seen]
        if fresh:
            nd = _nav_distances(nav64, fresh, q64, l2)
            for dc, c in zip(nd.tolist(), fresh):
                beam.insert(c, dc)
        yield hops
    return SearchTrace(hops, io, beam.topk(params.k))


def search(stored: StoredGraph, q: np.ndarray, params: SearchParams, device: Device,
           stats: IoStats = None, metric: Metric = Metric.L2SQ) -> SearchTrace:
    """Best-first traversal over the serialized graph; one read per hop."""
    io = IoStats()
    gen = _search_steps(stored, q, params, device, io, metric)
    while True:
        try:
            next(gen)
        except StopIteration as stop:
            trace = stop.value
            break
    if stats is not None:
        stats.merge(io)
    return trace


def search_in_memory(graph: GraphIndex, q: np.ndarray, params: SearchParams,
                     metric: Metric = Metric.L2SQ) -> TopKResult:
    """Same traversal discipline over in-memory adjacency (no device, no I/O).

    Used for centroid navigation where the graph lives in DRAM.
    """
    q64 = np.ascontiguousarray(q, dtype=np.float64)
    nav64 = graph.nav_vectors()
    l2 = metric is Metric.L2SQ
    beam = _Beam(params.L)
    beam.insert(graph.start_node, float(_nav_distances(nav64, [graph.start_node], q64, l2)[0]))
    while True:
        nid = beam.next_node()
        if nid is None:
            break
        beam.visited[nid] = float(_nav_distances(nav64, [nid], q64, l2)[0])
        fresh = [c for c in graph.adjacency[nid].tolist() if c not in beam.seen]
        if fresh:
            nd = _nav_distances(nav64, fresh, q64, l2)
            for dc, c in zip(nd.tolist(), fresh):
                beam.insert(c, dc)
    return beam.topk(params.k)


# ---------------------------------------------------------------------------
# cost models
# ---------------------------------------------------------------------------

def index_amplification(region: StorageRegion, ds: VectorDataset) -> float:
    """Region bytes over raw dataset bytes (vectors included in both)."""
    return region.length / ds.raw_bytes


def extra_amplification(region: StorageRegion, ds: VectorDataset) -> float:
    """Index overhead alone: bytes beyond the raw vectors, over raw bytes."""
    return (region.length - ds.raw_bytes) / ds.raw_bytes


def predict_graph_throughput(profile, avg_hops: float, record_bytes: int) -> float:
    """Queries/s bound: charged bandwidth and op-rate shared across hops."""
    if avg_hops <= 0:
        raise ValueError(f"avg_hops must be positive, got {avg_hops}")
    return min(
        profile.bandwidth_bytes_per_s / (avg_hops * profile.charged(record_bytes)),
        profile.iops_cap / avg_hops,
    )
