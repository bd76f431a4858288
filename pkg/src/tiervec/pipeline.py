"""Software pipeline: interleave hops of several queries on one worker so
device latency overlaps, without ever reordering work inside a query.

Execution really is interleaved (each in-flight query advances one hop per
round-robin turn, a finished slot is refilled immediately), which makes the
result-equivalence guarantee a property of the engine rather than an
assumption: per-query results and hop counts are bitwise identical to a
synchronous run at any depth.

The time model charges each worker the maximum of the device bounds
(charged bandwidth, op rate) and the serial costs on the worker itself.
Synchronous execution (depth 1) busy-waits: every hop pays access latency
plus per-op overhead plus compute. A pipelined worker overlaps access
latency across ``depth`` in-flight queries while compute stays serial, so
large depths end at the compute, bandwidth or op-rate bound, whichever
binds first.
"""

from dataclasses import dataclass, field

import numpy as np

from .core import Metric
from .device import Device, DeviceProfile, IoStats
from .graph import SearchParams, StoredGraph, _search_steps


@dataclass
class PipelineConfig:
    depth: int = 1
    workers: int = 1
    compute_per_hop_s: float = 0.0

    def __post_init__(self):
        if self.depth < 1 or self.workers < 1:
            raise ValueError(f"depth and workers must be >= 1, got {self}")
        if self.compute_per_hop_s < 0:
            raise ValueError("compute_per_hop_s must be >= 0")


@dataclass
class PipelineResult:
    total_time_s: float
    throughput_qps: float
    worker_times_s: list
    io: IoStats = field(default_factory=IoStats)

    @property
    def total_hops(self) -> int:
        return self.io.ops


def pipeline_time(stats: IoStats, profile: DeviceProfile, depth: int,
                  compute_per_hop_s: float = 0.0) -> float:
    """Seconds one worker needs for the recorded reads at a given depth."""
    io_bound = max(stats.bytes_charged / profile.bandwidth_bytes_per_s,
                   stats.ops / profile.iops_cap)
    access = profile.latency_s + profile.per_op_overhead_s
    if depth == 1:
        serial = stats.ops * (access + compute_per_hop_s)
    else:
        serial = max(stats.ops * compute_per_hop_s, stats.ops * access / depth)
    return max(io_bound, serial)


def run_pipelined(queries, stored: StoredGraph, device: Device, params: SearchParams,
                  config: PipelineConfig, metric: Metric = Metric.L2SQ):
    """Run all queries through per-worker round-robin pipelines.

    Returns (traces in query order, PipelineResult). Worker w owns queries
    w, w + workers, ...; its modeled time covers its own reads, and the run
    finishes when the slowest worker does.
    """
    queries = np.asarray(queries)
    n = queries.shape[0]
    traces = [None] * n
    worker_times = []
    agg = IoStats()
    for w in range(config.workers):
        own = list(range(w, n, config.workers))
        wstats = IoStats()
        slots = []  # (query index, generator, per-query IoStats)
        pending = iter(own)

        def admit(slots, pending):
            for qi in pending:
                io = IoStats()
                gen = _search_steps(stored, queries[qi], params, device, io, metric)
                slots.append((qi, gen, io))
                return True
            return False

        while len(slots) < config.depth and admit(slots, pending):
            pass
        s = 0
        while slots:
            qi, gen, io = slots[s]
            try:
                next(gen)
                s = (s + 1) % len(slots)
            except StopIteration as stop:
                traces[qi] = stop.value
                wstats.merge(io)
                slots.pop(s)
                if admit(slots, pending):
                    # refilled in place: the new query takes over this slot
                    slots.insert(s, slots.pop())
                if slots:
                    s %= len(slots)
        worker_times.append(pipeline_time(wstats, device.profile, config.depth,
                                          config.compute_per_hop_s))
        agg.merge(wstats)
    total = max(worker_times) if worker_times else 0.0
    qps = n / total if total > 0 else float("inf")
    return traces, PipelineResult(total, qps, worker_times, agg)
