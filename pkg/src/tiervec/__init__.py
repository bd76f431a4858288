"""tiervec: vector search over simulated tiered-storage devices.

Graph and cluster ANN indexes with explicit on-device layouts, a
block-granular I/O cost model for SSD and second-tier memory profiles,
a latency-hiding query pipeline, and a cluster-aware grouping optimizer.
"""

from .core import (Metric, TopKResult, VectorDataset, brute_force_topk,
                   distance, medoid, recall)
from .device import (BUILTIN_PROFILES, Device, DeviceProfile, IoStats,
                     StorageRegion, effective_bandwidth, load_profile,
                     simulate_time)

__all__ = [
    "Metric",
    "TopKResult",
    "VectorDataset",
    "brute_force_topk",
    "distance",
    "medoid",
    "recall",
    "BUILTIN_PROFILES",
    "Device",
    "DeviceProfile",
    "IoStats",
    "StorageRegion",
    "effective_bandwidth",
    "load_profile",
    "simulate_time",
]

__version__ = "0.1.0"
