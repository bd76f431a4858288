import numpy as np
import pytest

from tiervec import bench, cluster as cl, graph as gr
from tiervec.core import VectorDataset


@pytest.fixture(scope="session")
def small_workload():
    """Shared 4K-vector corpus with queries and exact ground truth."""
    params = bench.SyntheticParams(n=4000, dim=32, components=16, spread=0.5,
                                   n_queries=60, latent_dim=8, seed=42)
    ds, queries = bench.make_synthetic(params)
    truth = bench.ground_truth(ds, queries, 10)
    return ds, queries, truth


@pytest.fixture(scope="session")
def small_graph(small_workload):
    ds, _, _ = small_workload
    raw = gr.build_knn_graph(ds, 32)
    index = gr.prune_from_raw(ds, raw, gr.GraphBuildParams(knn_k=32, max_degree=16))
    return raw, index


@pytest.fixture(scope="session")
def small_cluster(small_workload):
    ds, _, _ = small_workload
    params = cl.ClusterBuildParams(n_clusters=50, kmeans_iters=6, replica_eps=0.1,
                                   max_replicas=8)
    return cl.build_cluster_index(ds, params, seed=7)


@pytest.fixture()
def tiny_1d():
    def make(values):
        return VectorDataset(np.asarray(values, dtype=np.float32).reshape(-1, 1))
    return make
