import subprocess
import sys

import numpy as np
import pytest

from tiervec import bench, cluster as cl, grouping as gp, vecio
from tiervec.cli import main as cli_main
from tiervec.core import VectorDataset
from tiervec.device import BUILTIN_PROFILES


def test_synthetic_deterministic():
    params = bench.SyntheticParams(n=500, dim=16, components=8, n_queries=20, seed=9)
    ds1, q1 = bench.make_synthetic(params)
    ds2, q2 = bench.make_synthetic(params)
    assert np.array_equal(ds1.vectors, ds2.vectors)
    assert np.array_equal(q1.vectors, q2.vectors)


def test_synthetic_zero_spread_collapses_clusters():
    params = bench.SyntheticParams(n=400, dim=16, components=4, spread=1e-9,
                                   noise=0.0, n_queries=10, seed=1)
    ds, queries = bench.make_synthetic(params)
    # intra-component distances collapse: one posting list per component makes
    # top_c=1 exact (built directly so the check covers search, not kmeans luck)
    d = ds.vectors.astype(np.float64)
    comp_ids, comp_inv = np.unique(np.round(d, 3), axis=0, return_inverse=True)
    centroids = VectorDataset(comp_ids.astype(np.float32))
    primary = comp_inv.astype(np.int32)
    replicas = [np.array([c], dtype=np.int32) for c in primary]
    index = cl.ClusterIndex(ds, centroids, primary, replicas,
                            cl.ClusterBuildParams(n_clusters=centroids.count),
                            navigator=None)
    stored = cl.serialize_cluster(index, "coupled")
    truth = bench.ground_truth(ds, queries, 10)
    from tiervec.device import Device
    dev = Device(BUILTIN_PROFILES["cxl"])
    for i in range(queries.count):
        tr = cl.search(stored, queries.vectors[i], cl.ClusterSearchParams(top_c=1, k=10), dev)
        assert bench.mean_recall([tr.result.ids], truth[i:i + 1], 10) == 1.0


def test_synthetic_int8_types():
    params = bench.SyntheticParams(n=100, dim=8, components=4, n_queries=5,
                                   elem_type="int8", seed=2)
    ds, queries = bench.make_synthetic(params)
    assert ds.elem_type == "int8" and queries.elem_type == "int8"


def test_skewed_queries_concentrate_cluster_mass(small_cluster):
    index = small_cluster
    params = bench.SyntheticParams(n=1, dim=32, components=16, spread=0.5,
                                   n_queries=300, skew=0.7, latent_dim=8, seed=42)
    _, queries = bench.make_synthetic(params)
    h = gp.estimate_frequencies(queries.vectors, index, 5)
    top_decile = max(1, index.n_clusters // 10)
    share = np.sort(h)[::-1][:top_decile].sum() / h.sum()
    assert share >= 0.5


def test_ground_truth_matches_oracle(small_workload):
    ds, queries, truth = small_workload
    again = bench.ground_truth(ds, queries, 10)
    assert np.array_equal(again, truth)


def test_microbench_rows():
    rows = bench.microbench_device(BUILTIN_PROFILES["ssd"])
    payload = {r["payload_bytes"]: r for r in rows if r["kind"] == "payload"}
    assert payload[4096]["peak_fraction"] == pytest.approx(1.0)
    curve = [payload[p]["effective_bandwidth"] for p in sorted(payload)]
    assert all(b >= a for a, b in zip(curve, curve[1:]))
    mix = {round(r["small_fraction"], 1): r for r in rows if r["kind"] == "mix"}
    assert mix[0.9]["slowdown"] > mix[0.1]["slowdown"] > 0


def test_sweep_graph_trends(small_workload):
    ds, queries, truth = small_workload
    rows = bench.sweep_graph(ds, queries, truth, [4, 8, 16],
                             BUILTIN_PROFILES["rdma"], k=10, target=0.85,
                             knn_k=32, depth=8)
    assert [r["R"] for r in rows] == [4, 8, 16]
    hops = [r["avg_hops"] for r in rows]
    assert all(h > 0 for h in hops)
    assert hops[-1] <= hops[0]
    amps = [r["amp_total"] for r in rows]
    assert all(b >= a for a, b in zip(amps, amps[1:]))
    for r in rows:
        assert r["recall"] >= 0.85 or not r["reached_target"]


def test_sweep_cluster_trends(small_workload):
    ds, queries, truth = small_workload
    params = cl.ClusterBuildParams(n_clusters=50, kmeans_iters=5)
    rows = bench.sweep_cluster(ds, queries, truth, [0.0, 0.2], ["coupled", "decoupled"],
                               BUILTIN_PROFILES["rdma"], params, k=10, target=0.85)
    by = {(r["eps_r"], r["layout"]): r for r in rows}
    assert by[(0.2, "coupled")]["top_c"] <= by[(0.0, "coupled")]["top_c"]
    # replicating addresses is nearly free, vector copies are not
    coupled_growth = by[(0.2, "coupled")]["amp_total"] - by[(0.0, "coupled")]["amp_total"]
    dec_growth = by[(0.2, "decoupled")]["amp_total"] - by[(0.0, "decoupled")]["amp_total"]
    assert dec_growth < coupled_growth
    assert by[(0.2, "decoupled")]["amp_total"] < by[(0.2, "coupled")]["amp_total"]


def test_csv_reproducible(tmp_path, small_workload):
    ds, queries, truth = small_workload
    rows = bench.sweep_graph(ds, queries, truth, [8], BUILTIN_PROFILES["cxl"],
                             k=10, target=0.8, knn_k=32)
    p1, p2 = str(tmp_path / "a.csv"), str(tmp_path / "b.csv")
    bench.write_csv(rows, p1)
    bench.write_csv(rows, p2)
    assert open(p1, "rb").read() == open(p2, "rb").read()
    assert open(p1).readline().startswith("schema,")


def test_tuner_flags_unreachable_target(small_workload, small_graph):
    ds, queries, truth = small_workload
    from tiervec import graph as gr
    from tiervec.device import Device
    _, index = small_graph
    stored = gr.serialize(index, "csr")
    # impossible ground truth: no parameter can ever reach the target
    wrong = (truth + 1777) % ds.count
    tuned = bench.tune_graph_L(stored, queries, wrong, 10, 0.9,
                               Device(BUILTIN_PROFILES["cxl"]), cap=64)
    assert not tuned.reached
    assert tuned.param == 64
    assert tuned.achieved_recall < 0.9


def test_cli_end_to_end(tmp_path):
    d = str(tmp_path / "ds.fvecs")
    q = str(tmp_path / "q.fvecs")
    t = str(tmp_path / "t.ivecs")
    g = str(tmp_path / "g.gvx")
    c = str(tmp_path / "c.cvx")
    assert cli_main(["gen", "--dataset", d, "--queries", q, "--n", "1200",
                     "--dim", "24", "--components", "12", "--n-queries", "30",
                     "--seed", "3"]) == 0
    assert cli_main(["gt", "--dataset", d, "--queries", q, "--k", "10",
                     "--out", t]) == 0
    assert cli_main(["build-graph", "--dataset", d, "--knn-k", "24",
                     "--max-degree", "12", "--out", g]) == 0
    assert cli_main(["build-cluster", "--dataset", d, "--n-clusters", "30",
                     "--out", c]) == 0
    out_csv = str(tmp_path / "res.csv")
    assert cli_main(["search", "--index", g, "--dataset", d, "--queries", q,
                     "--truth", t, "--recall-target", "0.8",
                     "--out", out_csv]) == 0
    assert cli_main(["search", "--index", c, "--dataset", d, "--queries", q,
                     "--truth", t, "--recall-target", "0.8"]) == 0
    assert cli_main(["micro", "--device", "nvm",
                     "--out", str(tmp_path / "micro.csv")]) == 0


def test_cli_exit_codes(tmp_path):
    bad = tmp_path / "bad.fvecs"
    bad.write_bytes(b"\x02\x00\x00\x00\x01\x02")  # truncated record
    q = str(tmp_path / "q.fvecs")
    vecio.write_vecs(q, np.zeros((1, 2), np.float32))
    assert cli_main(["gt", "--dataset", str(bad), "--queries", q]) == 2

    d = str(tmp_path / "ds.fvecs")
    assert cli_main(["gen", "--dataset", d, "--queries", q, "--n", "300",
                     "--dim", "8", "--components", "3", "--n-queries", "10",
                     "--seed", "4"]) == 0
    g = str(tmp_path / "g.gvx")
    assert cli_main(["build-graph", "--dataset", d, "--knn-k", "8",
                     "--max-degree", "4", "--out", g]) == 0
    # impossible ground truth makes the target unreachable at any L
    t = str(tmp_path / "t.ivecs")
    truth = bench.ground_truth(vecio.read_vecs(d), vecio.read_vecs(q), 10)
    vecio.write_vecs(t, (truth + 123) % 300, "ivecs")
    assert cli_main(["search", "--index", g, "--dataset", d, "--queries", q,
                     "--truth", t, "--k", "10", "--recall-target", "0.9"]) == 3
    # unknown index magic reports a format error
    assert cli_main(["search", "--index", d, "--dataset", d, "--queries", q,
                     "--truth", t]) == 2


def test_cli_sweeps_and_compare(tmp_path):
    d = str(tmp_path / "ds.fvecs")
    q = str(tmp_path / "q.fvecs")
    assert cli_main(["gen", "--dataset", d, "--queries", q, "--n", "1500",
                     "--dim", "24", "--components", "12", "--n-queries", "25",
                     "--seed", "8"]) == 0
    sg = str(tmp_path / "sg.csv")
    assert cli_main(["sweep-graph", "--dataset", d, "--queries", q,
                     "--r-list", "8,16", "--recall-target", "0.85",
                     "--device", "rdma", "--out", sg]) == 0
    sc = str(tmp_path / "sc.csv")
    assert cli_main(["sweep-cluster", "--dataset", d, "--queries", q,
                     "--eps-r-list", "0.0,0.2", "--layouts", "decoupled,grouped",
                     "--n-clusters", "25", "--recall-target", "0.85",
                     "--device", "rdma", "--out", sc]) == 0
    cmp_csv = str(tmp_path / "cmp.csv")
    assert cli_main(["compare", "--dataset", d, "--queries", q,
                     "--devices", "rdma", "--n-clusters", "25",
                     "--recall-target", "0.85", "--out", cmp_csv]) == 0
    for path, min_rows in ((sg, 2), (sc, 4), (cmp_csv, 2)):
        lines = open(path).read().strip().splitlines()
        assert len(lines) == min_rows + 1  # header + rows


def test_cli_module_invocation():
    out = subprocess.run([sys.executable, "-m", "tiervec.cli", "--help"],
                         capture_output=True, text=True)
    assert out.returncode == 0
    assert "sweep-graph" in out.stdout


def test_compare_smoke(small_workload):
    ds, queries, truth = small_workload
    sub_q = VectorDataset(queries.vectors[:20])
    rows = bench.compare_indexes(ds, sub_q, truth[:20],
                                 [BUILTIN_PROFILES["rdma"]], k=10, target=0.8,
                                 r_list=(8, 16), eps_r_list=(0.1,),
                                 cluster_params=cl.ClusterBuildParams(50, kmeans_iters=5))
    assert len(rows) == 2
    fams = {r["index"] for r in rows}
    assert fams == {"graph", "cluster"}
    for r in rows:
        assert r["bytes_requested_per_query"] > 0
