"""Command-line interface.

Exit codes: 0 success, 2 malformed input file, 3 recall target unreachable
in ``search``.
"""

import argparse
import sys

import numpy as np

from . import bench, cluster as cl, graph as gr, grouping as gp, vecio
from .core import Metric, VectorDataset
from .device import Device, load_profile
from .pipeline import PipelineConfig, run_pipelined

EXIT_OK = 0
EXIT_FORMAT = 2
EXIT_RECALL = 3


def _metric(name: str) -> Metric:
    return Metric(name)


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--dataset", help="dataset vector file (fvecs/bvecs)")
    p.add_argument("--queries", help="query vector file")
    p.add_argument("--truth", help="ground-truth ivecs file")
    p.add_argument("--device", default="rdma",
                   help="builtin profile name or key=value profile file")
    p.add_argument("--metric", default="l2sq", choices=["l2sq", "ip"])
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--recall-target", type=float, default=0.9)
    p.add_argument("--depth", type=int, default=1)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="output file (csv or index, per command)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="tiervec",
                                 description="vector search over simulated storage tiers")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic dataset and query set")
    _add_common(p)
    p.add_argument("--n", type=int, default=100_000)
    p.add_argument("--dim", type=int, default=64)
    p.add_argument("--components", type=int, default=64)
    p.add_argument("--spread", type=float, default=0.5)
    p.add_argument("--n-queries", type=int, default=1000)
    p.add_argument("--query-spread", type=float, default=None)
    p.add_argument("--skew", type=float, default=0.0)
    p.add_argument("--latent-dim", type=int, default=8)
    p.add_argument("--elem-type", default="float32", choices=["float32", "int8", "uint8"])

    p = sub.add_parser("gt", help="write exact ground truth as ivecs")
    _add_common(p)

    p = sub.add_parser("build-graph", help="build and serialize a graph index")
    _add_common(p)
    p.add_argument("--knn-k", type=int, default=64)
    p.add_argument("--max-degree", type=int, default=32)
    p.add_argument("--prune-alpha", type=float, default=1.2)
    p.add_argument("--layout", default="csr", choices=["csr", "padded"])
    p.add_argument("--block-bytes", type=int, default=4096)

    p = sub.add_parser("build-cluster", help="build and serialize a cluster index")
    _add_common(p)
    p.add_argument("--n-clusters", type=int, default=1000)
    p.add_argument("--kmeans-iters", type=int, default=10)
    p.add_argument("--balance-slack", type=float, default=0.1)
    p.add_argument("--replica-eps", type=float, default=0.1)
    p.add_argument("--max-replicas", type=int, default=8)
    p.add_argument("--layout", default="decoupled", choices=["coupled", "decoupled"])

    p = sub.add_parser("group", help="regroup a cluster index for a query log")
    _add_common(p)
    p.add_argument("--index", required=True, help="serialized cluster index")
    p.add_argument("--top-c", type=int, default=20)

    p = sub.add_parser("search", help="search a serialized index, tuned to the target")
    _add_common(p)
    p.add_argument("--index", required=True)

    p = sub.add_parser("micro", help="device microbenchmarks (payload + mix curves)")
    _add_common(p)

    p = sub.add_parser("sweep-graph", help="graph trade-off sweep over max degree")
    _add_common(p)
    p.add_argument("--r-list", default="8,16,32,64")
    p.add_argument("--layout", default="csr", choices=["csr", "padded"])

    p = sub.add_parser("sweep-cluster", help="cluster trade-off sweep over replica eps")
    _add_common(p)
    p.add_argument("--eps-r-list", default="0.0,0.05,0.1,0.2")
    p.add_argument("--layouts", default="coupled,decoupled,grouped")
    p.add_argument("--n-clusters", type=int, default=1000)

    p = sub.add_parser("compare", help="end-to-end graph vs cluster comparison")
    _add_common(p)
    p.add_argument("--devices", default="ssd,rdma,cxl,nvm")
    p.add_argument("--n-clusters", type=int, default=1000)
    return ap


def _load_dataset(args) -> VectorDataset:
    if not args.dataset:
        raise SystemExit("--dataset is required for this command")
    return vecio.read_vecs(args.dataset)


def _load_queries(args) -> VectorDataset:
    if not args.queries:
        raise SystemExit("--queries is required for this command")
    return vecio.read_vecs(args.queries)


def _load_truth(args, ds, queries, k, metric):
    if args.truth:
        t = vecio.read_vecs(args.truth)
        if t.shape[1] < k:
            raise SystemExit(f"ground truth holds {t.shape[1]} ids per query, need k={k}")
        return t[:, :k]
    return bench.ground_truth(ds, queries, k, metric)


def _profile(args):
    return load_profile(args.device)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _dispatch(args)
    except vecio.FormatError as err:
        print(f"format error: {err}", file=sys.stderr)
        return EXIT_FORMAT
    except ValueError as err:
        if "magic" in str(err) or "truncated" in str(err):
            print(f"format error: {err}", file=sys.stderr)
            return EXIT_FORMAT
        raise


def _dispatch(args) -> int:
    metric = _metric(args.metric)

    if args.command == "gen":
        params = bench.SyntheticParams(
            n=args.n, dim=args.dim, components=args.components, spread=args.spread,
            n_queries=args.n_queries, query_spread=args.query_spread, skew=args.skew,
            latent_dim=args.latent_dim, elem_type=args.elem_type, seed=args.seed)
        ds, queries = bench.make_synthetic(params)
        if not args.dataset or not args.queries:
            raise SystemExit("gen writes --dataset and --queries paths")
        vecio.write_vecs(args.dataset, ds)
        vecio.write_vecs(args.queries, queries)
        print(f"wrote {ds.count}x{ds.dim} dataset to {args.dataset}, "
              f"{queries.count} queries to {args.queries}")
        return EXIT_OK

    if args.command == "gt":
        ds, queries = _load_dataset(args), _load_queries(args)
        truth = bench.ground_truth(ds, queries, args.k, metric)
        out = args.out or "truth.ivecs"
        vecio.write_vecs(out, truth, "ivecs")
        print(f"wrote ground truth {truth.shape} to {out}")
        return EXIT_OK

    if args.command == "build-graph":
        ds = _load_dataset(args)
        params = gr.GraphBuildParams(args.knn_k, args.max_degree, args.prune_alpha)
        index = gr.build_graph_index(ds, params, metric)
        stored = gr.serialize(index, args.layout, args.block_bytes)
        out = args.out or "index.gvx"
        gr.save_graph(stored, out)
        print(f"wrote {args.layout} graph index (R={args.max_degree}, "
              f"amp={stored.amplification():.2f}) to {out}")
        return EXIT_OK

    if args.command == "build-cluster":
        ds = _load_dataset(args)
        params = cl.ClusterBuildParams(args.n_clusters, args.kmeans_iters,
                                       args.balance_slack, args.replica_eps,
                                       args.max_replicas)
        index = cl.build_cluster_index(ds, params, seed=args.seed, metric=metric)
        stored = cl.serialize_cluster(index, args.layout)
        out = args.out or "index.cvx"
        cl.save_cluster(stored, out)
        print(f"wrote {args.layout} cluster index (replication="
              f"{index.replication_factor:.2f}, amp={stored.amplification():.2f}) to {out}")
        return EXIT_OK

    if args.command == "group":
        ds, queries = _load_dataset(args), _load_queries(args)
        params_stored = cl.load_cluster(args.index)
        params = cl.ClusterBuildParams(params_stored.n_clusters,
                                       replica_eps=params_stored.replica_eps,
                                       max_replicas=params_stored.max_replicas)
        index = cl.build_cluster_index(ds, params, seed=args.seed, metric=metric)
        h = gp.estimate_frequencies(queries.vectors, params_stored, args.top_c)
        assignment = gp.greedy_group(gp.problem_from_index(index, h))
        stored = cl.serialize_cluster(index, "grouped", assignment)
        out = args.out or "index-grouped.cvx"
        cl.save_cluster(stored, out)
        print(f"wrote grouped cluster index to {out}")
        return EXIT_OK

    if args.command == "search":
        return _cmd_search(args, metric)

    if args.command == "micro":
        rows = bench.microbench_device(_profile(args))
        out = args.out or "micro.csv"
        bench.write_csv(rows, out)
        print(f"wrote {len(rows)} microbenchmark rows to {out}")
        return EXIT_OK

    if args.command == "sweep-graph":
        ds, queries = _load_dataset(args), _load_queries(args)
        truth = _load_truth(args, ds, queries, args.k, metric)
        r_list = [int(x) for x in args.r_list.split(",")]
        rows = bench.sweep_graph(ds, queries, truth, r_list, _profile(args),
                                 args.k, args.recall_target, args.depth,
                                 layout=args.layout, metric=metric)
        out = args.out or "sweep-graph.csv"
        bench.write_csv(rows, out)
        print(f"wrote {len(rows)} sweep rows to {out}")
        return EXIT_OK

    if args.command == "sweep-cluster":
        ds, queries = _load_dataset(args), _load_queries(args)
        truth = _load_truth(args, ds, queries, args.k, metric)
        eps_list = [float(x) for x in args.eps_r_list.split(",")]
        layouts = args.layouts.split(",")
        params = cl.ClusterBuildParams(args.n_clusters)
        rows = bench.sweep_cluster(ds, queries, truth, eps_list, layouts,
                                   _profile(args), params, args.k,
                                   args.recall_target, args.depth, args.seed, metric)
        out = args.out or "sweep-cluster.csv"
        bench.write_csv(rows, out)
        print(f"wrote {len(rows)} sweep rows to {out}")
        return EXIT_OK

    if args.command == "compare":
        ds, queries = _load_dataset(args), _load_queries(args)
        truth = _load_truth(args, ds, queries, args.k, metric)
        profiles = [load_profile(name) for name in args.devices.split(",")]
        rows = bench.compare_indexes(ds, queries, truth, profiles, args.k,
                                     args.recall_target, args.depth,
                                     cluster_params=cl.ClusterBuildParams(args.n_clusters),
                                     metric=metric)
        out = args.out or "compare.csv"
        bench.write_csv(rows, out)
        print(f"wrote {len(rows)} comparison rows to {out}")
        return EXIT_OK

    raise SystemExit(f"unknown command {args.command!r}")


def _cmd_search(args, metric) -> int:
    ds, queries = _load_dataset(args), _load_queries(args)
    truth = _load_truth(args, ds, queries, args.k, metric)
    profile = _profile(args)
    device = Device(profile)
    with open(args.index, "rb") as fh:
        magic = fh.read(4)
    if magic == gr.GRAPH_MAGIC:
        stored = gr.load_graph(args.index, dataset=ds)
        tuned = bench.tune_graph_L(stored, queries, truth, args.k,
                                   args.recall_target, device, metric=metric)
        label = f"L={tuned.param}"
        if tuned.reached and args.depth > 1:
            cfg = PipelineConfig(depth=args.depth, workers=args.workers)
            _, pres = run_pipelined(queries.vectors, stored, device,
                                    gr.SearchParams(L=tuned.param, k=args.k), cfg, metric)
            print(f"pipelined throughput at depth={args.depth}: {pres.throughput_qps:.1f} q/s")
    elif magic == cl.CLUSTER_MAGIC:
        stored = cl.load_cluster(args.index)
        tuned = bench.tune_cluster_topc(stored, queries, truth, args.k,
                                        args.recall_target, device)
        label = f"top_c={tuned.param}"
    else:
        print(f"format error: {args.index}: unknown magic {magic!r}", file=sys.stderr)
        return EXIT_FORMAT
    io = tuned.io
    print(f"{label} recall={tuned.achieved_recall:.4f} "
          f"(target {args.recall_target}) avg_hops={tuned.avg_hops:.1f} "
          f"ops={io.ops} bytes={io.bytes_requested}")
    if args.out:
        rows = [{"schema": bench.CSV_SCHEMA, "index": args.index, "param": tuned.param,
                 "recall": tuned.achieved_recall, "target": args.recall_target,
                 "avg_hops": tuned.avg_hops, "ops": io.ops,
                 "bytes_requested": io.bytes_requested,
                 "bytes_charged": io.bytes_charged, "small_ops": io.small_ops}]
        bench.write_csv(rows, args.out)
    if not tuned.reached:
        print("recall target unreachable at the parameter cap", file=sys.stderr)
        return EXIT_RECALL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
