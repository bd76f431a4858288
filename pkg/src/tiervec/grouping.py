"""Cluster-aware grouping: choose the one cluster that physically holds each
replicated vector so frequency-weighted small reads are minimized.

An instance is a 0/1 replication structure A (per-vector cluster lists) and
per-cluster access frequencies h. A feasible assignment places every vector
in exactly one of its replica clusters. Reading cluster j costs one group
read plus one small read per member whose physical copy lives elsewhere, so
the objective is

    cost(P) = sum_j h_j * (1 + sum_i A[i,j] * (1 - P[i,j]))

which decomposes per vector; grouping each vector into its most frequently
accessed replica cluster is exactly optimal, and the greedy solver below is
checked against an exhaustive oracle in the tests.
"""

import itertools

import numpy as np


class GroupingProblem:
    """Replication structure plus cluster access frequencies."""

    def __init__(self, replicas, frequencies):
        self.replicas = [np.asarray(r, dtype=np.int32) for r in replicas]
        self.h = np.asarray(frequencies, dtype=np.float64)
        if self.h.ndim != 1:
            raise ValueError("frequencies must be a 1-D array")
        if np.any(self.h < 0):
            raise ValueError("frequencies must be non-negative")
        lens = np.array([len(r) for r in self.replicas], dtype=np.int64)
        if len(lens) and lens.min() < 1:
            raise ValueError(f"vector {int(np.argmin(lens))} is not assigned to any cluster")
        if len(lens):
            flat = np.concatenate(self.replicas)
            if flat.min() < 0 or flat.max() >= self.n_clusters:
                raise ValueError("a replica list references an unknown cluster")
            seg = np.repeat(np.arange(len(lens)), lens)
            order = np.lexsort((flat, seg))
            f, s = flat[order], seg[order]
            dup = np.flatnonzero((f[1:] == f[:-1]) & (s[1:] == s[:-1]))
            if dup.size:
                raise ValueError(f"vector {int(s[dup[0]])} has duplicate replica clusters")

    @property
    def n_vectors(self) -> int:
        return len(self.replicas)

    @property
    def n_clusters(self) -> int:
        return self.h.shape[0]


class GroupAssignment:
    """Vector -> cluster map; feasible iff each target is a replica cluster."""

    def __init__(self, group):
        self.group = np.asarray(group, dtype=np.int32)

    def validate(self, problem: GroupingProblem) -> None:
        if self.group.shape[0] != problem.n_vectors:
            raise ValueError("assignment length does not match problem size")
        for i, g in enumerate(self.group.tolist()):
            if g not in problem.replicas[i]:
                raise ValueError(f"vector {i} grouped into cluster {g} "
                                 "outside its replica set")


def objective(assignment: GroupAssignment, problem: GroupingProblem) -> float:
    """Frequency-weighted I/O cost of a feasible assignment."""
    assignment.validate(problem)
    h = problem.h
    cost = float(h.sum())
    for i, r in enumerate(problem.replicas):
        cost += float(h[r].sum()) - float(h[assignment.group[i]])
    return cost


def objective_grouped_only(assignment: GroupAssignment, problem: GroupingProblem) -> float:
    """Reference variant that charges one group read plus the grouped copies.

    Under the one-group-per-vector constraint this is constant-shifted in the
    assignment whenever frequencies are uniform and otherwise rewards placing
    vectors in rarely-read clusters, so it cannot drive the optimizer; it is
    retained for documentation and comparison only.
    """
    assignment.validate(problem)
    h = problem.h
    cost = float(h.sum())
    for i in range(problem.n_vectors):
        cost += float(h[assignment.group[i]])
    return cost


def greedy_group(problem: GroupingProblem) -> GroupAssignment:
    """Group every vector into its most frequently accessed replica cluster.

    Ties break toward the smaller cluster id. Runs in O(total replicas).
    """
    flat = np.concatenate(problem.replicas) if problem.n_vectors else \
        np.empty(0, dtype=np.int32)
    lens = np.array([len(r) for r in problem.replicas], dtype=np.int64)
    starts = np.zeros(problem.n_vectors, dtype=np.int64)
    np.cumsum(lens[:-1], out=starts[1:])
    hv = problem.h[flat]
    best_h = np.maximum.reduceat(hv, starts) if len(flat) else np.empty(0)
    # among max-frequency replicas take the smallest cluster id
    masked = np.where(np.repeat(best_h, lens) == hv, flat, np.iinfo(np.int32).max)
    group = np.minimum.reduceat(masked, starts) if len(flat) else np.empty(0, np.int32)
    return GroupAssignment(group.astype(np.int32))


def brute_force_group(problem: GroupingProblem, max_states: int = 10 ** 7) -> GroupAssignment:
    """Exhaustive oracle over all feasible assignments.

    Ties in cost resolve to the lexicographically smallest assignment
    (replica lists are scanned in ascending cluster id). Guarded against
    instances with more than ``max_states`` feasible assignments.
    """
    states = 1
    for r in problem.replicas:
        states *= len(r)
        if states > max_states:
            raise ValueError(f"instance has over {max_states} feasible assignments")
    base = float(problem.h.sum()) + sum(float(problem.h[r].sum()) for r in problem.replicas)
    choices = [sorted(r.tolist()) for r in problem.replicas]
    best_cost = np.inf
    best = None
    for combo in itertools.product(*choices):
        cost = base - sum(float(problem.h[c]) for c in combo)
        if cost < best_cost:
            best_cost = cost
            best = combo
    return GroupAssignment(np.array(best if best is not None else [], dtype=np.int32))


def estimate_frequencies(queries, index, top_c: int) -> np.ndarray:
    """Per-cluster access counts over a query log.

    ``index`` is anything exposing ``select_clusters(q, top_c)`` and
    ``n_clusters``; counts are raw (the objective's argmin is scale-invariant).
    """
    h = np.zeros(index.n_clusters, dtype=np.float64)
    for q in queries:
        for c in index.select_clusters(q, top_c):
            h[int(c)] += 1.0
    return h


def problem_from_index(index, frequencies) -> GroupingProblem:
    """Build a grouping instance from a cluster index's replication lists."""
    return GroupingProblem(index.replicas, frequencies)


# ---------------------------------------------------------------------------
# plain-text golden format
# ---------------------------------------------------------------------------

def save_problem(problem: GroupingProblem, path: str,
                 assignment: GroupAssignment = None) -> None:
    """One ``h`` line per cluster, then one line per vector:
    ``id<TAB>c1,c2,...<TAB>group`` (``-`` when no assignment is given)."""
    with open(path, "w", encoding="utf-8") as fh:
        for j, v in enumerate(problem.h.tolist()):
            fh.write(f"h\t{j}\t{v!r}\n")
        for i, r in enumerate(problem.replicas):
            g = "-" if assignment is None else str(int(assignment.group[i]))
            fh.write(f"{i}\t{','.join(str(c) for c in r.tolist())}\t{g}\n")


def load_problem(path: str):
    """Inverse of ``save_problem``; returns (problem, assignment or None)."""
    h = {}
    replicas = []
    group = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if parts[0] == "h":
                h[int(parts[1])] = float(parts[2])
                continue
            if len(parts) != 3 or int(parts[0]) != len(replicas):
                raise ValueError(f"{path}:{lineno}: malformed vector line {line!r}")
            replicas.append([int(c) for c in parts[1].split(",")])
            group.append(None if parts[2] == "-" else int(parts[2]))
    freqs = np.zeros(max(h) + 1 if h else 0)
    for j, v in h.items():
        freqs[j] = v
    problem = GroupingProblem(replicas, freqs)
    if any(g is not None for g in group):
        return problem, GroupAssignment(np.array(group, dtype=np.int32))
    return problem, None
