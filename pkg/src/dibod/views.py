"""Stochastic augmented views of a graph batch.

Three augmentations: node dropping (connectivity-preserving, never empties
a graph), edge perturbation (delete each edge with probability `rate`, add
the same expected number of random non-edges), and feature masking.
Outputs are pure functions of (batch, spec, seed).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import ContractError, GraphBatch

KINDS = ("node-drop", "edge-perturb", "feature-mask")


@dataclass(frozen=True)
class ViewSpec:
    kind: str
    rate: float
    seed_stream: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown augmentation kind {self.kind!r}")
        if not 0.0 <= self.rate <= 1.0:
            raise ValueError(f"rate {self.rate} outside [0, 1]")


@dataclass
class ViewSet:
    views: list[GraphBatch]
    view_ids: list[int]
    base: GraphBatch

    def __post_init__(self):
        for v in self.views:
            if v.num_graphs != self.base.num_graphs:
                raise ContractError("view and base disagree on graph count")
            if not np.array_equal(v.labels, self.base.labels):
                raise ContractError("augmentation altered labels")

    @property
    def num_views(self) -> int:
        return len(self.views)


def _component_and_articulation(n: int, edges: list[tuple[int, int]]):
    """Iterative lowpoint DFS: returns the set of articulation nodes."""
    adj = [[] for _ in range(n)]
    for u, v in edges:
        adj[u].append(v)
        adj[v].append(u)
    disc = [-1] * n
    low = [0] * n
    parent = [-1] * n
    artic = set()
    timer = 0
    for root in range(n):
        if disc[root] != -1:
            continue
        root_children = 0
        stack = [(root, iter(adj[root]))]
        disc[root] = low[root] = timer
        timer += 1
        while stack:
            node, it = stack[-1]
            advanced = False
            for nb in it:
                if disc[nb] == -1:
                    parent[nb] = node
                    if node == root:
                        root_children += 1
                    disc[nb] = low[nb] = timer
                    timer += 1
                    stack.append((nb, iter(adj[nb])))
                    advanced = True
                    break
                elif nb != parent[node]:
                    low[node] = min(low[node], disc[nb])
            if not advanced:
                stack.pop()
                if stack:
                    p = stack[-1][0]
                    low[p] = min(low[p], low[node])
                    if p != root and low[node] >= disc[p]:
                        artic.add(p)
        if root_children > 1:
            artic.add(root)
    return artic


def _drop_nodes(n: int, edges: list[tuple[int, int]], count: int,
                rng: np.random.Generator):
    """Remove up to `count` non-articulation nodes, one at a time, keeping
    at least one node."""
    keep = list(range(n))
    cur_edges = list(edges)
    for _ in range(count):
        if len(keep) <= 1:
            break
        pos = {node: i for i, node in enumerate(keep)}
        local = [(pos[u], pos[v]) for u, v in cur_edges]
        artic = _component_and_articulation(len(keep), local)
        candidates = [node for node in keep if pos[node] not in artic]
        if not candidates:
            break
        victim = candidates[int(rng.integers(0, len(candidates)))]
        keep.remove(victim)
        cur_edges = [(u, v) for u, v in cur_edges if u != victim and v != victim]
    remap = {node: i for i, node in enumerate(keep)}
    new_edges = sorted((min(remap[u], remap[v]), max(remap[u], remap[v]))
                       for u, v in cur_edges)
    return keep, new_edges


def _perturb_edges(n: int, edges: list[tuple[int, int]], rate: float,
                   rng: np.random.Generator):
    kept = [e for e in edges if rng.random() >= rate]
    n_add = int(rng.binomial(len(edges), rate)) if edges else 0
    existing = set(edges)
    added = set()
    attempts = 0
    while len(added) < n_add and attempts < 50 * (n_add + 1):
        attempts += 1
        u, v = rng.integers(0, n, size=2)
        if u == v:
            continue
        e = (min(int(u), int(v)), max(int(u), int(v)))
        if e in existing or e in added:
            continue
        added.add(e)
    return sorted(set(kept) | added)


def augment(batch: GraphBatch, spec: ViewSpec, rng: np.random.Generator) -> GraphBatch:
    """One augmented variant of the batch; labels always untouched."""
    if spec.rate == 0.0:
        return GraphBatch([list(e) for e in batch.edges], batch.features.copy(),
                          batch.offsets.copy(), batch.labels.copy(),
                          batch.base_index.copy())
    new_edges = []
    kept_rows = []
    for g in range(batch.num_graphs):
        lo, hi = int(batch.offsets[g]), int(batch.offsets[g + 1])
        n = hi - lo
        if spec.kind == "node-drop":
            count = int(np.floor(spec.rate * n))
            keep, eds = _drop_nodes(n, batch.edges[g], count, rng)
            kept_rows.extend(lo + k for k in keep)
            new_edges.append(eds)
        elif spec.kind == "edge-perturb":
            kept_rows.extend(range(lo, hi))
            new_edges.append(_perturb_edges(n, batch.edges[g], spec.rate, rng))
        else:
            kept_rows.extend(range(lo, hi))
            new_edges.append(list(batch.edges[g]))
    kept_rows = np.array(kept_rows, dtype=np.intp)
    feats = batch.features[kept_rows].copy()
    if spec.kind == "feature-mask":
        feats[rng.random(feats.shape) < spec.rate] = 0.0
    counts = [len(e_nodes) for e_nodes in _rows_per_graph(kept_rows, batch.offsets)]
    offsets = np.concatenate([[0], np.cumsum(counts)])
    return GraphBatch(new_edges, feats, offsets, batch.labels.copy(),
                      batch.base_index[kept_rows].copy())


def _rows_per_graph(rows: np.ndarray, offsets: np.ndarray) -> list[np.ndarray]:
    out = []
    for g in range(len(offsets) - 1):
        out.append(rows[(rows >= offsets[g]) & (rows < offsets[g + 1])])
    return out


def view_rng(epoch_seed: int, view_index: int, seed_stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(
        entropy=int(epoch_seed) & 0xFFFFFFFF,
        spawn_key=(int(view_index), int(seed_stream) & 0xFFFFFFFF)))


def make_view_set(batch: GraphBatch, specs: list[ViewSpec],
                  epoch_seed: int) -> ViewSet:
    """V >= 2 independent views, deterministic under (epoch_seed, index)."""
    if len(specs) < 2:
        raise ContractError("need at least 2 view specs")
    views = [augment(batch, spec, view_rng(epoch_seed, i, spec.seed_stream))
             for i, spec in enumerate(specs)]
    return ViewSet(views, list(range(len(specs))), batch)
