"""Agglomerative Ward clustering over task feature vectors.

Heights are the raw Ward merge cost

    delta(a, b) = n_a * n_b / (n_a + n_b) * ||centroid_a - centroid_b||^2

(the increase in total within-cluster sum of squares caused by the
merge), not the rescaled sqrt(2 * delta) distances some toolkits report.
Merge costs update through the Lance-Williams recurrence, which is
algebraically identical to recomputing from centroids. Ties break
lexicographically on the sorted leaf-index tuples of the two candidate
clusters, so the tree is deterministic.

Cluster ids follow the usual convention: leaves are 0..K-1 in input
order, the cluster created by merge t gets id K+t.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .embedding import TaskFeatures
from .errors import NumericError

__all__ = [
    "Merge",
    "Dendrogram",
    "ward_linkage",
    "cut_tree",
    "to_newick",
    "to_merge_json",
]


@dataclass(frozen=True)
class Merge:
    """One agglomeration step: clusters ``a`` and ``b`` joined at ``height``,
    producing a cluster of ``size`` leaves."""

    a: int
    b: int
    height: float
    size: int


@dataclass(frozen=True)
class Dendrogram:
    leaves: tuple[str, ...]
    merges: tuple[Merge, ...]

    def __post_init__(self) -> None:
        k = len(self.leaves)
        if k < 2:
            raise NumericError("a dendrogram needs at least two leaves")
        if len(self.merges) != k - 1:
            raise NumericError(
                f"expected {k - 1} merges for {k} leaves, got {len(self.merges)}"
            )

    @property
    def n_leaves(self) -> int:
        return len(self.leaves)


def ward_linkage(features: TaskFeatures) -> Dendrogram:
    """Build the Ward dendrogram over feature rows.

    Raises
    ------
    NumericError
        With fewer than two rows or non-finite features.
    """
    X = np.asarray(features.features, dtype=float)
    k = X.shape[0]
    if k < 2:
        raise NumericError("ward_linkage needs at least two tasks")
    if not np.all(np.isfinite(X)):
        raise NumericError("ward_linkage features contain non-finite values")

    # active cluster state, keyed by cluster id
    sizes: dict[int, int] = {i: 1 for i in range(k)}
    leafsets: dict[int, tuple[int, ...]] = {i: (i,) for i in range(k)}
    cost: dict[tuple[int, int], float] = {}

    def key(a: int, b: int) -> tuple[int, int]:
        return (a, b) if a < b else (b, a)

    for i in range(k):
        for j in range(i + 1, k):
            diff = X[i] - X[j]
            cost[(i, j)] = 0.5 * float(diff @ diff)

    active = set(range(k))
    merges: list[Merge] = []
    for t in range(k - 1):
        best: tuple[float, tuple[int, ...], tuple[int, ...], int, int] | None = None
        for (a, b), d in cost.items():
            la, lb = leafsets[a], leafsets[b]
            if la > lb:
                la, lb, a, b = lb, la, b, a
            cand = (d, la, lb, a, b)
            if best is None or cand < best:
                best = cand
        assert best is not None
        d, la, lb, a, b = best
        new_id = k + t
        new_size = sizes[a] + sizes[b]
        merges.append(Merge(a=a, b=b, height=d, size=new_size))

        active.discard(a)
        active.discard(b)
        for c in active:
            d_ac = cost.pop(key(a, c))
            d_bc = cost.pop(key(b, c))
            n_a, n_b, n_c = sizes[a], sizes[b], sizes[c]
            updated = (
                (n_a + n_c) * d_ac + (n_b + n_c) * d_bc - n_c * d
            ) / (n_a + n_b + n_c)
            cost[key(new_id, c)] = updated
        cost.pop(key(a, b))
        sizes[new_id] = new_size
        leafsets[new_id] = tuple(sorted(leafsets[a] + leafsets[b]))
        del sizes[a], sizes[b], leafsets[a], leafsets[b]
        active.add(new_id)

    return Dendrogram(leaves=features.task_ids, merges=tuple(merges))


def cut_tree(dendrogram: Dendrogram, k: int) -> list[list[str]]:
    """Cut into ``k`` clusters by undoing the last ``k - 1`` merges.

    Clusters are ordered by their smallest leaf index; members keep leaf
    order. ``k`` must be between 1 and the number of leaves.
    """
    n = dendrogram.n_leaves
    if not 1 <= k <= n:
        raise NumericError(f"cannot cut {n}-leaf tree into {k} clusters")
    members: dict[int, list[int]] = {i: [i] for i in range(n)}
    for t, merge in enumerate(dendrogram.merges[: n - k]):
        members[n + t] = sorted(members.pop(merge.a) + members.pop(merge.b))
    groups = sorted(members.values(), key=lambda g: g[0])
    return [[dendrogram.leaves[i] for i in g] for g in groups]


def _newick_name(name: str) -> str:
    """Quote a leaf label when it contains Newick metacharacters."""
    if any(c in name for c in "(),:;'\" \t[]"):
        return "'" + name.replace("'", "''") + "'"
    return name


def to_newick(dendrogram: Dendrogram) -> str:
    """Serialize as a Newick string with branch lengths.

    A node's branch length is its parent's merge height minus its own
    (leaves sit at height 0), so root-to-leaf path lengths reproduce the
    merge heights.
    """
    n = dendrogram.n_leaves
    heights: dict[int, float] = {i: 0.0 for i in range(n)}
    children: dict[int, tuple[int, int]] = {}
    for t, merge in enumerate(dendrogram.merges):
        node = n + t
        heights[node] = merge.height
        children[node] = (merge.a, merge.b)

    def render(node: int, parent_height: float) -> str:
        length = parent_height - heights[node]
        if node < n:
            return f"{_newick_name(dendrogram.leaves[node])}:{length:.10g}"
        a, b = children[node]
        h = heights[node]
        return f"({render(a, h)},{render(b, h)}):{length:.10g}"

    root = n + len(dendrogram.merges) - 1
    a, b = children[root]
    h = heights[root]
    return f"({render(a, h)},{render(b, h)});"


def to_merge_json(dendrogram: Dendrogram) -> str:
    """Serialize the merge list as stable JSON."""
    doc = {
        "leaves": list(dendrogram.leaves),
        "merges": [
            {"a": m.a, "b": m.b, "height": m.height, "size": m.size}
            for m in dendrogram.merges
        ],
    }
    return json.dumps(doc, indent=2, sort_keys=False)
