"""Exemplar retrieval over joint embeddings.

Supporting exemplars are exact Euclidean k-nearest neighbours found with a
kd-tree; opposing exemplars come from a coarse k-means quantisation, taken
from the cluster a fixed number of ranks away in centroid-distance order.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels

__all__ = [
    "EmbeddingStore",
    "KdIndex",
    "ClusterOrdering",
    "ExemplarSet",
    "IndexError_",
    "build_index",
    "knn",
    "cluster_quantize",
    "pick_opposing",
    "pick_quintuplet",
    "exemplar_sets",
    "random_exemplar_sets",
]

LEAF_SIZE = 16


class IndexError_(ValueError):
    """Invalid exemplar query (empty store, k too large, no candidates...)."""


@dataclass
class EmbeddingStore:
    embeddings: np.ndarray  # (n, dim)
    ids: np.ndarray  # (n,) int64

    def __post_init__(self):
        self.embeddings = np.ascontiguousarray(self.embeddings, dtype=np.float64)
        if self.embeddings.ndim != 2:
            raise ValueError(f"embeddings must be 2-D, got {self.embeddings.shape}")
        self.ids = np.asarray(self.ids, dtype=np.int64)
        if self.ids.shape != (self.embeddings.shape[0],):
            raise ValueError("one id per embedding required")
        if len(np.unique(self.ids)) != len(self.ids):
            raise ValueError("ids must be unique")
        if not np.all(np.isfinite(self.embeddings)):
            raise ValueError("embeddings must be finite")

    @classmethod
    def from_array(cls, embeddings) -> "EmbeddingStore":
        e = np.asarray(embeddings, dtype=np.float64)
        return cls(e, np.arange(e.shape[0]))

    @property
    def n(self) -> int:
        return self.embeddings.shape[0]

    @property
    def dim(self) -> int:
        return self.embeddings.shape[1]


@dataclass
class KdIndex:
    """Flattened kd-tree.  Rows of ``points`` are stored in tree order and
    ``row_ids[r]`` is the item id of row ``r``."""

    points: np.ndarray  # (n, dim) tree-ordered
    row_ids: np.ndarray  # (n,)
    lo: np.ndarray  # (n_nodes, dim) bounding boxes
    hi: np.ndarray
    left: np.ndarray  # (n_nodes,) child index, -1 for leaves
    right: np.ndarray
    start: np.ndarray  # row range of each node
    end: np.ndarray

    def __post_init__(self):
        order = np.argsort(self.row_ids, kind="stable")
        self._row_of_id = dict(zip(self.row_ids[order].tolist(), order.tolist()))
        # id rank of each row: the kernels break distance ties on it
        self._rank = np.empty(len(self.row_ids), dtype=np.int64)
        self._rank[order] = np.arange(len(order))

    @property
    def n(self) -> int:
        return self.points.shape[0]

    def row_of(self, item_id: int) -> int:
        try:
            return self._row_of_id[int(item_id)]
        except KeyError:
            raise IndexError_(f"id {item_id} not in index") from None

    def embedding(self, item_id: int) -> np.ndarray:
        return self.points[self.row_of(item_id)]

    def query(self, point, k: int, exclude_id: int | None = None) -> tuple[np.ndarray, np.ndarray]:
        """k nearest ids to an arbitrary point, with squared distances."""
        q = np.ascontiguousarray(point, dtype=np.float64)
        exclude = -1 if exclude_id is None else self.row_of(exclude_id)
        rows, d = kernels.knn_query(
            self.points, self._rank, self.lo, self.hi, self.left, self.right, self.start, self.end, q, k, exclude
        )
        return self.row_ids[rows], d


def build_index(store: EmbeddingStore, leaf_size: int = LEAF_SIZE) -> KdIndex:
    """Build an exact kd-tree splitting at the median of the widest dimension."""
    if store.n < 1:
        raise IndexError_("cannot index an empty store")
    order0 = np.argsort(store.ids, kind="stable")
    pts = store.embeddings[order0]
    ids = store.ids[order0]
    perm = np.arange(store.n)
    lo, hi, left, right, start, end = [], [], [], [], [], []

    def new_node(s, e):
        block = pts[perm[s:e]]
        lo.append(block.min(axis=0))
        hi.append(block.max(axis=0))
        left.append(-1)
        right.append(-1)
        start.append(s)
        end.append(e)
        return len(lo) - 1

    root = new_node(0, store.n)
    todo = [root]
    while todo:
        node = todo.pop()
        s, e = start[node], end[node]
        if e - s <= leaf_size:
            continue
        spread = hi[node] - lo[node]
        dim = int(np.argmax(spread))
        if spread[dim] == 0.0:
            continue  # all points identical: keep as an oversized leaf
        seg = perm[s:e]
        seg = seg[np.lexsort((seg, pts[seg, dim]))]
        perm[s:e] = seg
        mid = s + (e - s) // 2
        a = new_node(s, mid)
        b = new_node(mid, e)
        left[node], right[node] = a, b
        todo.extend((a, b))

    return KdIndex(
        points=np.ascontiguousarray(pts[perm]),
        row_ids=ids[perm].copy(),
        lo=np.ascontiguousarray(lo),
        hi=np.ascontiguousarray(hi),
        left=np.asarray(left, dtype=np.int64),
        right=np.asarray(right, dtype=np.int64),
        start=np.asarray(start, dtype=np.int64),
        end=np.asarray(end, dtype=np.int64),
    )


def knn(index: KdIndex, query_id: int, k: int) -> np.ndarray:
    """The k nearest ids to ``query_id`` (itself excluded); ties by lower id."""
    if k >= index.n:
        raise IndexError_(f"k={k} must be smaller than the store size {index.n}")
    if k <= 0:
        return np.empty(0, dtype=np.int64)
    ids, _ = index.query(index.embedding(query_id), k, exclude_id=query_id)
    return ids


@dataclass
class ClusterOrdering:
    centroids: np.ndarray  # (n_clusters, dim)
    assignment: np.ndarray  # (n,) cluster of each id, aligned with ``ids``
    ids: np.ndarray  # (n,)
    seed: int = 0

    def __post_init__(self):
        self._pos = {int(i): p for p, i in enumerate(self.ids.tolist())}
        self._members = [self.ids[self.assignment == c] for c in range(self.centroids.shape[0])]
        self._orderings: dict[int, np.ndarray] = {}

    @property
    def n_clusters(self) -> int:
        return self.centroids.shape[0]

    def cluster_of(self, item_id: int) -> int:
        try:
            return int(self.assignment[self._pos[int(item_id)]])
        except KeyError:
            raise IndexError_(f"id {item_id} not in cluster ordering") from None

    def members(self, cluster: int) -> np.ndarray:
        return self._members[cluster]

    def ordering(self, cluster: int) -> np.ndarray:
        """Clusters sorted by centroid distance from ``cluster`` (itself first)."""
        cluster = int(cluster)
        if cluster not in self._orderings:
            d = np.sum((self.centroids - self.centroids[cluster]) ** 2, axis=1)
            d[cluster] = -1.0
            self._orderings[cluster] = np.argsort(d, kind="stable")
        return self._orderings[cluster]


def _kmeans_pp(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    centers = [x[rng.integers(n)]]
    d = np.sum((x - centers[0]) ** 2, axis=1)
    for _ in range(1, k):
        total = d.sum()
        if total <= 0.0:
            i = int(rng.integers(n))
        else:
            i = int(rng.choice(n, p=d / total))
        centers.append(x[i])
        d = np.minimum(d, np.sum((x - x[i]) ** 2, axis=1))
    return np.array(centers)


def cluster_quantize(
    store: EmbeddingStore,
    n_clusters: int = 50,
    seed: int = 0,
    *,
    max_iter: int = 100,
    tol: float = 1e-6,
) -> ClusterOrdering:
    """Lloyd k-means with seeded k-means++ initialisation.

    Stops after ``max_iter`` iterations or when no centroid moves more than
    ``tol``.  An emptied cluster is re-seeded at the point farthest from
    its current centroid.
    """
    if n_clusters < 1:
        raise IndexError_("n_clusters must be positive")
    if store.n < n_clusters:
        raise IndexError_(f"{store.n} items cannot fill {n_clusters} clusters")
    rng = np.random.default_rng(seed)
    x = store.embeddings
    cent = _kmeans_pp(x, n_clusters, rng)
    for _ in range(max_iter):
        assign, dist = kernels.assign_nearest(x, np.ascontiguousarray(cent))
        new = np.zeros_like(cent)
        counts = np.bincount(assign, minlength=n_clusters)
        np.add.at(new, assign, x)
        empty = counts == 0
        new[~empty] /= counts[~empty, None]
        for c in np.nonzero(empty)[0]:
            far = int(np.argmax(dist))
            new[c] = x[far]
            dist[far] = -1.0
        shift = np.sqrt(np.max(np.sum((new - cent) ** 2, axis=1)))
        cent = new
        if shift < tol:
            break
    assign, _ = kernels.assign_nearest(x, np.ascontiguousarray(cent))
    return ClusterOrdering(centroids=cent, assignment=assign, ids=store.ids.copy(), seed=seed)


def pick_opposing(
    ordering: ClusterOrdering,
    target_id: int,
    offset: int = 20,
    count: int = 1,
    rng: np.random.Generator | None = None,
    *,
    exclude=(),
) -> np.ndarray:
    """Sample ``count`` ids from the cluster ``offset`` ranks away.

    Thin clusters spill over to ranks ``offset+1, offset-1, offset+2, ...``.
    The target and any id in ``exclude`` are never returned.
    """
    if not 0 <= offset < ordering.n_clusters:
        raise IndexError_(f"offset {offset} outside 0..{ordering.n_clusters - 1}")
    rng = rng if rng is not None else np.random.default_rng(0)
    banned = set(int(i) for i in exclude) | {int(target_id)}
    try:
        return _opposing_from_cluster(ordering, ordering.cluster_of(target_id), offset, count, rng, banned)
    except IndexError_:
        raise IndexError_(f"not enough opposing candidates for id {target_id}, need {count}") from None


def pick_quintuplet(
    index: KdIndex,
    target_id: int,
    pool_size: int = 2000,
    n_buckets: int = 20,
    rng: np.random.Generator | None = None,
) -> tuple[int, int, int, int]:
    """Pick (p+, p++, n--, n-) from distance buckets 1, 2, n-1 and n.

    The ``pool_size`` nearest neighbours of the target are split into
    ``n_buckets`` contiguous, distance-ordered buckets.
    """
    if pool_size < 4 * n_buckets:
        raise IndexError_(f"pool of {pool_size} is too small for {n_buckets} buckets")
    if pool_size >= index.n:
        raise IndexError_(f"pool of {pool_size} needs more than {index.n} stored items")
    rng = rng if rng is not None else np.random.default_rng(0)
    pool = knn(index, target_id, pool_size)
    buckets = np.array_split(pool, n_buckets)
    picks = [buckets[b][rng.integers(len(buckets[b]))] for b in (0, 1, n_buckets - 2, n_buckets - 1)]
    return tuple(int(p) for p in picks)


@dataclass
class ExemplarSet:
    target: int
    supports: np.ndarray
    opposes: np.ndarray

    def __post_init__(self):
        s, o = set(self.supports.tolist()), set(self.opposes.tolist())
        if self.target in s or self.target in o or s & o:
            raise ValueError(f"exemplar set for {self.target} overlaps")


def exemplar_sets(
    index: KdIndex,
    ordering: ClusterOrdering,
    target_ids,
    k: int,
    *,
    offset: int = 20,
    seed: int = 0,
) -> list[ExemplarSet]:
    """k supporting (nearest) and k opposing (far-cluster) exemplars per target."""
    rng = np.random.default_rng(seed)
    out = []
    for t in np.asarray(target_ids).tolist():
        sup = knn(index, t, k)
        opp = pick_opposing(ordering, t, offset, k, rng, exclude=sup)
        out.append(ExemplarSet(int(t), sup, opp))
    return out


def random_exemplar_sets(ids, target_ids, k: int, *, seed: int = 0) -> list[ExemplarSet]:
    """Uniformly random supporting/opposing exemplars (the retrieval ablation)."""
    rng = np.random.default_rng(seed)
    ids = np.asarray(ids)
    out = []
    for t in np.asarray(target_ids).tolist():
        pool = ids[ids != t]
        pick = rng.choice(pool, size=2 * k, replace=False)
        out.append(ExemplarSet(int(t), pick[:k].astype(np.int64), pick[k:].astype(np.int64)))
    return out


@dataclass
class ExemplarIndex:
    """kd-tree plus cluster ordering over one embedding store."""

    kd: KdIndex
    clusters: ClusterOrdering

    def __post_init__(self):
        self._knn_cache: dict[int, dict[int, np.ndarray]] = {}

    @classmethod
    def build(cls, store: EmbeddingStore, n_clusters: int = 50, seed: int = 0) -> "ExemplarIndex":
        return cls(build_index(store), cluster_quantize(store, n_clusters, seed))

    @property
    def n(self) -> int:
        return self.kd.n

    def neighbours(self, item_id: int, k: int) -> np.ndarray:
        """Cached :func:`knn`; the embeddings never change after build."""
        cache = self._knn_cache.setdefault(k, {})
        item_id = int(item_id)
        if item_id not in cache:
            cache[item_id] = knn(self.kd, item_id, k)
        return cache[item_id]

    def sets_for_members(self, target_ids, k: int, *, offset: int = 20, seed: int = 0) -> list[ExemplarSet]:
        rng = np.random.default_rng(seed)
        offset = min(offset, self.clusters.n_clusters - 1)
        out = []
        for t in np.asarray(target_ids).tolist():
            sup = self.neighbours(t, k)
            banned = set(sup.tolist()) | {int(t)}
            opp = _opposing_from_cluster(self.clusters, self.clusters.cluster_of(t), offset, k, rng, banned)
            out.append(ExemplarSet(int(t), sup, opp))
        return out

    def sets_for_points(self, points, k: int, *, offset: int = 20, seed: int = 0) -> list[ExemplarSet]:
        """Exemplars for items outside the store (e.g. held-out), target id -1."""
        rng = np.random.default_rng(seed)
        points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        cent = np.ascontiguousarray(self.clusters.centroids)
        cl, _ = kernels.assign_nearest(np.ascontiguousarray(points), cent)
        offset = min(offset, self.clusters.n_clusters - 1)
        out = []
        for x, c in zip(points, cl.tolist()):
            sup, _ = self.kd.query(x, k)
            opp = _opposing_from_cluster(self.clusters, c, offset, k, rng, set(sup.tolist()))
            out.append(ExemplarSet(-1, sup, opp))
        return out


def _spill_ranks(offset: int, n: int):
    yield offset
    for step in range(1, n):
        for r in (offset + step, offset - step):
            if 0 <= r < n:
                yield r


def _opposing_from_cluster(ordering: ClusterOrdering, cluster: int, offset: int, count: int, rng, banned: set) -> np.ndarray:
    order = ordering.ordering(cluster)
    picked: list[int] = []
    for r in _spill_ranks(offset, ordering.n_clusters):
        need = count - len(picked)
        if need <= 0:
            break
        members = ordering.members(order[r])
        cand = [i for i in members.tolist() if i not in banned] if banned.intersection(members.tolist()) else members.tolist()
        if not cand:
            continue
        take = rng.choice(len(cand), size=min(need, len(cand)), replace=False)
        picked.extend(cand[j] for j in sorted(take.tolist()))
    if len(picked) < count:
        raise IndexError_(f"only {len(picked)} opposing candidates, need {count}")
    return np.asarray(picked, dtype=np.int64)
