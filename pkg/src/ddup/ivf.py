"""IVF_FLAT approximate nearest neighbor index with a brute-force oracle.

Vectors are clustered with k-means (the coarse quantizer); each vector
lives in exactly one inverted list. A query scans only the `nprobe`
lists whose centroids score best, so `nprobe == nlist` degenerates to an
exact search: because the scan kernels score each row independently of
its neighbours, that case returns the brute-force result id-for-id.

Ties always break by ascending id. Reads are reentrant; build, insert
and remove require exclusive access (reader-writer contract).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .vectors import VECTOR_DTYPE, Metric, as_vector, normalize


@dataclass(frozen=True)
class SearchResult:
    id: str
    score: float  # distance for L2, similarity for IP/cosine
    rank: int  # 1-based, best first


@dataclass(frozen=True)
class MemoryFootprint:
    """Byte-exact accounting of an index's in-memory payload."""

    vector_bytes: int
    centroid_bytes: int
    id_bytes: int
    list_overhead_bytes: int  # 8 bytes per stored entry (list slot)
    count: int

    @property
    def total_bytes(self) -> int:
        return self.vector_bytes + self.centroid_bytes + self.id_bytes + self.list_overhead_bytes

    @property
    def bytes_per_vector(self) -> float:
        return self.total_bytes / self.count if self.count else 0.0


def default_nlist(count: int) -> int:
    return max(1, int(np.ceil(np.sqrt(count))))


def default_nprobe(nlist: int) -> int:
    return max(1, nlist // 16)


def kmeans_fit(
    vectors: np.ndarray,
    k: int,
    max_iters: int = 25,
    seed: int = 0,
) -> np.ndarray:
    """Lloyd's k-means from k-means++ initialization; returns (k, d) float32.

    Stops when no assignment changes or after `max_iters`. Empty clusters
    are reseeded from the point farthest from its current centroid.
    Bit-identical across runs for fixed data and seed.
    """
    x = np.ascontiguousarray(vectors, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"vectors must be a 2-D matrix, got shape {x.shape}")
    n, d = x.shape
    if not (1 <= k <= n):
        raise ValueError(f"k must be in [1, {n}], got {k}")

    rng = np.random.default_rng(seed)
    centroids = _kmeans_pp_init(x, k, rng)

    assign = np.full(n, -1, dtype=np.int64)
    for _ in range(max_iters):
        new_assign, d2 = kernels.assign_nearest(x, centroids)
        # reseed empty clusters from the farthest point before accepting
        counts = np.bincount(new_assign, minlength=k)
        while np.any(counts == 0):
            empty = int(np.argmin(counts))
            far = int(np.argmax(d2))
            centroids[empty] = x[far]
            new_assign[far] = empty
            d2[far] = 0.0
            counts = np.bincount(new_assign, minlength=k)
        if np.array_equal(new_assign, assign):
            break
        assign = new_assign
        sums = np.zeros((k, d), dtype=np.float64)
        np.add.at(sums, assign, x)
        centroids = sums / counts[:, None]
    return centroids.astype(VECTOR_DTYPE)


def _kmeans_pp_init(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    centroids = np.empty((k, x.shape[1]), dtype=np.float64)
    centroids[0] = x[rng.integers(n)]
    d2 = kernels.l2sq_scores(x, centroids[0])
    for i in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            # all remaining points coincide with a chosen centroid
            centroids[i] = x[rng.integers(n)]
            continue
        probs = d2 / total
        centroids[i] = x[rng.choice(n, p=probs)]
        d2 = np.minimum(d2, kernels.l2sq_scores(x, centroids[i]))
    return centroids


def _score_key(scores: np.ndarray, metric: Metric) -> np.ndarray:
    # sort key where smaller is better
    return scores if metric is Metric.L2 else -scores


def _scan(mat: np.ndarray, q: np.ndarray, metric: Metric) -> np.ndarray:
    if metric is Metric.L2:
        return kernels.l2sq_scores(mat, q)
    return kernels.ip_scores(mat, q)


def _reported_score(raw: np.ndarray, metric: Metric) -> np.ndarray:
    return np.sqrt(raw) if metric is Metric.L2 else raw


class IvfIndex:
    """Coarse centroids plus per-cluster (ids, vectors) inverted lists."""

    def __init__(self, centroids: np.ndarray, metric: Metric):
        self.metric = Metric(metric)
        self.centroids = np.ascontiguousarray(centroids, dtype=VECTOR_DTYPE)
        self.dim = self.centroids.shape[1]
        self.nlist = self.centroids.shape[0]
        self._list_ids: list[list[str]] = [[] for _ in range(self.nlist)]
        self._list_vecs: list[np.ndarray] = [
            np.empty((0, self.dim), dtype=VECTOR_DTYPE) for _ in range(self.nlist)
        ]
        self._id_to_list: dict[str, int] = {}

    # -- construction -----------------------------------------------------

    @classmethod
    def build(
        cls,
        records,
        nlist: int | None = None,
        metric: Metric = Metric.COSINE,
        seed: int = 0,
        kmeans_iters: int = 25,
        train_size: int | None = None,
    ) -> "IvfIndex":
        """Cluster `records` (iterable of (id, vector)) and fill the lists.

        `train_size` caps the k-means training sample (seeded subsample);
        assignment always covers every record.
        """
        items = list(records)
        if not items:
            raise ValueError("cannot build an index from zero records")
        ids = [str(i) for i, _ in items]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate ids in build input")
        mat = np.stack([as_vector(v) for _, v in items]).astype(VECTOR_DTYPE)
        count = mat.shape[0]
        if nlist is None:
            nlist = default_nlist(count)
        if not (1 <= nlist <= count):
            raise ValueError(f"nlist must be in [1, {count}], got {nlist}")
        metric = Metric(metric)
        stored = _prepare(mat, metric)

        train = stored
        if train_size is not None and train_size < count:
            sel = np.random.default_rng(seed).choice(count, size=train_size, replace=False)
            train = stored[np.sort(sel)]
        centroids = kmeans_fit(train, nlist, max_iters=kmeans_iters, seed=seed)

        index = cls(centroids, metric)
        assign = np.empty(count, dtype=np.int64)
        c64 = centroids.astype(np.float64)
        for start in range(0, count, 8192):  # bound the float64 working set
            part, _ = kernels.assign_nearest(stored[start : start + 8192].astype(np.float64), c64)
            assign[start : start + len(part)] = part
        for c in range(nlist):
            members = np.nonzero(assign == c)[0]
            index._list_vecs[c] = np.ascontiguousarray(stored[members])
            index._list_ids[c] = [ids[m] for m in members]
            for m in members:
                index._id_to_list[ids[m]] = c
        return index

    def copy(self) -> "IvfIndex":
        dup = IvfIndex(self.centroids.copy(), self.metric)
        dup._list_ids = [list(lst) for lst in self._list_ids]
        dup._list_vecs = [vecs.copy() for vecs in self._list_vecs]
        dup._id_to_list = dict(self._id_to_list)
        return dup

    # -- queries ------------------------------------------------------------

    @property
    def count(self) -> int:
        return len(self._id_to_list)

    def __contains__(self, id: str) -> bool:
        return id in self._id_to_list

    def search(self, query, top_n: int, nprobe: int | None = None) -> list[SearchResult]:
        """Scan the `nprobe` nearest lists, return up to `top_n` best entries."""
        q = as_vector(query, dim=self.dim).astype(np.float64)
        if nprobe is None:
            nprobe = default_nprobe(self.nlist)
        if not (1 <= nprobe <= self.nlist):
            raise ValueError(f"nprobe must be in [1, {self.nlist}], got {nprobe}")
        if top_n < 1:
            raise ValueError(f"top_n must be >= 1, got {top_n}")
        if self.metric is Metric.COSINE:
            q = normalize(q).astype(np.float64)

        cent_scores = _scan(self.centroids, q, self.metric)
        probe = np.lexsort((np.arange(self.nlist), _score_key(cent_scores, self.metric)))[:nprobe]

        ids: list[str] = []
        raw = []
        for c in probe:
            if len(self._list_ids[c]):
                ids.extend(self._list_ids[c])
                raw.append(_scan(self._list_vecs[c], q, self.metric))
        if not ids:
            return []
        scores = np.concatenate(raw)
        return _rank(np.array(ids), scores, self.metric, top_n)

    # -- mutation (exclusive access) -----------------------------------------

    def insert(self, id: str, vector) -> None:
        """Append to the nearest centroid's list; centroids are not retrained."""
        id = str(id)
        if id in self._id_to_list:
            raise ValueError(f"duplicate id: {id!r}")
        vec = _prepare(as_vector(vector, dim=self.dim)[None, :], self.metric)
        c, _ = kernels.assign_nearest(vec.astype(np.float64), self.centroids.astype(np.float64))
        c = int(c[0])
        self._list_vecs[c] = np.ascontiguousarray(np.concatenate([self._list_vecs[c], vec]))
        self._list_ids[c].append(id)
        self._id_to_list[id] = c

    def remove(self, id: str) -> None:
        if id not in self._id_to_list:
            raise KeyError(f"unknown id: {id!r}")
        c = self._id_to_list.pop(id)
        pos = self._list_ids[c].index(id)
        self._list_ids[c].pop(pos)
        self._list_vecs[c] = np.ascontiguousarray(np.delete(self._list_vecs[c], pos, axis=0))

    # -- accounting -----------------------------------------------------------

    def memory_footprint(self) -> MemoryFootprint:
        count = self.count
        id_bytes = sum(len(i.encode("utf-8")) for lst in self._list_ids for i in lst)
        return MemoryFootprint(
            vector_bytes=count * self.dim * 4,
            centroid_bytes=self.nlist * self.dim * 4,
            id_bytes=id_bytes,
            list_overhead_bytes=count * 8,
            count=count,
        )


def _prepare(mat: np.ndarray, metric: Metric) -> np.ndarray:
    """Storage transform: cosine indexes L2-normalized copies."""
    if metric is Metric.COSINE:
        m64 = mat.astype(np.float64)
        norms = np.sqrt(np.einsum("ij,ij->i", m64, m64))
        if np.any(norms == 0.0):
            raise ValueError("cannot cosine-index the zero vector")
        return (m64 / norms[:, None]).astype(VECTOR_DTYPE)
    return mat


def _rank(ids: np.ndarray, scores: np.ndarray, metric: Metric, top_n: int) -> list[SearchResult]:
    order = np.lexsort((ids, _score_key(scores, metric)))[:top_n]
    reported = _reported_score(scores[order], metric)
    return [
        SearchResult(id=str(ids[o]), score=float(reported[r]), rank=r + 1)
        for r, o in enumerate(order)
    ]


def brute_force_search(records, query, top_n: int, metric: Metric = Metric.COSINE) -> list[SearchResult]:
    """Exact top-n by full scan; the correctness oracle for IVF search."""
    items = list(records)
    if not items:
        raise ValueError("cannot search an empty store")
    if top_n < 1:
        raise ValueError(f"top_n must be >= 1, got {top_n}")
    metric = Metric(metric)
    ids = np.array([str(i) for i, _ in items])
    mat = _prepare(np.stack([as_vector(v) for _, v in items]).astype(VECTOR_DTYPE), metric)
    q = as_vector(query, dim=mat.shape[1]).astype(np.float64)
    if metric is Metric.COSINE:
        q = normalize(q).astype(np.float64)
    scores = _scan(mat, q, metric)
    return _rank(ids, scores, metric, top_n)
