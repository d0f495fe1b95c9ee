"""End-to-end deduplication pipeline over a catalog store.

Flow: ingest JSONL product lines (PCA-reducing oversized vectors), build
the text IVF index, retrieve top-N candidates per product by text vector
only, score candidate pairs with the decider, and group Match verdicts
into duplicate clusters via union-find.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import decider as decider_mod
from . import pca as pca_mod
from . import snapshot as snapshot_mod
from .decider import DeciderModel, MatchDecision, assemble_batch
from .ivf import IvfIndex, SearchResult, default_nprobe
from .pca import PcaModel
from .vectors import VECTOR_DTYPE, Metric, ProductRecord, as_vector

TARGET_DIM = 128
DEFAULT_TOP_N = 50
DEFAULT_THRESHOLD = 0.5


@dataclass
class IngestReport:
    count: int = 0
    rejects: list[tuple[int, str]] = field(default_factory=list)  # (line number, reason)


@dataclass(frozen=True)
class DuplicateGroup:
    """Transitive closure of Match decisions; at least two members."""

    members: tuple[str, ...]

    def __post_init__(self):
        if len(self.members) < 2:
            raise ValueError("a duplicate group needs at least 2 members")
        object.__setattr__(self, "members", tuple(sorted(self.members)))

    @property
    def representative(self) -> str:
        return self.members[0]


class UnionFind:
    """Disjoint sets with path compression and union by rank."""

    def __init__(self):
        self.parent: dict[str, str] = {}
        self.rank: dict[str, int] = {}

    def find(self, x: str) -> str:
        if x not in self.parent:
            self.parent[x] = x
            self.rank[x] = 0
            return x
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, a: str, b: str) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return
        if self.rank[ra] < self.rank[rb]:
            ra, rb = rb, ra
        self.parent[rb] = ra
        if self.rank[ra] == self.rank[rb]:
            self.rank[ra] += 1

    def groups(self) -> list[list[str]]:
        by_root: dict[str, list[str]] = {}
        for x in self.parent:
            by_root.setdefault(self.find(x), []).append(x)
        return list(by_root.values())


class CatalogStore:
    """Records, text index, PCA reducers and the decider in one place.

    Reads (search/score) are reentrant against a built store; ingest and
    index builds require exclusive access. The HTTP service layers a
    copy-on-swap generation contract on top of this class.
    """

    def __init__(self, metric: Metric = Metric.COSINE):
        self.records: dict[str, ProductRecord] = {}
        self.text_index: IvfIndex | None = None
        self.pca_text: PcaModel | None = None
        self.pca_image: PcaModel | None = None
        self.decider: DeciderModel | None = None
        self.metric = Metric(metric)

    # -- ingest ---------------------------------------------------------------

    def ingest(self, lines) -> IngestReport:
        """Validate and store JSONL product lines.

        Oversized vectors reduce through the fitted PCA models; lines with
        the wrong dimension and no matching model are rejected. Rejects
        never abort the stream.
        """
        report = IngestReport()
        for line_no, line in enumerate(lines, start=1):
            if isinstance(line, bytes):
                line = line.decode("utf-8")
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                report.rejects.append((line_no, f"invalid json: {exc.msg}"))
                continue
            try:
                record = self._record_from_obj(obj)
            except (ValueError, TypeError, KeyError) as exc:
                report.rejects.append((line_no, str(exc)))
                continue
            self.records[record.id] = record
            report.count += 1
        return report

    def _record_from_obj(self, obj) -> ProductRecord:
        if not isinstance(obj, dict):
            raise ValueError("product line must be a JSON object")
        rid = obj.get("id")
        if not isinstance(rid, str) or not rid:
            raise ValueError("missing or invalid 'id'")
        if rid in self.records:
            raise ValueError(f"duplicate id: {rid!r}")
        if "text_vec" not in obj or obj["text_vec"] is None:
            raise ValueError("missing 'text_vec'")
        text = self._reduce(obj["text_vec"], self.pca_text, "text_vec")
        image = None
        if obj.get("image_vec") is not None:
            image = self._reduce(obj["image_vec"], self.pca_image, "image_vec")
        category = obj.get("category")
        if category is not None and not isinstance(category, str):
            raise ValueError("'category' must be a string or null")
        return ProductRecord(id=rid, text_vec=text, image_vec=image, category=category)

    def _reduce(self, values, model: PcaModel | None, name: str) -> np.ndarray:
        vec = as_vector(values)
        if vec.shape[0] == TARGET_DIM:
            return vec
        if model is not None and vec.shape[0] == model.source_dim:
            return pca_mod.transform(model, vec)
        raise ValueError(
            f"{name} has dim {vec.shape[0]}; expected {TARGET_DIM}"
            + (f" or {model.source_dim} (PCA source)" if model is not None else " (no PCA model fitted)")
        )

    # -- index ------------------------------------------------------------------

    def build_index(self, nlist: int | None = None, seed: int = 0, kmeans_iters: int = 25,
                    train_size: int | None = None) -> IvfIndex:
        if not self.records:
            raise ValueError("cannot build an index over an empty catalog")
        pairs = [(rec.id, rec.text_vec) for rec in self.records.values()]
        self.text_index = IvfIndex.build(
            pairs, nlist=nlist, metric=self.metric, seed=seed,
            kmeans_iters=kmeans_iters, train_size=train_size,
        )
        return self.text_index

    def fit_pca(self, data: np.ndarray, modality: str, target_dim: int = TARGET_DIM) -> PcaModel:
        model = pca_mod.fit(np.asarray(data), target_dim)
        if modality == "text":
            self.pca_text = model
        elif modality == "image":
            self.pca_image = model
        else:
            raise ValueError(f"modality must be 'text' or 'image', got {modality!r}")
        return model

    # -- retrieval and scoring ---------------------------------------------------

    def find_candidates(self, query_id: str, top_n: int = DEFAULT_TOP_N,
                        nprobe: int | None = None) -> list[SearchResult]:
        """Top-N nearest products by text vector, excluding the query itself."""
        record = self._require_record(query_id)
        index = self._require_index()
        raw = index.search(record.text_vec, top_n=top_n + 1, nprobe=nprobe)
        out = [r for r in raw if r.id != query_id][:top_n]
        return [SearchResult(id=r.id, score=r.score, rank=i + 1) for i, r in enumerate(out)]

    def score_candidates(self, query_id: str, candidates: list[SearchResult],
                         threshold: float = DEFAULT_THRESHOLD) -> list[MatchDecision]:
        """One decider verdict per candidate, canonical id order preserved."""
        self._require_decider()
        query = self._require_record(query_id)
        if not candidates:
            return []
        probs = self._pair_probs([(query, self._require_record(c.id)) for c in candidates])
        decisions = []
        for cand, prob in zip(candidates, probs):
            a, b = sorted((query_id, cand.id))
            decisions.append(
                MatchDecision(
                    id_a=a, id_b=b, probability=float(prob),
                    is_match=bool(prob >= threshold),
                    retrieval_rank=cand.rank, retrieval_score=cand.score,
                )
            )
        return decisions

    def score_pair(self, id_a: str, id_b: str, threshold: float = DEFAULT_THRESHOLD) -> MatchDecision:
        self._require_decider()
        a, b = sorted((id_a, id_b))
        prob = self._pair_probs([(self._require_record(a), self._require_record(b))])[0]
        return MatchDecision(id_a=a, id_b=b, probability=float(prob), is_match=bool(prob >= threshold))

    def _pair_probs(self, pairs: list[tuple[ProductRecord, ProductRecord]]) -> np.ndarray:
        """Batched match probabilities; pair order is canonicalized by id so
        that (a, b) and (b, a) always score identically."""
        zero = np.zeros(TARGET_DIM, dtype=VECTOR_DTYPE)

        def img(rec: ProductRecord) -> np.ndarray:
            return rec.image_vec if rec.image_vec is not None else zero

        ordered = [(a, b) if a.id < b.id else (b, a) for a, b in pairs]
        x = assemble_batch(
            np.stack([a.text_vec for a, _ in ordered]),
            np.stack([img(a) for a, _ in ordered]),
            np.stack([b.text_vec for _, b in ordered]),
            np.stack([img(b) for _, b in ordered]),
        )
        return decider_mod.predict(self.decider, x)

    # -- full dedupe -----------------------------------------------------------

    def dedupe_catalog(self, top_n: int = DEFAULT_TOP_N, threshold: float = DEFAULT_THRESHOLD,
                       nprobe: int | None = None) -> tuple[list[DuplicateGroup], list[MatchDecision]]:
        """Retrieve and score candidates for every record; union Match edges.

        Each unordered pair is scored once. Returns disjoint groups (sorted
        by representative id) plus the full decision log (sorted by pair).
        """
        index = self._require_index()
        self._require_decider()
        if nprobe is None:
            nprobe = default_nprobe(index.nlist)

        pair_provenance: dict[tuple[str, str], tuple[int, float]] = {}
        for rid in sorted(self.records):
            for cand in self.find_candidates(rid, top_n=top_n, nprobe=nprobe):
                key = (rid, cand.id) if rid < cand.id else (cand.id, rid)
                if key not in pair_provenance:
                    pair_provenance[key] = (cand.rank, cand.score)

        keys = sorted(pair_provenance)
        decisions: list[MatchDecision] = []
        uf = UnionFind()
        chunk = 2048
        for start in range(0, len(keys), chunk):
            batch = keys[start : start + chunk]
            probs = self._pair_probs([(self.records[a], self.records[b]) for a, b in batch])
            for (a, b), prob in zip(batch, probs):
                rank, score = pair_provenance[(a, b)]
                is_match = bool(prob >= threshold)
                decisions.append(
                    MatchDecision(id_a=a, id_b=b, probability=float(prob), is_match=is_match,
                                  retrieval_rank=rank, retrieval_score=score)
                )
                if is_match:
                    uf.union(a, b)

        groups = sorted(
            (DuplicateGroup(members=tuple(g)) for g in uf.groups() if len(g) >= 2),
            key=lambda g: g.representative,
        )
        return groups, decisions

    # -- bookkeeping -----------------------------------------------------------

    def _require_record(self, rid: str) -> ProductRecord:
        rec = self.records.get(rid)
        if rec is None:
            raise KeyError(f"unknown id: {rid!r}")
        return rec

    def _require_index(self) -> IvfIndex:
        if self.text_index is None:
            raise RuntimeError("index not built; run build_index first")
        return self.text_index

    def _require_decider(self) -> DeciderModel:
        if self.decider is None:
            raise RuntimeError("no decider model loaded; train or load one first")
        return self.decider

    def stats(self) -> dict:
        out = {"record_count": len(self.records), "metric": self.metric.value,
               "has_decider": self.decider is not None,
               "has_pca_text": self.pca_text is not None,
               "has_pca_image": self.pca_image is not None}
        if self.text_index is not None:
            fp = self.text_index.memory_footprint()
            out["index"] = {"nlist": self.text_index.nlist, "dim": self.text_index.dim,
                            "count": self.text_index.count, "memory_bytes": fp.total_bytes,
                            "bytes_per_vector": fp.bytes_per_vector}
        else:
            out["index"] = None
        return out

    def with_products(self, objs: list[dict]) -> tuple["CatalogStore", IngestReport]:
        """Copy-on-write ingest for the service layer: returns a new store
        generation with the batch applied; `self` is untouched."""
        clone = CatalogStore(metric=self.metric)
        clone.records = dict(self.records)
        clone.pca_text, clone.pca_image = self.pca_text, self.pca_image
        clone.decider = self.decider
        clone.text_index = self.text_index.copy() if self.text_index is not None else None
        report = clone.ingest(json.dumps(obj) for obj in objs)
        if clone.text_index is not None:
            for rid in list(clone.records)[len(self.records):]:
                clone.text_index.insert(rid, clone.records[rid].text_vec)
        return clone, report


def save_snapshot(store: CatalogStore, path) -> None:
    snapshot_mod.save_store(store, path)


def load_snapshot(path) -> CatalogStore:
    return snapshot_mod.load_store(path)


def decisions_to_jsonl(decisions: list[MatchDecision], path) -> None:
    with open(path, "w") as fh:
        for d in decisions:
            fh.write(json.dumps({
                "id_a": d.id_a, "id_b": d.id_b, "probability": d.probability,
                "label": d.label, "retrieval_rank": d.retrieval_rank,
                "retrieval_score": d.retrieval_score,
            }) + "\n")


def groups_to_json(groups: list[DuplicateGroup], path) -> None:
    with open(path, "w") as fh:
        json.dump({"groups": [{"representative": g.representative, "members": list(g.members)}
                              for g in groups]}, fh, indent=2)
        fh.write("\n")
