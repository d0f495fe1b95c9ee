"""Deterministic synthetic embeddings standing in for the text/image
backbones, for tests and desk-scale end-to-end runs.

Cluster centers live on the unit sphere; products scatter around them
with Gaussian noise, and duplicates re-noise an existing product. With
center separation well above the noise scale, every duplicate's nearest
neighbour is its original, which makes retrieval and decider quality
measurable against exact ground truth.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np

from .vectors import VECTOR_DTYPE, ProductRecord


@dataclass(frozen=True)
class SyntheticSpec:
    num_clusters: int
    dim: int = 128
    noise_sigma: float = 0.0125
    seed: int = 0

    def __post_init__(self):
        if self.num_clusters < 1 or self.dim < 1:
            raise ValueError("num_clusters and dim must be positive")
        if self.noise_sigma < 0.0:
            raise ValueError("noise_sigma must be nonnegative")


def hash_embed(text: str, dim: int) -> np.ndarray:
    """Deterministic pseudo-random unit vector keyed by normalized text.

    Lowercases and collapses whitespace first, so "Wireless  Earbuds" and
    "wireless earbuds" map to the same vector.
    """
    if dim < 1:
        raise ValueError("dim must be positive")
    normalized = " ".join(text.lower().split())
    if not normalized:
        raise ValueError("cannot embed an empty string")
    digest = hashlib.sha256(normalized.encode("utf-8")).digest()
    rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
    v = rng.standard_normal(dim)
    return (v / np.sqrt(np.dot(v, v))).astype(VECTOR_DTYPE)


def _unit_rows(rng: np.random.Generator, n: int, dim: int) -> np.ndarray:
    m = rng.standard_normal((n, dim))
    return m / np.sqrt(np.einsum("ij,ij->i", m, m))[:, None]


def synth_catalog(
    spec: SyntheticSpec, n_products: int, dup_rate: float
) -> tuple[list[ProductRecord], list[tuple[str, str]]]:
    """Generate records plus ground-truth duplicate pairs.

    A fraction `dup_rate` of products is duplicated under new ids by
    adding fresh noise to the original's vectors. Ground-truth pairs come
    back canonically ordered (id_a < id_b). Fully deterministic per spec.
    """
    if not (0.0 <= dup_rate < 1.0):
        raise ValueError(f"dup_rate must be in [0, 1), got {dup_rate}")
    if n_products < 1:
        raise ValueError("n_products must be positive")
    rng = np.random.default_rng(spec.seed)
    text_centers = _unit_rows(rng, spec.num_clusters, spec.dim)
    image_centers = _unit_rows(rng, spec.num_clusters, spec.dim)

    clusters = rng.integers(spec.num_clusters, size=n_products)
    text = text_centers[clusters] + spec.noise_sigma * rng.standard_normal((n_products, spec.dim))
    image = image_centers[clusters] + spec.noise_sigma * rng.standard_normal((n_products, spec.dim))

    records = [
        ProductRecord(
            id=f"p{i:06d}",
            text_vec=text[i].astype(VECTOR_DTYPE),
            image_vec=image[i].astype(VECTOR_DTYPE),
            category=f"c{clusters[i]:03d}",
        )
        for i in range(n_products)
    ]

    truth: list[tuple[str, str]] = []
    n_dups = int(round(n_products * dup_rate))
    if n_dups:
        originals = np.sort(rng.choice(n_products, size=n_dups, replace=False))
        for j, orig in enumerate(originals):
            dup_text = text[orig] + spec.noise_sigma * rng.standard_normal(spec.dim)
            dup_image = image[orig] + spec.noise_sigma * rng.standard_normal(spec.dim)
            dup_id = f"p{n_products + j:06d}"
            records.append(
                ProductRecord(
                    id=dup_id,
                    text_vec=dup_text.astype(VECTOR_DTYPE),
                    image_vec=dup_image.astype(VECTOR_DTYPE),
                    category=f"c{clusters[orig]:03d}",
                )
            )
            truth.append((records[orig].id, dup_id))
    return records, truth


@dataclass(frozen=True)
class PairSet:
    """Stacked labeled pairs, one row per pair and modality."""

    text_a: np.ndarray
    image_a: np.ndarray
    text_b: np.ndarray
    image_b: np.ndarray
    labels: np.ndarray  # int64, 1 = match

    def __len__(self) -> int:
        return len(self.labels)


def synth_pairs(
    spec: SyntheticSpec,
    n_pairs: int,
    match_fraction: float = 0.5,
    hard_negative_fraction: float = 0.5,
) -> PairSet:
    """Labeled pair set mirroring the catalog's duplicate geometry.

    Positives re-noise one product. Negatives split between hard (same
    cluster, different product) and easy (different cluster) pairs.
    """
    if n_pairs < 1:
        raise ValueError("n_pairs must be positive")
    rng = np.random.default_rng(spec.seed)
    text_centers = _unit_rows(rng, spec.num_clusters, spec.dim)
    image_centers = _unit_rows(rng, spec.num_clusters, spec.dim)
    sigma = spec.noise_sigma

    def noisy(centers, cluster, n=1):
        return centers[cluster] + sigma * rng.standard_normal((n, spec.dim))

    text_a = np.empty((n_pairs, spec.dim))
    image_a = np.empty((n_pairs, spec.dim))
    text_b = np.empty((n_pairs, spec.dim))
    image_b = np.empty((n_pairs, spec.dim))
    labels = np.zeros(n_pairs, dtype=np.int64)

    kinds = rng.random(n_pairs)
    for i in range(n_pairs):
        c = int(rng.integers(spec.num_clusters))
        ta, ia = noisy(text_centers, c)[0], noisy(image_centers, c)[0]
        if kinds[i] < match_fraction:
            tb = ta + sigma * rng.standard_normal(spec.dim)
            ib = ia + sigma * rng.standard_normal(spec.dim)
            labels[i] = 1
        elif kinds[i] < match_fraction + (1.0 - match_fraction) * hard_negative_fraction:
            tb, ib = noisy(text_centers, c)[0], noisy(image_centers, c)[0]
        else:
            other = (c + 1 + int(rng.integers(spec.num_clusters - 1))) % spec.num_clusters if spec.num_clusters > 1 else c
            tb, ib = noisy(text_centers, other)[0], noisy(image_centers, other)[0]
        text_a[i], image_a[i], text_b[i], image_b[i] = ta, ia, tb, ib

    return PairSet(
        text_a=text_a.astype(VECTOR_DTYPE),
        image_a=image_a.astype(VECTOR_DTYPE),
        text_b=text_b.astype(VECTOR_DTYPE),
        image_b=image_b.astype(VECTOR_DTYPE),
        labels=labels,
    )


def training_pairs_from_catalog(
    records: list[ProductRecord],
    truth: list[tuple[str, str]],
    n_pairs: int,
    seed: int = 0,
) -> list[tuple[str, str, int]]:
    """Balanced (id_a, id_b, label) tuples for decider training.

    Positives cycle through the ground-truth pairs; negatives mix
    same-category and cross-category samples.
    """
    if not truth:
        raise ValueError("need ground-truth pairs to build positives")
    rng = np.random.default_rng(seed)
    by_category: dict[str, list[str]] = {}
    for rec in records:
        by_category.setdefault(rec.category or "", []).append(rec.id)
    ids = [rec.id for rec in records]
    truth_set = {tuple(sorted(p)) for p in truth}

    out: list[tuple[str, str, int]] = []
    n_pos = n_pairs // 2
    for i in range(n_pos):
        a, b = truth[int(rng.integers(len(truth)))]
        out.append((a, b, 1))
    categories = [c for c, members in by_category.items() if len(members) >= 2]
    while len(out) < n_pairs:
        if categories and rng.random() < 0.5:
            members = by_category[categories[int(rng.integers(len(categories)))]]
            a, b = rng.choice(members, size=2, replace=False)
        else:
            a, b = rng.choice(ids, size=2, replace=False)
        a, b = (a, b) if a < b else (b, a)
        if a != b and (a, b) not in truth_set:
            out.append((str(a), str(b), 0))
    return out


def pairs_from_ids(
    records_by_id: dict[str, ProductRecord], labeled: list[tuple[str, str, int]]
) -> PairSet:
    """Resolve (id_a, id_b, label) tuples against records; missing image
    vectors substitute zeros."""
    dim = next(iter(records_by_id.values())).text_vec.shape[0]
    zero = np.zeros(dim, dtype=VECTOR_DTYPE)

    def img(rec: ProductRecord) -> np.ndarray:
        return rec.image_vec if rec.image_vec is not None else zero

    rows = [(records_by_id[a], records_by_id[b], label) for a, b, label in labeled]
    return PairSet(
        text_a=np.stack([r[0].text_vec for r in rows]),
        image_a=np.stack([img(r[0]) for r in rows]),
        text_b=np.stack([r[1].text_vec for r in rows]),
        image_b=np.stack([img(r[1]) for r in rows]),
        labels=np.array([r[2] for r in rows], dtype=np.int64),
    )


# -- JSONL emission (same product schema the ingest pipeline consumes) -------


def record_to_json(rec: ProductRecord) -> dict:
    return {
        "id": rec.id,
        "text_vec": [float(x) for x in rec.text_vec],
        "image_vec": [float(x) for x in rec.image_vec] if rec.image_vec is not None else None,
        "category": rec.category,
    }


def write_catalog_jsonl(records: list[ProductRecord], path) -> None:
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(record_to_json(rec)) + "\n")


def write_pairs_jsonl(pairs, path) -> None:
    """Ground-truth pairs ((a, b) tuples) or labeled (a, b, label) tuples."""
    with open(path, "w") as fh:
        for pair in pairs:
            if len(pair) == 2:
                fh.write(json.dumps({"id_a": pair[0], "id_b": pair[1], "label": 1}) + "\n")
            else:
                fh.write(json.dumps({"id_a": pair[0], "id_b": pair[1], "label": int(pair[2])}) + "\n")
