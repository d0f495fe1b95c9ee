"""Vector domain types, distance metrics and normalization.

Embedding vectors are 1-D float32 arrays (storage dtype); every reduction
accumulates in float64. All types are immutable after construction and
safe to share across threads.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

VECTOR_DTYPE = np.float32


class Metric(str, Enum):
    L2 = "l2"
    INNER_PRODUCT = "ip"
    COSINE = "cosine"


def as_vector(values, dim: int | None = None) -> np.ndarray:
    """Validate and convert `values` into a float32 embedding vector.

    Raises ValueError on empty input, non-finite entries, or a dimension
    mismatch against `dim`.
    """
    v = np.asarray(values, dtype=VECTOR_DTYPE)
    if v.ndim != 1:
        raise ValueError(f"embedding vector must be 1-D, got shape {v.shape}")
    if v.size == 0:
        raise ValueError("embedding vector must not be empty")
    if not np.all(np.isfinite(v)):
        raise ValueError("embedding vector contains non-finite values")
    if dim is not None and v.size != dim:
        raise ValueError(f"dimension mismatch: expected {dim}, got {v.size}")
    return v


def _check_same_dim(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape[0]} vs {b.shape[0]}")


def l2_distance(a: np.ndarray, b: np.ndarray) -> float:
    _check_same_dim(a, b)
    diff = np.subtract(a, b, dtype=np.float64)
    return float(np.sqrt(np.dot(diff, diff)))


def inner_product(a: np.ndarray, b: np.ndarray) -> float:
    _check_same_dim(a, b)
    return float(np.multiply(a, b, dtype=np.float64).sum())


def normalize(v: np.ndarray) -> np.ndarray:
    """Scale `v` to unit L2 norm. Raises ValueError on the zero vector."""
    v64 = np.asarray(v, dtype=np.float64)
    norm = np.sqrt(np.dot(v64, v64))
    if norm == 0.0:
        raise ValueError("cannot normalize the zero vector")
    return (v64 / norm).astype(VECTOR_DTYPE)


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    _check_same_dim(a, b)
    a64 = np.asarray(a, dtype=np.float64)
    b64 = np.asarray(b, dtype=np.float64)
    na = np.sqrt(np.dot(a64, a64))
    nb = np.sqrt(np.dot(b64, b64))
    if na == 0.0 or nb == 0.0:
        raise ValueError("cosine is undefined for the zero vector")
    return float(np.clip(np.dot(a64, b64) / (na * nb), -1.0, 1.0))


@dataclass(frozen=True)
class ProductRecord:
    """One catalog item: id, mandatory text vector, optional image vector.

    Retrieval runs on text vectors only; image vectors feed the decider.
    """

    id: str
    text_vec: np.ndarray
    image_vec: np.ndarray | None = None
    category: str | None = None

    def __post_init__(self):
        if not self.id:
            raise ValueError("product id must be a nonempty string")
        object.__setattr__(self, "text_vec", as_vector(self.text_vec))
        if self.image_vec is not None:
            object.__setattr__(self, "image_vec", as_vector(self.image_vec))
