"""PCA fitting and projection for embedding compression (e.g. 768 -> 128).

Models are fit per modality. Fitting is deterministic: the covariance
eigendecomposition is followed by a fixed sign convention (the
largest-magnitude entry of each component row is made positive), so the
same data and target dimension always produce bit-identical models.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .vectors import VECTOR_DTYPE


@dataclass(frozen=True)
class PcaModel:
    """Mean vector plus orthonormal projection rows, strongest first."""

    mean: np.ndarray  # (d,) float64
    components: np.ndarray  # (k, d) float64, rows orthonormal
    explained_variance: np.ndarray  # (k,) float64, nonincreasing

    @property
    def source_dim(self) -> int:
        return self.mean.shape[0]

    @property
    def target_dim(self) -> int:
        return self.components.shape[0]


def fit(data: np.ndarray, target_dim: int) -> PcaModel:
    """Fit a PCA model on an (n, d) sample matrix.

    Components are the top-`target_dim` eigenvectors of the 1/(n-1) sample
    covariance, ordered by descending eigenvalue. Degenerate data (all rows
    identical) yields a zero-variance model whose components are still an
    orthonormal basis; callers that care should inspect explained_variance.
    """
    x = np.asarray(data, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"data must be a 2-D matrix, got shape {x.shape}")
    n, d = x.shape
    if n < 2:
        raise ValueError(f"need at least 2 samples to fit PCA, got {n}")
    if not (1 <= target_dim <= min(n, d)):
        raise ValueError(f"target_dim must be in [1, min(n, d)] = [1, {min(n, d)}], got {target_dim}")
    if not np.all(np.isfinite(x)):
        raise ValueError("data contains non-finite values")

    mean = x.mean(axis=0)
    centered = x - mean
    cov = centered.T @ centered / (n - 1)
    eigvals, eigvecs = np.linalg.eigh(cov)  # ascending
    order = np.arange(d - 1, d - 1 - target_dim, -1)
    components = np.ascontiguousarray(eigvecs[:, order].T)
    variance = np.maximum(eigvals[order], 0.0)

    # sign convention: largest-magnitude entry of each row positive
    for row in components:
        j = int(np.argmax(np.abs(row)))
        if row[j] < 0.0:
            row *= -1.0

    return PcaModel(mean=mean, components=components, explained_variance=variance)


def transform(model: PcaModel, v: np.ndarray) -> np.ndarray:
    """Project a (d,) vector or (n, d) matrix into the k-dim PCA space."""
    x = np.asarray(v, dtype=np.float64)
    if x.shape[-1] != model.source_dim:
        raise ValueError(f"dimension mismatch: expected {model.source_dim}, got {x.shape[-1]}")
    out = (x - model.mean) @ model.components.T
    return out.astype(VECTOR_DTYPE)


def inverse_transform(model: PcaModel, z: np.ndarray) -> np.ndarray:
    """Map a (k,) vector or (n, k) matrix back to the d-dim source space."""
    x = np.asarray(z, dtype=np.float64)
    if x.shape[-1] != model.target_dim:
        raise ValueError(f"dimension mismatch: expected {model.target_dim}, got {x.shape[-1]}")
    out = x @ model.components + model.mean
    return out.astype(VECTOR_DTYPE)


def reconstruction_error(model: PcaModel, data: np.ndarray) -> float:
    """Mean squared L2 distance between rows and their PCA round trips."""
    x = np.atleast_2d(np.asarray(data, dtype=np.float64))
    if x.shape[0] == 0:
        raise ValueError("data must not be empty")
    if x.shape[1] != model.source_dim:
        raise ValueError(f"dimension mismatch: expected {model.source_dim}, got {x.shape[1]}")
    centered = x - model.mean
    recon = (centered @ model.components.T) @ model.components
    diff = centered - recon
    return float(np.einsum("ij,ij->i", diff, diff).mean())
