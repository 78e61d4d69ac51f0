"""Standardization followed by PCA, via eigen-decomposition of the covariance."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tape import ShapeError

MIN_STD = 1e-12


@dataclass(frozen=True)
class PCAModel:
    mean: np.ndarray          # (d,)
    std: np.ndarray           # (d,)
    components: np.ndarray    # (k, d), orthonormal rows
    explained_variance: np.ndarray  # (k,), non-increasing

    @property
    def k(self):
        return self.components.shape[0]

    @property
    def dim(self):
        return self.components.shape[1]


def standardize_stats(data):
    """Per-dimension mean and population std; near-constant dimensions get std 1."""
    mean = data.mean(axis=0)
    std = data.std(axis=0)
    std = np.where(std < MIN_STD, 1.0, std)
    return mean, std


def pca_fit(data, k):
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2:
        raise ShapeError(f"expected a (samples, dim) matrix, got shape {data.shape}")
    n, d = data.shape
    if n < 2:
        raise ValueError(f"PCA needs at least 2 samples, got {n}")
    if not 1 <= k <= d:
        raise ValueError(f"k must be in [1, {d}], got {k}")
    mean, std = standardize_stats(data)
    z = (data - mean) / std
    cov = z.T @ z / n
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(-evals, kind="stable")[:k]
    comps = evecs[:, order].T.copy()
    # deterministic sign: largest-magnitude entry positive
    pivot = np.argmax(np.abs(comps), axis=1)
    signs = np.sign(comps[np.arange(k), pivot])
    comps *= np.where(signs == 0, 1.0, signs)[:, None]
    ev = np.clip(evals[order], 0.0, None)
    return PCAModel(mean=mean, std=std, components=comps, explained_variance=ev)


def pca_project(model, v):
    """Project one vector (d,) or a batch (n, d) of vectors."""
    v = np.asarray(v, dtype=np.float64)
    if v.shape[-1] != model.dim:
        raise ShapeError(f"vector dim {v.shape[-1]} != model dim {model.dim}")
    return ((v - model.mean) / model.std) @ model.components.T


def pca_reconstruct(model, p):
    """Map projected coordinates back to standardized space (not de-standardized)."""
    return np.asarray(p, dtype=np.float64) @ model.components
