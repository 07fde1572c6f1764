"""PCA spectral subspace: ``f_i = r_i Q + mean``.

The basis ``Q`` stores principal axes as rows (``dim x n_bands``), so a
matrix view of reduced coefficients ``R`` maps back to spectra as
``R @ Q + mean``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInputError, ShapeError


@dataclass(frozen=True, eq=False)
class Subspace:
    basis: np.ndarray  # (dim, n_bands), orthonormal rows
    mean: np.ndarray  # (n_bands,)
    explained_variance: np.ndarray  # (dim,), non-increasing

    @property
    def dim(self) -> int:
        return self.basis.shape[0]

    @property
    def n_bands(self) -> int:
        return self.basis.shape[1]

    def to_dict(self) -> dict:
        return {
            "dim": self.dim,
            "n_bands": self.n_bands,
            "basis": self.basis.tolist(),
            "mean": self.mean.tolist(),
            "explained_variance": self.explained_variance.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Subspace":
        return cls(
            np.asarray(d["basis"], dtype=np.float64),
            np.asarray(d["mean"], dtype=np.float64),
            np.asarray(d["explained_variance"], dtype=np.float64),
        )


def fit_pca(h: np.ndarray, dim: int) -> Subspace:
    """Fit the top-``dim`` principal axes of the band covariance of ``h``.

    ``h`` is a ``(n_pixels, n_bands)`` matrix view. Each axis is oriented so
    its largest-magnitude coefficient is positive.
    """
    h = np.asarray(h, dtype=np.float64)
    if h.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix view, got {h.ndim}-D")
    n, z = h.shape
    if int(dim) != dim or not 1 <= dim <= min(n, z):
        raise ValueError(f"subspace dim must be in [1, {min(n, z)}], got {dim}")
    dim = int(dim)
    mean = h.mean(axis=0)
    centered = h - mean
    cov = centered.T @ centered / max(n - 1, 1)
    if not np.trace(cov) > 0:
        raise DegenerateInputError("input has zero variance; no principal axes exist")
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1][:dim]
    evals = np.clip(evals[order], 0.0, None)
    basis = evecs[:, order].T
    pivot = np.argmax(np.abs(basis), axis=1)
    signs = np.sign(basis[np.arange(dim), pivot])
    basis = basis * signs[:, None]
    return Subspace(basis, mean, evals)


def project(sub: Subspace, m: np.ndarray) -> np.ndarray:
    """Reduced coefficients ``(f - mean) Q^T``."""
    m = np.asarray(m, dtype=np.float64)
    if m.shape[-1] != sub.n_bands:
        raise ShapeError(f"expected {sub.n_bands} bands, got {m.shape[-1]}")
    return (m - sub.mean) @ sub.basis.T


def reconstruct(sub: Subspace, r: np.ndarray) -> np.ndarray:
    """Spectra ``r Q + mean`` from reduced coefficients."""
    r = np.asarray(r, dtype=np.float64)
    if r.shape[-1] != sub.dim:
        raise ShapeError(f"expected {sub.dim} subspace coefficients, got {r.shape[-1]}")
    return r @ sub.basis + sub.mean
