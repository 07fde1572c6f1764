"""Synthetic low-rank scenes for tests, demos and desk-scale experiments."""

from __future__ import annotations

import numpy as np

from .cube import SpectralCube
from .degrade import substream


def endmember_spectra(bands: int, rank: int, rng: np.random.Generator) -> np.ndarray:
    """``rank`` smooth positive spectra with well separated absorption peaks.

    Peak ``k`` sits near ``(k + 0.5) / rank`` of the band range so the spectra
    stay far from collinear.
    """
    grid = np.linspace(0.0, 1.0, bands)
    spectra = np.empty((rank, bands))
    for k in range(rank):
        center = (k + rng.uniform(0.3, 0.7)) / rank
        width = rng.uniform(0.6, 1.0) / rank
        s = rng.uniform(0.05, 0.15) + np.exp(-0.5 * ((grid - center) / width) ** 2)
        spectra[k] = s
    return spectra


def abundance_maps(rows: int, cols: int, rank: int, rng: np.random.Generator, n_regions: int = 12) -> np.ndarray:
    """Independent piecewise-constant maps with fine texture, shape ``(rows, cols, rank)``.

    Every component gets its own Voronoi partition so the components vary
    independently across the scene.
    """
    yy, xx = np.mgrid[0:rows, 0:cols]
    a = np.empty((rows, cols, rank))
    for k in range(rank):
        seeds = rng.uniform([0, 0], [rows, cols], size=(n_regions, 2))
        dist = (yy[..., None] - seeds[:, 0]) ** 2 + (xx[..., None] - seeds[:, 1]) ** 2
        levels = rng.uniform(0.0, 1.0, size=n_regions)
        a[:, :, k] = levels[np.argmin(dist, axis=2)]
    for k in range(rank):
        fy, fx = rng.uniform(0.15, 0.45, size=2)
        phase = rng.uniform(0, 2 * np.pi)
        a[:, :, k] *= 1.0 + 0.3 * np.sin(fy * yy + fx * xx + phase)
    return a


def low_rank_scene(rows: int, cols: int, bands: int, rank: int, seed: int = 0) -> SpectralCube:
    """Nonnegative scene of exact spectral rank ``rank`` scaled to peak 1."""
    rng = substream(seed, "synthetic-scene")
    a = abundance_maps(rows, cols, rank, rng)
    e = endmember_spectra(bands, rank, rng)
    cube = np.einsum("ijk,kb->ijb", a, e)
    return SpectralCube(cube / cube.max())
