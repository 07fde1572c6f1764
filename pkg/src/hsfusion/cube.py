"""Spectral cube data model and its canonical matrix view.

A cube is stored as a ``(rows, cols, bands)`` float64 array. The matrix view
used by every linear operator in the package is ``(rows * cols, bands)``:
row ``i`` holds the spectrum of pixel ``(i // cols, i % cols)``, i.e. pixels
are flattened in row-major (C) order. This is the single canonical pixel
order; all spatial operators, the PCA and the metrics rely on it.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import NumericalError, ShapeError


@dataclass(frozen=True, eq=False)
class SpectralCube:
    """Immutable 3-D spectral image.

    Parameters
    ----------
    data : array_like
        Array of shape ``(rows, cols, bands)``. Widened to float64 and
        copied; the stored array is read-only.
    band_centers : sequence of float, optional
        Wavelength or wavenumber of each band, strictly monotonic.
    """

    data: np.ndarray
    band_centers: Optional[np.ndarray] = None

    def __post_init__(self):
        arr = np.array(self.data, dtype=np.float64, copy=True)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        if arr.ndim != 3 or min(arr.shape) < 1:
            raise ShapeError(f"cube data must be a non-empty 3-D array, got shape {np.shape(self.data)}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("cube contains non-finite values")
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

        if self.band_centers is not None:
            centers = np.array(self.band_centers, dtype=np.float64, copy=True).ravel()
            if centers.size != arr.shape[2]:
                raise ShapeError(
                    f"band_centers has {centers.size} entries for {arr.shape[2]} bands"
                )
            steps = np.diff(centers)
            if centers.size > 1 and not (np.all(steps > 0) or np.all(steps < 0)):
                raise ValueError("band_centers must be strictly monotonic")
            centers.setflags(write=False)
            object.__setattr__(self, "band_centers", centers)

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    @property
    def bands(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self):
        return self.data.shape

    @property
    def n_pixels(self) -> int:
        return self.rows * self.cols

    def with_data(self, data) -> "SpectralCube":
        """Return a new cube with ``data`` and this cube's band centers when compatible."""
        data = np.asarray(data)
        centers = self.band_centers
        if centers is not None and (data.ndim != 3 or data.shape[2] != centers.size):
            centers = None
        return SpectralCube(data, centers)

    def __repr__(self):
        return f"SpectralCube(rows={self.rows}, cols={self.cols}, bands={self.bands})"


def as_matrix(cube: SpectralCube) -> np.ndarray:
    """Return the ``(n_pixels, bands)`` view of ``cube`` (row-major pixels, read-only)."""
    return cube.data.reshape(cube.rows * cube.cols, cube.bands)


def from_matrix(
    m: np.ndarray, rows: int, cols: int, band_centers: Optional[Sequence[float]] = None
) -> SpectralCube:
    """Inverse of :func:`as_matrix`.

    Raises
    ------
    ShapeError
        If ``m`` does not have exactly ``rows * cols`` rows.
    """
    m = np.asarray(m)
    if m.ndim == 1:
        m = m[:, None]
    if m.ndim != 2:
        raise ShapeError(f"matrix view must be 2-D, got {m.ndim}-D")
    if m.shape[0] != rows * cols:
        raise ShapeError(
            f"matrix has {m.shape[0]} pixels but rows*cols = {rows}*{cols} = {rows * cols}"
        )
    return SpectralCube(m.reshape(rows, cols, m.shape[1]), band_centers)


def slice_band(cube: SpectralCube, band_index: int) -> np.ndarray:
    """Return band ``band_index`` as a read-only ``(rows, cols)`` image."""
    if not 0 <= band_index < cube.bands:
        raise IndexError(f"band index {band_index} out of range for {cube.bands} bands")
    return cube.data[:, :, band_index]


def check_finite(array: np.ndarray, stage: str) -> None:
    """Raise :class:`NumericalError` naming ``stage`` if ``array`` has NaN/Inf."""
    if not np.all(np.isfinite(array)):
        raise NumericalError(f"non-finite values produced by {stage}", block=stage)
