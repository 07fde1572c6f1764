"""Observation model and simulation protocol.

The hyperspectral image is a blurred, decimated copy of the scene
(``H = L S + noise``) and the multispectral image keeps a few of its bands
(``M = S B + noise``). Blurring is circular, so ``L`` is block circulant up to
the decimation and every solve involving ``L^T L`` reduces to element-wise
divisions in the Fourier domain.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass
from functools import cached_property
from typing import Optional, Sequence, Tuple, Union

import numpy as np
import scipy.fft as sfft

from .cube import SpectralCube
from .errors import ConfigError, ShapeError

GAUSSIAN = "gaussian"
POISSON = "poisson"


def gaussian_kernel(size: int, sigma: Optional[float] = None) -> np.ndarray:
    """Normalized ``size x size`` Gaussian kernel.

    ``sigma`` defaults to ``size / 6`` so that three standard deviations reach
    the kernel edge; ``sigma=np.inf`` gives the flat box kernel.
    """
    if int(size) != size or size < 1 or size % 2 == 0:
        raise ConfigError(f"kernel size must be a positive odd integer, got {size}")
    size = int(size)
    if sigma is None:
        sigma = size / 6.0
    if not sigma > 0:
        raise ConfigError(f"kernel sigma must be > 0, got {sigma}")
    if np.isinf(sigma):
        return np.full((size, size), 1.0 / size**2)
    x = np.arange(size) - size // 2
    g = np.exp(-(x**2) / (2.0 * sigma**2))
    k = np.outer(g, g)
    return k / k.sum()


@dataclass(frozen=True, eq=False)
class SpatialOperator:
    """Circular blur followed by keeping every ``factor``-th row and column.

    Acts on the pixel dimension of a matrix view (``L @ X`` in matrix terms),
    or equivalently band by band on a ``(rows, cols, k)`` array.
    """

    kernel: np.ndarray
    factor: int
    input_dims: Tuple[int, int]

    def __post_init__(self):
        k = np.array(self.kernel, dtype=np.float64)
        if k.ndim != 2 or k.shape[0] != k.shape[1] or k.shape[0] % 2 == 0:
            raise ConfigError(f"kernel must be square with odd side, got shape {k.shape}")
        if np.any(k < 0):
            raise ConfigError("kernel must be nonnegative")
        if abs(k.sum() - 1.0) > 1e-12:
            raise ConfigError(f"kernel must sum to 1, sums to {k.sum():.15g}")
        d = int(self.factor)
        if d != self.factor or d < 1:
            raise ConfigError(f"downsample factor must be a positive integer, got {self.factor}")
        rows, cols = (int(v) for v in self.input_dims)
        if rows % d or cols % d:
            raise ShapeError(
                f"input dims {rows}x{cols} are not divisible by downsample factor {d}"
            )
        k.setflags(write=False)
        object.__setattr__(self, "kernel", k)
        object.__setattr__(self, "factor", d)
        object.__setattr__(self, "input_dims", (rows, cols))

    @classmethod
    def gaussian(cls, input_dims, size, factor, sigma=None) -> "SpatialOperator":
        return cls(gaussian_kernel(size, sigma), factor, tuple(input_dims))

    @property
    def output_dims(self) -> Tuple[int, int]:
        return (self.input_dims[0] // self.factor, self.input_dims[1] // self.factor)

    @property
    def n_in(self) -> int:
        return self.input_dims[0] * self.input_dims[1]

    @property
    def n_out(self) -> int:
        return self.output_dims[0] * self.output_dims[1]

    @cached_property
    def otf(self) -> np.ndarray:
        """Transfer function of the circular blur on the input grid."""
        rows, cols = self.input_dims
        size = self.kernel.shape[0]
        c = size // 2
        psf = np.zeros((rows, cols))
        ii = (np.arange(size) - c) % rows
        jj = (np.arange(size) - c) % cols
        np.add.at(psf, (ii[:, None], jj[None, :]), self.kernel)
        return np.fft.fft2(psf)

    @cached_property
    def low_spectrum(self) -> np.ndarray:
        """Eigenvalues of ``L L^T`` (circulant on the output grid).

        Decimation folds ``|otf|^2`` onto the coarse grid: each coarse
        frequency collects the ``factor**2`` fine frequencies aliasing to it.
        """
        d = self.factor
        rl, cl = self.output_dims
        power = np.abs(self.otf) ** 2
        return power.reshape(d, rl, d, cl).sum(axis=(0, 2)) / d**2

    def _blur(self, x: np.ndarray, transfer: np.ndarray) -> np.ndarray:
        # real input, so the half spectrum along columns is enough
        half = transfer[:, : x.shape[1] // 2 + 1, None]
        return sfft.irfft2(sfft.rfft2(x, axes=(0, 1)) * half, s=x.shape[:2], axes=(0, 1))

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Apply ``L`` to a ``(rows, cols, k)`` array."""
        x = self._as3d(x, self.input_dims)
        d = self.factor
        return self._blur(x, self.otf)[::d, ::d, :]

    def adjoint(self, y: np.ndarray) -> np.ndarray:
        """Apply ``L^T`` to a ``(rows/d, cols/d, k)`` array (zero-fill, then correlate)."""
        y = self._as3d(y, self.output_dims)
        d = self.factor
        up = np.zeros(self.input_dims + (y.shape[2],))
        up[::d, ::d, :] = y
        return self._blur(up, np.conj(self.otf))

    def forward_matrix(self, x: np.ndarray) -> np.ndarray:
        """``L @ x`` for a matrix view ``x`` of shape ``(n_in, k)``."""
        k = x.shape[1]
        return self.forward(x.reshape(self.input_dims + (k,))).reshape(self.n_out, k)

    def adjoint_matrix(self, y: np.ndarray) -> np.ndarray:
        """``L^T @ y`` for a matrix view ``y`` of shape ``(n_out, k)``."""
        k = y.shape[1]
        return self.adjoint(y.reshape(self.output_dims + (k,))).reshape(self.n_in, k)

    def solve_normal(self, b: np.ndarray, alpha, beta) -> np.ndarray:
        """Solve ``(alpha L^T L + beta I) x = b`` column by column.

        ``b`` is a matrix view ``(n_in, k)``; ``alpha >= 0`` and ``beta > 0``
        may be scalars or length-``k`` arrays. In the fine Fourier basis the
        ``factor**2`` frequencies that alias to one coarse frequency form a
        block on which ``L^T L = a a^H / factor**2`` with ``a = conj(otf)``.
        Splitting ``b`` into its part along ``a`` and the orthogonal rest
        inverts each block exactly, without the cancellation a Woodbury
        formula suffers when ``beta`` is small.
        """
        k = b.shape[1]
        alpha = np.broadcast_to(np.asarray(alpha, dtype=np.float64), (k,))
        beta = np.broadcast_to(np.asarray(beta, dtype=np.float64), (k,))
        if np.any(beta <= 0) or np.any(alpha < 0):
            raise ValueError("solve_normal needs alpha >= 0 and beta > 0")
        d = self.factor
        rl, cl = self.output_dims
        bh = sfft.fft2(b.reshape(self.input_dims + (k,)), axes=(0, 1)).reshape(d, rl, d, cl, k)
        a = np.conj(self.otf).reshape(d, rl, d, cl)
        norm2 = np.sum(np.abs(a) ** 2, axis=(0, 2))
        coef = np.einsum("pirj,pirjk->ijk", np.conj(a), bh)
        nz = norm2 > 0
        coef[nz] /= norm2[nz][:, None]
        coef[~nz] = 0.0
        gain = beta[None, None, :] + alpha[None, None, :] * (norm2 / d**2)[:, :, None]
        if d == 1:
            # single-frequency blocks: nothing is orthogonal to ``a``
            xh = bh / gain[None, :, None, :, :]
        else:
            # (b - along) / beta + along / gain, with one pass over the full grid
            xh = bh / beta
            xh += a[..., None] * (coef * (1.0 / gain - 1.0 / beta))[None, :, None, :, :]
        # xh is Hermitian, so its half spectrum determines the real result
        half = xh.reshape(self.input_dims + (k,))[:, : self.input_dims[1] // 2 + 1]
        x = sfft.irfft2(half, s=self.input_dims, axes=(0, 1))
        return x.reshape(self.n_in, k)

    def dense(self) -> np.ndarray:
        """Materialize ``L`` as an ``(n_out, n_in)`` matrix. Small sizes only."""
        return self.forward_matrix(np.eye(self.n_in))

    @staticmethod
    def _as3d(x, dims):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 2:
            x = x[:, :, None]
        if x.shape[:2] != tuple(dims):
            raise ShapeError(f"expected spatial dims {tuple(dims)}, got {x.shape[:2]}")
        return x


def apply_spatial(op: SpatialOperator, cube: SpectralCube) -> SpectralCube:
    """Blur and downsample every band of ``cube``."""
    if (cube.rows, cube.cols) != op.input_dims:
        raise ShapeError(
            f"cube is {cube.rows}x{cube.cols} but operator expects {op.input_dims[0]}x{op.input_dims[1]}"
        )
    return SpectralCube(op.forward(cube.data), cube.band_centers)


def apply_spatial_adjoint(op: SpatialOperator, cube_small: SpectralCube) -> SpectralCube:
    """Apply the exact adjoint of :func:`apply_spatial`."""
    if (cube_small.rows, cube_small.cols) != op.output_dims:
        raise ShapeError(
            f"cube is {cube_small.rows}x{cube_small.cols} but operator output is "
            f"{op.output_dims[0]}x{op.output_dims[1]}"
        )
    return SpectralCube(op.adjoint(cube_small.data), cube_small.band_centers)


@dataclass(frozen=True, eq=False)
class BandSelector:
    """Spectral degradation ``B`` (``Z_H x Z_M``), pure selection by default.

    ``response``, when given, replaces the selection matrix; each column is a
    nonnegative spectral response and is normalized to unit sum.
    """

    selected: Tuple[int, ...]
    n_bands: int
    response: Optional[np.ndarray] = None

    def __post_init__(self):
        sel = tuple(int(i) for i in self.selected)
        problems = []
        if not sel:
            problems.append("band selection is empty")
        if any(i < 0 or i >= self.n_bands for i in sel):
            problems.append(f"band indices {list(sel)} fall outside [0, {self.n_bands})")
        if any(b <= a for a, b in zip(sel, sel[1:])):
            problems.append(f"band indices {list(sel)} must be strictly increasing")
        if problems:
            raise ConfigError(problems)
        object.__setattr__(self, "selected", sel)
        if self.response is not None:
            w = np.array(self.response, dtype=np.float64)
            if w.shape != (self.n_bands, len(sel)):
                raise ShapeError(f"response must be {(self.n_bands, len(sel))}, got {w.shape}")
            if np.any(w < 0) or np.any(w.sum(axis=0) <= 0):
                raise ConfigError("response columns must be nonnegative with positive sum")
            w = w / w.sum(axis=0, keepdims=True)
            w.setflags(write=False)
            object.__setattr__(self, "response", w)

    @classmethod
    def evenly_spaced(cls, n_bands: int, count: int, limit: int = 70) -> "BandSelector":
        """``count`` bands spread evenly over the first ``min(limit, n_bands)`` bands."""
        top = min(limit, n_bands)
        if not 1 <= count <= top:
            raise ConfigError(f"cannot pick {count} bands from the first {top}")
        idx = np.unique(np.round(np.linspace(0, top - 1, count)).astype(int))
        return cls(tuple(idx.tolist()), n_bands)

    @classmethod
    def random(cls, n_bands: int, count: int, rng: np.random.Generator, limit: int = 70) -> "BandSelector":
        """``count`` distinct bands drawn uniformly from the first ``min(limit, n_bands)``."""
        top = min(limit, n_bands)
        if not 1 <= count <= top:
            raise ConfigError(f"cannot pick {count} bands from the first {top}")
        idx = np.sort(rng.choice(top, size=count, replace=False))
        return cls(tuple(int(i) for i in idx), n_bands)

    @property
    def n_selected(self) -> int:
        return len(self.selected)

    def matrix(self) -> np.ndarray:
        if self.response is not None:
            return np.array(self.response)
        b = np.zeros((self.n_bands, len(self.selected)))
        b[list(self.selected), np.arange(len(self.selected))] = 1.0
        return b

    def apply_matrix(self, x: np.ndarray) -> np.ndarray:
        """``x @ B`` for a matrix view with ``n_bands`` columns."""
        if x.shape[-1] != self.n_bands:
            raise ShapeError(f"expected {self.n_bands} bands, got {x.shape[-1]}")
        if self.response is None:
            return x[..., list(self.selected)]
        return x @ self.response


def apply_bands(sel: BandSelector, cube: SpectralCube) -> SpectralCube:
    """Extract (or combine) the multispectral bands from ``cube``."""
    if cube.bands != sel.n_bands:
        raise ShapeError(f"cube has {cube.bands} bands, selector expects {sel.n_bands}")
    centers = None
    if cube.band_centers is not None and sel.response is None:
        centers = cube.band_centers[list(sel.selected)]
    return SpectralCube(sel.apply_matrix(cube.data), centers)


@dataclass(frozen=True)
class NoiseSpec:
    """Noise model for one image.

    ``target_snr_db`` is a scalar or a per-band sequence; ``inf`` disables
    noise. ``label`` names the random substream so the H and M noise never
    share a stream even with the same ``seed``.
    """

    distribution: str = GAUSSIAN
    target_snr_db: Union[float, Sequence[float]] = float("inf")
    seed: int = 0
    label: str = "noise"

    def __post_init__(self):
        if self.distribution not in (GAUSSIAN, POISSON):
            raise ConfigError(f"noise distribution must be 'gaussian' or 'poisson', got {self.distribution!r}")


def substream(seed: int, label: str) -> np.random.Generator:
    """Counter-based generator for the named substream of ``seed``."""
    key = zlib.crc32(label.encode("utf-8"))
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed) & (2**64 - 1), key])))


def signal_power(x: np.ndarray, per_band: bool = False) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if per_band:
        return np.mean(x.reshape(-1, x.shape[-1]) ** 2, axis=0)
    return np.mean(x**2)


def snr_db(clean: np.ndarray, noisy: np.ndarray) -> float:
    """Realized SNR: mean signal power over mean noise power, in dB."""
    noise = np.mean((np.asarray(noisy) - np.asarray(clean)) ** 2)
    if noise == 0:
        return float("inf")
    return float(10.0 * np.log10(signal_power(clean) / noise))


def _band_snr(target, n_bands):
    snr = np.asarray(target, dtype=np.float64)
    if snr.ndim == 0:
        return None, float(snr)
    if snr.shape != (n_bands,):
        raise ShapeError(f"per-band SNR list has {snr.size} entries for {n_bands} bands")
    return snr, None


def variances_from_snr(cube: SpectralCube, snr_db_level) -> np.ndarray:
    """Per-band noise variance implied by an SNR level (scalar or per band).

    A scalar uses the power of the whole cube; a per-band list uses each
    band's own power. ``inf`` maps to zero variance.
    """
    per_band, scalar = _band_snr(snr_db_level, cube.bands)
    if per_band is None:
        power = np.full(cube.bands, signal_power(cube.data))
        levels = np.full(cube.bands, scalar)
    else:
        power = signal_power(cube.data, per_band=True)
        levels = per_band
    return np.where(np.isinf(levels), 0.0, power / 10.0 ** (levels / 10.0))


def interpolate_snr_levels(lo_db: float, hi_db: float, n_bands: int) -> np.ndarray:
    """SNR levels in dB ramped linearly from ``lo_db`` to ``hi_db`` across bands."""
    return np.linspace(lo_db, hi_db, n_bands)


def add_noise(cube: SpectralCube, spec: NoiseSpec) -> Tuple[SpectralCube, np.ndarray]:
    """Corrupt ``cube`` at the requested SNR.

    Returns the noisy cube and the per-band noise variances (the model
    variances of the injected noise, used as the diagonal of the noise
    covariance). Gaussian noise has variance ``power / 10**(snr/10)``.
    Poisson noise draws counts from ``scale * x`` and divides by ``scale``,
    with ``scale`` chosen so the expected noise power matches the target.
    """
    x = cube.data
    per_band, scalar = _band_snr(spec.target_snr_db, cube.bands)
    if per_band is None and np.isinf(scalar):
        return cube, np.zeros(cube.bands)

    rng = substream(spec.seed, spec.label)
    if spec.distribution == GAUSSIAN:
        var = variances_from_snr(cube, spec.target_snr_db)
        noise = rng.standard_normal(x.shape) * np.sqrt(var)[None, None, :]
        return cube.with_data(x + noise), var

    if np.any(x < 0):
        raise ValueError("Poisson noise requires nonnegative intensities")
    band_mean = x.reshape(-1, cube.bands).mean(axis=0)
    if per_band is None:
        levels = np.full(cube.bands, scalar)
        power = np.full(cube.bands, signal_power(x))
        mean = np.full(cube.bands, x.mean())
    else:
        levels = per_band
        power = signal_power(x, per_band=True)
        mean = band_mean
    # expected noise power of Poisson(scale*x)/scale is mean(x)/scale
    with np.errstate(divide="ignore"):
        scale = np.where(np.isinf(levels) | (mean <= 0), np.inf,
                         mean * 10.0 ** (levels / 10.0) / np.where(power > 0, power, 1.0))
    noisy = np.array(x)
    var = np.zeros(cube.bands)
    for b in range(cube.bands):
        if np.isinf(scale[b]):
            continue
        noisy[:, :, b] = rng.poisson(scale[b] * x[:, :, b]) / scale[b]
        var[b] = band_mean[b] / scale[b]
    return cube.with_data(noisy), var


def simulate_pair(
    truth: SpectralCube,
    op: SpatialOperator,
    sel: BandSelector,
    noise_h: NoiseSpec,
    noise_m: NoiseSpec,
):
    """Degrade ``truth`` into the hyperspectral/multispectral pair.

    Returns ``(H, M, lam_h, lam_m)`` where the ``lam`` arrays are the
    per-band noise variances actually injected.
    """
    if (truth.rows, truth.cols) != op.input_dims:
        raise ShapeError(
            f"truth is {truth.rows}x{truth.cols} but operator expects {op.input_dims[0]}x{op.input_dims[1]}"
        )
    if truth.bands != sel.n_bands:
        raise ShapeError(f"truth has {truth.bands} bands, selector expects {sel.n_bands}")
    h_clean = apply_spatial(op, truth)
    m_clean = apply_bands(sel, truth)
    h, lam_h = add_noise(h_clean, noise_h)
    m, lam_m = add_noise(m_clean, noise_m)
    return h, m, lam_h, lam_m
