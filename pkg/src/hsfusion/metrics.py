"""Fusion quality metrics: PSNR, RMSE, SAM, UIQI, ERGAS and DD.

All functions take a reference and a candidate of identical shape
``(rows, cols, bands)`` (cubes or arrays). Degenerate pixels, windows and
bands are skipped and counted rather than producing NaN.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from .cube import SpectralCube
from .errors import ShapeError

#: column order of the tabular report
REPORT_COLUMNS = ("method", "psnr_db", "rmse", "sam_deg", "uiqi", "ergas", "dd", "alg_time_s")


def _pair(reference, candidate):
    ref = reference.data if isinstance(reference, SpectralCube) else np.asarray(reference, dtype=np.float64)
    cand = candidate.data if isinstance(candidate, SpectralCube) else np.asarray(candidate, dtype=np.float64)
    if ref.ndim == 2:
        ref = ref[:, :, None]
    if cand.ndim == 2:
        cand = cand[:, :, None]
    if ref.shape != cand.shape:
        raise ShapeError(f"reference {ref.shape} and candidate {cand.shape} differ in shape")
    return ref, cand


def mse(reference, candidate) -> float:
    ref, cand = _pair(reference, candidate)
    return float(np.mean((cand - ref) ** 2))


def psnr(reference, candidate) -> float:
    """``10 log10(max(reference)^2 / MSE)`` in dB; ``inf`` for identical inputs."""
    ref, cand = _pair(reference, candidate)
    err = float(np.mean((cand - ref) ** 2))
    if err == 0:
        return float("inf")
    return float(10.0 * np.log10(np.max(ref) ** 2 / err))


def rmse(reference, candidate, rooted: bool = True) -> float:
    """Root of the mean squared error over all voxels.

    ``rooted=False`` returns the un-rooted normalized squared Frobenius norm
    ``||F - S||^2 / (N Z)``.
    """
    err = mse(reference, candidate)
    return float(np.sqrt(err)) if rooted else err


class SamResult(NamedTuple):
    mean_deg: float
    sam_map: np.ndarray
    excluded: int


def sam(reference, candidate) -> SamResult:
    """Spectral angle per pixel (degrees) and its mean over valid pixels.

    Pixels where either spectrum has zero norm are excluded from the mean,
    counted, and set to 0 in the map.
    """
    ref, cand = _pair(reference, candidate)
    nr = np.linalg.norm(ref, axis=2, keepdims=True)
    nc = np.linalg.norm(cand, axis=2, keepdims=True)
    valid = (nr[:, :, 0] > 0) & (nc[:, :, 0] > 0)
    u = np.divide(ref, nr, out=np.zeros_like(ref), where=nr > 0)
    v = np.divide(cand, nc, out=np.zeros_like(cand), where=nc > 0)
    # half-angle form: exact 0 for parallel spectra, well conditioned near 0 and 180
    angle = np.degrees(2.0 * np.arctan2(np.linalg.norm(u - v, axis=2), np.linalg.norm(u + v, axis=2)))
    angle[~valid] = 0.0
    n_valid = int(valid.sum())
    mean = float(angle[valid].mean()) if n_valid else 0.0
    return SamResult(mean, angle, int(valid.size - n_valid))


def _box_mean(x: np.ndarray, w: int) -> np.ndarray:
    """Mean over every valid ``w x w`` window of a 2-D array."""
    c = np.zeros((x.shape[0] + 1, x.shape[1] + 1))
    c[1:, 1:] = np.cumsum(np.cumsum(x, axis=0), axis=1)
    s = c[w:, w:] - c[:-w, w:] - c[w:, :-w] + c[:-w, :-w]
    return s / (w * w)


def _q_index(mx, my, vx, vy, cxy):
    num = 4.0 * cxy * mx * my
    den = (vx + vy) * (mx**2 + my**2)
    ok = den > 0
    q = np.zeros_like(num)
    q[ok] = num[ok] / den[ok]
    return q, ok


class UiqiBands(NamedTuple):
    per_band: np.ndarray  # NaN-free; entries for skipped bands are 0
    valid_bands: np.ndarray
    skipped_windows: int


def uiqi_bands(reference, candidate, window: int = 8) -> UiqiBands:
    """Windowed UIQI of each band (mean over ``window x window`` sliding windows)."""
    ref, cand = _pair(reference, candidate)
    rows, cols, bands = ref.shape
    w = int(min(window, rows, cols))
    per_band = np.zeros(bands)
    valid_bands = np.zeros(bands, dtype=bool)
    skipped = 0
    for b in range(bands):
        x = ref[:, :, b]
        y = cand[:, :, b]
        ox, oy = x.mean(), y.mean()
        xc, yc = x - ox, y - oy
        mx, my = _box_mean(xc, w), _box_mean(yc, w)
        tol = 1e-14 * max(np.max(np.abs(x)), np.max(np.abs(y)), 1e-300) ** 2
        vx = _box_mean(xc * xc, w) - mx**2
        vy = _box_mean(yc * yc, w) - my**2
        cxy = _box_mean(xc * yc, w) - mx * my
        vx = np.where(vx > tol, vx, 0.0)
        vy = np.where(vy > tol, vy, 0.0)
        q, ok = _q_index(mx + ox, my + oy, vx, vy, cxy)
        skipped += int(ok.size - ok.sum())
        if ok.any():
            per_band[b] = q[ok].mean()
            valid_bands[b] = True
    return UiqiBands(per_band, valid_bands, skipped)


def uiqi(reference, candidate, window: int = 8) -> float:
    """Band-averaged windowed universal image quality index in [-1, 1]."""
    res = uiqi_bands(reference, candidate, window)
    if not res.valid_bands.any():
        ref, cand = _pair(reference, candidate)
        return 1.0 if np.array_equal(ref, cand) else 0.0
    return float(res.per_band[res.valid_bands].mean())


def uiqi_global(reference, candidate) -> float:
    """UIQI with one window covering each whole band, averaged over bands."""
    ref, cand = _pair(reference, candidate)
    x = ref.reshape(-1, ref.shape[2])
    y = cand.reshape(-1, cand.shape[2])
    mx, my = x.mean(axis=0), y.mean(axis=0)
    vx, vy = x.var(axis=0), y.var(axis=0)
    cxy = ((x - mx) * (y - my)).mean(axis=0)
    q, ok = _q_index(mx, my, vx, vy, cxy)
    if not ok.any():
        return 1.0 if np.array_equal(ref, cand) else 0.0
    return float(q[ok].mean())


class ErgasResult(NamedTuple):
    value: float
    per_band: np.ndarray  # RMSE_i / mu_i, 0 for excluded bands
    excluded_bands: tuple


def ergas_detail(reference, candidate, n_h: Optional[int] = None, n_m: Optional[int] = None) -> ErgasResult:
    """ERGAS with the band means of the candidate as normalizers.

    The leading factor is ``100 * n_h / n_m`` (pixel counts of the two
    inputs); it is 100 when the counts are not given. Bands whose mean is
    below ``1e-9`` times the band's dynamic range are excluded.
    """
    ref, cand = _pair(reference, candidate)
    bands = ref.shape[2]
    x = ref.reshape(-1, bands)
    y = cand.reshape(-1, bands)
    band_rmse = np.sqrt(np.mean((y - x) ** 2, axis=0))
    mu = y.mean(axis=0)
    span = np.maximum(np.ptp(x, axis=0), np.ptp(y, axis=0))
    ok = np.abs(mu) > 1e-9 * span
    ok &= mu != 0
    ratio = np.zeros(bands)
    ratio[ok] = band_rmse[ok] / mu[ok]
    factor = 100.0 * (n_h / n_m if n_h and n_m else 1.0)
    value = factor * float(np.sqrt(np.mean(ratio[ok] ** 2))) if ok.any() else 0.0
    return ErgasResult(value, ratio, tuple(int(i) for i in np.flatnonzero(~ok)))


def ergas(reference, candidate, n_h: Optional[int] = None, n_m: Optional[int] = None) -> float:
    return ergas_detail(reference, candidate, n_h, n_m).value


def dd(reference, candidate, n_h: Optional[int] = None) -> float:
    """Degree of distortion: mean absolute voxel difference.

    With ``n_h`` the sum of absolute differences is divided by
    ``n_h * bands`` instead of the compared voxel count.
    """
    ref, cand = _pair(reference, candidate)
    total = float(np.sum(np.abs(cand - ref)))
    denom = (n_h * ref.shape[2]) if n_h else ref.size
    return total / denom


@dataclass
class MetricReport:
    psnr_db: float
    rmse: float
    rmse_paper: float
    sam_deg: float
    uiqi: float
    uiqi_global: float
    ergas: float
    dd: float
    per_band: dict
    sam_map: np.ndarray
    excluded_pixels: int
    skipped_uiqi_windows: int
    ergas_excluded_bands: tuple
    alg_time_s: Optional[float] = None
    method: str = "proposed"
    extra: dict = field(default_factory=dict)

    def row(self) -> dict:
        """Values in :data:`REPORT_COLUMNS` order."""
        return {
            "method": self.method,
            "psnr_db": self.psnr_db,
            "rmse": self.rmse,
            "sam_deg": self.sam_deg,
            "uiqi": self.uiqi,
            "ergas": self.ergas,
            "dd": self.dd,
            "alg_time_s": self.alg_time_s,
        }

    def summary(self) -> dict:
        out = self.row()
        out.update(
            rmse_conv=self.rmse,
            rmse_paper=self.rmse_paper,
            uiqi_global=self.uiqi_global,
            excluded_pixels=self.excluded_pixels,
            skipped_uiqi_windows=self.skipped_uiqi_windows,
            ergas_excluded_bands=list(self.ergas_excluded_bands),
        )
        out.update(self.extra)
        return out


def report(reference, candidate, n_h: Optional[int] = None, n_m: Optional[int] = None,
           window: int = 8, method: str = "proposed") -> MetricReport:
    """Compute every metric plus per-band curves and the SAM map."""
    ref, cand = _pair(reference, candidate)
    bands = ref.shape[2]
    x = ref.reshape(-1, bands)
    y = cand.reshape(-1, bands)
    band_mse = np.mean((y - x) ** 2, axis=0)
    peak2 = float(np.max(ref)) ** 2
    with np.errstate(divide="ignore"):
        band_psnr = np.where(band_mse > 0, 10.0 * np.log10(peak2 / np.where(band_mse > 0, band_mse, 1.0)), np.inf)
    ub = uiqi_bands(ref, cand, window)
    eg = ergas_detail(ref, cand, n_h, n_m)
    s = sam(ref, cand)
    per_band = {
        "band": list(range(bands)),
        "psnr_db": band_psnr.tolist(),
        "mse": band_mse.tolist(),
        "rmse": np.sqrt(band_mse).tolist(),
        "uiqi": ub.per_band.tolist(),
        "ergas_ratio": eg.per_band.tolist(),
        "dd": np.mean(np.abs(y - x), axis=0).tolist(),
    }
    return MetricReport(
        psnr_db=psnr(ref, cand),
        rmse=rmse(ref, cand),
        rmse_paper=rmse(ref, cand, rooted=False),
        sam_deg=s.mean_deg,
        uiqi=uiqi(ref, cand, window),
        uiqi_global=uiqi_global(ref, cand),
        ergas=eg.value,
        dd=dd(ref, cand),
        per_band=per_band,
        sam_map=s.sam_map,
        excluded_pixels=s.excluded,
        skipped_uiqi_windows=ub.skipped_windows,
        ergas_excluded_bands=eg.excluded_bands,
        method=method,
    )
