"""MAP initialization of the reduced fused image.

The prior on each reduced pixel ``r_i`` is Gaussian, conditioned on the
multispectral pixel ``m_i``: mean ``E[r] + G (m_i - E[m])`` with gain
``G = Lam_rm Lam_mm^-1`` and conditional covariance
``Lam_r|m = Lam_rr - G Lam_rm^T``. Joint statistics are estimated from the
observed pair by matching every hyperspectral pixel with the mean of the
``d x d`` multispectral block it covers.

The initialization minimizes

    1/2 ||(H - L R Q) Lam_H^-1/2||^2 + 1/2 ||(R - R~) Lam_r|m^-1/2||^2

whose normal equations ``L^T L R C + R D = E`` (``C = Q Lam_H^-1 Q^T``,
``D = Lam_r|m^-1``) decouple into one FFT solve per subspace band after a
simultaneous diagonalization of ``C`` and ``D``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from ._util import precision
from .cube import SpectralCube, as_matrix
from .degrade import BandSelector, SpatialOperator
from .errors import ShapeError
from .subspace import Subspace, project


@dataclass(frozen=True, eq=False)
class MapStatistics:
    cross_cov: np.ndarray  # Lam_rm, (dim, Z_M)
    ms_cov: np.ndarray  # Lam_mm, (Z_M, Z_M)
    reduced_cov: np.ndarray  # Lam_rr, (dim, dim)
    cond_cov: np.ndarray  # Lam_r|m, (dim, dim)
    mean_r: np.ndarray
    mean_m: np.ndarray
    gain: np.ndarray  # Lam_rm Lam_mm^-1, (dim, Z_M)
    r_tilde: np.ndarray  # conditional mean field, (N_M, dim)
    ms_ridge: float = 0.0
    ms_regularized: bool = False


def block_mean(x: np.ndarray, d: int) -> np.ndarray:
    """Average ``(rows, cols, k)`` over non-overlapping ``d x d`` blocks."""
    rows, cols, k = x.shape
    return x.reshape(rows // d, d, cols // d, d, k).mean(axis=(1, 3))


def _check_pair(h: SpectralCube, m: SpectralCube, sub: Subspace, op: SpatialOperator, sel: BandSelector):
    if (m.rows, m.cols) != op.input_dims:
        raise ShapeError(f"MS image is {m.rows}x{m.cols}, operator expects {op.input_dims}")
    if (h.rows, h.cols) != op.output_dims:
        raise ShapeError(f"HS image is {h.rows}x{h.cols}, operator produces {op.output_dims}")
    if h.bands != sub.n_bands or h.bands != sel.n_bands:
        raise ShapeError(f"HS image has {h.bands} bands; subspace/selector expect {sub.n_bands}/{sel.n_bands}")
    if m.bands != sel.n_selected:
        raise ShapeError(f"MS image has {m.bands} bands, selector picks {sel.n_selected}")


def estimate_statistics(
    h: SpectralCube, m: SpectralCube, sub: Subspace, op: SpatialOperator, sel: BandSelector
) -> MapStatistics:
    """Joint second-order statistics of reduced HS pixels and MS pixels."""
    _check_pair(h, m, sub, op, sel)
    r_low = project(sub, as_matrix(h))
    m_low = block_mean(m.data, op.factor).reshape(-1, m.bands)
    n = r_low.shape[0]
    mean_r = r_low.mean(axis=0)
    mean_m = m_low.mean(axis=0)
    rc = r_low - mean_r
    mc = m_low - mean_m
    ddof = max(n - 1, 1)
    cross = rc.T @ mc / ddof
    ms_cov = mc.T @ mc / ddof
    rr_cov = rc.T @ rc / ddof

    z_m = m.bands
    ridge = 1e-8 * np.trace(ms_cov) / z_m
    regularized = bool(np.linalg.eigvalsh(ms_cov)[0] <= ridge)
    if regularized:
        ridge = max(ridge, np.finfo(float).tiny)
        ms_cov_reg = ms_cov + ridge * np.eye(z_m)
    else:
        ridge = 0.0
        ms_cov_reg = ms_cov
    gain = linalg.solve(ms_cov_reg, cross.T, assume_a="pos").T
    cond = rr_cov - gain @ cross.T
    cond = 0.5 * (cond + cond.T)
    r_tilde = mean_r + (as_matrix(m) - mean_m) @ gain.T
    return MapStatistics(cross, ms_cov, rr_cov, cond, mean_r, mean_m, gain, r_tilde, ridge, regularized)


def prior_precision(stats: MapStatistics) -> tuple[np.ndarray, bool]:
    """Inverse of the conditional covariance, ridged when near-singular."""
    cond = stats.cond_cov
    dim = cond.shape[0]
    scale = max(np.trace(stats.reduced_cov) / dim, np.finfo(float).tiny)
    eps = 1e-8 * max(np.trace(cond) / dim, 1e-6 * scale)
    evals = np.linalg.eigvalsh(cond)
    ridged = bool(evals[0] <= eps)
    if ridged:
        cond = cond + (eps - min(evals[0], 0.0)) * np.eye(dim)
    return linalg.inv(cond, check_finite=True), ridged


def map_objective(R, h: SpectralCube, sub: Subspace, op: SpatialOperator, lam_h, r_tilde, prior_prec) -> float:
    """Value of the MAP objective at reduced image ``R``."""
    hc = as_matrix(h) - sub.mean
    w = precision(lam_h, h.data)
    resid = hc - op.forward_matrix(R) @ sub.basis
    dr = R - r_tilde
    return 0.5 * float(np.sum(resid**2 * w)) + 0.5 * float(np.sum((dr @ prior_prec) * dr))


def map_initialize(
    h: SpectralCube,
    m: SpectralCube,
    sub: Subspace,
    op: SpatialOperator,
    stats: MapStatistics,
    lam_h,
    prior_prec: np.ndarray | None = None,
) -> np.ndarray:
    """Closed-form minimizer of the MAP objective, as an ``(N_M, dim)`` matrix view."""
    if prior_prec is None:
        prior_prec, _ = prior_precision(stats)
    hc = as_matrix(h) - sub.mean
    w = precision(lam_h, h.data)
    q = sub.basis
    c = (q * w) @ q.T
    rhs = op.adjoint_matrix(hc @ (w[:, None] * q.T)) + stats.r_tilde @ prior_prec
    # with V^T C V = I and V^T D V = diag(g), R = Y V^T turns
    # L^T L R C + R D = E into (L^T L + g_j I) y_j = (E V)_j
    g, v = linalg.eigh(prior_prec, c)
    y = op.solve_normal(rhs @ v, 1.0, g)
    return y @ v.T
