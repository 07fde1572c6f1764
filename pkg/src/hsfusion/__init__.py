"""Hyperspectral/multispectral image fusion with a weighted LASSO solved by ADMM."""

from .cube import SpectralCube, as_matrix, from_matrix, slice_band
from .degrade import (
    BandSelector,
    NoiseSpec,
    SpatialOperator,
    add_noise,
    apply_bands,
    apply_spatial,
    apply_spatial_adjoint,
    gaussian_kernel,
    simulate_pair,
)
from .errors import (
    ConfigError,
    DegenerateInputError,
    FusionError,
    NumericalError,
    ShapeError,
)
from .init_map import MapStatistics, estimate_statistics, map_initialize
from .metrics import MetricReport, dd, ergas, psnr, report, rmse, sam, uiqi
from .solver import AdmmState, FusionResult, SolverConfig, fuse, objective, soft_threshold
from .subspace import Subspace, fit_pca, project, reconstruct

__version__ = "0.1.0"

__all__ = [
    "AdmmState",
    "BandSelector",
    "ConfigError",
    "DegenerateInputError",
    "FusionError",
    "FusionResult",
    "MapStatistics",
    "MetricReport",
    "NoiseSpec",
    "NumericalError",
    "ShapeError",
    "SolverConfig",
    "SpatialOperator",
    "SpectralCube",
    "Subspace",
    "add_noise",
    "apply_bands",
    "apply_spatial",
    "apply_spatial_adjoint",
    "as_matrix",
    "dd",
    "ergas",
    "estimate_statistics",
    "fit_pca",
    "from_matrix",
    "fuse",
    "gaussian_kernel",
    "map_initialize",
    "objective",
    "project",
    "psnr",
    "reconstruct",
    "report",
    "rmse",
    "sam",
    "simulate_pair",
    "slice_band",
    "soft_threshold",
    "uiqi",
]
