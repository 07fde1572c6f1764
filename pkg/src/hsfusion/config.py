"""Scenario configuration: simulation protocol plus solver parameters.

Configs are JSON files; every field is optional and flag overrides are
applied on top. Validation collects every offending field before raising.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import List, Optional, Sequence, Union

import numpy as np

from .degrade import BandSelector, NoiseSpec, SpatialOperator, substream
from .errors import ConfigError
from .solver import SolverConfig

Level = Union[float, List[float]]


@dataclass
class ScenarioConfig:
    """Everything needed to simulate and fuse one scenario.

    ``ms_band_indices`` fixes the multispectral bands; otherwise
    ``ms_band_count`` bands are drawn from the first ``ms_band_limit`` using
    the ``band-pick`` substream of ``seed``. ``weight_h_db``/``weight_m_db``
    are only used when the true noise variances are unknown.
    """

    kernel_size: int = 39
    kernel_sigma: Optional[float] = None
    downsample: int = 4
    ms_band_indices: Optional[List[int]] = None
    ms_band_count: int = 4
    ms_band_limit: int = 70
    hs_snr_db: Level = 10.0
    ms_snr_db: Level = 50.0
    noise: str = "gaussian"
    subspace_dim: int = 10
    seed: int = 0
    mu: Optional[float] = None
    eta: Optional[float] = None
    outer_iters: int = 10
    inner_iters: int = 20
    convergence_tol: float = 1e-5
    weight_h_db: Optional[Level] = None
    weight_m_db: Optional[Level] = None
    snr_sweep: Optional[List[float]] = None
    dtype: str = "f64"

    # construction ------------------------------------------------------------

    @classmethod
    def from_dict(cls, d: dict, dims=None) -> "ScenarioConfig":
        """Build and validate; ``dims = (rows, cols, bands)`` adds the truth-size checks."""
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        cfg = cls(**{k: v for k, v in d.items() if k in known})
        problems = [f"unknown field {k!r}" for k in unknown] + cfg.problems()
        if dims is not None:
            problems += cfg.dim_problems(*dims)
        if problems:
            raise ConfigError(problems)
        return cfg

    @classmethod
    def load(cls, path) -> "ScenarioConfig":
        try:
            d = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(d)

    def updated(self, **overrides) -> "ScenarioConfig":
        """Copy with the non-``None`` overrides applied, then validated."""
        d = self.to_dict()
        d.update({k: v for k, v in overrides.items() if v is not None})
        return ScenarioConfig.from_dict(d)

    def to_dict(self) -> dict:
        return asdict(self)

    # validation ----------------------------------------------------------------

    def problems(self) -> List[str]:
        out = []

        def pos_int(name, minimum=1):
            v = getattr(self, name)
            if not _is_int(v) or v < minimum:
                out.append(f"{name} must be an integer >= {minimum}, got {v!r}")
                return False
            return True

        if pos_int("kernel_size") and self.kernel_size % 2 == 0:
            out.append(f"kernel_size must be odd, got {self.kernel_size}")
        if self.kernel_sigma is not None and not (_is_num(self.kernel_sigma) and self.kernel_sigma > 0):
            out.append(f"kernel_sigma must be > 0, got {self.kernel_sigma!r}")
        for name in ("downsample", "ms_band_count", "ms_band_limit", "subspace_dim", "outer_iters", "inner_iters"):
            pos_int(name)
        if not _is_int(self.seed) or self.seed < 0:
            out.append(f"seed must be a nonnegative integer, got {self.seed!r}")
        if self.ms_band_indices is not None:
            idx = self.ms_band_indices
            if (not isinstance(idx, (list, tuple)) or not idx
                    or not all(_is_int(i) and i >= 0 for i in idx)):
                out.append(f"ms_band_indices must be a non-empty list of nonnegative integers, got {idx!r}")
            elif len(set(idx)) != len(idx):
                out.append("ms_band_indices contains duplicates")
        for name in ("hs_snr_db", "ms_snr_db"):
            if not _is_level(getattr(self, name), allow_inf=True):
                out.append(f"{name} must be a number or a list of numbers, got {getattr(self, name)!r}")
        for name in ("weight_h_db", "weight_m_db"):
            v = getattr(self, name)
            if v is not None and not _is_level(v, allow_inf=False):
                out.append(f"{name} must be a finite number or list of numbers, got {v!r}")
        if self.noise not in ("gaussian", "poisson"):
            out.append(f"noise must be 'gaussian' or 'poisson', got {self.noise!r}")
        if self.mu is not None and not (_is_num(self.mu) and math.isfinite(self.mu) and self.mu > 0):
            out.append(f"mu must be > 0, got {self.mu!r}")
        if self.eta is not None and not (_is_num(self.eta) and math.isfinite(self.eta) and self.eta >= 0):
            out.append(f"eta must be >= 0, got {self.eta!r}")
        if not (_is_num(self.convergence_tol) and self.convergence_tol >= 0):
            out.append(f"convergence_tol must be >= 0, got {self.convergence_tol!r}")
        if self.snr_sweep is not None and not (
            isinstance(self.snr_sweep, (list, tuple)) and self.snr_sweep
            and all(_is_num(v) and math.isfinite(v) for v in self.snr_sweep)
        ):
            out.append(f"snr_sweep must be a non-empty list of finite numbers, got {self.snr_sweep!r}")
        if self.dtype not in ("f32", "f64"):
            out.append(f"dtype must be 'f32' or 'f64', got {self.dtype!r}")
        return out

    def check_dims(self, rows: int, cols: int, bands: int) -> None:
        """Validate the scenario against a truth cube of the given size."""
        problems = self.problems() + self.dim_problems(rows, cols, bands)
        if problems:
            raise ConfigError(problems)

    def dim_problems(self, rows: int, cols: int, bands: int) -> List[str]:
        problems = []
        d = self.downsample
        if _is_int(d) and d >= 1:
            bad = [f"{name}={n}" for name, n in (("rows", rows), ("cols", cols)) if n % d]
            if bad:
                problems.append(f"downsample {d} does not divide {', '.join(bad)}")
        if self.ms_band_indices is not None and all(_is_int(i) for i in self.ms_band_indices):
            out_of_range = [i for i in self.ms_band_indices if not 0 <= i < bands]
            if out_of_range:
                problems.append(f"ms_band_indices {out_of_range} out of range for {bands} bands")
        elif self.ms_band_indices is None and _is_int(self.ms_band_count):
            top = min(self.ms_band_limit, bands) if _is_int(self.ms_band_limit) else bands
            if self.ms_band_count > top:
                problems.append(f"cannot pick {self.ms_band_count} MS bands from the first {top}")
        for name in ("hs_snr_db",):
            v = getattr(self, name)
            if isinstance(v, (list, tuple)) and len(v) != bands:
                problems.append(f"{name} has {len(v)} entries for {bands} HS bands")
        return problems

    # builders --------------------------------------------------------------

    def operator(self, input_dims) -> SpatialOperator:
        return SpatialOperator.gaussian(tuple(input_dims), self.kernel_size, self.downsample, self.kernel_sigma)

    def selector(self, n_bands: int) -> BandSelector:
        if self.ms_band_indices is not None:
            return BandSelector(tuple(sorted(int(i) for i in self.ms_band_indices)), n_bands)
        return BandSelector.random(n_bands, self.ms_band_count, substream(self.seed, "band-pick"), self.ms_band_limit)

    def noise_specs(self, hs_snr_db: Optional[Level] = None):
        hs = self.hs_snr_db if hs_snr_db is None else hs_snr_db
        return (NoiseSpec(self.noise, hs, self.seed, "noise-h"),
                NoiseSpec(self.noise, self.ms_snr_db, self.seed, "noise-m"))

    def solver_config(self) -> SolverConfig:
        kw = dict(mu=self.mu, eta=self.eta, outer_iters=self.outer_iters, inner_iters=self.inner_iters,
                  subspace_dim=self.subspace_dim, convergence_tol=self.convergence_tol)
        if self.weight_h_db is not None:
            kw["weight_h_db"] = self.weight_h_db
        if self.weight_m_db is not None:
            kw["weight_m_db"] = self.weight_m_db
        return SolverConfig(**kw)


def _is_int(v) -> bool:
    return isinstance(v, (int, np.integer)) and not isinstance(v, bool)


def _is_num(v) -> bool:
    return isinstance(v, (int, float, np.integer, np.floating)) and not isinstance(v, bool)


def _is_level(v, allow_inf: bool) -> bool:
    vals: Sequence = v if isinstance(v, (list, tuple)) else [v]
    if not vals:
        return False
    for x in vals:
        if not _is_num(x) or math.isnan(x):
            return False
        if not allow_inf and math.isinf(x):
            return False
    return True
