"""Command line interface: ``simulate``, ``fuse``, ``evaluate``, ``pipeline``.

Exit codes: 0 success, 2 invalid input or configuration, 3 numerical
failure. Every artifact except ``diagnostics.json`` and ``summary.json``
(which carry wall times) is a deterministic function of the inputs and the
resolved configuration, so repeated runs are byte-identical.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import __version__
from .config import ScenarioConfig
from .cube import SpectralCube
from .cubefile import (CubeFormatError, atomic_write_json, atomic_write_text, load_any, read_cube,
                       write_cube)
from .degrade import BandSelector, simulate_pair
from .errors import ConfigError, DegenerateInputError, NumericalError, ShapeError
from .metrics import REPORT_COLUMNS, MetricReport, report
from .solver import fuse
from .synthetic import low_rank_scene

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_NUMERICAL = 3

PER_BAND_COLUMNS = ("band", "psnr_db", "mse", "rmse", "uiqi", "ergas_ratio", "dd")
TIMING_NOTE = ("alg_time_s covers PCA, MAP initialization and ADMM; "
               "fusion_time_s covers the ADMM iterations only")


def digest(cube: SpectralCube) -> str:
    return hashlib.sha256(np.ascontiguousarray(cube.data).tobytes()).hexdigest()


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _csv(columns, rows) -> str:
    lines = [",".join(columns)]
    lines += [",".join(_fmt(r[c]) for c in columns) for r in rows]
    return "\n".join(lines) + "\n"


# stages ----------------------------------------------------------------------


def run_simulate(truth: SpectralCube, cfg: ScenarioConfig, out_dir: Path, hs_snr_db=None) -> dict:
    """Degrade ``truth``; writes ``H.cube``, ``M.cube`` and ``lambdas.json``."""
    cfg.check_dims(truth.rows, truth.cols, truth.bands)
    op = cfg.operator((truth.rows, truth.cols))
    sel = cfg.selector(truth.bands)
    hs_level = cfg.hs_snr_db if hs_snr_db is None else hs_snr_db
    noise_h, noise_m = cfg.noise_specs(hs_level)
    h, m, lam_h, lam_m = simulate_pair(truth, op, sel, noise_h, noise_m)
    resolved = cfg.updated(ms_band_indices=list(sel.selected), hs_snr_db=hs_level)
    prov = {"stage": "simulate", "version": __version__, "config": resolved.to_dict(), "truth_sha256": digest(truth)}
    out_dir.mkdir(parents=True, exist_ok=True)
    write_cube(out_dir / "H.cube", h, cfg.dtype, prov)
    write_cube(out_dir / "M.cube", m, cfg.dtype, prov)
    lambdas = {
        "seed": cfg.seed,
        "noise": cfg.noise,
        "hs_snr_db": hs_level,
        "ms_snr_db": cfg.ms_snr_db,
        "hs_variances": lam_h.tolist(),
        "ms_variances": lam_m.tolist(),
        "ms_band_indices": list(sel.selected),
        "scenario": resolved.to_dict(),
    }
    atomic_write_json(out_dir / "lambdas.json", lambdas)
    return {"H": "H.cube", "M": "M.cube", "lambdas": "lambdas.json", "config": resolved}


def _match_centers(h: SpectralCube, m: SpectralCube) -> Optional[List[int]]:
    if h.band_centers is None or m.band_centers is None:
        return None
    idx = []
    for c in m.band_centers:
        hits = np.flatnonzero(np.isclose(h.band_centers, c, rtol=0, atol=1e-9 * max(1.0, abs(c))))
        if hits.size != 1:
            return None
        idx.append(int(hits[0]))
    return idx


def resolve_selector(h: SpectralCube, m: SpectralCube, cfg: ScenarioConfig) -> BandSelector:
    """Bands of ``h`` observed by ``m``: explicit indices, matched centers, or the seeded pick."""
    if cfg.ms_band_indices is not None:
        sel = BandSelector(tuple(sorted(int(i) for i in cfg.ms_band_indices)), h.bands)
    else:
        idx = _match_centers(h, m)
        if idx is not None:
            sel = BandSelector(tuple(idx), h.bands)
        else:
            sel = cfg.selector(h.bands)
    if sel.n_selected != m.bands:
        raise ConfigError(f"band selection picks {sel.n_selected} bands but the MS image has {m.bands}")
    return sel


def run_fuse(h: SpectralCube, m: SpectralCube, cfg: ScenarioConfig, out_dir: Path,
             lam_h=None, lam_m=None, inputs: Optional[dict] = None):
    """Fuse ``h`` and ``m``; writes ``F.cube``, ``subspace.json``, ``iterations.jsonl``, ``diagnostics.json``."""
    problems = cfg.problems()
    d = cfg.downsample
    if not problems and (m.rows != d * h.rows or m.cols != d * h.cols):
        problems.append(
            f"MS image {m.rows}x{m.cols} is not downsample {d} times the HS image {h.rows}x{h.cols}"
        )
    if problems:
        raise ConfigError(problems)
    op = cfg.operator((m.rows, m.cols))
    sel = resolve_selector(h, m, cfg)
    trace = []
    try:
        result = fuse(h, m, op, sel, lam_h, lam_m, cfg.solver_config(), callback=trace.append)
    except NumericalError as exc:
        exc.trace = trace
        raise
    prov = {"stage": "fuse", "version": __version__,
            "config": cfg.updated(ms_band_indices=list(sel.selected)).to_dict(),
            "inputs": inputs or {"H_sha256": digest(h), "M_sha256": digest(m)}}
    out_dir.mkdir(parents=True, exist_ok=True)
    write_cube(out_dir / "F.cube", result.fused, cfg.dtype, prov)
    atomic_write_json(out_dir / "subspace.json", result.subspace.to_dict())
    atomic_write_text(out_dir / "iterations.jsonl",
                      "".join(json.dumps(r, sort_keys=True) + "\n" for r in trace))
    diag = dict(result.diagnostics)
    diag["timing_note"] = TIMING_NOTE
    diag["ms_band_indices"] = list(sel.selected)
    atomic_write_json(out_dir / "diagnostics.json", diag)
    return result


def write_report(rep: MetricReport, out_dir: Path, heatmap: bool = False) -> dict:
    """Persist a metric report; returns the artifact names."""
    out_dir.mkdir(parents=True, exist_ok=True)
    atomic_write_text(out_dir / "report.csv", _csv(REPORT_COLUMNS, [rep.row()]))
    atomic_write_json(out_dir / "report.json", rep.summary())
    bands = len(rep.per_band["band"])
    rows = [{c: rep.per_band[c][i] for c in PER_BAND_COLUMNS} for i in range(bands)]
    atomic_write_text(out_dir / "per_band.csv", _csv(PER_BAND_COLUMNS, rows))
    write_cube(out_dir / "sam_map.cube", SpectralCube(rep.sam_map), "f64",
               {"stage": "evaluate", "content": "per-pixel spectral angle in degrees"})
    names = {"report_csv": "report.csv", "report_json": "report.json",
             "per_band_csv": "per_band.csv", "sam_map": "sam_map.cube"}
    if heatmap:
        save_heatmap(rep.sam_map, out_dir / "sam_map.png")
        names["sam_heatmap"] = "sam_map.png"
    return names


def save_heatmap(image: np.ndarray, path: Path) -> None:
    """8-bit color heatmap of a 2-D map, scaled to its own maximum."""
    try:
        import matplotlib
    except ImportError as exc:
        raise ConfigError("--heatmap needs matplotlib: pip install 'hsfusion[plot]'") from exc

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    vmax = float(np.max(image)) or 1.0
    plt.imsave(path, image, cmap="viridis", vmin=0.0, vmax=vmax)


def run_evaluate(ref: SpectralCube, cand: SpectralCube, out_dir: Path, method="proposed", alg_time=None,
                 n_h=None, n_m=None, heatmap=False) -> MetricReport:
    if ref.shape != cand.shape:
        raise ShapeError(f"reference {ref.shape} and candidate {cand.shape} differ in shape")
    rep = report(ref, cand, n_h=n_h, n_m=n_m, method=method)
    rep.alg_time_s = alg_time
    write_report(rep, out_dir, heatmap)
    return rep


def run_pipeline(truth: SpectralCube, cfg: ScenarioConfig, out_dir: Path, record_time=False, heatmap=False) -> dict:
    """Simulate, fuse and evaluate at each HS SNR level; writes ``summary.json``."""
    cfg.check_dims(truth.rows, truth.cols, truth.bands)
    levels = cfg.snr_sweep if cfg.snr_sweep else [cfg.hs_snr_db]
    sweep = bool(cfg.snr_sweep)
    runs, rows = [], []
    for level in levels:
        run_dir = out_dir / f"snr_{level:g}dB" if sweep else out_dir
        sim = run_simulate(truth, cfg, run_dir, level)
        h, m = read_cube(run_dir / "H.cube"), read_cube(run_dir / "M.cube")
        lam = json.loads((run_dir / "lambdas.json").read_text())
        result = run_fuse(h, m, sim["config"], run_dir, lam["hs_variances"], lam["ms_variances"])
        method = f"proposed@{level:g}dB" if sweep else "proposed"
        fused = read_cube(run_dir / "F.cube")
        rep = run_evaluate(truth, fused, run_dir, method, result.wall_time if record_time else None,
                           heatmap=heatmap)
        rows.append(rep.row())
        prefix = f"{run_dir.name}/" if sweep else ""
        runs.append({
            "hs_snr_db": level,
            "metrics": rep.summary(),
            "alg_time_s": result.wall_time,
            "fusion_time_s": result.fusion_time,
            "stop_reason": result.diagnostics["stop_reason"],
            "artifacts": {k: prefix + v for k, v in {
                "H": "H.cube", "M": "M.cube", "lambdas": "lambdas.json", "F": "F.cube",
                "subspace": "subspace.json", "diagnostics": "diagnostics.json",
                "iterations": "iterations.jsonl", "report_csv": "report.csv",
                "report_json": "report.json", "per_band_csv": "per_band.csv", "sam_map": "sam_map.cube",
            }.items()},
        })
    if sweep:
        atomic_write_text(out_dir / "report.csv", _csv(REPORT_COLUMNS, rows))
    summary = {"version": __version__, "config": cfg.to_dict(), "truth_sha256": digest(truth),
               "timing_note": TIMING_NOTE, "runs": runs}
    if sweep:
        summary["sweep_report_csv"] = "report.csv"
    atomic_write_json(out_dir / "summary.json", summary)
    return summary


# argument handling -----------------------------------------------------------


def _level(text: str):
    vals = [float(v) for v in text.split(",") if v.strip()]
    if not vals:
        raise argparse.ArgumentTypeError("expected a number or comma-separated numbers")
    return vals[0] if len(vals) == 1 else vals


def _float_list(text: str) -> List[float]:
    v = _level(text)
    return v if isinstance(v, list) else [v]


def _int_list(text: str) -> List[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("scenario")
    g.add_argument("--config", help="JSON scenario file")
    g.add_argument("--seed", type=int)
    g.add_argument("--hs-snr-db", type=_level, help="HS SNR in dB (scalar or comma list per band)")
    g.add_argument("--ms-snr-db", type=_level, help="MS SNR in dB")
    g.add_argument("--kernel-size", type=int)
    g.add_argument("--kernel-sigma", type=float)
    g.add_argument("--downsample", type=int)
    g.add_argument("--ms-bands", type=_int_list, help="comma-separated MS band indices")
    g.add_argument("--subspace-dim", type=int)
    g.add_argument("--eta", type=float)
    g.add_argument("--mu", type=float)
    g.add_argument("--outer-iters", type=int)
    g.add_argument("--inner-iters", type=int)
    g.add_argument("--noise", choices=("gaussian", "poisson"))
    g.add_argument("--dtype", choices=("f32", "f64"))
    g.add_argument("--out-dir", default=".", help="output directory (default: current)")

    p = _Parser(prog="hsfusion", description="Hyperspectral and multispectral image fusion.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", parents=[common], help="degrade a truth cube into an HS/MS pair")
    s.add_argument("truth")

    f = sub.add_parser("fuse", parents=[common], help="fuse an HS/MS pair")
    f.add_argument("hs")
    f.add_argument("ms")
    f.add_argument("--lambdas", help="lambdas.json with the true noise variances")

    e = sub.add_parser("evaluate", parents=[common], help="compare a candidate with a reference")
    e.add_argument("reference")
    e.add_argument("candidate")
    e.add_argument("--method", default="proposed")
    e.add_argument("--alg-time", type=float)
    e.add_argument("--n-h", type=int, help="HS pixel count for the ERGAS ratio")
    e.add_argument("--n-m", type=int, help="MS pixel count for the ERGAS ratio")
    e.add_argument("--heatmap", action="store_true", help="also write sam_map.png")

    pl = sub.add_parser("pipeline", parents=[common], help="simulate, fuse and evaluate")
    pl.add_argument("truth")
    pl.add_argument("--snr-sweep", type=_float_list, help="comma-separated HS SNR levels in dB")
    pl.add_argument("--record-time", action="store_true", help="fill alg_time_s in report.csv")
    pl.add_argument("--heatmap", action="store_true")

    sy = sub.add_parser("synth", help="write a synthetic low-rank truth cube")
    sy.add_argument("out")
    sy.add_argument("--rows", type=int, default=64)
    sy.add_argument("--cols", type=int, default=64)
    sy.add_argument("--bands", type=int, default=16)
    sy.add_argument("--rank", type=int, default=4)
    sy.add_argument("--seed", type=int, default=0)
    return p


_FLAG_FIELDS = {
    "seed": "seed", "hs_snr_db": "hs_snr_db", "ms_snr_db": "ms_snr_db", "kernel_size": "kernel_size",
    "kernel_sigma": "kernel_sigma", "downsample": "downsample", "ms_bands": "ms_band_indices",
    "subspace_dim": "subspace_dim", "eta": "eta", "mu": "mu", "outer_iters": "outer_iters",
    "inner_iters": "inner_iters", "noise": "noise", "dtype": "dtype", "snr_sweep": "snr_sweep",
}


def _file_config(args) -> dict:
    if not args.config:
        return {}
    try:
        d = json.loads(Path(args.config).read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {args.config}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(d, dict):
        raise ConfigError("config must be a JSON object")
    return d


def resolve_config(args, base: Optional[dict] = None, dims=None) -> ScenarioConfig:
    """Defaults, then ``base``, then the config file, then command-line flags."""
    d = dict(base or {})
    d.update(_file_config(args))
    for attr, key in _FLAG_FIELDS.items():
        v = getattr(args, attr, None)
        if v is not None:
            d[key] = v
    return ScenarioConfig.from_dict(d, dims)


def _cmd_simulate(args) -> int:
    truth = load_any(args.truth)
    cfg = resolve_config(args, dims=truth.shape)
    run_simulate(truth, cfg, Path(args.out_dir))
    return EXIT_OK


def _cmd_fuse(args) -> int:
    base, lam_h, lam_m = {}, None, None
    if args.lambdas:
        try:
            lam = json.loads(Path(args.lambdas).read_text(encoding="utf-8"))
            lam_h, lam_m = lam["hs_variances"], lam["ms_variances"]
        except FileNotFoundError as exc:
            raise ConfigError(f"lambdas file not found: {args.lambdas}") from exc
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise ConfigError(f"lambdas file is malformed: {exc}") from exc
        base = dict(lam.get("scenario", {}))
    file_cfg = _file_config(args)
    cfg = resolve_config(args, base)
    h, m = load_any(args.hs), load_any(args.ms)
    if lam_h is None:
        guess_h = args.hs_snr_db if args.hs_snr_db is not None else file_cfg.get("weight_h_db", file_cfg.get("hs_snr_db"))
        if guess_h is None:
            raise ConfigError(
                "no noise variances: pass --lambdas from the simulation, or a guessed SNR "
                "with --hs-snr-db (and optionally --ms-snr-db)"
            )
        guess_m = args.ms_snr_db if args.ms_snr_db is not None else file_cfg.get("weight_m_db", cfg.ms_snr_db)
        cfg = cfg.updated(weight_h_db=guess_h, weight_m_db=guess_m)
    run_fuse(h, m, cfg, Path(args.out_dir), lam_h, lam_m)
    return EXIT_OK


def _cmd_evaluate(args) -> int:
    ref, cand = load_any(args.reference), load_any(args.candidate)
    run_evaluate(ref, cand, Path(args.out_dir), args.method, args.alg_time, args.n_h, args.n_m, args.heatmap)
    return EXIT_OK


def _cmd_pipeline(args) -> int:
    truth = load_any(args.truth)
    cfg = resolve_config(args, dims=truth.shape)
    run_pipeline(truth, cfg, Path(args.out_dir), args.record_time, args.heatmap)
    return EXIT_OK


def _cmd_synth(args) -> int:
    if min(args.rows, args.cols, args.bands, args.rank) < 1 or args.rank > args.bands:
        raise ConfigError("rows, cols, bands and rank must be positive with rank <= bands")
    cube = low_rank_scene(args.rows, args.cols, args.bands, args.rank, args.seed)
    write_cube(args.out, cube, "f64", {"stage": "synth", "rows": args.rows, "cols": args.cols,
                                      "bands": args.bands, "rank": args.rank, "seed": args.seed})
    return EXIT_OK


_COMMANDS = {"simulate": _cmd_simulate, "fuse": _cmd_fuse, "evaluate": _cmd_evaluate,
             "pipeline": _cmd_pipeline, "synth": _cmd_synth}


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        for problem in exc.problems:
            print(f"error: {problem}", file=sys.stderr)
        return EXIT_INVALID
    except (ShapeError, CubeFormatError, DegenerateInputError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (NumericalError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        for rec in getattr(exc, "trace", []):
            print(json.dumps(rec, sort_keys=True), file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
