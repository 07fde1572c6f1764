"""On-disk cube format and an ENVI header import shim.

A cube file is a raw little-endian band-sequential payload (``name.cube``)
next to a JSON sidecar (``name.cube.json``)::

    {"rows": R, "cols": C, "bands": Z, "dtype": "f32" | "f64",
     "interleave": "bsq", "band_centers": [...], "provenance": {...}}

Writes go to a temporary file in the target directory and are renamed into
place, so a reader never observes a partial file.
"""

from __future__ import annotations

import json
import os
import re
import tempfile
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .cube import SpectralCube
from .errors import FusionError

PathLike = Union[str, os.PathLike]

DTYPES = {"f32": np.dtype("<f4"), "f64": np.dtype("<f8")}


class CubeFormatError(FusionError, ValueError):
    """A cube file or header is malformed or inconsistent with its payload."""


def sidecar_path(path: PathLike) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def atomic_write_bytes(path: PathLike, payload: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dumps_json(obj) -> str:
    """Stable JSON text: sorted keys, fixed indentation, trailing newline."""
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n"


def atomic_write_json(path: PathLike, obj) -> None:
    atomic_write_bytes(path, dumps_json(obj).encode("utf-8"))


def atomic_write_text(path: PathLike, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def write_cube(path: PathLike, cube: SpectralCube, dtype: str = "f64", provenance: Optional[dict] = None) -> Path:
    """Write ``cube`` as ``path`` plus its JSON sidecar; returns the payload path."""
    if dtype not in DTYPES:
        raise CubeFormatError(f"dtype must be one of {sorted(DTYPES)}, got {dtype!r}")
    path = Path(path)
    header = {
        "rows": cube.rows,
        "cols": cube.cols,
        "bands": cube.bands,
        "dtype": dtype,
        "interleave": "bsq",
        "provenance": provenance or {},
    }
    if cube.band_centers is not None:
        header["band_centers"] = cube.band_centers.tolist()
    payload = np.ascontiguousarray(cube.data.transpose(2, 0, 1), dtype=DTYPES[dtype]).tobytes()
    atomic_write_bytes(path, payload)
    atomic_write_json(sidecar_path(path), header)
    return path


def read_header(path: PathLike) -> dict:
    side = sidecar_path(path)
    try:
        header = json.loads(side.read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise CubeFormatError(f"missing sidecar header {side.name}") from exc
    except json.JSONDecodeError as exc:
        raise CubeFormatError(f"sidecar {side.name} is not valid JSON: {exc}") from exc
    problems = []
    for key in ("rows", "cols", "bands"):
        v = header.get(key)
        if not isinstance(v, int) or isinstance(v, bool) or v < 1:
            problems.append(f"{key} must be a positive integer, got {v!r}")
    if header.get("dtype") not in DTYPES:
        problems.append(f"dtype must be one of {sorted(DTYPES)}, got {header.get('dtype')!r}")
    if header.get("interleave", "bsq") != "bsq":
        problems.append(f"only bsq interleave is supported, got {header.get('interleave')!r}")
    if problems:
        raise CubeFormatError(f"{side.name}: " + "; ".join(problems))
    return header


def read_cube(path: PathLike) -> SpectralCube:
    """Load a cube written by :func:`write_cube`.

    Raises
    ------
    CubeFormatError
        Missing or invalid sidecar, or a payload whose byte length does not
        match the header.
    """
    path = Path(path)
    header = read_header(path)
    dt = DTYPES[header["dtype"]]
    rows, cols, bands = header["rows"], header["cols"], header["bands"]
    expected = rows * cols * bands * dt.itemsize
    try:
        raw = path.read_bytes()
    except FileNotFoundError as exc:
        raise CubeFormatError(f"missing payload {path.name}") from exc
    if len(raw) != expected:
        raise CubeFormatError(
            f"{path.name}: payload has {len(raw)} bytes, header {rows}x{cols}x{bands} "
            f"{header['dtype']} requires {expected}"
        )
    data = np.frombuffer(raw, dtype=dt).reshape(bands, rows, cols).transpose(1, 2, 0)
    try:
        return SpectralCube(data, header.get("band_centers"))
    except ValueError as exc:
        raise CubeFormatError(f"{path.name}: {exc}") from exc


# ENVI ------------------------------------------------------------------------

_ENVI_TYPES = {1: "u1", 2: "i2", 3: "i4", 4: "f4", 5: "f8", 12: "u2", 13: "u4", 14: "i8", 15: "u8"}


def parse_envi_header(text: str) -> dict:
    """Parse ``key = value`` pairs of an ENVI ``.hdr``; braces may span lines."""
    if not text.lstrip().upper().startswith("ENVI"):
        raise CubeFormatError("not an ENVI header (missing 'ENVI' magic)")
    out = {}
    for match in re.finditer(r"^\s*([^=\n]+?)\s*=\s*(\{[^}]*\}|[^\n]*)", text, flags=re.MULTILINE):
        key = match.group(1).strip().lower()
        value = match.group(2).strip()
        if value.startswith("{"):
            value = [v.strip() for v in value[1:-1].split(",") if v.strip()]
        out[key] = value
    return out


def read_envi(header_path: PathLike, data_path: Optional[PathLike] = None) -> SpectralCube:
    """Import an ENVI image (bsq, bil or bip) as a cube.

    The payload defaults to the header path without its ``.hdr`` suffix.
    Band centers come from the ``wavelength`` field when present.
    """
    header_path = Path(header_path)
    hdr = parse_envi_header(header_path.read_text(encoding="utf-8", errors="replace"))
    try:
        rows = int(hdr["lines"])
        cols = int(hdr["samples"])
        bands = int(hdr["bands"])
        code = int(hdr.get("data type", 4))
    except (KeyError, ValueError) as exc:
        raise CubeFormatError(f"{header_path.name}: missing or invalid dimension field: {exc}") from exc
    if code not in _ENVI_TYPES:
        raise CubeFormatError(f"{header_path.name}: unsupported ENVI data type {code}")
    order = ">" if int(hdr.get("byte order", 0)) == 1 else "<"
    dt = np.dtype(order + _ENVI_TYPES[code])
    interleave = str(hdr.get("interleave", "bsq")).lower()
    if interleave not in ("bsq", "bil", "bip"):
        raise CubeFormatError(f"{header_path.name}: unknown interleave {interleave!r}")
    offset = int(hdr.get("header offset", 0))

    if data_path is None:
        data_path = header_path.with_suffix("")
        if not data_path.exists():
            candidates = [data_path.with_suffix(s) for s in (".img", ".raw", ".dat", ".bsq")]
            data_path = next((c for c in candidates if c.exists()), data_path)
    raw = Path(data_path).read_bytes()
    expected = offset + rows * cols * bands * dt.itemsize
    if len(raw) < expected:
        raise CubeFormatError(
            f"{Path(data_path).name}: payload has {len(raw)} bytes, header requires {expected}"
        )
    flat = np.frombuffer(raw, dtype=dt, count=rows * cols * bands, offset=offset)
    if interleave == "bsq":
        data = flat.reshape(bands, rows, cols).transpose(1, 2, 0)
    elif interleave == "bil":
        data = flat.reshape(rows, bands, cols).transpose(0, 2, 1)
    else:
        data = flat.reshape(rows, cols, bands)

    centers = None
    if isinstance(hdr.get("wavelength"), list) and len(hdr["wavelength"]) == bands:
        try:
            centers = [float(v) for v in hdr["wavelength"]]
        except ValueError:
            centers = None
    try:
        return SpectralCube(data, centers)
    except ValueError as exc:
        raise CubeFormatError(f"{header_path.name}: {exc}") from exc


def load_any(path: PathLike) -> SpectralCube:
    """Read a native cube, or an ENVI image when given its ``.hdr``."""
    path = Path(path)
    if path.suffix.lower() == ".hdr":
        return read_envi(path)
    return read_cube(path)
