"""Artifact I/O: CSV traces, 16-bit PGM images with JSON sidecars, and
simulation bundles.

Everything written here is byte-deterministic for identical inputs: no
timestamps, sorted JSON keys, raw ``.npy`` files instead of zip archives.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .linalg import ImageGrid, SparseNonnegOperator
from .simulator import SimulatedData

__all__ = [
    "format_value",
    "write_csv",
    "read_csv",
    "write_trace",
    "read_trace",
    "write_pgm",
    "read_pgm",
    "save_simulation",
    "load_simulation",
    "write_json",
]

PGM_MAX = 65535


def format_value(v) -> str:
    """Integers verbatim, floats with 17 significant digits."""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, str):
        return v
    v = float(v)
    if math.isnan(v):
        return "nan"
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return f"{v:.17g}"


def write_csv(path, header, rows) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([format_value(v) for v in row])


def _parse(cell: str):
    try:
        return int(cell)
    except ValueError:
        pass
    try:
        return float(cell)
    except ValueError:
        return cell


def read_csv(path):
    """Return ``(header, rows)`` with numeric cells converted."""
    with Path(path).open(newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        rows = [tuple(_parse(c) for c in row) for row in r]
    return header, rows


def write_trace(path, history) -> None:
    write_csv(path, history.COLUMNS, history.rows())


def read_trace(path) -> dict:
    """Columns of a trace CSV as numpy arrays."""
    header, rows = read_csv(path)
    cols = list(zip(*rows)) if rows else [()] * len(header)
    return {h: np.asarray(c, dtype=float) for h, c in zip(header, cols)}


def write_json(path, obj) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def write_pgm(path, image: np.ndarray, mask=None) -> dict:
    """Write a binary 16-bit PGM scaled by the image maximum, plus ``<path>.json``.

    The sidecar records the scale (value per grey level) and the mask as
    rows of '0'/'1'. Returns the sidecar contents.
    """
    img = np.asarray(image, dtype=float)
    if img.ndim != 2:
        raise ValueError("image must be 2-D")
    if np.any(img < 0) or not np.all(np.isfinite(img)):
        raise ValueError("image must be finite and nonnegative")
    h, w = img.shape
    vmax = float(img.max()) if img.size else 0.0
    scale = vmax / PGM_MAX if vmax > 0 else 1.0
    levels = np.rint(img / scale).astype(">u2")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as fh:
        fh.write(f"P5\n{w} {h}\n{PGM_MAX}\n".encode("ascii"))
        fh.write(levels.tobytes())
    if mask is None:
        mask = np.ones((h, w), dtype=bool)
    mask = np.asarray(mask, dtype=bool).reshape(h, w)
    meta = {
        "width": w,
        "height": h,
        "max_value": format_value(vmax),
        "scale": format_value(scale),
        "mask": ["".join("1" if v else "0" for v in row) for row in mask],
    }
    write_json(path.with_suffix(path.suffix + ".json"), meta)
    return meta


def read_pgm(path):
    """Return ``(image, mask)`` reconstructed from the PGM and its sidecar."""
    path = Path(path)
    data = path.read_bytes()
    parts = data.split(b"\n", 3)
    if parts[0] != b"P5":
        raise ValueError(f"{path} is not a binary PGM")
    w, h = (int(v) for v in parts[1].split())
    maxval = int(parts[2])
    levels = np.frombuffer(parts[3], dtype=">u2" if maxval > 255 else "u1", count=w * h)
    meta = json.loads(path.with_suffix(path.suffix + ".json").read_text())
    img = levels.reshape(h, w).astype(float) * float(meta["scale"])
    mask = np.array([[c == "1" for c in row] for row in meta["mask"]], dtype=bool)
    return img, mask


def save_simulation(directory, sim: SimulatedData) -> None:
    """Write the phantom, operator, mask, background and counts."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    ph = sim.phantom
    write_pgm(d / "phantom.pgm", ph.as_array(), sim.mask.reshape(ph.height, ph.width))
    np.save(d / "phantom.npy", ph.values)
    csr = sim.op.csr
    np.save(d / "H_data.npy", csr.data)
    np.save(d / "H_indices.npy", csr.indices.astype(np.int64))
    np.save(d / "H_indptr.npy", csr.indptr.astype(np.int64))
    np.save(d / "H_row_labels.npy", sim.op.row_labels)
    np.save(d / "mask.npy", sim.mask)
    np.save(d / "background.npy", sim.b)
    np.save(d / "sinogram.npy", sim.y.astype(np.int64))
    np.save(d / "rates.npy", sim.rates)
    meta = dict(sim.meta)
    meta.update({"width": ph.width, "height": ph.height, "rows": sim.op.rows,
                 "cols": sim.op.cols, "nnz": sim.op.nnz})
    write_json(d / "meta.json", {k: (format_value(v) if isinstance(v, float) else v)
                                 for k, v in meta.items()})


def load_simulation(directory) -> SimulatedData:
    d = Path(directory)
    meta_path = d / "meta.json"
    if not meta_path.exists():
        raise FileNotFoundError(f"no simulation artifacts in {d} (run 'simulate' first)")
    meta = json.loads(meta_path.read_text())
    w, h = int(meta["width"]), int(meta["height"])
    csr = sp.csr_matrix((np.load(d / "H_data.npy"), np.load(d / "H_indices.npy"),
                         np.load(d / "H_indptr.npy")), shape=(int(meta["rows"]), w * h))
    op = SparseNonnegOperator(csr, row_labels=np.load(d / "H_row_labels.npy"))
    phantom = ImageGrid(w, h, np.load(d / "phantom.npy"))
    y = np.load(d / "sinogram.npy").astype(float)
    return SimulatedData(phantom, op, np.load(d / "mask.npy"), np.load(d / "rates.npy"),
                         np.load(d / "background.npy"), y, meta=meta)
