"""Result persistence: LRDM matrix files, a YAML summary and montage PNGs.

LRDM layout (all little-endian)::

    b"LRDM"  | version u32 | rows u32 | cols u32 | rows*cols float64, column-major

A result directory holds ``Vr.lrdm``, ``E.lrdm``, optionally ``D.lrdm`` and
``taus.lrdm`` (parameters x images), the per-iteration ``trace.log`` and a
``result.yaml`` document with the scalar fields, transforms and metrics.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
import yaml

from .data import save_png
from .errors import FormatError
from .geometry import TransformStack
from .solver import DecompositionResult, format_trace_record, parse_trace_record

MAGIC = b"LRDM"
VERSION = 1
_HEADER = struct.Struct("<4sIII")

RESULT_DOC = "result.yaml"
TRACE_FILE = "trace.log"
MONTAGE_PANELS = ("input", "aligned", "low_rank", "error")


# -- LRDM -------------------------------------------------------------------


def encode_matrix(A) -> bytes:
    A = np.asarray(A, dtype="<f8")
    if A.ndim != 2:
        raise FormatError(f"only 2-D matrices can be stored, got ndim={A.ndim}")
    rows, cols = A.shape
    return _HEADER.pack(MAGIC, VERSION, rows, cols) + A.tobytes(order="F")


def decode_matrix(buf: bytes, name: str = "<buffer>") -> np.ndarray:
    if len(buf) < _HEADER.size:
        raise FormatError(f"{name}: truncated header ({len(buf)} bytes)")
    magic, version, rows, cols = _HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise FormatError(f"{name}: bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"{name}: unsupported version {version} (expected {VERSION})")
    expected = _HEADER.size + 8 * rows * cols
    if len(buf) != expected:
        raise FormatError(f"{name}: expected {expected} bytes for {rows}x{cols}, got {len(buf)}")
    data = np.frombuffer(buf, dtype="<f8", offset=_HEADER.size)
    return data.reshape((rows, cols), order="F").astype(float)


def save_matrix(A, path) -> None:
    Path(path).write_bytes(encode_matrix(A))


def load_matrix(path) -> np.ndarray:
    path = Path(path)
    try:
        buf = path.read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc}") from exc
    return decode_matrix(buf, str(path))


# -- result directories -----------------------------------------------------


def _manifold_trace(trace: list[dict]) -> list[dict]:
    """Per-outer-iteration summary of how far the projection moved the iterate."""
    by_outer: dict[int, list[float]] = {}
    for rec in trace:
        if "manifold_shift" in rec:
            by_outer.setdefault(int(rec.get("outer", 0)), []).append(float(rec["manifold_shift"]))
    return [
        {"outer": k, "steps": len(v), "mean_shift": float(np.mean(v)), "last_shift": v[-1]}
        for k, v in sorted(by_outer.items())
    ]


def save_result(result: DecompositionResult, out_dir, metrics: dict | None = None,
                batch=None) -> Path:
    """Write ``result`` under ``out_dir``; returns the path of ``result.yaml``.

    ``metrics`` (e.g. an alignment report) is embedded in the document. With
    ``batch`` (the unaligned input frames) montage images are written too.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_matrix(result.Vr, out / "Vr.lrdm")
    save_matrix(result.E, out / "E.lrdm")
    if result.D is not None:
        save_matrix(result.D, out / "D.lrdm")
    doc = {
        "method": result.method,
        "lambda": float(result.lam),
        "converged": bool(result.converged),
        "shape": None if result.shape is None else [int(s) for s in result.shape],
        "objective_trace": [float(v) for v in result.objective_trace],
        "inner_iters": [int(v) for v in result.inner_iters],
        "final_objective": float(result.objective_trace[-1]) if result.objective_trace else None,
    }
    if result.taus is not None:
        save_matrix(result.taus.params, out / "taus.lrdm")
        doc["transforms"] = {
            "group": result.taus.group,
            "params": [[float(v) for v in t.zeta] for t in result.taus],
        }
    if metrics:
        doc["metrics"] = metrics
    if result.method == "meadmm":
        doc["manifold_trace"] = _manifold_trace(result.trace)
    with open(out / TRACE_FILE, "w") as fh:
        for rec in result.trace:
            fh.write(format_trace_record(rec) + "\n")
    path = out / RESULT_DOC
    with open(path, "w") as fh:
        yaml.safe_dump(doc, fh, sort_keys=False)
    if batch is not None and result.shape is not None:
        save_montages(result, out, batch)
    return path


def load_result_doc(out_dir) -> dict:
    path = Path(out_dir) / RESULT_DOC
    try:
        with open(path) as fh:
            doc = yaml.safe_load(fh)
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise FormatError(f"{path}: malformed document: {exc}") from exc
    if not isinstance(doc, dict) or "method" not in doc:
        raise FormatError(f"{path}: not a result document")
    return doc


def load_result(out_dir) -> DecompositionResult:
    out = Path(out_dir)
    doc = load_result_doc(out)
    taus = None
    if "transforms" in doc:
        taus = TransformStack.from_params(doc["transforms"]["group"], load_matrix(out / "taus.lrdm"))
    trace = []
    if (out / TRACE_FILE).exists():
        trace = [parse_trace_record(line) for line in (out / TRACE_FILE).read_text().splitlines()
                 if line.strip()]
    return DecompositionResult(
        Vr=load_matrix(out / "Vr.lrdm"),
        E=load_matrix(out / "E.lrdm"),
        taus=taus,
        objective_trace=list(doc["objective_trace"]),
        inner_iters=list(doc["inner_iters"]),
        converged=bool(doc["converged"]),
        D=load_matrix(out / "D.lrdm") if (out / "D.lrdm").exists() else None,
        shape=None if doc.get("shape") is None else tuple(doc["shape"]),
        method=doc["method"],
        lam=float(doc["lambda"]),
        trace=trace,
    )


# -- montages ---------------------------------------------------------------


def _rescale(frames: list[np.ndarray]) -> list[np.ndarray]:
    """Map a panel's frames jointly onto [0, 1]."""
    lo = min(float(f.min()) for f in frames)
    hi = max(float(f.max()) for f in frames)
    span = hi - lo if hi > lo else 1.0
    return [(f - lo) / span for f in frames]


def montage(frames, ncols: int | None = None, pad: int = 1) -> np.ndarray:
    """Tile equally sized frames row-major into one image with ``pad``-pixel gutters."""
    frames = [np.asarray(f, dtype=float) for f in frames]
    if not frames:
        raise FormatError("montage needs at least one frame")
    h, w = frames[0].shape
    n = len(frames)
    ncols = ncols or int(np.ceil(np.sqrt(n)))
    nrows = int(np.ceil(n / ncols))
    out = np.zeros((nrows * (h + pad) - pad, ncols * (w + pad) - pad))
    for k, f in enumerate(frames):
        r, c = divmod(k, ncols)
        out[r * (h + pad):r * (h + pad) + h, c * (w + pad):c * (w + pad) + w] = f
    return out


def panel_frames(result: DecompositionResult, batch=None) -> dict[str, list[np.ndarray]]:
    """Frames for each montage panel (input frames only if ``batch`` is given)."""
    shape = result.shape
    cols = lambda A: [A[:, i].reshape(shape) for i in range(A.shape[1])]  # noqa: E731
    panels = {}
    if batch is not None:
        panels["input"] = list(getattr(batch, "images", batch))
    if result.D is not None:
        panels["aligned"] = cols(result.D)
    panels["low_rank"] = cols(result.Vr)
    panels["error"] = [np.abs(f) for f in cols(result.E)]
    return panels


def save_montages(result: DecompositionResult, out_dir, batch=None) -> list[Path]:
    out = Path(out_dir)
    written = []
    for name, frames in panel_frames(result, batch).items():
        path = out / f"montage_{name}.png"
        save_png(montage(_rescale(frames)), path, bits=8)
        written.append(path)
    return written


def joint_montage(rows: list[list[np.ndarray]], path) -> None:
    """One montage row per entry of ``rows`` (each row rescaled independently)."""
    ncols = max(len(r) for r in rows)
    tiles = []
    for r in rows:
        r = _rescale(r)
        tiles.extend(r + [np.zeros_like(r[0])] * (ncols - len(r)))
    save_png(montage(tiles, ncols=ncols), path, bits=8)
