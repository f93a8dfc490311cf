"""Command-line front end: ``synth``, ``decompose``, ``eval``, ``compare``, ``montage``.

Solver settings are resolved as command-line flags > ``--config`` file
(``key = value`` lines) > built-in defaults. Exit status is 0 on success, 1
on a runtime or solver failure and 2 on a usage error. ``LRD_LOG`` selects
the verbosity of the iteration trace on standard error (``error``, ``info``
or ``debug``); the full trace is always written to ``trace.log``.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .data import (
    BASE_IMAGES,
    REPORT_HEADER,
    AlignmentReport,
    SynthSpec,
    landmark_error,
    load_batch,
    save_png,
    synthesize,
)
from .errors import LRDError
from .geometry import GROUPS, TransformStack
from .solver import (
    METHODS,
    MU_SCHEDULES,
    ManifoldConfig,
    SolverConfig,
    align_and_decompose,
)
from .storage import (
    joint_montage,
    load_result,
    panel_frames,
    save_montages,
    save_result,
)

TRUTH_DOC = "truth.yaml"
MANIFEST = "manifest.yaml"

# Solver defaults for the settings that may come from flags or a config file.
SOLVER_DEFAULTS = {
    "method": "meadmm",
    "transform": "similarity",
    "lambda": None,
    "k": 7,
    "alpha": 0.05,
    "epsilon_prime": 0.85,
    "mu_schedule": "paper",
    "max_outer": 50,
    "max_inner": 200,
    "tol": 1e-5,
    "seed": 0,
}
_CASTS = {
    "lambda": float, "k": int, "alpha": float, "epsilon_prime": float,
    "max_outer": int, "max_inner": int, "tol": float, "seed": int,
}


class UsageError(Exception):
    """Bad flags or config values; reported with exit status 2."""


# -- helpers ----------------------------------------------------------------


def configure_logging() -> None:
    level_name = os.environ.get("LRD_LOG", "error").lower()
    levels = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
    if level_name not in levels:
        raise UsageError(f"LRD_LOG must be one of {sorted(levels)}, got {level_name!r}")
    logger = logging.getLogger("manifold_lrd")
    logger.setLevel(levels[level_name])
    if not logger.handlers:
        handler = logging.StreamHandler(sys.stderr)
        handler.setFormatter(logging.Formatter("%(message)s"))
        logger.addHandler(handler)


def read_config_file(path) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment, dashes in keys become underscores."""
    out = {}
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise UsageError(f"cannot read config file {path}: {exc}") from exc
    for n, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise UsageError(f"{path}:{n}: expected 'key = value'")
        key = key.strip().replace("-", "_")
        if key not in SOLVER_DEFAULTS:
            raise UsageError(f"{path}:{n}: unknown key {key!r}")
        out[key] = value.strip()
    return out


def resolve_settings(args) -> dict:
    """Merge flags, the optional config file and defaults (in that order)."""
    from_file = read_config_file(args.config) if getattr(args, "config", None) else {}
    settings = {}
    for key, default in SOLVER_DEFAULTS.items():
        flag = getattr(args, key, None)
        if flag is not None:
            value = flag
        elif key in from_file:
            value = from_file[key]
        else:
            value = default
        if value is not None and key in _CASTS:
            try:
                value = _CASTS[key](value)
            except ValueError as exc:
                raise UsageError(f"invalid value for {key}: {value!r}") from exc
        settings[key] = value
    if settings["method"] not in METHODS:
        raise UsageError(f"method must be one of {METHODS}")
    if settings["transform"] not in GROUPS:
        raise UsageError(f"transform must be one of {tuple(GROUPS)}")
    if settings["mu_schedule"] not in MU_SCHEDULES:
        raise UsageError(f"mu-schedule must be one of {MU_SCHEDULES}")
    return settings


def solver_config(settings: dict, method: str | None = None) -> SolverConfig:
    return SolverConfig(
        method=method or settings["method"],
        lam=settings["lambda"],
        mu_schedule=settings["mu_schedule"],
        inner_max_iters=settings["max_inner"],
        outer_max_iters=settings["max_outer"],
        outer_tol=settings["tol"],
        seed=settings["seed"],
        manifold=ManifoldConfig(
            K=settings["k"], alpha=settings["alpha"], epsilon_prime=settings["epsilon_prime"]
        ),
    )


def write_manifest(out: Path, command: str, config: dict, seed, outputs, started: float,
                   extra: dict | None = None) -> None:
    doc = {
        "command": command,
        "tool": "manifold-lrd",
        "version": __version__,
        "numpy": np.__version__,
        "seed": seed,
        "config": config,
        "started": datetime.fromtimestamp(started, timezone.utc).isoformat(),
        "finished": datetime.now(timezone.utc).isoformat(),
        "outputs": sorted(str(p) for p in outputs),
    }
    if extra:
        doc.update(extra)
    with open(out / MANIFEST, "w") as fh:
        yaml.safe_dump(doc, fh, sort_keys=False)


def load_truth(directory) -> dict | None:
    path = Path(directory) / TRUTH_DOC
    if not path.exists():
        return None
    with open(path) as fh:
        return yaml.safe_load(fh)


def truth_report(truth: dict, taus: TransformStack, shape) -> AlignmentReport:
    return landmark_error(
        taus,
        [np.asarray(lm) for lm in truth["landmarks"]],
        np.asarray(truth["base_landmarks"]),
        shape,
    )


def _has_landmarks(truth) -> bool:
    return bool(truth) and truth.get("landmarks") is not None and truth.get("base_landmarks") is not None


def run_solver(batch, settings: dict, method: str | None = None):
    config = solver_config(settings, method)
    taus = TransformStack.identity(settings["transform"], len(batch))
    t0 = time.perf_counter()
    result = align_and_decompose(batch, taus, config)
    return result, time.perf_counter() - t0, config


# -- commands ---------------------------------------------------------------


def cmd_synth(args) -> int:
    started = time.time()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    spec = SynthSpec(
        base=args.base, count=args.count, shape=tuple(args.size),
        rotation_range=args.rotate, shift_range=args.shift,
        patch_count=args.patches, patch_size=args.patch_size,
        patch_intensity=args.patch_intensity, gain_range=tuple(args.gain),
        noise_sigma=args.noise, seed=args.seed,
    )
    res = synthesize(spec)
    written = []
    for name, img in zip(res.batch.source_ids, res.batch.images):
        path = out / f"{name}.png"
        save_png(img, path)
        written.append(path)
    truth = {
        "spec": spec.to_dict(),
        "group": res.truth.group,
        "transforms": [[float(v) for v in t.zeta] for t in res.truth],
        "base_landmarks": None if res.base_landmarks is None else res.base_landmarks.tolist(),
        "landmarks": None if res.truth_landmarks is None else [lm.tolist() for lm in res.truth_landmarks],
        "occluded_pixels": [int(m.sum()) for m in res.occlusion_masks],
    }
    with open(out / TRUTH_DOC, "w") as fh:
        yaml.safe_dump(truth, fh, sort_keys=False)
    written.append(out / TRUTH_DOC)
    write_manifest(out, "synth", spec.to_dict(), args.seed, written, started)
    print(f"wrote {len(res.batch)} images to {out}")
    return 0


def cmd_decompose(args) -> int:
    started = time.time()
    settings = resolve_settings(args)
    batch = load_batch(args.input, tuple(args.size) if args.size else None)
    out = Path(args.out)
    result, elapsed, config = run_solver(batch, settings)
    truth = load_truth(args.truth or args.input)
    metrics = {"seconds": elapsed}
    report = None
    if _has_landmarks(truth):
        report = truth_report(truth, result.taus, batch.shape)
        metrics["alignment"] = report.to_dict()
    path = save_result(result, out, metrics=metrics, batch=batch)
    write_manifest(out, "decompose", config.to_dict(), settings["seed"],
                   [p for p in out.iterdir() if p.name != MANIFEST], started,
                   extra={"input": str(Path(args.input).resolve()), "result": str(path)})
    print(f"final objective: {result.objective_trace[-1]!r}")
    if report is not None:
        print(REPORT_HEADER)
        print(report.row(result.method))
    return 0


def _eval_report(result_dir, truth_dir) -> tuple[str, AlignmentReport, AlignmentReport]:
    result = load_result(result_dir)
    truth = load_truth(truth_dir)
    if not _has_landmarks(truth):
        raise LRDError(f"{truth_dir}: no landmark ground truth ({TRUTH_DOC})")
    if result.taus is None or result.shape is None:
        raise LRDError(f"{result_dir}: result has no transforms to evaluate")
    initial = truth_report(truth, TransformStack.identity(result.taus.group, len(result.taus)),
                           result.shape)
    return result.method, initial, truth_report(truth, result.taus, result.shape)


def cmd_eval(args) -> int:
    method, initial, report = _eval_report(args.result, args.truth)
    lines = [REPORT_HEADER, initial.row("Initial"), report.row(method)]
    print("\n".join(lines))
    out = Path(args.out) if args.out else Path(args.result)
    out.mkdir(parents=True, exist_ok=True)
    doc = {"columns": REPORT_HEADER.split(" | "),
           "rows": {"Initial": initial.to_dict(), method: report.to_dict()}}
    with open(out / "report.yaml", "w") as fh:
        yaml.safe_dump(doc, fh, sort_keys=False)
    return 0


def cmd_compare(args) -> int:
    started = time.time()
    settings = resolve_settings(args)
    batch = load_batch(args.input, tuple(args.size) if args.size else None)
    truth = load_truth(args.truth or args.input)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows, summary, results = [], {}, {}
    for method in METHODS:
        result, elapsed, _ = run_solver(batch, settings, method)
        entry = {"seconds": elapsed, "final_objective": float(result.objective_trace[-1]),
                 "outer_iters": len(result.objective_trace), "converged": bool(result.converged)}
        if _has_landmarks(truth):
            report = truth_report(truth, result.taus, batch.shape)
            entry["alignment"] = report.to_dict()
            rows.append(report.row(method))
        save_result(result, out / method, metrics=entry, batch=batch)
        summary[method] = entry
        results[method] = result
    panels = {m: panel_frames(r) for m, r in results.items()}
    joint_montage(
        [list(batch.images)] + [panels[m]["low_rank"] for m in METHODS]
        + [panels[m]["error"] for m in METHODS],
        out / "montage_compare.png",
    )
    doc = {"columns": REPORT_HEADER.split(" | "), "methods": summary}
    if _has_landmarks(truth):
        initial = truth_report(truth, TransformStack.identity(settings["transform"], len(batch)),
                               batch.shape)
        doc["initial"] = initial.to_dict()
        rows.insert(0, initial.row("Initial"))
    with open(out / "compare.yaml", "w") as fh:
        yaml.safe_dump(doc, fh, sort_keys=False)
    cfg = solver_config(settings).to_dict()
    cfg.pop("method")
    write_manifest(out, "compare", cfg, settings["seed"], [out / "compare.yaml"], started,
                   extra={"input": str(Path(args.input).resolve()), "methods": list(METHODS)})
    if rows:
        print(REPORT_HEADER)
        print("\n".join(rows))
    for method in METHODS:
        print(f"{method} time: {summary[method]['seconds'] * 1000:.1f} ms")
    return 0


def cmd_montage(args) -> int:
    result = load_result(args.result)
    if result.shape is None:
        raise LRDError(f"{args.result}: result has no frame shape")
    batch = load_batch(args.input) if args.input else None
    out = Path(args.out) if args.out else Path(args.result)
    out.mkdir(parents=True, exist_ok=True)
    for path in save_montages(result, out, batch):
        print(path)
    return 0


# -- parser -----------------------------------------------------------------


def _add_solver_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--input", required=True, help="directory of input images")
    p.add_argument("--truth", help="directory holding truth.yaml (default: --input)")
    p.add_argument("--size", type=int, nargs=2, metavar=("H", "W"), help="resize frames")
    p.add_argument("--method", choices=METHODS)
    p.add_argument("--transform", choices=tuple(GROUPS))
    p.add_argument("--lambda", dest="lambda", type=float, help="sparsity weight (default 1/sqrt(max(m, n)))")
    p.add_argument("--k", type=int, help="manifold neighbours (default 7)")
    p.add_argument("--alpha", type=float, help="manifold residual shrinkage (default 0.05)")
    p.add_argument("--epsilon-prime", dest="epsilon_prime", type=float,
                   help="manifold residual scale (default 0.85)")
    p.add_argument("--mu-schedule", dest="mu_schedule", choices=MU_SCHEDULES)
    p.add_argument("--max-outer", dest="max_outer", type=int)
    p.add_argument("--max-inner", dest="max_inner", type=int)
    p.add_argument("--tol", type=float, help="outer stopping tolerance on max |dtau|")
    p.add_argument("--seed", type=int)
    p.add_argument("--config", help="key = value settings file")
    p.add_argument("--out", required=True)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="manifold-lrd",
        description="Robust batch alignment by low-rank + sparse decomposition (RASL / MeADMM).",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a misaligned synthetic batch with ground truth")
    p.add_argument("--base", choices=BASE_IMAGES, default="face")
    p.add_argument("--count", type=int, default=20)
    p.add_argument("--size", type=int, nargs=2, metavar=("H", "W"), default=[48, 48])
    p.add_argument("--shift", type=float, default=0.0, help="max shift in pixels")
    p.add_argument("--rotate", type=float, default=0.0, help="max rotation in degrees")
    p.add_argument("--patches", type=int, default=0, help="occlusion patches per image")
    p.add_argument("--patch-size", dest="patch_size", type=int, default=0)
    p.add_argument("--patch-intensity", dest="patch_intensity", type=float, default=0.0)
    p.add_argument("--gain", type=float, nargs=2, metavar=("LO", "HI"), default=[1.0, 1.0])
    p.add_argument("--noise", type=float, default=0.0, help="Gaussian noise sigma")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("decompose", help="align and decompose a batch")
    _add_solver_flags(p)
    p.set_defaults(func=cmd_decompose)

    p = sub.add_parser("eval", help="landmark alignment report for a result")
    p.add_argument("--result", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("compare", help="run both methods on one batch")
    _add_solver_flags(p)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("montage", help="render montage images for a result")
    p.add_argument("--result", required=True)
    p.add_argument("--input", help="original images for the input panel")
    p.add_argument("--out")
    p.set_defaults(func=cmd_montage)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        configure_logging()
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"manifold-lrd: error: {exc}", file=sys.stderr)
        return 2
    except (LRDError, OSError, ValueError) as exc:
        cls = type(exc)
        print(f"manifold-lrd: {cls.__module__}.{cls.__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
