"""Inner ADMM and the outer linearise / solve / update loop.

The inner loop solves, for fixed transforms and Jacobians,

    min ||Vr||_* + lam ||E||_1   s.t.   D + sum_i J_i dtau_i e_i^T = Vr + E

by alternating SVT, shrinkage and per-image least squares. ``method="rasl"``
is the plain linearised ALM. ``method="meadmm"`` first replaces the matrix
fed to the SVT step by its projection onto the data manifold (see
:mod:`manifold_lrd.manifold`).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, asdict
from typing import Callable

import numpy as np

from . import geometry
from .errors import (
    DivergenceError,
    IllConditionedJacobianError,
    InvalidArgumentError,
)
from .manifold import (
    DEFAULT_ALPHA,
    DEFAULT_EPSILON_PRIME,
    DEFAULT_K,
    ManifoldModel,
    project_batch,
)
from .prox import l1_norm, nuclear_norm, soft_threshold_matrix, svt_with_rank

log = logging.getLogger("manifold_lrd.trace")

METHODS = ("rasl", "meadmm")
MU_SCHEDULES = ("paper", "increasing")
PROJECTION_SOURCES = ("linearized", "decomposition")
NEIGHBOR_SOURCES = ("source", "low_rank")
# Default penalty floor relative to mu0. Much lower floors let the decaying
# schedule shrink the penalty until the iteration stalls.
MU_FLOOR_RATIO = 0.5

TraceHook = Callable[[dict], None]


@dataclass
class ManifoldConfig:
    K: int = DEFAULT_K
    alpha: float = DEFAULT_ALPHA
    epsilon_prime: float = DEFAULT_EPSILON_PRIME
    # "linearized": project D + J dtau; "decomposition": project Vr + E
    # from the previous step.
    source: str = "linearized"
    # "source": neighbourhoods from the projected matrix itself;
    # "low_rank": geodesics measured between the current Vr columns.
    neighbors: str = "source"
    # Build the neighbourhood once per outer iteration instead of every step.
    freeze: bool = False


@dataclass
class SolverConfig:
    """Solver knobs. ``None`` means "derive from the data"."""

    method: str = "meadmm"
    lam: float | None = None
    mu0: float | None = None
    mu_floor: float | None = None
    mu_decay: float = 0.9
    mu_schedule: str = "paper"
    mu_growth: float = 1.25
    inner_tol: float = 1e-7
    inner_max_iters: int = 200
    outer_tol: float = 1e-5
    outer_max_iters: int = 50
    manifold: ManifoldConfig = field(default_factory=ManifoldConfig)
    fix_gauge: bool = True
    interpolation: str = "cubic"
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.manifold, dict):
            self.manifold = ManifoldConfig(**self.manifold)
        self.validate()

    def validate(self) -> None:
        if self.method not in METHODS:
            raise InvalidArgumentError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.mu_schedule not in MU_SCHEDULES:
            raise InvalidArgumentError(f"mu_schedule must be one of {MU_SCHEDULES}")
        if self.manifold.source not in PROJECTION_SOURCES:
            raise InvalidArgumentError(f"manifold.source must be one of {PROJECTION_SOURCES}")
        if self.manifold.neighbors not in NEIGHBOR_SOURCES:
            raise InvalidArgumentError(f"manifold.neighbors must be one of {NEIGHBOR_SOURCES}")
        if self.lam is not None and not self.lam > 0:
            raise InvalidArgumentError("lambda must be positive")
        if self.mu0 is not None and not self.mu0 > 0:
            raise InvalidArgumentError("mu0 must be positive")
        if self.mu_floor is not None:
            if not self.mu_floor > 0:
                raise InvalidArgumentError("mu_floor must be positive")
            if self.mu0 is not None and self.mu_floor > self.mu0:
                raise InvalidArgumentError("mu_floor must not exceed mu0")
        if not 0 < self.mu_decay <= 1:
            raise InvalidArgumentError("mu_decay must lie in (0, 1]")
        if not self.mu_growth >= 1:
            raise InvalidArgumentError("mu_growth must be >= 1")
        if not (self.inner_tol > 0 and self.outer_tol > 0):
            raise InvalidArgumentError("tolerances must be positive")
        if self.inner_max_iters < 1 or self.outer_max_iters < 1:
            raise InvalidArgumentError("iteration limits must be >= 1")
        if self.manifold.K < 1:
            raise InvalidArgumentError("K must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class DecompositionState:
    Vm: np.ndarray
    Vr: np.ndarray
    E: np.ndarray
    Y: np.ndarray
    dtau: np.ndarray
    mu: float
    lam: float
    iter: int = 0
    converged: bool = False
    residual_norm: float = math.inf


@dataclass
class DecompositionResult:
    Vr: np.ndarray
    E: np.ndarray
    taus: geometry.TransformStack | None
    objective_trace: list[float]
    inner_iters: list[int]
    converged: bool
    D: np.ndarray | None = None
    shape: tuple[int, int] | None = None
    method: str = "rasl"
    lam: float = float("nan")
    trace: list[dict] = field(default_factory=list)


def default_lambda(shape) -> float:
    return 1.0 / math.sqrt(max(shape))


def objective(Vr, E, lam: float) -> float:
    """``||Vr||_* + lam * ||E||_1``."""
    return nuclear_norm(Vr) + lam * l1_norm(E)


def residual(Vr, E, Vm_lin) -> np.ndarray:
    """Constraint residual ``(Vr + E) - Vm_lin``."""
    Vr, E, Vm_lin = (np.asarray(a, dtype=float) for a in (Vr, E, Vm_lin))
    if not Vr.shape == E.shape == Vm_lin.shape:
        raise InvalidArgumentError(f"shape mismatch {Vr.shape}, {E.shape}, {Vm_lin.shape}")
    return (Vr + E) - Vm_lin


def linearized(D, jacobians, dtau) -> np.ndarray:
    """``D + sum_i J_i dtau_i e_i^T`` (the first-order warp of the batch)."""
    D = np.asarray(D, dtype=float)
    if not jacobians:
        return D.copy()
    return D + np.stack([J @ dtau[:, i] for i, J in enumerate(jacobians)], axis=1)


class _DeltaTauSolver:
    """Per-image least squares ``dtau_i = J_i^+ r_i`` via thin QR.

    With ``fix_gauge`` the increments are additionally constrained to sum to
    zero over the batch, which pins the common-motion ambiguity of joint
    alignment (any shared warp leaves the rank unchanged). The constrained
    minimiser is ``u_i - G_i nu`` with ``G_i = (J_i^T J_i)^-1`` and
    ``nu = (sum G_i)^-1 sum u_i``.
    """

    def __init__(self, jacobians, fix_gauge: bool):
        self.factors = []
        for i, J in enumerate(jacobians):
            if not np.all(np.isfinite(J)):
                raise IllConditionedJacobianError(i, f"Jacobian of image {i} is not finite")
            Q, R = np.linalg.qr(J)
            d = np.abs(np.diag(R))
            if d.size == 0 or d.min() <= 1e-10 * max(d.max(), 1e-300):
                raise IllConditionedJacobianError(i)
            self.factors.append((Q, R))
        self.fix_gauge = fix_gauge and len(self.factors) > 1
        if self.fix_gauge:
            self.G = []
            for _, R in self.factors:
                Rinv = np.linalg.inv(R)
                self.G.append(Rinv @ Rinv.T)
            self.G_sum_inv = np.linalg.inv(np.sum(self.G, axis=0))

    def __call__(self, target: np.ndarray) -> np.ndarray:
        u = np.stack(
            [np.linalg.solve(R, Q.T @ target[:, i]) for i, (Q, R) in enumerate(self.factors)],
            axis=1,
        )
        if self.fix_gauge:
            nu = self.G_sum_inv @ u.sum(axis=1)
            u = u - np.stack([G @ nu for G in self.G], axis=1)
        return u


def admm_cycle(D, Vp, Vm_lin, E, Y, mu: float, lam: float, jacobians=None,
               solve_dtau=None, dtau=None):
    """One SVT / shrinkage / least-squares / multiplier sweep.

    ``Vp`` is the matrix fed to the SVT step (``Vm_lin`` itself for rasl,
    its manifold projection for meadmm). Without ``solve_dtau`` the
    transforms stay fixed. Returns ``(Vr, E, dtau, Vm_lin, Y, rank, nuclear)``
    where ``nuclear`` is the nuclear norm of the new ``Vr``.
    """
    Vr, rank, nuc = svt_with_rank(Vp + Y / mu - E, 1.0 / mu)
    E = soft_threshold_matrix(Vm_lin + Y / mu - Vr, lam / mu)
    if solve_dtau is not None:
        dtau = solve_dtau(Vr + E - D - Y / mu)
        Vm_lin = linearized(D, jacobians, dtau)
    # multiplier ascent on the constraint Vm_lin = Vr + E
    Y = Y + mu * (Vm_lin - Vr - E)
    return Vr, E, dtau, Vm_lin, Y, rank, nuc


def inner_admm(D, jacobians, config: SolverConfig, trace: TraceHook | None = None,
               outer: int = 0) -> DecompositionState:
    """Run the inner ADMM on a warped, normalised matrix ``D``.

    ``jacobians`` is a list of ``pixels x p`` matrices (one per column of
    ``D``), or ``None``/empty for a pure low-rank + sparse split with the
    transforms held fixed.
    """
    D = np.asarray(D, dtype=float)
    m, n = D.shape
    jacobians = list(jacobians) if jacobians is not None else []
    if jacobians and len(jacobians) != n:
        raise InvalidArgumentError(f"{len(jacobians)} Jacobians for {n} columns")
    meadmm = config.method == "meadmm"
    mcfg = config.manifold
    if meadmm and n < mcfg.K + 1:
        raise InvalidArgumentError(f"meadmm needs at least K+1={mcfg.K + 1} columns, got {n}")

    lam = config.lam if config.lam is not None else default_lambda(D.shape)
    norm2 = np.linalg.norm(D, 2)
    d_fro = np.linalg.norm(D)
    mu = float(config.mu0 if config.mu0 is not None else 1.25 / norm2)
    mu_floor = config.mu_floor if config.mu_floor is not None else MU_FLOOR_RATIO * mu
    mu_cap = mu / 1e-7
    Y = D / max(norm2, np.abs(D).max() / lam)

    p = jacobians[0].shape[1] if jacobians else 0
    dtau = np.zeros((p, n))
    solve_dtau = _DeltaTauSolver(jacobians, config.fix_gauge) if jacobians else None
    Vr = np.zeros_like(D)
    E = np.zeros_like(D)
    Vm_lin = D.copy()
    source = D
    frozen = ManifoldModel(D, mcfg.K, mcfg.alpha, mcfg.epsilon_prime) if meadmm and mcfg.freeze else None

    state = DecompositionState(D, Vr, E, Y, dtau, mu, lam)
    for k in range(1, config.inner_max_iters + 1):
        record = {"outer": outer, "inner": k}
        if meadmm:
            model = frozen
            if model is None and mcfg.neighbors == "low_rank" and np.any(Vr):
                model = ManifoldModel(Vr, mcfg.K, mcfg.alpha, mcfg.epsilon_prime)
            Vp = project_batch(source, mcfg.K, mcfg.alpha, mcfg.epsilon_prime, model=model)
            record["manifold_shift"] = float(np.linalg.norm(Vp - source))
        else:
            Vp = Vm_lin
        Vr, E, dtau, Vm_lin, Y, rank, nuc = admm_cycle(
            D, Vp, Vm_lin, E, Y, mu, lam, jacobians, solve_dtau, dtau
        )
        gap = Vm_lin - Vr - E
        if config.mu_schedule == "paper":
            mu = float(max(config.mu_decay * mu, mu_floor))
        else:
            mu = float(min(config.mu_growth * mu, mu_cap))

        if not (np.all(np.isfinite(Vr)) and np.all(np.isfinite(E)) and np.all(np.isfinite(Y))
                and np.all(np.isfinite(dtau))):
            raise DivergenceError(k)
        rel = float(np.linalg.norm(gap) / d_fro)
        if meadmm:
            source = Vr + E if mcfg.source == "decomposition" else Vm_lin
        record.update(residual=rel, objective=nuc + lam * float(np.abs(E).sum()), mu=mu, rank=rank)
        log.debug(format_trace_record(record))
        if trace is not None:
            trace(record)
        state = DecompositionState(Vm_lin, Vr, E, Y, dtau, mu, lam, k, rel < config.inner_tol, rel)
        if state.converged:
            break
    return state


def align_and_decompose(batch, initial_taus: geometry.TransformStack, config: SolverConfig,
                        trace: TraceHook | None = None) -> DecompositionResult:
    """Jointly align a batch and split it into low-rank and sparse parts.

    Each outer iteration recomputes the normalised warped matrix and its
    Jacobians at the current transforms, runs :func:`inner_admm`, and adds
    the resulting increments to the transform parameters. Stops when the
    largest parameter change drops below ``outer_tol``.
    """
    frames = getattr(batch, "images", batch)
    if len(frames) != len(initial_taus):
        raise InvalidArgumentError(f"{len(frames)} images but {len(initial_taus)} transforms")
    if config.method == "meadmm" and len(frames) < config.manifold.K + 2:
        raise InvalidArgumentError(
            f"meadmm needs at least K+2={config.manifold.K + 2} images, got {len(frames)}"
        )
    records: list[dict] = []

    def hook(rec):
        records.append(rec)
        if trace is not None:
            trace(rec)

    taus = initial_taus
    objectives, inner_iters = [], []
    converged = False
    shape = np.asarray(frames[0]).shape
    for outer in range(1, config.outer_max_iters + 1):
        D, jacobians = geometry.batch_jacobians(frames, taus, interpolation=config.interpolation)
        state = inner_admm(D, jacobians, config, trace=hook, outer=outer)
        obj = objective(state.Vr, state.E, state.lam)
        objectives.append(obj)
        inner_iters.append(state.iter)
        change = float(np.abs(state.dtau).max())
        taus = geometry.compose_update(taus, state.dtau)
        log.info(format_trace_record({
            "outer": outer, "inner_iters": state.iter, "objective": obj,
            "residual": state.residual_norm, "max_dtau": change,
        }))
        if change < config.outer_tol:
            converged = True
            break
    return DecompositionResult(
        Vr=state.Vr, E=state.E, taus=taus, objective_trace=objectives,
        inner_iters=inner_iters, converged=converged, D=D, shape=tuple(shape),
        method=config.method, lam=state.lam, trace=records,
    )


def decompose(D, config: SolverConfig, trace: TraceHook | None = None) -> DecompositionResult:
    """Low-rank + sparse split of a fixed matrix (no alignment)."""
    state = inner_admm(D, None, config, trace=trace)
    return DecompositionResult(
        Vr=state.Vr, E=state.E, taus=None,
        objective_trace=[objective(state.Vr, state.E, state.lam)],
        inner_iters=[state.iter], converged=state.converged, D=np.asarray(D, dtype=float),
        method=config.method, lam=state.lam,
    )


def format_trace_record(record: dict) -> str:
    """One ``key=value`` line; floats use ``repr`` precision."""
    parts = []
    for key, value in record.items():
        if isinstance(value, float):
            value = repr(value)
        parts.append(f"{key}={value}")
    return " ".join(parts)


def parse_trace_record(line: str) -> dict:
    out = {}
    for token in line.split():
        key, _, raw = token.partition("=")
        for cast in (int, float):
            try:
                out[key] = cast(raw)
                break
            except ValueError:
                continue
        else:
            out[key] = raw
    return out
