"""Robust batch image alignment by low-rank + sparse decomposition.

Two solvers share one outer linearisation loop: ``rasl`` (plain linearised
ADMM) and ``meadmm``, which additionally projects each iterate onto a
manifold learned from the batch itself.
"""

__version__ = "0.1.0"

from .errors import LRDError  # noqa: E402
from .geometry import TransformParams, TransformStack  # noqa: E402
from .solver import SolverConfig, ManifoldConfig, align_and_decompose, decompose  # noqa: E402

__all__ = [
    "LRDError",
    "ManifoldConfig",
    "SolverConfig",
    "TransformParams",
    "TransformStack",
    "align_and_decompose",
    "decompose",
]
