"""Neighbour-preserving geodesic embedding.

A set of samples (the columns of a matrix) defines a manifold through its
K-nearest-neighbour graph. Shortest paths on that graph approximate geodesic
distances, and a point is projected onto the manifold as a convex
combination of its K geodesically nearest samples plus a shrunk copy of the
reconstruction residual::

    m1  = sum_j w_j * s_j
    out = m1 + epsilon_prime * soft_threshold(x - m1, alpha)

with ``w_j`` proportional to ``1 - g_j / (g_max + g_min)`` over the K
geodesic distances ``g_j``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.sparse.csgraph import csgraph_from_dense, shortest_path
from scipy.spatial.distance import cdist

from .errors import DisconnectedManifoldError, InvalidArgumentError
from .prox import soft_threshold_matrix

DEFAULT_K = 7
DEFAULT_ALPHA = 0.05
DEFAULT_EPSILON_PRIME = 0.85


class KnnGraph(NamedTuple):
    """Symmetrised K-nearest-neighbour graph.

    ``neighbors[i]`` / ``distances[i]`` hold node i's own K nearest samples;
    ``adjacency`` is the dense symmetric edge-length matrix (``inf`` = no edge).
    """

    neighbors: np.ndarray
    distances: np.ndarray
    adjacency: np.ndarray

    @property
    def n_nodes(self) -> int:
        return self.adjacency.shape[0]

    def edges(self) -> set[tuple[int, int]]:
        i, j = np.nonzero(np.isfinite(self.adjacency))
        return {(a, b) for a, b in zip(i.tolist(), j.tolist()) if a < b}


class EmbeddingWeights(NamedTuple):
    neighbor_indices: np.ndarray
    weights: np.ndarray


def _check_k(K: int, n: int) -> None:
    if not (isinstance(K, (int, np.integer)) and 1 <= K < n):
        raise InvalidArgumentError(f"K must satisfy 1 <= K < {n}, got {K!r}")


def build_knn_graph(samples, K: int) -> KnnGraph:
    """Connect every column of ``samples`` to its K Euclidean nearest columns.

    Ties are broken by the lower column index. Edges are symmetrised by union
    and weighted by Euclidean length; duplicate samples give zero-length edges.
    """
    X = np.asarray(samples, dtype=float)
    if X.ndim != 2:
        raise InvalidArgumentError("samples must be a 2-D matrix (one column per sample)")
    n = X.shape[1]
    _check_k(K, n)
    dist = cdist(X.T, X.T)
    np.fill_diagonal(dist, np.inf)
    order = np.argsort(dist, axis=1, kind="stable")[:, :K]
    nd = np.take_along_axis(dist, order, axis=1)
    adj = np.full((n, n), np.inf)
    rows = np.repeat(np.arange(n), K)
    adj[rows, order.reshape(-1)] = nd.reshape(-1)
    adj = np.minimum(adj, adj.T)
    return KnnGraph(order, nd, adj)


def geodesic_distances(graph: KnnGraph) -> np.ndarray:
    """All-pairs shortest-path lengths over the graph; unreachable pairs are ``inf``."""
    sparse = csgraph_from_dense(graph.adjacency, null_value=np.inf)
    G = shortest_path(sparse, method="D", directed=False)
    # both directions are shortest paths; take one so G is exactly symmetric
    return np.minimum(G, G.T)


def _weights_from_distances(g: np.ndarray) -> np.ndarray:
    denom = g.max() + g.min()
    if denom == 0:
        return np.full(g.size, 1.0 / g.size)
    w = 1.0 - g / denom
    return w / w.sum()


@dataclass
class ManifoldModel:
    """Sample set, its kNN graph and geodesic distances, plus projection knobs."""

    samples: np.ndarray
    K: int = DEFAULT_K
    alpha: float = DEFAULT_ALPHA
    epsilon_prime: float = DEFAULT_EPSILON_PRIME
    knn: KnnGraph = field(init=False, repr=False)
    geodesic: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=float)
        if self.alpha < 0:
            raise InvalidArgumentError("alpha must be non-negative")
        if not 0 <= self.epsilon_prime <= 1:
            raise InvalidArgumentError("epsilon_prime must lie in [0, 1]")
        self.knn = build_knn_graph(self.samples, self.K)
        self.geodesic = geodesic_distances(self.knn)

    @property
    def n_samples(self) -> int:
        return self.samples.shape[1]

    def query_geodesic(self, x) -> np.ndarray:
        """Geodesic distances from an out-of-sample point to every sample.

        The point is attached to its K Euclidean nearest samples and paths
        continue through the sample graph.
        """
        x = np.asarray(x, dtype=float).reshape(-1)
        d = np.linalg.norm(self.samples - x[:, None], axis=0)
        near = np.argsort(d, kind="stable")[: self.K]
        return np.min(d[near][:, None] + self.geodesic[near], axis=0)


def embedding_weights(x_index: int, model: ManifoldModel) -> EmbeddingWeights:
    """Convex weights over the K geodesically nearest *other* samples."""
    return _weights_for_row(model.geodesic[x_index], model.K, exclude=x_index)


def _weights_for_row(g: np.ndarray, K: int, exclude: int | None = None) -> EmbeddingWeights:
    g = np.array(g, dtype=float)
    if exclude is not None:
        g[exclude] = np.inf
    reachable = np.flatnonzero(np.isfinite(g))
    if reachable.size < K:
        raise DisconnectedManifoldError(
            f"only {reachable.size} samples are reachable, need K={K}"
        )
    idx = reachable[np.argsort(g[reachable], kind="stable")[:K]]
    return EmbeddingWeights(idx, _weights_from_distances(g[idx]))


def project(x, model: ManifoldModel, x_index: int | None = None) -> np.ndarray:
    """Project ``x`` onto the manifold spanned by ``model.samples``.

    ``x_index`` marks ``x`` as sample ``x_index`` of the model itself; that
    sample is then left out of its own neighbourhood.
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.size != model.samples.shape[0]:
        raise InvalidArgumentError(
            f"point has dimension {x.size}, samples have {model.samples.shape[0]}"
        )
    if x_index is None:
        ew = _weights_for_row(model.query_geodesic(x), model.K)
    else:
        ew = embedding_weights(x_index, model)
    m1 = model.samples[:, ew.neighbor_indices] @ ew.weights
    return m1 + model.epsilon_prime * soft_threshold_matrix(x - m1, model.alpha)


def weight_matrix(model: ManifoldModel) -> np.ndarray:
    """``n x n`` matrix whose column i holds the weights used to rebuild sample i.

    Vectorised equivalent of calling :func:`embedding_weights` for every sample.
    """
    G = np.array(model.geodesic, dtype=float)
    np.fill_diagonal(G, np.inf)
    K = model.K
    reach = np.isfinite(G).sum(axis=1)
    if reach.min() < K:
        i = int(np.argmin(reach))
        raise DisconnectedManifoldError(
            f"sample {i} reaches only {reach[i]} samples, need K={K}"
        )
    idx = np.argsort(G, axis=1, kind="stable")[:, :K]
    g = np.take_along_axis(G, idx, axis=1)
    denom = g.max(axis=1, keepdims=True) + g.min(axis=1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        w = np.where(denom > 0, 1.0 - g / denom, 1.0)
    w = w / w.sum(axis=1, keepdims=True)
    n = model.n_samples
    W = np.zeros((n, n))
    W[idx, np.arange(n)[:, None]] = w
    return W


def project_batch(V, K: int = DEFAULT_K, alpha: float = DEFAULT_ALPHA,
                  epsilon_prime: float = DEFAULT_EPSILON_PRIME,
                  model: ManifoldModel | None = None) -> np.ndarray:
    """Project every column of ``V`` onto the manifold of the remaining columns.

    A prebuilt ``model`` (e.g. one frozen for an outer iteration) may be
    passed; its samples then define the neighbourhoods while the columns of
    ``V`` supply the points being reconstructed.
    """
    V = np.asarray(V, dtype=float)
    if model is None:
        model = ManifoldModel(V, K, alpha, epsilon_prime)
    elif model.samples.shape != V.shape:
        raise InvalidArgumentError("frozen manifold model does not match the batch shape")
    M1 = V @ weight_matrix(model)
    return M1 + model.epsilon_prime * soft_threshold_matrix(V - M1, model.alpha)


def estimate_intrinsic_dim(samples, energy: float = 0.95) -> int:
    """Smallest number of principal components carrying ``energy`` of the variance."""
    X = np.asarray(samples, dtype=float)
    if X.ndim != 2 or X.shape[1] < 2:
        raise InvalidArgumentError("need a matrix with at least 2 sample columns")
    if not 0 < energy <= 1:
        raise InvalidArgumentError("energy must lie in (0, 1]")
    Xc = X - X.mean(axis=1, keepdims=True)
    var = np.linalg.svd(Xc, compute_uv=False) ** 2
    total = var.sum()
    if total <= 0:
        return 0
    frac = np.cumsum(var) / total
    return int(np.searchsorted(frac, energy - 1e-12) + 1)


def reference_projection_matrix(Y, sigma, mu: float) -> np.ndarray:
    """Closed-form projection ``(Y + (sigma + mu) I)^-1 (sigma + 2 mu)``.

    This is the manifold-free stationary point of the cloned-variable penalty.
    It is kept for reference only; the solver uses :func:`project_batch`.
    ``Y`` must be square; ``sigma`` is a scalar or the diagonal of a matrix.
    """
    Y = np.asarray(Y, dtype=float)
    if Y.ndim != 2 or Y.shape[0] != Y.shape[1]:
        raise InvalidArgumentError("reference formula is only defined for square Y")
    S = np.diag(np.broadcast_to(np.asarray(sigma, dtype=float), Y.shape[0]))
    eye = np.eye(Y.shape[0])
    return np.linalg.solve(Y + S + mu * eye, S + 2 * mu * eye)
