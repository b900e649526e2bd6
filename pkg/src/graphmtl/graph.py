"""Task-relatedness graphs: Laplacians, spectra, couplings, and balancing.

The relatedness structure between machines enters every solver through two
objects built here: the graph Laplacian of the task graph, and the coupling
matrix M = I + kappa*L whose inverse and square root define the geometry in
which gradients are averaged.
"""

from dataclasses import dataclass, field

import numpy as np

EIG_CLAMP = 1e-10          # eigenvalues in [-EIG_CLAMP, 0] snap to 0
CONNECTIVITY_RTOL = 1e-8   # connected iff lambda_2 > CONNECTIVITY_RTOL * lambda_max


class GraphValidationError(ValueError):
    """Raised for adjacency matrices that violate the symmetric/nonnegative/zero-diagonal contract."""


class BalancingError(RuntimeError):
    """Raised when Sinkhorn balancing does not reach the target deviation."""

    def __init__(self, deviation: float, iterations: int):
        self.deviation = deviation
        self.iterations = iterations
        super().__init__(
            f"doubly-stochastic balancing did not converge after {iterations} "
            f"iterations (max row-sum deviation {deviation:.3e})"
        )


@dataclass(frozen=True)
class TaskGraph:
    """Immutable task graph with its Laplacian spectrum.

    eigenvalues are sorted ascending with the smallest clamped to exactly 0;
    eigenvectors are the matching orthonormal columns, kept so that coupling
    matrices can share the same spectral basis.
    """

    m: int
    adjacency: np.ndarray
    laplacian: np.ndarray
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray = field(repr=False)
    edge_count: int

    @property
    def lambda_max(self) -> float:
        return float(self.eigenvalues[-1])

    @property
    def connected(self) -> bool:
        if self.m == 1:
            return True
        return float(self.eigenvalues[1]) > CONNECTIVITY_RTOL * self.lambda_max


@dataclass(frozen=True)
class CouplingMatrix:
    """M = I + kappa*L together with its inverse and symmetric square roots."""

    kappa: float
    matrix_m: np.ndarray
    m_inverse: np.ndarray
    m_sqrt: np.ndarray
    m_inv_sqrt: np.ndarray

    @property
    def m(self) -> int:
        return self.matrix_m.shape[0]


def _validate_adjacency(adjacency: np.ndarray) -> np.ndarray:
    a = np.asarray(adjacency, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise GraphValidationError(f"adjacency must be square, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        bad = np.argwhere(~np.isfinite(a))[0]
        raise GraphValidationError(f"adjacency has non-finite entry at {tuple(bad)}")
    asym = np.abs(a - a.T)
    if asym.max(initial=0.0) > 1e-12:
        i, k = np.unravel_index(np.argmax(asym), asym.shape)
        raise GraphValidationError(
            f"adjacency not symmetric: a[{i},{k}]={a[i, k]!r} vs a[{k},{i}]={a[k, i]!r}"
        )
    if a.min(initial=0.0) < 0:
        i, k = np.unravel_index(np.argmin(a), a.shape)
        raise GraphValidationError(f"adjacency has negative entry a[{i},{k}]={a[i, k]!r}")
    diag = np.abs(np.diag(a))
    if diag.max(initial=0.0) > 0:
        i = int(np.argmax(diag))
        raise GraphValidationError(f"adjacency has nonzero diagonal entry a[{i},{i}]={a[i, i]!r}")
    # symmetrize exactly so eigh sees a bitwise-symmetric matrix
    return 0.5 * (a + a.T)


def build_laplacian(adjacency: np.ndarray) -> TaskGraph:
    """Build the task graph for a symmetric nonnegative zero-diagonal adjacency.

    The Laplacian is diag(A 1) - A; its spectrum is computed with a symmetric
    eigensolver, sorted ascending, and the (theoretically zero) smallest
    eigenvalues are clamped to 0. Eigenvalues below -1e-10 indicate a broken
    input and raise.
    """
    a = _validate_adjacency(adjacency)
    m = a.shape[0]
    lap = np.diag(a.sum(axis=1)) - a
    evals, evecs = np.linalg.eigh(lap)
    if evals[0] < -EIG_CLAMP:
        raise GraphValidationError(
            f"Laplacian has eigenvalue {evals[0]:.3e} below the PSD clamp -1e-10"
        )
    # numerical noise of the zero eigenvalue lands on either side of 0
    evals = np.where(np.abs(evals) <= EIG_CLAMP, 0.0, evals)
    edge_count = int(np.count_nonzero(np.triu(a, k=1) > 0))
    return TaskGraph(
        m=m,
        adjacency=a,
        laplacian=lap,
        eigenvalues=evals,
        eigenvectors=evecs,
        edge_count=edge_count,
    )


def build_coupling(graph: TaskGraph, kappa: float) -> CouplingMatrix:
    """Coupling matrix M = I + kappa*L and its inverse / square roots.

    All four matrices share the Laplacian's eigenvectors; only the spectral
    map 1 + kappa*lambda_i changes, so U-space and W-space transforms commute
    exactly in floating point up to the shared basis.
    """
    if kappa < 0:
        raise ValueError(f"kappa must be nonnegative, got {kappa}")
    v = graph.eigenvectors
    mu = 1.0 + kappa * graph.eigenvalues  # >= 1 since lambda_1 = 0

    def spectral(f):
        return (v * f(mu)) @ v.T

    return CouplingMatrix(
        kappa=float(kappa),
        matrix_m=spectral(lambda x: x),
        m_inverse=spectral(lambda x: 1.0 / x),
        m_sqrt=spectral(np.sqrt),
        m_inv_sqrt=spectral(lambda x: 1.0 / np.sqrt(x)),
    )


def rho(graph: TaskGraph, B: float, S: float) -> float:
    """Spectral task-relatedness measure in [0, (m-1)/m].

    rho = (1/m) * sum_{i>=2} 1 / (1 + lambda_i * m * B^2 / S^2). Small values
    mean the tasks effectively pool their samples; (m-1)/m means learning is
    effectively local. S = 0 is the consensus limit and returns 0.
    """
    if B <= 0:
        raise ValueError(f"B must be positive, got {B}")
    if S < 0:
        raise ValueError(f"S must be nonnegative, got {S}")
    if S == 0:
        return 0.0
    lam = graph.eigenvalues[1:]
    ratio = graph.m * B * B / (S * S)
    return float(np.sum(1.0 / (1.0 + lam * ratio)) / graph.m)


def knn_graph(predictors: np.ndarray, k: int) -> np.ndarray:
    """Binary k-nearest-neighbor adjacency over predictor columns.

    Each column is linked to its k nearest other columns by Euclidean
    distance; the result is symmetrized by union (an edge exists if either
    endpoint selects the other). Exact distance ties break toward the lower
    column index.
    """
    p = np.asarray(predictors, dtype=float)
    if not np.all(np.isfinite(p)):
        raise ValueError("predictors must be finite")
    m = p.shape[1]
    if not 0 < k < m:
        raise ValueError(f"k must satisfy 0 < k < m, got k={k}, m={m}")
    sq = np.sum(p * p, axis=0)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (p.T @ p)
    np.fill_diagonal(d2, np.inf)
    adj = np.zeros((m, m))
    for i in range(m):
        # stable sort on distance: equal distances keep ascending-index order
        nearest = np.argsort(d2[i], kind="stable")[:k]
        adj[i, nearest] = 1.0
    adj = np.maximum(adj, adj.T)
    return adj


def _bfs_connected(adjacency: np.ndarray) -> bool:
    m = adjacency.shape[0]
    seen = np.zeros(m, dtype=bool)
    stack = [0]
    seen[0] = True
    while stack:
        i = stack.pop()
        for j in np.nonzero(adjacency[i] > 0)[0]:
            if not seen[j]:
                seen[j] = True
                stack.append(int(j))
    return bool(seen.all())


def make_doubly_stochastic(
    adjacency: np.ndarray,
    tol: float = 1e-10,
    max_iter: int = 10_000,
) -> np.ndarray:
    """Symmetric Sinkhorn balancing D*A*D toward row and column sums of 1.

    Preserves symmetry and the sparsity pattern. Not every pattern admits a
    doubly stochastic matrix (a pendant vertex already rules it out); in that
    case the iteration cannot converge and a BalancingError carrying the final
    deviation is raised.
    """
    a = _validate_adjacency(adjacency)
    if not _bfs_connected(a):
        raise GraphValidationError("make_doubly_stochastic requires a connected graph")
    d = np.ones(a.shape[0])
    deviation = np.inf
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        for it in range(max_iter):
            row = d * (a @ d)  # row sums of diag(d) A diag(d)
            if not np.all(np.isfinite(row)):
                # scalings diverged: the pattern admits no doubly stochastic matrix
                raise BalancingError(deviation, it)
            deviation = float(np.abs(row - 1.0).max())
            if deviation < tol:
                return (a * d[:, None]) * d[None, :]
            d = d / np.sqrt(row)
    raise BalancingError(deviation, max_iter)


def is_doubly_stochastic(matrix: np.ndarray, tol: float = 1e-8) -> bool:
    m = np.asarray(matrix, dtype=float)
    return bool(
        np.abs(m.sum(axis=0) - 1.0).max() <= tol
        and np.abs(m.sum(axis=1) - 1.0).max() <= tol
        and m.min() >= -tol
    )


def save_adjacency(path, adjacency: np.ndarray) -> None:
    """Write an adjacency matrix as whitespace-separated rows."""
    np.savetxt(path, np.asarray(adjacency, dtype=float), fmt="%.17g")


def load_adjacency(path) -> np.ndarray:
    """Read an adjacency matrix written by save_adjacency."""
    a = np.loadtxt(path, dtype=float)
    if a.ndim == 0:
        a = a.reshape(1, 1)
    elif a.ndim == 1:
        a = a.reshape(1, -1)
    return a
