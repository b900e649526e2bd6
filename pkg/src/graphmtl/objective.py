"""The regularized ERM objective, its gradients, and an exact oracle minimizer.

Objective over the predictor matrix W (columns are per-machine predictors):

    (1/m) sum_i Fhat_i(w_i)  +  (eta/2m) ||W||_F^2  +  (tau/2m) tr(W L W^T)

The change of variable U = W M^{1/2} with M = I + (tau/eta) L turns the
graph-coupled regularizer into a plain ridge term in U.
"""

from dataclasses import dataclass

import numpy as np

from .graph import CouplingMatrix, TaskGraph, build_coupling, rho
from .losses import LossModel, SQUARED, empirical_loss, grad_matrix
from .proxgrad import accelerated_proxgrad


@dataclass(frozen=True)
class Hyperparams:
    """Regularization strengths plus the norm/dissimilarity budgets behind them."""

    eta: float
    tau: float
    B: float = 1.0
    S: float = 1.0

    def __post_init__(self):
        if self.eta <= 0:
            raise ValueError(f"eta must be positive, got {self.eta}")
        if self.tau < 0:
            raise ValueError(f"tau must be nonnegative, got {self.tau}")
        if not np.isfinite(self.tau / self.eta):
            raise ValueError("kappa = tau/eta must be finite")

    @property
    def kappa(self) -> float:
        return self.tau / self.eta


class OracleConvergenceError(RuntimeError):
    """Conjugate gradient or the iterative oracle exceeded its iteration cap."""


def erm_objective(model: LossModel, W: np.ndarray, datasets, hp: Hyperparams, graph: TaskGraph) -> float:
    W = np.asarray(W, dtype=float)
    m = graph.m
    if W.shape[1] != m or len(datasets) != m:
        raise ValueError(f"W has {W.shape[1]} columns, graph/datasets expect {m}")
    fhat = sum(empirical_loss(model, W[:, i], d) for i, d in enumerate(datasets)) / m
    reg = 0.5 * hp.eta / m * float(np.sum(W * W))
    reg += 0.5 * hp.tau / m * float(np.sum((W @ graph.laplacian) * W))
    return fhat + reg


def grad_regularizer(W: np.ndarray, hp: Hyperparams, graph: TaskGraph) -> np.ndarray:
    """Gradient of the regularizer: (1/m) W (eta*I + tau*L)."""
    W = np.asarray(W, dtype=float)
    return (hp.eta * W + hp.tau * (W @ graph.laplacian)) / graph.m


def full_gradient(model: LossModel, W: np.ndarray, datasets, hp: Hyperparams, graph: TaskGraph) -> np.ndarray:
    """Gradient of the full ERM objective (loss plus regularizer)."""
    return grad_matrix(model, W, datasets) / graph.m + grad_regularizer(W, hp, graph)


def to_u_space(W: np.ndarray, coupling: CouplingMatrix) -> np.ndarray:
    return np.asarray(W, dtype=float) @ coupling.m_sqrt


def from_u_space(U: np.ndarray, coupling: CouplingMatrix) -> np.ndarray:
    return np.asarray(U, dtype=float) @ coupling.m_inv_sqrt


def population_loss(model: LossModel, W: np.ndarray, test_datasets) -> float:
    """Monte Carlo estimate of the population objective from held-out data."""
    W = np.asarray(W, dtype=float)
    if any(d.n == 0 for d in test_datasets):
        raise ValueError("population_loss requires nonempty test sets")
    return sum(empirical_loss(model, W[:, i], d) for i, d in enumerate(test_datasets)) / len(test_datasets)


def population_loss_se(model: LossModel, W: np.ndarray, test_datasets) -> tuple[float, float]:
    """Population-loss estimate with its standard error.

    The estimator averages per-machine test means, so its variance is
    (1/m^2) * sum_i s_i^2 / n_i with s_i the per-machine sample deviation.
    """
    W = np.asarray(W, dtype=float)
    m = len(test_datasets)
    means = np.empty(m)
    var_terms = np.empty(m)
    for i, d in enumerate(test_datasets):
        t = d.x @ W[:, i]
        if model.kind == SQUARED:
            vals = 0.5 * (t - d.y) ** 2
        else:
            vals = np.logaddexp(0.0, -d.y * t)
        means[i] = vals.mean()
        var_terms[i] = vals.var(ddof=1) / d.n
    return float(means.mean()), float(np.sqrt(var_terms.sum()) / m)


def corollary2_params(L: float, B: float, S: float, m: int, n: int, graph: TaskGraph) -> Hyperparams:
    """Theory-driven (eta, tau) from the Lipschitz/norm/dissimilarity budgets.

    eta = 2LB*sqrt((1 + m*rho(B,S)) / (mn)) / B^2 and tau uses the same
    numerator over S^2/m, so tau/eta = m B^2 / S^2 always.
    """
    if min(L, B, S, m, n) <= 0:
        raise ValueError("corollary2_params requires positive inputs")
    numer = 2.0 * L * B * np.sqrt((1.0 + m * rho(graph, B, S)) / (m * n))
    return Hyperparams(eta=float(numer / B**2), tau=float(numer / (S**2 / m)), B=B, S=S)


def centralized_oracle(
    model: LossModel,
    datasets,
    hp: Hyperparams,
    graph: TaskGraph,
    tol: float = 1e-10,
    max_iter: int | None = None,
) -> np.ndarray:
    """Exact minimizer of the regularized ERM objective.

    Squared loss: conjugate gradient on the normal-equations operator
    W -> (1/m)(S(W) + W(eta*I + tau*L)) with S(W) applying the per-machine
    second moments, run until the residual (= the objective gradient) drops
    below tol * (1 + ||rhs||_F). General convex loss: accelerated gradient in
    U-space to gradient norm <= tol.
    """
    m = graph.m
    d = datasets[0].d
    reg = hp.eta * np.eye(m) + hp.tau * graph.laplacian
    if model.kind == SQUARED:
        moments = [ds.x.T @ ds.x / ds.n for ds in datasets]
        rhs = np.stack([ds.x.T @ ds.y / ds.n for ds in datasets], axis=1) / m

        def apply(W):
            sw = np.stack([moments[i] @ W[:, i] for i in range(m)], axis=1)
            return (sw + W @ reg) / m

        return _conjugate_gradient(apply, rhs, tol, max_iter or 20 * d * m)

    coupling = build_coupling(graph, hp.kappa)
    beta_data = max(max(_beta_of(model, ds) for ds in datasets), 1e-12)
    beta_u = (beta_data + hp.eta) / m
    mu_u = hp.eta / m

    def g_grad(U):
        W = from_u_space(U, coupling)
        return (grad_matrix(model, W, datasets) @ coupling.m_inv_sqrt + hp.eta * U) / m

    U = np.zeros((d, m))
    cap = max_iter or 200_000
    chunk = 100
    for _ in range(max(1, cap // chunk)):
        g = g_grad(U)
        if np.linalg.norm(g) <= tol:
            return from_u_space(U, coupling)
        U = accelerated_proxgrad(g_grad, lambda x, b: x, beta_u, mu_u, U, chunk)
    raise OracleConvergenceError(
        f"iterative oracle gradient norm {np.linalg.norm(g_grad(U)):.3e} > tol {tol:.3e}"
    )


def _beta_of(model: LossModel, ds) -> float:
    from .losses import second_moment_top_eigenvalue

    lam = second_moment_top_eigenvalue(ds.x)
    return lam / 4.0 if model.kind != SQUARED else lam


def _conjugate_gradient(apply, rhs, tol, max_iter):
    x = np.zeros_like(rhs)
    r = rhs - apply(x)
    p = r.copy()
    rr = float(np.sum(r * r))
    stop = tol * (1.0 + float(np.linalg.norm(rhs)))
    for _ in range(max_iter):
        if np.sqrt(rr) <= stop:
            return x
        ap = apply(p)
        alpha = rr / float(np.sum(p * ap))
        x = x + alpha * p
        r = r - alpha * ap
        rr_new = float(np.sum(r * r))
        p = r + (rr_new / rr) * p
        rr = rr_new
    if np.sqrt(rr) <= stop:
        return x
    raise OracleConvergenceError(
        f"CG residual {np.sqrt(rr):.3e} > {stop:.3e} after {max_iter} iterations"
    )
