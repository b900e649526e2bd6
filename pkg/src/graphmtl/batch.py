"""Batch ERM solvers over the task graph.

Three families, all built from weighted averaging plus a local gradient or
prox computation:

* full gradient descent (neighbor-only communication),
* "solve the regularizer" (BSR): gradient averaging through M^{-1} with one
  all-to-all exchange per round,
* "optimize the loss" (BOL): linearize the regularizer, solve a local prox
  subproblem per machine, neighbor-only communication.

Accelerated variants run the two-line momentum recursion of the accelerated
proximal gradient method in U-space (BSR) or W-space (BOL).
"""

from dataclasses import dataclass, field

import numpy as np

from .graph import CouplingMatrix, TaskGraph
from .losses import LossConstants, LossModel, grad_matrix, local_prox
from .objective import Hyperparams, erm_objective, from_u_space, grad_regularizer
from .proxgrad import accelerated_proxgrad

FULL_GD = "full_gd"
BSR = "bsr"
BOL_PROX = "bol_prox"


@dataclass(frozen=True)
class CombineWeights:
    """Averaging weights mu[k, i] applied to machine k's message in machine i's update."""

    mu: np.ndarray
    scheme: str
    alpha: float


@dataclass
class RunLog:
    """Per-round record kept by every solver run."""

    objectives: list = field(default_factory=list)
    vectors_per_machine: float = 0.0
    samples_per_machine_per_round: int = 0

    @property
    def rounds(self) -> int:
        return len(self.objectives)


def combine_weights(
    scheme: str,
    alpha: float,
    hp: Hyperparams,
    graph: TaskGraph | None = None,
    coupling: CouplingMatrix | None = None,
) -> CombineWeights:
    """Averaging weights for the given scheme.

    full_gd / bol_prox: diagonal 1 - alpha*(eta + tau*deg_i), off-diagonal
    alpha*tau*a_ik (column sums are 1 - alpha*eta). bsr: alpha * M^{-1}.
    """
    if alpha <= 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    if scheme in (FULL_GD, BOL_PROX):
        if graph is None:
            raise ValueError(f"{scheme} weights need the task graph")
        mu = alpha * hp.tau * graph.adjacency
        np.fill_diagonal(mu, 1.0 - alpha * (hp.eta + hp.tau * graph.adjacency.sum(axis=1)))
        return CombineWeights(mu=mu, scheme=scheme, alpha=alpha)
    if scheme == BSR:
        if coupling is None:
            raise ValueError("bsr weights need the coupling matrix")
        return CombineWeights(mu=alpha * coupling.m_inverse, scheme=scheme, alpha=alpha)
    raise ValueError(f"unknown weight scheme {scheme!r}")


def gd_full_step(model: LossModel, W: np.ndarray, weights: CombineWeights, datasets) -> np.ndarray:
    """One full gradient-descent round: mix iterates, step on local gradients."""
    if weights.scheme != FULL_GD:
        raise ValueError(f"gd_full_step needs full_gd weights, got {weights.scheme}")
    return W @ weights.mu - weights.alpha * grad_matrix(model, W, datasets)


def bsr_step(
    model: LossModel,
    W: np.ndarray,
    alpha: float,
    hp: Hyperparams,
    coupling: CouplingMatrix,
    datasets,
) -> np.ndarray:
    """One BSR round: W' = (1 - alpha*eta) W - alpha * G(W) M^{-1}."""
    if alpha <= 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    return (1.0 - alpha * hp.eta) * W - alpha * (grad_matrix(model, W, datasets) @ coupling.m_inverse)


def bol_step(
    model: LossModel,
    W: np.ndarray,
    alpha: float,
    hp: Hyperparams,
    graph: TaskGraph,
    datasets,
    prox_tol: float = 1e-10,
) -> np.ndarray:
    """One BOL round: each machine proxes its local loss around the mixed point."""
    if alpha <= 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    centers = W - graph.m * alpha * grad_regularizer(W, hp, graph)
    cols = [
        local_prox(model, centers[:, i], 1.0 / alpha, datasets[i], tol=prox_tol)
        for i in range(graph.m)
    ]
    return np.stack(cols, axis=1)


def default_alpha_gd(consts: LossConstants, hp: Hyperparams, graph: TaskGraph) -> float:
    """Largest monotone-descent stepsize for the full-GD update."""
    return 1.0 / (consts.beta_f + hp.eta + hp.tau * graph.lambda_max)


def default_alpha_bsr(consts: LossConstants, hp: Hyperparams) -> float:
    """The printed BSR stepsize 1/(beta_F + eta)."""
    return 1.0 / (consts.beta_f + hp.eta)


def default_alpha_bol(hp: Hyperparams, graph: TaskGraph) -> float:
    """BOL stepsize from the regularizer smoothness: 1/(eta + tau*lambda_max)."""
    return 1.0 / (hp.eta + hp.tau * graph.lambda_max)


def _should_stop(obj: float, target_objective, rel_tol: float) -> bool:
    if target_objective is None:
        return False
    return obj - target_objective <= rel_tol * max(abs(target_objective), 1e-300)


def run_gd(
    model: LossModel,
    datasets,
    hp: Hyperparams,
    graph: TaskGraph,
    T: int,
    alpha: float,
    W0: np.ndarray | None = None,
    on_round=None,
    target_objective=None,
    rel_tol: float = 1e-6,
):
    """Run up to T full-GD rounds; stops early at the target objective if given."""
    weights = combine_weights(FULL_GD, alpha, hp, graph=graph)
    W = np.zeros((datasets[0].d, graph.m)) if W0 is None else np.array(W0, dtype=float)
    log = RunLog(
        vectors_per_machine=graph.edge_count / graph.m,
        samples_per_machine_per_round=datasets[0].n,
    )
    for t in range(1, T + 1):
        W = gd_full_step(model, W, weights, datasets)
        obj = erm_objective(model, W, datasets, hp, graph)
        log.objectives.append(obj)
        if on_round is not None:
            on_round(t, W)
        if _should_stop(obj, target_objective, rel_tol):
            break
    return W, log


def run_bsr(
    model: LossModel,
    datasets,
    hp: Hyperparams,
    coupling: CouplingMatrix,
    graph: TaskGraph,
    T: int,
    alpha: float,
    W0: np.ndarray | None = None,
    on_round=None,
    target_objective=None,
    rel_tol: float = 1e-6,
):
    W = np.zeros((datasets[0].d, graph.m)) if W0 is None else np.array(W0, dtype=float)
    log = RunLog(vectors_per_machine=float(graph.m), samples_per_machine_per_round=datasets[0].n)
    for t in range(1, T + 1):
        W = bsr_step(model, W, alpha, hp, coupling, datasets)
        obj = erm_objective(model, W, datasets, hp, graph)
        log.objectives.append(obj)
        if on_round is not None:
            on_round(t, W)
        if _should_stop(obj, target_objective, rel_tol):
            break
    return W, log


def run_bol(
    model: LossModel,
    datasets,
    hp: Hyperparams,
    graph: TaskGraph,
    T: int,
    alpha: float,
    prox_tol: float = 1e-10,
    W0: np.ndarray | None = None,
    on_round=None,
    target_objective=None,
    rel_tol: float = 1e-6,
):
    W = np.zeros((datasets[0].d, graph.m)) if W0 is None else np.array(W0, dtype=float)
    log = RunLog(
        vectors_per_machine=graph.edge_count / graph.m,
        samples_per_machine_per_round=datasets[0].n,
    )
    for t in range(1, T + 1):
        W = bol_step(model, W, alpha, hp, graph, datasets, prox_tol=prox_tol)
        obj = erm_objective(model, W, datasets, hp, graph)
        log.objectives.append(obj)
        if on_round is not None:
            on_round(t, W)
        if _should_stop(obj, target_objective, rel_tol):
            break
    return W, log


def run_accelerated_bsr(
    model: LossModel,
    datasets,
    hp: Hyperparams,
    coupling: CouplingMatrix,
    graph: TaskGraph,
    T: int,
    consts: LossConstants,
    W0: np.ndarray | None = None,
    on_round=None,
    target_objective=None,
    rel_tol: float = 1e-6,
):
    """Accelerated BSR: momentum recursion in U-space.

    g(U) = Fhat(U M^{-1/2}) with smoothness (beta_F + eta)/m, h the ridge term
    (eta/2m)||U||^2 whose prox is a pure rescaling, strong convexity eta/m.
    """
    m = graph.m
    beta = (consts.beta_f + hp.eta) / m
    mu_sc = hp.eta / m
    W_init = np.zeros((datasets[0].d, m)) if W0 is None else np.array(W0, dtype=float)
    U0 = W_init @ coupling.m_sqrt
    log = RunLog(vectors_per_machine=float(m), samples_per_machine_per_round=datasets[0].n)
    state = {"W": W_init, "stop": False}

    def g_grad(U):
        W = from_u_space(U, coupling)
        return grad_matrix(model, W, datasets) @ coupling.m_inv_sqrt / m

    def h_prox(X, b):
        return X * (b / (b + hp.eta / m))

    def cb(t, U):
        W = from_u_space(U, coupling)
        state["W"] = W
        obj = erm_objective(model, W, datasets, hp, graph)
        log.objectives.append(obj)
        if on_round is not None:
            on_round(t, W)
        if _should_stop(obj, target_objective, rel_tol):
            state["stop"] = True

    accelerated_proxgrad(g_grad, h_prox, beta, mu_sc, U0, T, callback=cb,
                         stop=lambda t, x: state["stop"])
    return state["W"], log


def run_accelerated_bol(
    model: LossModel,
    datasets,
    hp: Hyperparams,
    graph: TaskGraph,
    T: int,
    prox_tol0: float | None = None,
    W0: np.ndarray | None = None,
    on_round=None,
    target_objective=None,
    rel_tol: float = 1e-6,
):
    """Accelerated BOL: momentum recursion in W-space.

    g = R(W) (smoothness beta_R = (eta + tau*lambda_max)/m, strong convexity
    eta/m), h = Fhat(W) whose prox decouples into per-machine local prox
    solves. Prox tolerances tighten geometrically, tol_t = tol0 * 0.5^t,
    floored at 1e-14.
    """
    m = graph.m
    beta = (hp.eta + hp.tau * graph.lambda_max) / m
    mu_sc = hp.eta / m
    W_init = np.zeros((datasets[0].d, m)) if W0 is None else np.array(W0, dtype=float)
    if prox_tol0 is None:
        prox_tol0 = 1e-10 * max(1.0, abs(erm_objective(model, W_init, datasets, hp, graph)))
    log = RunLog(
        vectors_per_machine=graph.edge_count / m,
        samples_per_machine_per_round=datasets[0].n,
    )
    state = {"W": W_init, "stop": False, "t": 0}

    def h_prox(X, b):
        tol = max(prox_tol0 * 0.5 ** state["t"], 1e-14)
        cols = [local_prox(model, X[:, i], b * m, datasets[i], tol=tol) for i in range(m)]
        return np.stack(cols, axis=1)

    def cb(t, W):
        state["W"] = W
        state["t"] = t
        obj = erm_objective(model, W, datasets, hp, graph)
        log.objectives.append(obj)
        if on_round is not None:
            on_round(t, W)
        if _should_stop(obj, target_objective, rel_tol):
            state["stop"] = True

    accelerated_proxgrad(
        lambda W: grad_regularizer(W, hp, graph),
        h_prox,
        beta,
        mu_sc,
        W_init,
        T,
        callback=cb,
        stop=lambda t, x: state["stop"],
    )
    return state["W"], log
