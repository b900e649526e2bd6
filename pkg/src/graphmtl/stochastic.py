"""Stochastic solvers on fresh or resampled minibatches.

SSR is minibatch SGD preconditioned by M^{-1}; AC-SA is its accelerated
three-sequence form with horizon-dependent stepsizes; SOL replaces the BOL
local dataset with a fresh minibatch; minibatch-prox wraps an inner
accelerated solver around regularized subproblems with scheduled tolerances
and iterate averaging.
"""

from dataclasses import dataclass, field

import numpy as np

from .graph import CouplingMatrix
from .losses import LossModel, TaskData, empirical_grad, local_prox
from .objective import Hyperparams, grad_regularizer
from .proxgrad import accelerated_proxgrad

FRESH = "fresh"
RESAMPLE = "resample_train"


class StreamExhaustedError(RuntimeError):
    """Fresh-sample budget exceeded."""


class SampleStream:
    """Per-machine minibatch source with independent deterministic generators.

    Machine i's generator is seeded from (seed, i), so streams never couple
    across machines and identical (seed, config) reproduce identical draws.
    Fresh mode samples from a generating distribution and never reuses a
    sample; resample mode draws uniformly with replacement from a fixed
    training set.
    """

    def __init__(self, mode: str, m: int, seed: int, *, sampler=None, train=None, budget=None):
        if mode not in (FRESH, RESAMPLE):
            raise ValueError(f"unknown stream mode {mode!r}")
        if mode == FRESH and sampler is None:
            raise ValueError("fresh mode needs a sampler(machine, b, rng) -> TaskData")
        if mode == RESAMPLE and train is None:
            raise ValueError("resample mode needs the training datasets")
        self.mode = mode
        self.m = m
        self.seed = seed
        self.budget = budget
        self._sampler = sampler
        self._train = train
        seed_words = [int(s) for s in np.atleast_1d(seed)]
        self._rngs = [np.random.default_rng(seed_words + [i]) for i in range(m)]
        self.counts = np.zeros(m, dtype=int)

    def draw(self, machine: int, b: int) -> TaskData:
        if self.budget is not None and self.counts[machine] + b > self.budget:
            raise StreamExhaustedError(
                f"machine {machine} would exceed budget {self.budget} "
                f"({self.counts[machine]} drawn, {b} requested)"
            )
        rng = self._rngs[machine]
        if self.mode == FRESH:
            batch = self._sampler(machine, b, rng)
        else:
            data = self._train[machine]
            idx = rng.integers(0, data.n, size=b)
            batch = TaskData(x=data.x[idx], y=data.y[idx])
        self.counts[machine] += b
        return batch

    def draw_all(self, b: int) -> list:
        return [self.draw(i, b) for i in range(self.m)]


def minibatch_grad_matrix(model: LossModel, W: np.ndarray, batches) -> np.ndarray:
    """Column k = (1/(m*b)) sum_j grad l(w_k, z_kj) over machine k's minibatch."""
    m = len(batches)
    return np.stack(
        [empirical_grad(model, W[:, k], batches[k]) for k in range(m)], axis=1
    ) / m


def ssr_step(
    model: LossModel,
    W: np.ndarray,
    alpha: float,
    coupling: CouplingMatrix,
    stream: SampleStream,
    b: int,
) -> np.ndarray:
    """One preconditioned minibatch SGD round: W' = W - alpha * Ghat M^{-1}."""
    batches = stream.draw_all(b)
    return W - alpha * (minibatch_grad_matrix(model, W, batches) @ coupling.m_inverse)


def run_ssr(
    model: LossModel,
    coupling: CouplingMatrix,
    stream: SampleStream,
    d: int,
    T: int,
    b: int,
    alpha: float,
    W0: np.ndarray | None = None,
    on_round=None,
):
    W = np.zeros((d, coupling.m)) if W0 is None else np.array(W0, dtype=float)
    for t in range(1, T + 1):
        W = ssr_step(model, W, alpha, coupling, stream, b)
        if on_round is not None:
            on_round(t, W)
    return W


def sigma_bound(L: float, m: int, rho_val: float) -> float:
    """Variance bound for the single-combined-sample U-space gradient:
    sigma^2 = (4 L^2 / m^2) * (1 + m * rho)."""
    if L <= 0 or m <= 0 or rho_val < 0:
        raise ValueError("sigma_bound needs L > 0, m > 0, rho >= 0")
    return 4.0 * L * L / (m * m) * (1.0 + m * rho_val)


def acsa_stepsize_terms(T: int, m: int, beta_f: float, B: float, sigma: float) -> tuple[float, float]:
    """The two arguments of the stepsize min: (m/(2*beta_F), sqrt(12 m B^2)/((T+2)^{3/2} sigma))."""
    det = m / (2.0 * beta_f)
    sto = np.sqrt(12.0 * m * B * B) / ((T + 2.0) ** 1.5 * sigma) if sigma > 0 else np.inf
    return det, float(sto)


@dataclass(frozen=True)
class AcsaState:
    """Snapshot of the three-sequence recursion after one iteration."""

    w: np.ndarray
    w_md: np.ndarray
    w_ag: np.ndarray
    theta: float
    alpha: float


def acsa_run(
    model: LossModel,
    coupling: CouplingMatrix,
    stream: SampleStream,
    d: int,
    T: int,
    b: int,
    B: float,
    sigma: float,
    beta_f: float,
    space: str = "w",
    stepsize_scale: float = 1.0,
    on_round=None,
    record_states: bool = False,
):
    """Accelerated minibatch SGD with the three-sequence recursion.

    Horizon T is fixed in advance because the stepsizes
    theta^{t+1} = (t+1)/2 and alpha^{t+1} = ((t+1)/2) * min(...) depend on
    it; initialization is zero. Runs either in W-space (using M^{-1}) or the
    equivalent U-space form; returns the aggregate iterate. stepsize_scale
    multiplies the base stepsize (tunable like the batch solvers' stepsizes).
    """
    if space not in ("w", "u"):
        raise ValueError(f"space must be 'w' or 'u', got {space!r}")
    m = coupling.m
    base = min(acsa_stepsize_terms(T, m, beta_f, B, sigma)) * stepsize_scale
    states = []
    if space == "w":
        W = np.zeros((d, m))
        W_ag = W.copy()
        for t in range(T):
            th_inv = 2.0 / (t + 1.0)
            alpha = (t + 1.0) / 2.0 * base
            W_md = th_inv * W + (1.0 - th_inv) * W_ag
            batches = stream.draw_all(b)
            W = W - alpha * (minibatch_grad_matrix(model, W_md, batches) @ coupling.m_inverse)
            W_ag = th_inv * W + (1.0 - th_inv) * W_ag
            if record_states:
                states.append(AcsaState(W.copy(), W_md, W_ag.copy(), (t + 1.0) / 2.0, alpha))
            if on_round is not None:
                on_round(t + 1, W_ag)
        return (W_ag, states) if record_states else W_ag

    U = np.zeros((d, m))
    U_ag = U.copy()
    for t in range(T):
        th_inv = 2.0 / (t + 1.0)
        alpha = (t + 1.0) / 2.0 * base
        U_md = th_inv * U + (1.0 - th_inv) * U_ag
        batches = stream.draw_all(b)
        G = minibatch_grad_matrix(model, U_md @ coupling.m_inv_sqrt, batches)
        U = U - alpha * (G @ coupling.m_inv_sqrt)
        U_ag = th_inv * U + (1.0 - th_inv) * U_ag
        if record_states:
            states.append(
                AcsaState(
                    U @ coupling.m_inv_sqrt,
                    U_md @ coupling.m_inv_sqrt,
                    U_ag @ coupling.m_inv_sqrt,
                    (t + 1.0) / 2.0,
                    alpha,
                )
            )
        if on_round is not None:
            on_round(t + 1, U_ag @ coupling.m_inv_sqrt)
    W_ag = U_ag @ coupling.m_inv_sqrt
    return (W_ag, states) if record_states else W_ag


def sol_step(
    model: LossModel,
    W: np.ndarray,
    alpha: float,
    hp: Hyperparams,
    graph,
    stream: SampleStream,
    b: int,
    prox_tol: float = 1e-10,
) -> np.ndarray:
    """One stochastic-prox round: BOL's update with fresh minibatches in the prox."""
    if alpha <= 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    centers = W - graph.m * alpha * grad_regularizer(W, hp, graph)
    cols = []
    for i in range(graph.m):
        batch = stream.draw(i, b)
        cols.append(local_prox(model, centers[:, i], 1.0 / alpha, batch, tol=prox_tol))
    return np.stack(cols, axis=1)


def run_sol(
    model: LossModel,
    hp: Hyperparams,
    graph,
    stream: SampleStream,
    d: int,
    T: int,
    b: int,
    alpha: float,
    prox_tol: float = 1e-10,
    W0: np.ndarray | None = None,
    on_round=None,
):
    W = np.zeros((d, graph.m)) if W0 is None else np.array(W0, dtype=float)
    for t in range(1, T + 1):
        W = sol_step(model, W, alpha, hp, graph, stream, b, prox_tol=prox_tol)
        if on_round is not None:
            on_round(t, W)
    return W


def run_accelerated_sol(
    model: LossModel,
    hp: Hyperparams,
    graph,
    stream: SampleStream,
    d: int,
    T: int,
    b: int,
    prox_tol0: float = 1e-10,
    on_round=None,
):
    """Accelerated SOL: the accelerated-BOL recursion with fresh minibatches in the prox."""
    m = graph.m
    beta = (hp.eta + hp.tau * graph.lambda_max) / m
    mu_sc = hp.eta / m
    state = {"t": 0}

    def h_prox(X, bb):
        tol = max(prox_tol0 * 0.5 ** state["t"], 1e-14)
        cols = []
        for i in range(m):
            batch = stream.draw(i, b)
            cols.append(local_prox(model, X[:, i], bb * m, batch, tol=tol))
        return np.stack(cols, axis=1)

    def cb(t, W):
        state["t"] = t
        if on_round is not None:
            on_round(t, W)

    return accelerated_proxgrad(
        lambda W: grad_regularizer(W, hp, graph),
        h_prox,
        beta,
        mu_sc,
        np.zeros((d, m)),
        T,
        callback=cb,
    )


@dataclass
class MinibatchProxLog:
    inner_iterations: list = field(default_factory=list)
    certified_suboptimality: list = field(default_factory=list)


class InnerSolveError(RuntimeError):
    """Minibatch-prox inner solver missed its scheduled tolerance."""


def minibatch_prox_run(
    model: LossModel,
    coupling: CouplingMatrix,
    B: float,
    S: float,
    L: float,
    stream: SampleStream,
    d: int,
    T: int,
    b: int,
    gamma: float | None = None,
    zeta_schedule=None,
    inner_cap: int = 50_000,
    on_round=None,
):
    """Distributed minibatch-prox with inexact inner solves and iterate averaging.

    Requires the coupling built with kappa = m B^2 / S^2. Each outer step
    minimizes (gamma/2) tr((W - W^t) M (W - W^t)^T) + Fhat^{t+1}(W) over a
    fresh minibatch to the scheduled suboptimality, certified through the
    gamma-strong convexity of the subproblem; the output averages the outer
    iterates W^1..W^T.
    """
    m = coupling.m
    kappa_expected = m * B * B / (S * S)
    if not np.isclose(coupling.kappa, kappa_expected, rtol=1e-9):
        raise ValueError(
            f"coupling kappa {coupling.kappa} != m B^2/S^2 = {kappa_expected}"
        )
    one_plus_mrho = float(np.trace(coupling.m_inverse))
    if gamma is None:
        gamma = 2.0 * np.sqrt(T / b) * L * np.sqrt(one_plus_mrho) / (m ** 1.5 * B)
    if zeta_schedule is None:
        ratio = T / b
        zeta_scale = (
            min(ratio ** 0.5, ratio ** 1.5) * L * B * one_plus_mrho ** 1.5 / m ** 2.5
        )
        # tolerance tightens with the cube of the 1-based target-iterate index
        zeta_schedule = lambda t: zeta_scale / (t + 1.0) ** 3

    beta_inner = gamma * float(np.linalg.eigvalsh(coupling.matrix_m)[-1])
    log = MinibatchProxLog()
    W = np.zeros((d, m))
    W_bar = np.zeros((d, m))
    for t in range(T):
        zeta = zeta_schedule(t)
        batches = stream.draw_all(b)
        W_prev = W

        def g_grad(X):
            return gamma * ((X - W_prev) @ coupling.matrix_m)

        def subgrad_norm_sq(X):
            g = g_grad(X) + minibatch_grad_matrix(model, X, batches)
            return float(np.sum(g * g))

        def h_prox(X, bb):
            cols = [
                local_prox(model, X[:, i], bb * m, batches[i], tol=max(zeta * 1e-3, 1e-15))
                for i in range(m)
            ]
            return np.stack(cols, axis=1)

        W_inner = W_prev
        used = 0
        chunk = 25
        certified = subgrad_norm_sq(W_inner) / (2.0 * gamma)
        while certified > zeta:
            if used >= inner_cap:
                raise InnerSolveError(
                    f"outer step {t}: certified suboptimality {certified:.3e} > zeta {zeta:.3e}"
                )
            W_inner = accelerated_proxgrad(
                g_grad, h_prox, beta_inner, gamma, W_inner, chunk
            )
            used += chunk
            certified = subgrad_norm_sq(W_inner) / (2.0 * gamma)
        W = W_inner
        W_bar += W
        log.inner_iterations.append(used)
        log.certified_suboptimality.append(certified)
        if on_round is not None:
            on_round(t + 1, W_bar / (t + 1.0), used)
    return W_bar / T, log
