"""Bounded-delay asynchronous variant of the BOL prox-gradient update.

Machines prox against their local loss around a point mixed from stale
neighbor iterates; delays are bounded by Gamma and the affinity matrix must
be doubly stochastic for the linear contraction toward the exact ERM
solution to hold.
"""

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .graph import TaskGraph, is_doubly_stochastic
from .losses import LossModel, local_prox
from .objective import Hyperparams

FIXED = "fixed"
UNIFORM_RANDOM = "uniform_random"
ADVERSARIAL_MAX = "adversarial_max"
_MODES = (FIXED, UNIFORM_RANDOM, ADVERSARIAL_MAX)
_FIXED_STREAM_TAG = 7919  # distinguishes the fixed-mode draw from per-step draws


@dataclass(frozen=True)
class DelaySchedule:
    """Per-edge, per-step staleness generator, deterministic in (seed, edge, t).

    fixed: one delay per directed edge drawn uniformly in [0, Gamma] at
    construction, held for all steps. uniform_random: fresh uniform draw in
    [0, min(Gamma, t)] each step. adversarial_max: always the oldest
    admissible iterate. All modes clamp to min(Gamma, t) so no read precedes
    iteration 0.
    """

    gamma_max: int
    mode: str
    seed: int = 0

    def __post_init__(self):
        if self.gamma_max < 0:
            raise ValueError(f"gamma_max must be >= 0, got {self.gamma_max}")
        if self.mode not in _MODES:
            raise ValueError(f"unknown delay mode {self.mode!r}")

    def delays(self, t: int, m: int) -> np.ndarray:
        """Delay matrix D[i, k] = d_ik(t) for reading machine k's iterate at machine i."""
        cap = min(self.gamma_max, t)
        if self.mode == ADVERSARIAL_MAX:
            return np.full((m, m), cap, dtype=int)
        if self.mode == FIXED:
            rng = np.random.default_rng([self.seed, _FIXED_STREAM_TAG])
            base = rng.integers(0, self.gamma_max + 1, size=(m, m))
            return np.minimum(base, cap)
        rng = np.random.default_rng([self.seed, t])
        return rng.integers(0, cap + 1, size=(m, m))


class IterateHistory:
    """Ring buffer of the last capacity predictor matrices, absolute-indexed."""

    def __init__(self, capacity: int):
        self._buf = deque(maxlen=capacity)
        self._next = 0

    def append(self, W: np.ndarray):
        self._buf.append(np.array(W, dtype=float))
        self._next += 1

    @property
    def latest_step(self) -> int:
        return self._next - 1

    def __getitem__(self, step: int) -> np.ndarray:
        offset = step - (self._next - len(self._buf))
        if offset < 0:
            raise IndexError(f"step {step} evicted from the delay history")
        if step > self.latest_step:
            raise IndexError(f"step {step} not yet recorded")
        return self._buf[offset]


def delayed_grad_regularizer(
    history,
    t: int,
    hp: Hyperparams,
    graph: TaskGraph,
    schedule: DelaySchedule,
) -> np.ndarray:
    """Regularizer gradient with stale neighbor reads.

    Column i is (1/m)(eta*w_i^t + tau*sum_k a_ik (w_i^t - w_k^{t - d_ik(t)})).
    """
    m = graph.m
    W_t = np.asarray(history[t], dtype=float)
    D = schedule.delays(t, m)
    a = graph.adjacency
    out = np.empty_like(W_t)
    for i in range(m):
        acc = hp.eta * W_t[:, i]
        for k in np.nonzero(a[i] > 0)[0]:
            stale = np.asarray(history[t - int(D[i, k])], dtype=float)[:, k]
            acc = acc + hp.tau * a[i, k] * (W_t[:, i] - stale)
        out[:, i] = acc / m
    return out


def theorem7_bound(t: int, eta: float, tau: float, gamma_max: int, v0: float) -> float:
    """Contraction envelope (1 - eta/(eta+tau))^(t/(1+Gamma)) * v0."""
    if eta <= 0:
        raise ValueError(f"eta must be positive, got {eta}")
    if tau < 0:
        raise ValueError(f"tau must be nonnegative, got {tau}")
    rate = 1.0 - eta / (eta + tau)
    return float(rate ** (t / (1.0 + gamma_max)) * v0)


@dataclass
class DelayedRunLog:
    gamma_max: int
    v: list = field(default_factory=list)       # V(t) = max_i ||w_i^t - what_i||
    bound: list = field(default_factory=list)   # theorem7_bound at each t
    mean_delay: list = field(default_factory=list)


class NotDoublyStochasticError(ValueError):
    def __init__(self, deviation: float):
        self.deviation = deviation
        super().__init__(
            f"delayed BOL requires a doubly stochastic affinity matrix "
            f"(max row/column-sum deviation {deviation:.3e})"
        )


def delayed_bol_run(
    model: LossModel,
    datasets,
    hp: Hyperparams,
    graph_ds: TaskGraph,
    schedule: DelaySchedule,
    T: int,
    oracle_W: np.ndarray,
    prox_tol: float = 1e-12,
    W0: np.ndarray | None = None,
    on_round=None,
):
    """Run T delayed prox-gradient steps at inverse stepsize beta = (eta+tau)/m.

    graph_ds must carry a doubly stochastic adjacency. Records
    V(t) = max_i ||w_i^t - what_i|| against the supplied exact solution and
    the matching contraction bound per step.
    """
    a = graph_ds.adjacency
    dev = max(
        float(np.abs(a.sum(axis=0) - 1.0).max()), float(np.abs(a.sum(axis=1) - 1.0).max())
    )
    if not is_doubly_stochastic(a, tol=1e-8):
        raise NotDoublyStochasticError(dev)
    m = graph_ds.m
    beta = (hp.eta + hp.tau) / m
    W = np.zeros((datasets[0].d, m)) if W0 is None else np.array(W0, dtype=float)
    history = IterateHistory(capacity=schedule.gamma_max + 1)
    history.append(W)

    def v_of(Wmat):
        return float(np.linalg.norm(Wmat - oracle_W, axis=0).max())

    log = DelayedRunLog(gamma_max=schedule.gamma_max)
    v0 = v_of(W)
    log.v.append(v0)
    log.bound.append(v0)
    log.mean_delay.append(0.0)
    edge_mask = a > 0
    for t in range(T):
        grad = delayed_grad_regularizer(history, t, hp, graph_ds, schedule)
        centers = W - grad / beta
        cols = [
            local_prox(model, centers[:, i], beta * m, datasets[i], tol=prox_tol)
            for i in range(m)
        ]
        W = np.stack(cols, axis=1)
        history.append(W)
        D = schedule.delays(t, m)
        log.mean_delay.append(float(D[edge_mask].mean()) if edge_mask.any() else 0.0)
        log.v.append(v_of(W))
        log.bound.append(theorem7_bound(t + 1, hp.eta, hp.tau, schedule.gamma_max, v0))
        if on_round is not None:
            on_round(t + 1, W, log)
    return W, log
