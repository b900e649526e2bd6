"""Instantaneous loss models: values, gradients, proximal maps, constants.

Two loss kinds are supported. Squared loss l(w, z) = (1/2)(<w,x> - y)^2 for
regression, and logistic loss log(1 + exp(-y <w,x>)) with labels in {-1, +1}.
Squared loss is not globally Lipschitz, so its Lipschitz constant is always
an effective one over a ball ||w|| <= B_eff.
"""

from dataclasses import dataclass

import numpy as np

from .proxgrad import accelerated_proxgrad

SQUARED = "squared"
LOGISTIC = "logistic"


@dataclass(frozen=True)
class Sample:
    """One observation: feature vector x and scalar target y."""

    x: np.ndarray
    y: float


@dataclass(frozen=True)
class TaskData:
    """One machine's samples, features stacked in rows of x."""

    x: np.ndarray  # (n, d)
    y: np.ndarray  # (n,)

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def d(self) -> int:
        return self.x.shape[1]


@dataclass(frozen=True)
class LossModel:
    kind: str

    def __post_init__(self):
        if self.kind not in (SQUARED, LOGISTIC):
            raise ValueError(f"unknown loss kind {self.kind!r}")


@dataclass(frozen=True)
class LossConstants:
    """Effective Lipschitz constant and per-machine smoothness constants."""

    lipschitz: float
    beta_per_machine: np.ndarray
    beta_f: float


class ProxConvergenceError(RuntimeError):
    """Inner prox solve did not certify the requested suboptimality."""

    def __init__(self, achieved: float, requested: float):
        self.achieved = achieved
        self.requested = requested
        super().__init__(
            f"prox solve reached certified suboptimality {achieved:.3e} > requested {requested:.3e}"
        )


def _check_dims(w: np.ndarray, x: np.ndarray):
    if w.shape[-1] != x.shape[-1]:
        raise ValueError(f"dimension mismatch: w has d={w.shape[-1]}, x has d={x.shape[-1]}")


def loss_value(model: LossModel, w: np.ndarray, z: Sample) -> float:
    w = np.asarray(w, dtype=float)
    x = np.asarray(z.x, dtype=float)
    _check_dims(w, x)
    t = float(x @ w)
    if model.kind == SQUARED:
        r = t - z.y
        return 0.5 * r * r
    # stable log(1 + exp(-y t))
    s = -z.y * t
    return float(np.logaddexp(0.0, s))


def loss_grad(model: LossModel, w: np.ndarray, z: Sample) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    x = np.asarray(z.x, dtype=float)
    _check_dims(w, x)
    t = float(x @ w)
    if model.kind == SQUARED:
        return (t - z.y) * x
    # -y * sigmoid(-y t) * x, saturating to 0 as y*t -> +inf
    s = -z.y * t
    sig = np.exp(s) / (1.0 + np.exp(s)) if s <= 0 else 1.0 / (1.0 + np.exp(-s))
    return (-z.y * sig) * x


def empirical_loss(model: LossModel, w: np.ndarray, data: TaskData) -> float:
    """Mean instantaneous loss over one machine's dataset."""
    w = np.asarray(w, dtype=float)
    _check_dims(w, data.x)
    t = data.x @ w
    if model.kind == SQUARED:
        r = t - data.y
        return float(0.5 * np.mean(r * r))
    return float(np.mean(np.logaddexp(0.0, -data.y * t)))


def empirical_grad(model: LossModel, w: np.ndarray, data: TaskData) -> np.ndarray:
    """Gradient of the mean loss over one machine's dataset."""
    w = np.asarray(w, dtype=float)
    _check_dims(w, data.x)
    t = data.x @ w
    if model.kind == SQUARED:
        return data.x.T @ (t - data.y) / data.n
    s = -data.y * t
    # numerically stable sigmoid(-y t)
    sig = np.empty_like(s)
    neg = s <= 0
    sig[neg] = np.exp(s[neg]) / (1.0 + np.exp(s[neg]))
    sig[~neg] = 1.0 / (1.0 + np.exp(-s[~neg]))
    return data.x.T @ (-data.y * sig) / data.n


def grad_matrix(model: LossModel, W: np.ndarray, datasets) -> np.ndarray:
    """Per-machine empirical gradients stacked as columns: G[:, i] = grad F_i(w_i)."""
    if model.kind == SQUARED and all(d.n == datasets[0].n for d in datasets):
        # batched residual path; identical result, one BLAS call per machine avoided
        return np.stack(
            [d.x.T @ (d.x @ W[:, i] - d.y) / d.n for i, d in enumerate(datasets)], axis=1
        )
    return np.stack([empirical_grad(model, W[:, i], d) for i, d in enumerate(datasets)], axis=1)


def second_moment_top_eigenvalue(x: np.ndarray, tol: float = 1e-6, max_iter: int = 20_000) -> float:
    """Largest eigenvalue of X^T X / n by power iteration with a residual stop."""
    n = x.shape[0]
    rng = np.random.default_rng(0)
    v = rng.standard_normal(x.shape[1])
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(max_iter):
        sv = x.T @ (x @ v) / n
        norm = np.linalg.norm(sv)
        if norm == 0.0:
            return 0.0
        lam = float(v @ sv)
        if np.linalg.norm(sv - lam * v) <= tol * max(lam, 1e-300):
            return lam
        v = sv / norm
    return lam


def estimate_constants(model: LossModel, datasets, B_eff: float | None = None) -> LossConstants:
    """Effective Lipschitz constant and smoothness constants from the data.

    Squared loss: beta_i is the top eigenvalue of machine i's empirical second
    moment (power iteration), and L = xmax * (xmax * B_eff + ymax) bounds the
    gradient norm over ||w|| <= B_eff. Logistic loss: beta_i gains the 1/4
    curvature factor and L = xmax holds globally.
    """
    if not datasets or any(d.n == 0 for d in datasets):
        raise ValueError("estimate_constants requires nonempty datasets")
    betas = np.array([second_moment_top_eigenvalue(d.x) for d in datasets])
    xmax = max(float(np.linalg.norm(d.x, axis=1).max()) for d in datasets)
    if model.kind == SQUARED:
        if B_eff is None or B_eff <= 0:
            raise ValueError("squared loss needs B_eff > 0 for an effective Lipschitz constant")
        ymax = max(float(np.abs(d.y).max()) for d in datasets)
        lipschitz = xmax * (xmax * B_eff + ymax)
    else:
        betas = betas / 4.0
        lipschitz = xmax
    return LossConstants(lipschitz=lipschitz, beta_per_machine=betas, beta_f=float(betas.max()))


def local_prox(
    model: LossModel,
    center: np.ndarray,
    inv_step: float,
    data: TaskData,
    tol: float = 1e-10,
    max_iter: int = 100_000,
) -> np.ndarray:
    """argmin_u (inv_step/2)*||u - center||^2 + mean loss over data, to tol.

    Squared loss solves the d x d linear system exactly. Logistic loss runs
    the accelerated proximal gradient inner loop from the center (warm start)
    until the gradient-norm certificate ||grad f(u)||^2 / (2*inv_step) <= tol.
    """
    if inv_step <= 0:
        raise ValueError(f"inv_step must be positive, got {inv_step}")
    if tol <= 0:
        raise ValueError(f"tol must be positive, got {tol}")
    if data.n == 0:
        raise ValueError("local_prox requires nonempty data")
    center = np.asarray(center, dtype=float)
    _check_dims(center, data.x)
    d = data.d
    if model.kind == SQUARED:
        h = inv_step * np.eye(d) + data.x.T @ data.x / data.n
        rhs = inv_step * center + data.x.T @ data.y / data.n
        return np.linalg.solve(h, rhs)

    beta_data = second_moment_top_eigenvalue(data.x) / 4.0

    def full_grad(u):
        return inv_step * (u - center) + empirical_grad(model, u, data)

    u = center.copy()
    # the pull term contributes both smoothness and strong convexity
    beta_total = beta_data + inv_step
    chunk = 50
    for _ in range(max(1, max_iter // chunk)):
        g = full_grad(u)
        certified = float(g @ g) / (2.0 * inv_step)
        if certified <= tol:
            return u
        u = accelerated_proxgrad(
            g_grad=full_grad,
            h_prox=lambda x, b: x,
            beta=beta_total,
            mu_sc=inv_step,
            x0=u,
            T=chunk,
        )
    g = full_grad(u)
    raise ProxConvergenceError(float(g @ g) / (2.0 * inv_step), tol)
