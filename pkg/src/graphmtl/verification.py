"""Bound-verification suites tying solver behavior to the theory.

Each suite is deterministic given its seed and reports one pass/fail row per
named check; statistical checks carry 3-standard-error margins and report
effect sizes rather than bare booleans.
"""

import itertools

import numpy as np

from . import batch
from .graph import build_coupling
from .losses import LossModel, SQUARED, estimate_constants
from .objective import Hyperparams, centralized_oracle, erm_objective
from .report import CheckResult, SuiteReport
from .stochastic import acsa_run
from .synthdata import GeneratedWorld, TaskSpec, generate_world


# ---------------------------------------------------------------------------
# Lemma-style prox displacement / suboptimality bounds
# ---------------------------------------------------------------------------

def exact_max_affine_prox(slopes: np.ndarray, offsets: np.ndarray, center: np.ndarray, beta: float):
    """Exact prox of h(u) = max_p(<c_p, u> + b_p) with quadratic pull to center.

    Enumerates every candidate active set: for the true minimizer the
    stationarity condition picks a simplex weighting of the active slopes, so
    solving the equality-constrained system for each subset and keeping the
    feasible candidate with the smallest objective is exhaustive at this
    scale (<= 5 pieces).
    """
    p, d = slopes.shape

    def value(y):
        return 0.5 * beta * float(np.sum((y - center) ** 2)) + float(np.max(slopes @ y + offsets))

    best = None
    for size in range(1, p + 1):
        for subset in itertools.combinations(range(p), size):
            s = len(subset)
            c_s = slopes[list(subset)]
            b_s = offsets[list(subset)]
            # unknowns [y (d), lambda (s), v (1)]
            A = np.zeros((d + s + 1, d + s + 1))
            rhs = np.zeros(d + s + 1)
            A[:d, :d] = beta * np.eye(d)
            A[:d, d : d + s] = c_s.T
            rhs[:d] = beta * center
            A[d : d + s, :d] = c_s
            A[d : d + s, d + s] = -1.0
            rhs[d : d + s] = -b_s
            A[d + s, d : d + s] = 1.0
            rhs[d + s] = 1.0
            try:
                z = np.linalg.solve(A, rhs)
            except np.linalg.LinAlgError:
                continue
            if np.linalg.norm(A @ z - rhs) > 1e-8:
                continue
            y, lam, v = z[:d], z[d : d + s], z[d + s]
            if lam.min() < -1e-9:
                continue
            others = [q for q in range(p) if q not in subset]
            if others and np.max(slopes[others] @ y + offsets[others]) > v + 1e-9:
                continue
            cand = (value(y), y)
            if best is None or cand[0] < best[0]:
                best = cand
    if best is None:
        raise RuntimeError("no feasible active set found (degenerate instance)")
    return best[1], best[0]


def lemma6_suite(trials: int = 100, seed: int = 0) -> SuiteReport:
    """Prox displacement <= L/beta and warm-start gap <= L^2/beta on random
    max-of-affine instances solved exactly by active-set enumeration."""
    rng = np.random.default_rng(seed)
    dist_viol = 0
    gap_viol = 0
    max_dist_ratio = 0.0
    max_gap_ratio = 0.0
    for _ in range(trials):
        d = int(rng.integers(1, 4))
        p = int(rng.integers(2, 6))
        slopes = rng.normal(0.0, 2.0, size=(p, d))
        offsets = rng.normal(0.0, 1.0, size=p)
        center = rng.normal(0.0, 3.0, size=d)
        beta = float(rng.uniform(0.3, 4.0))
        L = float(np.linalg.norm(slopes, axis=1).max())
        y_star, f_star = exact_max_affine_prox(slopes, offsets, center, beta)
        f_center = 0.5 * beta * 0.0 + float(np.max(slopes @ center + offsets))
        dist = float(np.linalg.norm(y_star - center))
        gap = f_center - f_star
        max_dist_ratio = max(max_dist_ratio, dist / (L / beta))
        max_gap_ratio = max(max_gap_ratio, gap / (L * L / beta))
        if dist > L / beta + 1e-9:
            dist_viol += 1
        if gap > L * L / beta + 1e-9:
            gap_viol += 1
    return SuiteReport(
        "lemma6",
        [
            CheckResult("prox_distance_violations", float(dist_viol), 0.0, 0.0, dist_viol == 0),
            CheckResult("warmstart_gap_violations", float(gap_viol), 0.0, 0.0, gap_viol == 0),
            CheckResult("max_distance_ratio", max_dist_ratio, 1.0, 0.0, max_dist_ratio <= 1.0 + 1e-9),
            CheckResult("max_gap_ratio", max_gap_ratio, 1.0, 0.0, max_gap_ratio <= 1.0 + 1e-9),
        ],
    )


# ---------------------------------------------------------------------------
# Generalization-gap bound (Monte Carlo)
# ---------------------------------------------------------------------------

def generalization_bound(L: float, m: int, n: int, eta: float, tau: float, eigenvalues) -> float:
    """Expected-gap bound (4 L^2 / (m n)) * sum_i 1/(eta + tau*lambda_i)."""
    return float(4.0 * L * L / (m * n) * np.sum(1.0 / (eta + tau * np.asarray(eigenvalues))))


def stability_suite(world_small: GeneratedWorld, repeats: int = 200, seed: int = 0) -> SuiteReport:
    """Monte Carlo check of the expected generalization gap of the ERM solution.

    Repeats independent training draws sharing the world's true predictors,
    solves each ERM exactly, and compares the mean population-minus-train gap
    against the bound computed with a conservative effective Lipschitz
    constant taken over the shared test pool.
    """
    if repeats < 2:
        raise ValueError("stability_suite needs repeats >= 2")
    spec = world_small.spec
    model = LossModel(SQUARED)
    graph = world_small.graph
    m, n = spec.m, spec.n
    b_eff = 2.0 * world_small.true_b

    # conservative L over the large shared pool
    xmax = max(float(np.linalg.norm(d.x, axis=1).max()) for d in world_small.test)
    ymax = max(float(np.abs(d.y).max()) for d in world_small.test)
    L = xmax * (xmax * b_eff + ymax)

    from .objective import corollary2_params, population_loss

    hp = corollary2_params(L, world_small.true_b, world_small.true_s, m, n, graph)
    bound = generalization_bound(L, m, n, hp.eta, hp.tau, graph.eigenvalues)

    sampler = world_small.fresh_sampler()
    gaps = np.empty(repeats)
    for r in range(repeats):
        rng = np.random.default_rng([seed, r])
        train = [sampler(i, n, rng) for i in range(m)]
        W_hat = centralized_oracle(model, train, hp, graph, tol=1e-10)
        train_loss = sum(
            0.5 * float(np.mean((d.x @ W_hat[:, i] - d.y) ** 2)) for i, d in enumerate(train)
        ) / m
        gaps[r] = population_loss(model, W_hat, world_small.test) - train_loss
    estimate = float(gaps.mean())
    se = float(gaps.std(ddof=1) / np.sqrt(repeats))

    # tau -> infinity limit of the bound keeps only the lambda_1 = 0 term
    big_tau = 1e8
    limit_sum = generalization_bound(L, m, n, hp.eta, big_tau, graph.eigenvalues)
    limit_expected = 4.0 * L * L / (m * n * hp.eta)
    limit_rel = abs(limit_sum - limit_expected) / limit_expected

    return SuiteReport(
        "stability",
        [
            CheckResult("gap_below_bound", estimate, bound, 3.0 * se, estimate <= bound + 3.0 * se),
            CheckResult(
                "gap_to_bound_ratio", estimate / bound if bound > 0 else np.inf, 1.0, 0.0,
                estimate <= bound + 3.0 * se,
            ),
            CheckResult("tau_limit_matches_eta_term", limit_rel, 1e-4, 0.0, limit_rel < 1e-4),
            CheckResult(
                "bound_monotone_in_n",
                generalization_bound(L, m, 2 * n, hp.eta, hp.tau, graph.eigenvalues),
                bound, 0.0,
                generalization_bound(L, m, 2 * n, hp.eta, hp.tau, graph.eigenvalues) < bound,
            ),
        ],
    )


# ---------------------------------------------------------------------------
# Iteration-complexity scalings
# ---------------------------------------------------------------------------

def _fit_slope(xs, ys) -> float:
    lx = np.log(np.asarray(xs, dtype=float))
    ly = np.log(np.asarray(ys, dtype=float))
    A = np.stack([lx, np.ones_like(lx)], axis=1)
    coef, *_ = np.linalg.lstsq(A, ly, rcond=None)
    return float(coef[0])


class _FullBatchStream:
    """Stream stand-in that always returns the fixed training sets (deterministic gradients)."""

    def __init__(self, train):
        self._train = train
        self.m = len(train)
        self.counts = np.zeros(self.m, dtype=int)

    def draw(self, machine, b):
        self.counts[machine] += b
        return self._train[machine]

    def draw_all(self, b):
        return [self.draw(i, b) for i in range(self.m)]


def _rate_world() -> GeneratedWorld:
    for seed in range(20):
        world = generate_world(
            TaskSpec(d=6, m=8, C=2, n=30, dev_size=200, test_size=200, knn_k=4, seed=seed)
        )
        if world.connected:
            return world
    raise RuntimeError("no connected rate-suite world found")


def rate_suite(seed: int = 0) -> SuiteReport:
    """Iteration-count scalings of the accelerated solvers plus AC-SA decay.

    Fits log-log slopes of rounds-to-tolerance over eta (BSR) and tau (BOL)
    sweeps, checks the one-step behavior at condition number one, the
    noiseless aggregate decay of AC-SA, and the stochastic-branch gain from
    quadrupling the horizon.
    """
    model = LossModel(SQUARED)
    world = _rate_world()
    graph = world.graph
    train = world.train
    d, m = world.spec.d, world.spec.m
    consts = estimate_constants(model, train, B_eff=2.0 * world.true_b)
    checks = []

    # condition number 1: quadratic with identity curvature solves in one step
    hits = []

    def count_cb(t, x):
        if np.linalg.norm(x) ** 2 / 2.0 <= 1e-8 and not hits:
            hits.append(t)

    from .proxgrad import accelerated_proxgrad

    accelerated_proxgrad(lambda x: x, lambda x, b: x, 1.0, 1.0, np.ones(3), 5, callback=count_cb)
    iters_needed = hits[0] if hits else np.inf
    checks.append(CheckResult("condnum1_iterations", float(iters_needed), 5.0, 0.0, iters_needed <= 5))

    # BSR eta-sweep at fixed kappa: rounds scale like eta^{-1/2}
    kappa0 = m * world.true_b ** 2 / world.true_s ** 2
    etas = [consts.beta_f * 10.0 ** (-k) for k in range(1, 5)]
    bsr_counts = []
    for eta in etas:
        hp = Hyperparams(eta=eta, tau=eta * kappa0, B=world.true_b, S=world.true_s)
        coupling = build_coupling(graph, hp.kappa)
        W_hat = centralized_oracle(model, train, hp, graph, tol=1e-12)
        target = erm_objective(model, W_hat, train, hp, graph)
        _, log = batch.run_accelerated_bsr(
            model, train, hp, coupling, graph, 100_000, consts,
            target_objective=target, rel_tol=1e-8,
        )
        bsr_counts.append(log.rounds)
    bsr_slope = _fit_slope(etas, bsr_counts)
    checks.append(CheckResult("bsr_eta_slope", bsr_slope, -0.5, 0.1, abs(bsr_slope + 0.5) <= 0.1))

    # BOL tau-sweep at fixed eta: rounds scale like (tau*lambda_max)^{1/2}
    eta0 = consts.beta_f / 10.0
    taus = [eta0 * 10.0 ** k / graph.lambda_max for k in range(1, 5)]
    bol_counts = []
    for tau in taus:
        hp = Hyperparams(eta=eta0, tau=tau, B=world.true_b, S=world.true_s)
        W_hat = centralized_oracle(model, train, hp, graph, tol=1e-12)
        target = erm_objective(model, W_hat, train, hp, graph)
        _, log = batch.run_accelerated_bol(
            model, train, hp, graph, 100_000,
            target_objective=target, rel_tol=1e-8,
        )
        bol_counts.append(log.rounds)
    bol_slope = _fit_slope([t * graph.lambda_max for t in taus], bol_counts)
    checks.append(CheckResult("bol_tau_slope", bol_slope, 0.5, 0.1, abs(bol_slope - 0.5) <= 0.1))

    # AC-SA noiseless: aggregate suboptimality decays ~ T^{-2} on the quadratic
    fhat_min, _ = _least_squares_floor(model, train, m)
    gaps = []
    horizons = [8, 16, 32, 64, 128]
    coupling0 = build_coupling(graph, kappa0)
    for T in horizons:
        stream = _FullBatchStream(train)
        W_ag = acsa_run(
            model, coupling0, stream, d, T, train[0].n, world.true_b, 1e-12, consts.beta_f
        )
        fhat = sum(
            0.5 * float(np.mean((ds.x @ W_ag[:, i] - ds.y) ** 2)) for i, ds in enumerate(train)
        ) / m
        gaps.append(max(fhat - fhat_min, 1e-300))
    acsa_slope = _fit_slope(horizons, gaps)
    checks.append(CheckResult("acsa_noiseless_slope", acsa_slope, -1.8, 0.0, acsa_slope <= -1.8))

    # AC-SA stochastic branch: quadrupling T shrinks the population gap >= 1.8x
    sigma = _single_sample_sigma(model, world, coupling0, seed)
    T0, b0 = 50, 1
    gains = _acsa_gap_pairs(model, world, coupling0, consts.beta_f, sigma, T0, b0, seeds=20, base_seed=seed)
    diff = gains[:, 0] - 1.8 * gains[:, 1]
    se = float(diff.std(ddof=1) / np.sqrt(len(diff)))
    checks.append(
        CheckResult(
            "acsa_sigma_branch_gain",
            float(gains[:, 0].mean() / gains[:, 1].mean()),
            1.8,
            3.0 * se,
            float(diff.mean()) >= -3.0 * se,
        )
    )
    return SuiteReport("rate", checks)


def _least_squares_floor(model: LossModel, train, m: int):
    """Unregularized per-task least-squares optimum of the averaged empirical loss."""
    total = 0.0
    sols = []
    for ds in train:
        w, *_ = np.linalg.lstsq(ds.x, ds.y, rcond=None)
        sols.append(w)
        total += 0.5 * float(np.mean((ds.x @ w - ds.y) ** 2))
    return total / m, np.stack(sols, axis=1)


def _single_sample_sigma(model, world, coupling, seed) -> float:
    rng = np.random.default_rng([seed, 31337])
    sampler = world.fresh_sampler()
    m = coupling.m
    d = world.spec.d
    W = np.zeros((d, m))
    draws = 400
    g = np.empty((draws, d, m))
    for j in range(draws):
        cols = [
            (z.x[0] @ W[:, i] - z.y[0]) * z.x[0]
            for i, z in ((i, sampler(i, 1, rng)) for i in range(m))
        ]
        g[j] = np.stack(cols, axis=1) / m @ coupling.m_inv_sqrt
    var = np.mean(np.sum((g - g.mean(axis=0)) ** 2, axis=(1, 2)))
    return float(np.sqrt(var))


def _population_gap(world: GeneratedWorld, W: np.ndarray) -> float:
    """Exact excess population loss for the squared-loss synthetic world."""
    from .synthdata import feature_covariance

    sigma = feature_covariance(world.spec.d)
    delta = W - world.true_predictors
    return 0.5 * float(np.mean(np.sum(delta * (sigma @ delta), axis=0)))


def _acsa_gap_pairs(model, world, coupling, beta_f, sigma, T0, b0, seeds, base_seed):
    from .stochastic import FRESH, SampleStream

    out = np.empty((seeds, 2))
    for s in range(seeds):
        for j, T in enumerate((T0, 4 * T0)):
            stream = SampleStream(FRESH, world.spec.m, [base_seed, s, j], sampler=world.fresh_sampler())
            W_ag = acsa_run(
                model, coupling, stream, world.spec.d, T, b0, world.true_b, sigma, beta_f
            )
            out[s, j] = _population_gap(world, W_ag)
    return out
