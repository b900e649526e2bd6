"""Experiment runner: configs, baselines, orchestration, accounting, plots.

A run is described by a flat key-value config (dotted keys), executes exactly
one algorithm, and leaves behind a trace CSV, a summary file, and optionally
plots. Identical config + seed reproduce byte-identical traces.
"""

import ast
import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import batch, stochastic
from .delay import DelaySchedule, delayed_bol_run
from .graph import TaskGraph, build_coupling, build_laplacian, make_doubly_stochastic
from .losses import LossModel, SQUARED, TaskData, estimate_constants
from .objective import (
    Hyperparams,
    centralized_oracle,
    corollary2_params,
    erm_objective,
    population_loss,
)
from .report import CheckResult, SuiteReport
from .synthdata import GeneratedWorld, TaskSpec, generate_world, load_world
from .trace import TraceRow, TraceWriter

OUTPUT_ROOT_ENV = "GRAPHMTL_OUTPUT_ROOT"

ALGORITHMS = (
    "local",
    "centralized",
    "gd",
    "bsr",
    "bol",
    "bsr_acc",
    "bol_acc",
    "ssr",
    "acsa",
    "sol",
    "mbprox",
    "bol_delayed",
)

# Table-1 communication profiles: vectors communicated per machine per round
_BROADCAST = ("bsr", "bsr_acc", "ssr", "acsa")
_NEIGHBOR = ("gd", "bol", "bol_acc", "sol", "mbprox", "bol_delayed")

DEFAULT_LAMBDA_GRID = tuple(10.0 ** k for k in range(-4, 2))


class ConfigError(ValueError):
    """Invalid or inconsistent experiment configuration."""


def parse_config_file(path) -> dict:
    """Flat `key = value` lines; # comments; values parsed as Python literals when possible."""
    out = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
            key, _, value = line.partition("=")
            out[key.strip()] = value.strip()
    return out


def _literal(value):
    try:
        return ast.literal_eval(value)
    except (ValueError, SyntaxError):
        return value


def _floats(value) -> tuple:
    if isinstance(value, (list, tuple)):
        return tuple(float(v) for v in value)
    return tuple(float(v) for v in str(value).split(",") if v.strip())


@dataclass
class ExperimentConfig:
    algorithm: str
    world_path: str | None = None
    world_spec: TaskSpec | None = None
    loss: str = SQUARED
    eta: float | None = None
    tau: float | None = None
    b_norm: float | None = None        # B override
    s_norm: float | None = None        # S override
    lipschitz: float | None = None
    alpha: float | None = None
    rounds: int = 100
    minibatch: int | None = None
    stream_mode: str = stochastic.FRESH
    budget: int | None = None
    prox_tol: float = 1e-10
    gamma_max: int = 1
    delay_mode: str = "uniform_random"
    sigma: float | None = None
    sigma_mode: str = "formula"        # formula | measured
    stepsize_scale: float = 1.0
    seed: int = 0
    output: str = "runs/run"
    lambda_grid: tuple = DEFAULT_LAMBDA_GRID
    eta_scale_grid: tuple = ()
    tau_scale_grid: tuple = ()
    dist_to_oracle: bool | None = None
    emit_plot: bool = False

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"unknown algorithm {self.algorithm!r}; expected one of {ALGORITHMS}")
        if self.world_path is None and self.world_spec is None:
            raise ConfigError("config needs either world.path or a world.* generation spec")
        if self.stream_mode not in (stochastic.FRESH, stochastic.RESAMPLE):
            raise ConfigError(f"unknown stream mode {self.stream_mode!r}")
        if (self.eta is None) != (self.tau is None):
            raise ConfigError("hp.eta and hp.tau must be given together")

    @classmethod
    def from_mapping(cls, kv: dict) -> "ExperimentConfig":
        kv = {k: _literal(v) for k, v in kv.items()}
        world_path = kv.get("world.path")
        world_spec = None
        if world_path is None:
            spec_keys = {
                "d": "world.d",
                "m": "world.m",
                "C": "world.clusters",
                "n": "world.train_n",
                "dev_size": "world.dev_size",
                "test_size": "world.test_size",
                "noise_std": "world.noise_std",
                "knn_k": "world.knn_k",
                "seed": "world.seed",
            }
            present = {f: kv[k] for f, k in spec_keys.items() if k in kv}
            if not present:
                raise ConfigError("config needs either world.path or world.* keys")
            try:
                world_spec = TaskSpec(**present)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"bad world spec: {exc}") from exc
        try:
            cfg = cls(
                algorithm=str(kv.get("algorithm", "")),
                world_path=world_path,
                world_spec=world_spec,
                loss=str(kv.get("loss", SQUARED)),
                eta=kv.get("hp.eta"),
                tau=kv.get("hp.tau"),
                b_norm=kv.get("hp.b"),
                s_norm=kv.get("hp.s"),
                lipschitz=kv.get("hp.lipschitz"),
                alpha=kv.get("alpha"),
                rounds=int(kv.get("rounds", 100)),
                minibatch=kv.get("minibatch"),
                stream_mode=str(kv.get("stream", stochastic.FRESH)),
                budget=kv.get("budget"),
                prox_tol=float(kv.get("prox_tol", 1e-10)),
                gamma_max=int(kv.get("gamma_max", 1)),
                delay_mode=str(kv.get("delay_mode", "uniform_random")),
                sigma=kv.get("acsa.sigma"),
                sigma_mode=str(kv.get("acsa.sigma_mode", "formula")),
                stepsize_scale=float(kv.get("acsa.stepsize_scale", 1.0)),
                seed=int(kv.get("seed", 0)),
                output=str(kv.get("output", "runs/run")),
                lambda_grid=_floats(kv["tune.lambda_grid"]) if "tune.lambda_grid" in kv else DEFAULT_LAMBDA_GRID,
                eta_scale_grid=_floats(kv["tune.eta_scale_grid"]) if "tune.eta_scale_grid" in kv else (),
                tau_scale_grid=_floats(kv["tune.tau_scale_grid"]) if "tune.tau_scale_grid" in kv else (),
                dist_to_oracle=kv.get("trace.dist_to_oracle"),
                emit_plot=bool(kv.get("plot", False)),
            )
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
        return cfg

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        return cls.from_mapping(parse_config_file(path))

    def resolve_output(self) -> str:
        root = os.environ.get(OUTPUT_ROOT_ENV)
        if root and not os.path.isabs(self.output):
            return os.path.join(root, self.output)
        return self.output


def ridge_solve(data: TaskData, lam: float) -> np.ndarray:
    """Closed-form minimizer of mean squared loss + (lam/2)||w||^2."""
    h = data.x.T @ data.x / data.n + lam * np.eye(data.d)
    return np.linalg.solve(h, data.x.T @ data.y / data.n)


def run_local_baseline(model: LossModel, world: GeneratedWorld, lambda_grid) -> tuple:
    """Per-task ridge with a shared regularization strength tuned on dev data.

    Returns (W, rows, chosen_lambda); trace logs zero communication.
    """
    if not lambda_grid:
        raise ConfigError("local baseline needs a nonempty lambda grid")
    if model.kind != SQUARED:
        raise ConfigError("local baseline implements the ridge path only")
    best = None
    for lam in lambda_grid:
        W = np.stack([ridge_solve(d, lam) for d in world.train], axis=1)
        dev = population_loss(model, W, world.dev)
        if best is None or dev < best[0]:
            best = (dev, lam, W)
    _, lam, W = best
    rows = [
        TraceRow(
            round=1,
            comm_rounds=0,
            vectors_per_machine=0.0,
            samples_per_machine=world.spec.n,
            erm_objective=float(
                np.mean(
                    [
                        0.5 * lam * float(W[:, i] @ W[:, i])
                        + 0.5 * np.mean((d.x @ W[:, i] - d.y) ** 2)
                        for i, d in enumerate(world.train)
                    ]
                )
            ),
            population_loss=population_loss(model, W, world.test),
        )
    ]
    return W, rows, lam


def tune_centralized(
    model: LossModel,
    world: GeneratedWorld,
    base_hp: Hyperparams,
    eta_scales,
    tau_scales,
    tol: float = 1e-8,
) -> tuple:
    """Grid-search (eta, tau) multiplicatively around a base point on dev loss."""
    best = None
    for es in eta_scales or (1.0,):
        for ts in tau_scales or (1.0,):
            hp = Hyperparams(eta=base_hp.eta * es, tau=base_hp.tau * ts, B=base_hp.B, S=base_hp.S)
            W = centralized_oracle(model, world.train, hp, world.graph, tol=tol)
            dev = population_loss(model, W, world.dev)
            if best is None or dev < best[0]:
                best = (dev, hp, W)
    return best[1], best[2]


def measured_sigma(model: LossModel, world: GeneratedWorld, coupling, W: np.ndarray, draws: int = 200, seed: int = 0) -> float:
    """Monte Carlo estimate of the single-combined-sample U-space gradient std at W."""
    rng = np.random.default_rng([seed, 104729])
    sampler = world.fresh_sampler()
    m = coupling.m
    grads = np.empty((draws, W.shape[0], m))
    for j in range(draws):
        cols = []
        for i in range(m):
            z = sampler(i, 1, rng)
            cols.append((z.x[0] @ W[:, i] - z.y[0]) * z.x[0] if model.kind == SQUARED else None)
        g = np.stack(cols, axis=1) / m
        grads[j] = g @ coupling.m_inv_sqrt
    var = np.mean(np.sum((grads - grads.mean(axis=0)) ** 2, axis=(1, 2)))
    return float(np.sqrt(var))


def acsa_dev_selected(
    model: LossModel,
    world: GeneratedWorld,
    coupling,
    consts,
    budget: int,
    run_seed: int,
    b_grid=(1, 2, 4, 5, 10),
    scale_grid=(1.0, 1.5, 2.0, 3.0),
):
    """Fresh-sample AC-SA at a fixed per-machine budget with dev-set tuning.

    Minibatch size, stepsize scale, and stopping round are all selected on
    the dev split; test data is never consulted. The per-minibatch noise
    level fed to the stepsize policy is the measured single-sample deviation
    reduced by sqrt(b). Returns (W, chosen) with the selected settings.
    """
    sigma1 = measured_sigma(model, world, coupling, np.zeros((world.spec.d, coupling.m)), seed=run_seed)
    best = None
    for b in b_grid:
        if budget % b:
            continue
        T = budget // b
        sigma = sigma1 / np.sqrt(b)
        for scale in scale_grid:
            picks = {}

            def on_round(t, W_ag, _picks=picks):
                _picks[t] = (population_loss(model, W_ag, world.dev), W_ag.copy())

            stream = _make_seeded_fresh_stream(world, [run_seed, b, int(scale * 10)])
            stochastic.acsa_run(
                model, coupling, stream, world.spec.d, T, b, world.true_b, sigma,
                consts.beta_f, stepsize_scale=scale, on_round=on_round,
            )
            t_best = min(picks, key=lambda t: picks[t][0])
            dev, W = picks[t_best]
            if best is None or dev < best[0]:
                best = (dev, W, {"b": b, "stepsize_scale": scale, "round": t_best, "sigma": sigma})
    if best is None:
        raise ConfigError(f"no minibatch size in {b_grid} divides the budget {budget}")
    return best[1], best[2]


def _make_seeded_fresh_stream(world: GeneratedWorld, seed) -> stochastic.SampleStream:
    return stochastic.SampleStream(
        stochastic.FRESH, world.spec.m, seed, sampler=world.fresh_sampler()
    )


@dataclass
class ExperimentResult:
    status: str                 # "ok" | "error"
    message: str = ""
    summary: dict = field(default_factory=dict)
    trace_path: str = ""
    final_W: np.ndarray | None = None


def _world_of(config: ExperimentConfig) -> GeneratedWorld:
    world = load_world(config.world_path) if config.world_path else generate_world(config.world_spec)
    if not world.connected:
        raise ConfigError(
            f"generated relatedness graph is disconnected (seed {world.spec.seed}); pick another seed"
        )
    return world


def _resolve_hp(config: ExperimentConfig, model, world, consts) -> Hyperparams:
    B = config.b_norm if config.b_norm is not None else world.true_b
    S = config.s_norm if config.s_norm is not None else world.true_s
    L = config.lipschitz if config.lipschitz is not None else consts.lipschitz
    if config.eta is not None:
        return Hyperparams(eta=float(config.eta), tau=float(config.tau), B=B, S=S)
    return corollary2_params(L, B, S, world.spec.m, world.spec.n, world.graph)


def run_experiment(config: ExperimentConfig) -> ExperimentResult:
    """Execute one configured run, writing trace.csv and summary.txt."""
    t_start = time.perf_counter()
    out_dir = config.resolve_output()
    os.makedirs(out_dir, exist_ok=True)
    world = _world_of(config)
    model = LossModel(config.loss)
    graph = world.graph
    spec = world.spec
    consts = estimate_constants(model, world.train, B_eff=2.0 * world.true_b)
    hp = _resolve_hp(config, model, world, consts)
    coupling = build_coupling(graph, hp.kappa)
    algo = config.algorithm
    b = config.minibatch if config.minibatch is not None else max(1, spec.n // 10)
    want_dist = config.dist_to_oracle
    if want_dist is None:
        want_dist = algo in ("gd", "bsr", "bol", "bsr_acc", "bol_acc", "bol_delayed")

    trace_path = os.path.join(out_dir, "trace.csv")
    summary_path = os.path.join(out_dir, "summary.txt")
    extra_cols = ("gamma_max", "mean_delay", "v_t", "theorem7_bound") if algo == "bol_delayed" else ()

    def write_summary(status, message, rows, chosen=None):
        elapsed = time.perf_counter() - t_start
        last = rows[-1] if rows else None
        with open(summary_path, "w") as fh:
            fh.write(f"status = {status}\n")
            if message:
                fh.write(f"message = {message!r}\n")
            fh.write(f"algorithm = {algo}\n")
            fh.write(f"seed = {config.seed}\n")
            fh.write(f"rounds = {len(rows)}\n")
            if last is not None:
                fh.write(f"final_erm_objective = {last.erm_objective!r}\n")
                fh.write(f"final_population_loss = {last.population_loss!r}\n")
                fh.write(f"total_comm_rounds = {last.comm_rounds}\n")
                fh.write(f"total_samples_per_machine = {last.samples_per_machine}\n")
            if chosen:
                for k, v in chosen.items():
                    fh.write(f"{k} = {v!r}\n")
            fh.write(f"wall_seconds = {elapsed:.3f}\n")
        summary = {
            "status": status,
            "rounds": len(rows),
            "wall_seconds": elapsed,
        }
        if last is not None:
            summary["final_erm_objective"] = last.erm_objective
            summary["final_population_loss"] = last.population_loss
        if chosen:
            summary.update(chosen)
        return summary

    oracle_W = None
    if want_dist or algo == "bol_delayed":
        oracle_graph = graph
        oracle_hp = hp
        if algo == "bol_delayed":
            a_ds = make_doubly_stochastic(graph.adjacency)
            oracle_graph = build_laplacian(a_ds)
        oracle_W = centralized_oracle(model, world.train, oracle_hp, oracle_graph, tol=1e-10)

    with TraceWriter(trace_path, extra_columns=extra_cols) as writer:
        if algo == "local":
            vectors = 0.0
        elif algo == "centralized":
            vectors = float(spec.n)  # samples shipped to the center, as d-vectors
        elif algo in _BROADCAST:
            vectors = float(graph.m)
        else:
            assert algo in _NEIGHBOR
            vectors = graph.edge_count / graph.m
        state = {"samples": 0, "comm": 0}

        def recorder(t, W, comm=None, samples_inc=None, extra=()):
            state["samples"] += samples_inc if samples_inc is not None else (
                b if algo in ("ssr", "acsa", "sol") else spec.n
            )
            state["comm"] = comm if comm is not None else state["comm"] + 1
            writer.append(
                TraceRow(
                    round=t,
                    comm_rounds=state["comm"],
                    vectors_per_machine=vectors,
                    samples_per_machine=state["samples"],
                    erm_objective=erm_objective(model, W, world.train, hp, graph),
                    population_loss=population_loss(model, W, world.test),
                    dist_to_oracle=(
                        float(np.linalg.norm(W - oracle_W)) if (want_dist and oracle_W is not None) else None
                    ),
                    extra=extra,
                )
            )

        try:
            final_W, chosen = _dispatch(
                config, algo, model, world, graph, coupling, hp, consts, b, recorder, oracle_W
            )
        except (ConfigError,):
            raise
        except Exception as exc:  # preserve the partial trace, report solver failure
            summary = write_summary("error", f"{type(exc).__name__}: {exc}", writer.rows)
            return ExperimentResult(
                status="error",
                message=str(exc),
                summary=summary,
                trace_path=trace_path,
            )
        summary = write_summary("ok", "", writer.rows, chosen)
        rows = list(writer.rows)

    if config.emit_plot and rows:
        emit_plots({algo: rows}, "rounds", out_dir)
    return ExperimentResult(
        status="ok", summary=summary, trace_path=trace_path, final_W=final_W
    )


def _dispatch(config, algo, model, world, graph, coupling, hp, consts, b, recorder, oracle_W):
    """Run the configured algorithm, invoking the recorder once per round."""
    spec = world.spec
    d = spec.d
    chosen = {}
    if algo == "local":
        W, _, lam = run_local_baseline(model, world, config.lambda_grid)
        chosen["chosen_lambda"] = lam
        recorder(1, W, comm=0, samples_inc=spec.n)
        return W, chosen
    if algo == "centralized":
        if config.eta_scale_grid or config.tau_scale_grid:
            hp_t, W = tune_centralized(
                model, world, hp, config.eta_scale_grid, config.tau_scale_grid
            )
            chosen["chosen_eta"] = hp_t.eta
            chosen["chosen_tau"] = hp_t.tau
        else:
            W = centralized_oracle(model, world.train, hp, world.graph, tol=1e-10)
        recorder(1, W, comm=1, samples_inc=spec.m * spec.n)
        return W, chosen

    T = config.rounds
    alpha = config.alpha
    if algo == "gd":
        W, _ = batch.run_gd(
            model, world.train, hp, graph, T,
            alpha if alpha else batch.default_alpha_gd(consts, hp, graph),
            on_round=recorder,
        )
        return W, chosen
    if algo == "bsr":
        W, _ = batch.run_bsr(
            model, world.train, hp, coupling, graph, T,
            alpha if alpha else batch.default_alpha_bsr(consts, hp),
            on_round=recorder,
        )
        return W, chosen
    if algo == "bol":
        W, _ = batch.run_bol(
            model, world.train, hp, graph, T,
            alpha if alpha else batch.default_alpha_bol(hp, graph),
            prox_tol=config.prox_tol, on_round=recorder,
        )
        return W, chosen
    if algo == "bsr_acc":
        W, _ = batch.run_accelerated_bsr(
            model, world.train, hp, coupling, graph, T, consts, on_round=recorder
        )
        return W, chosen
    if algo == "bol_acc":
        W, _ = batch.run_accelerated_bol(
            model, world.train, hp, graph, T, on_round=recorder
        )
        return W, chosen

    stream = _make_stream(config, world, b)
    if algo == "ssr":
        # the (1/(mb))-normalized minibatch gradient makes m/(beta_F + eta)
        # the stepsize matching the batch BSR dynamics
        W = stochastic.run_ssr(
            model, coupling, stream, d, T, b,
            config.alpha if config.alpha else graph.m * batch.default_alpha_bsr(consts, hp),
            on_round=recorder,
        )
        return W, chosen
    if algo == "acsa":
        B = hp.B
        if config.sigma is not None:
            sigma = float(config.sigma)
        elif config.sigma_mode == "measured":
            sigma = measured_sigma(model, world, coupling, np.zeros((d, graph.m)), seed=config.seed)
        else:
            from .graph import rho as rho_fn
            from .stochastic import sigma_bound

            sigma = float(np.sqrt(sigma_bound(consts.lipschitz, graph.m, rho_fn(graph, hp.B, hp.S))))
        chosen["sigma"] = sigma
        W = stochastic.acsa_run(
            model, coupling, stream, d, T, b, B, sigma, consts.beta_f,
            stepsize_scale=config.stepsize_scale, on_round=recorder,
        )
        return W, chosen
    if algo == "sol":
        W = stochastic.run_sol(
            model, hp, graph, stream, d, T, b,
            config.alpha if config.alpha else batch.default_alpha_bol(hp, graph),
            prox_tol=config.prox_tol, on_round=recorder,
        )
        return W, chosen
    if algo == "mbprox":
        kappa = graph.m * hp.B ** 2 / hp.S ** 2
        coup_spectral = build_coupling(graph, kappa)
        comm = {"total": 0}

        def on_outer(t, Wbar, inner_used):
            comm["total"] += max(inner_used, 1)
            recorder(t, Wbar, comm=comm["total"], samples_inc=b)

        W, log = stochastic.minibatch_prox_run(
            model, coup_spectral, hp.B, hp.S, consts.lipschitz, stream, d, T, b,
            on_round=on_outer,
        )
        chosen["inner_iterations"] = sum(log.inner_iterations)
        return W, chosen
    if algo == "bol_delayed":
        a_ds = make_doubly_stochastic(graph.adjacency)
        graph_ds = build_laplacian(a_ds)
        schedule = DelaySchedule(gamma_max=config.gamma_max, mode=config.delay_mode, seed=config.seed)

        def on_round(t, W, log):
            recorder(
                t, W, samples_inc=spec.n,
                extra=(float(config.gamma_max), log.mean_delay[t], log.v[t], log.bound[t]),
            )

        W, _ = delayed_bol_run(
            model, world.train, hp, graph_ds, schedule, T, oracle_W,
            prox_tol=config.prox_tol, on_round=on_round,
        )
        return W, chosen
    raise ConfigError(f"unhandled algorithm {algo!r}")


def _make_stream(config: ExperimentConfig, world: GeneratedWorld, b: int) -> stochastic.SampleStream:
    if config.stream_mode == stochastic.FRESH:
        return stochastic.SampleStream(
            stochastic.FRESH, world.spec.m, config.seed,
            sampler=world.fresh_sampler(), budget=config.budget,
        )
    return stochastic.SampleStream(
        stochastic.RESAMPLE, world.spec.m, config.seed, train=world.train, budget=config.budget
    )


def consensus_suite(model: LossModel, graph: TaskGraph, hp: Hyperparams, datasets, steps: int = 30) -> SuiteReport:
    """Consensus limit checks on a connected graph.

    (a) gradient averaging with uniform weights alpha/m from zero init keeps
    all columns exactly identical; (b) the neighbor-averaging weights at
    alpha = 1/(eta + tau*lambda_max) converge entrywise, monotonically, to
    the doubly stochastic limit weights as tau grows; (c) their column sums
    are exactly 1 - alpha*eta.
    """
    if not graph.connected:
        raise ConfigError("consensus suite needs a connected graph (limit weights are vacuous otherwise)")
    m = graph.m
    consts = estimate_constants(model, datasets, B_eff=2.0)
    alpha = 1.0 / (consts.beta_f + hp.eta)
    checks = []

    # (a) uniform gradient averaging preserves exact column identity
    from .losses import grad_matrix

    W = np.zeros((datasets[0].d, m))
    max_dev = 0.0
    for _ in range(steps):
        mixed = grad_matrix(model, W, datasets).sum(axis=1) * (alpha / m)
        W = (1.0 - alpha * hp.eta) * W - mixed[:, None]
        max_dev = max(max_dev, float(np.abs(W - W[:, [0]]).max()))
    checks.append(CheckResult("uniform_weights_column_identity", max_dev, 0.0, 0.0, max_dev == 0.0))

    # (b) tau ladder: neighbor weights approach the doubly stochastic limit
    lam_max = graph.lambda_max
    limit = graph.adjacency / lam_max
    np.fill_diagonal(limit, 1.0 - graph.adjacency.sum(axis=1) / lam_max)
    row_dev = float(np.abs(limit.sum(axis=1) - 1.0).max())
    col_dev = float(np.abs(limit.sum(axis=0) - 1.0).max())
    checks.append(
        CheckResult("limit_weights_doubly_stochastic", max(row_dev, col_dev), 1e-12, 0.0,
                    max(row_dev, col_dev) <= 1e-12)
    )
    gaps = []
    col_sum_dev = 0.0
    for tau in [10.0 ** k for k in range(2, 9)]:
        hp_tau = Hyperparams(eta=hp.eta, tau=tau, B=hp.B, S=hp.S)
        alpha_tau = 1.0 / (hp.eta + tau * lam_max)
        weights = batch.combine_weights(batch.FULL_GD, alpha_tau, hp_tau, graph=graph)
        gaps.append(float(np.abs(weights.mu - limit).max()))
        col_sum_dev = max(
            col_sum_dev,
            float(np.abs(weights.mu.sum(axis=0) - (1.0 - alpha_tau * hp.eta)).max()),
        )
    monotone = all(gaps[i + 1] <= gaps[i] + 1e-15 for i in range(len(gaps) - 1))
    checks.append(CheckResult("tau_ladder_monotone", float(monotone), 1.0, 0.0, monotone))
    checks.append(CheckResult("tau_1e8_entrywise_gap", gaps[-1], 1e-4, 0.0, gaps[-1] < 1e-4))

    # (c) column sums of the neighbor-averaging weights equal 1 - alpha*eta
    checks.append(
        CheckResult("column_sums_one_minus_alpha_eta", col_sum_dev, 1e-12, 0.0, col_sum_dev <= 1e-12)
    )
    return SuiteReport("consensus", checks)


def emit_plots(
    traces: dict,
    axis: str,
    out_dir,
    local_ref: float | None = None,
    centralized_ref: float | None = None,
    train_n: int | None = None,
):
    """Write deterministic SVG line charts of population loss vs the chosen axis.

    axis is one of rounds | samples | passes; passes divides the per-machine
    sample counter by train_n (falling back to the first-round counter, which
    matches train_n for batch traces), with the definition recorded in the
    SVG metadata. Returns the list of written paths.
    """
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    if axis not in ("rounds", "samples", "passes"):
        raise ConfigError(f"unknown plot axis {axis!r}")
    schemas = set()
    for rows in traces.values():
        if not rows:
            raise ConfigError("cannot plot an empty trace")
        first = rows[0]
        schemas.add(frozenset(first.keys()) if isinstance(first, dict) else frozenset(["TraceRow"]))
    if len(schemas) > 1:
        raise ConfigError("traces have mismatched schemas")

    def cells(row, name):
        return row[name] if isinstance(row, dict) else getattr(row, name)

    fig, ax = plt.subplots(figsize=(6, 4))
    for label in sorted(traces):
        rows = traces[label]
        if axis == "rounds":
            xs = [cells(r, "comm_rounds") for r in rows]
        else:
            xs = [cells(r, "samples_per_machine") for r in rows]
            if axis == "passes":
                n0 = train_n if train_n else max(cells(rows[0], "samples_per_machine"), 1)
                xs = [x / n0 for x in xs]
        ys = [cells(r, "population_loss") for r in rows]
        ax.plot(xs, ys, label=label)
    if local_ref is not None:
        ax.axhline(local_ref, color="gray", linestyle="--", label="local")
    if centralized_ref is not None:
        ax.axhline(centralized_ref, color="black", linestyle=":", label="centralized")
    ax.set_xlabel({"rounds": "communication rounds", "samples": "samples per machine", "passes": "passes over training set"}[axis])
    ax.set_ylabel("population loss")
    ax.legend(fontsize=8)
    fig.tight_layout()
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, f"population_loss_vs_{axis}.svg")
    plt.rcParams["svg.hashsalt"] = "graphmtl"
    metadata = {"Date": None}
    if axis == "passes":
        metadata["Description"] = (
            f"passes = samples_per_machine / {train_n if train_n else 'first-round samples'}"
        )
    fig.savefig(path, metadata=metadata)
    plt.close(fig)
    return [path]
