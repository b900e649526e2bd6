"""Command-line interface.

Subcommands: gen (generate and save a world), run (one experiment), sweep
(expand a base config over one key), consensus-suite, verify (invariant
suites), plot. Exit codes: 0 success, 1 config error, 2 solver failure,
3 check/acceptance failure.
"""

import argparse
import os
import sys

from .harness import (
    ConfigError,
    ExperimentConfig,
    consensus_suite,
    emit_plots,
    parse_config_file,
    run_experiment,
)
from .losses import LossModel, SQUARED, estimate_constants
from .objective import corollary2_params
from .synthdata import TaskSpec, generate_world, save_world
from .trace import read_trace

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_SOLVER = 2
EXIT_CHECK = 3


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="graphmtl", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="generate a synthetic world and save it")
    gen.add_argument("--out", required=True)
    gen.add_argument("--d", type=int, default=10)
    gen.add_argument("--m", type=int, default=20)
    gen.add_argument("--clusters", type=int, default=4)
    gen.add_argument("--train-n", type=int, default=50)
    gen.add_argument("--dev-size", type=int, default=2000)
    gen.add_argument("--test-size", type=int, default=2000)
    gen.add_argument("--noise-std", type=float, default=3.0 ** 0.5)
    gen.add_argument("--knn-k", type=int, default=10)
    gen.add_argument("--seed", type=int, default=0)

    run = sub.add_parser("run", help="run one configured experiment")
    run.add_argument("--config", required=True)
    run.add_argument("--seed", type=int, default=None, help="override the config seed")

    sweep = sub.add_parser("sweep", help="expand a base config over one key")
    sweep.add_argument("--config", required=True)
    sweep.add_argument("--key", required=True)
    sweep.add_argument("--values", required=True, help="comma-separated values")
    sweep.add_argument("--out", required=True)
    sweep.add_argument("--run", action="store_true", help="also run each generated config")

    cons = sub.add_parser("consensus-suite", help="run the consensus-limit checks")
    cons.add_argument("--seed", type=int, default=0)
    cons.add_argument("--out", default=None, help="write the report CSV here")

    ver = sub.add_parser("verify", help="run the invariant suites")
    ver.add_argument("--out", default=None, help="directory for report CSVs")
    ver.add_argument("--full", action="store_true", help="include the slow stability suite")
    ver.add_argument("--seed", type=int, default=0)

    plot = sub.add_parser("plot", help="plot population loss from trace CSVs")
    plot.add_argument("--traces", nargs="+", required=True)
    plot.add_argument("--labels", nargs="*", default=None)
    plot.add_argument("--axis", choices=["rounds", "samples", "passes"], default="rounds")
    plot.add_argument("--out", required=True)
    plot.add_argument("--local-ref", type=float, default=None)
    plot.add_argument("--centralized-ref", type=float, default=None)
    plot.add_argument("--train-n", type=int, default=None,
                      help="training-set size used by the passes axis")
    return p


def _cmd_gen(args) -> int:
    spec = TaskSpec(
        d=args.d,
        m=args.m,
        C=args.clusters,
        n=args.train_n,
        dev_size=args.dev_size,
        test_size=args.test_size,
        noise_std=args.noise_std,
        knn_k=args.knn_k,
        seed=args.seed,
    )
    world = generate_world(spec)
    if not world.connected:
        print(
            f"error: seed {args.seed} yields a disconnected relatedness graph; pick another seed",
            file=sys.stderr,
        )
        return EXIT_CONFIG
    save_world(world, args.out)
    print(f"world written to {args.out} (m={spec.m}, d={spec.d}, connected=True)")
    return EXIT_OK


def _cmd_run(args) -> int:
    kv = parse_config_file(args.config)
    if args.seed is not None:
        kv["seed"] = str(args.seed)
    config = ExperimentConfig.from_mapping(kv)
    result = run_experiment(config)
    print(f"status: {result.status}")
    for key, value in sorted(result.summary.items()):
        print(f"  {key} = {value}")
    if result.status != "ok":
        print(f"solver failure: {result.message}", file=sys.stderr)
        return EXIT_SOLVER
    return EXIT_OK


def _cmd_sweep(args) -> int:
    kv = parse_config_file(args.config)
    values = [v.strip() for v in args.values.split(",") if v.strip()]
    if not values:
        raise ConfigError("sweep needs at least one value")
    os.makedirs(args.out, exist_ok=True)
    paths = []
    for idx, value in enumerate(values):
        sub_kv = dict(kv)
        sub_kv[args.key] = value
        safe = value.replace("/", "_")
        sub_kv["output"] = os.path.join(args.out, f"{idx:03d}_{args.key.replace('.', '_')}_{safe}")
        path = os.path.join(args.out, f"config_{idx:03d}.cfg")
        with open(path, "w") as fh:
            for k, v in sub_kv.items():
                fh.write(f"{k} = {v}\n")
        paths.append(path)
        print(f"wrote {path}")
    if args.run:
        for path in paths:
            config = ExperimentConfig.from_file(path)
            result = run_experiment(config)
            print(f"{path}: {result.status}")
            if result.status != "ok":
                return EXIT_SOLVER
    return EXIT_OK


def _desk_world(seed: int):
    for s in range(seed, seed + 20):
        world = generate_world(
            TaskSpec(d=10, m=20, C=4, n=50, dev_size=1000, test_size=1000, knn_k=10, seed=s)
        )
        if world.connected:
            return world
    raise ConfigError("no connected desk world in 20 seeds")


def _cmd_consensus(args) -> int:
    world = _desk_world(args.seed)
    model = LossModel(SQUARED)
    consts = estimate_constants(model, world.train, B_eff=2.0 * world.true_b)
    hp = corollary2_params(
        consts.lipschitz, world.true_b, world.true_s, world.spec.m, world.spec.n, world.graph
    )
    report = consensus_suite(model, world.graph, hp, world.train)
    for line in report.lines():
        print(line)
    if args.out:
        report.write_csv(args.out)
        print(f"report written to {args.out}")
    return EXIT_OK if report.passed else EXIT_CHECK


def _cmd_verify(args) -> int:
    from .verification import lemma6_suite, rate_suite, stability_suite

    world = _desk_world(args.seed)
    model = LossModel(SQUARED)
    consts = estimate_constants(model, world.train, B_eff=2.0 * world.true_b)
    hp = corollary2_params(
        consts.lipschitz, world.true_b, world.true_s, world.spec.m, world.spec.n, world.graph
    )
    reports = [
        lemma6_suite(100, seed=args.seed),
        rate_suite(seed=args.seed),
        consensus_suite(model, world.graph, hp, world.train),
    ]
    if args.full:
        from .synthdata import TaskSpec as _TS

        small = None
        for s in range(args.seed, args.seed + 20):
            cand = generate_world(_TS(d=4, m=5, C=2, n=20, dev_size=500, test_size=2000, knn_k=2, seed=s))
            if cand.connected:
                small = cand
                break
        if small is None:
            raise ConfigError("no connected stability-suite world in 20 seeds")
        reports.append(stability_suite(small, repeats=200, seed=args.seed))
    ok = True
    for report in reports:
        print(f"== {report.name} ==")
        for line in report.lines():
            print(line)
        ok = ok and report.passed
        if args.out:
            os.makedirs(args.out, exist_ok=True)
            report.write_csv(os.path.join(args.out, f"{report.name}.csv"))
    return EXIT_OK if ok else EXIT_CHECK


def _cmd_plot(args) -> int:
    labels = args.labels if args.labels else [os.path.basename(t) for t in args.traces]
    if len(labels) != len(args.traces):
        raise ConfigError("need one label per trace")
    traces = {}
    columns_seen = None
    for label, path in zip(labels, args.traces):
        columns, rows = read_trace(path)
        if columns_seen is not None and columns != columns_seen:
            raise ConfigError(f"trace {path} has a mismatched schema")
        columns_seen = columns
        traces[label] = rows
    paths = emit_plots(
        traces, args.axis, args.out,
        local_ref=args.local_ref, centralized_ref=args.centralized_ref,
        train_n=args.train_n,
    )
    for p in paths:
        print(f"wrote {p}")
    return EXIT_OK


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    handlers = {
        "gen": _cmd_gen,
        "run": _cmd_run,
        "sweep": _cmd_sweep,
        "consensus-suite": _cmd_consensus,
        "verify": _cmd_verify,
        "plot": _cmd_plot,
    }
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ValueError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
