"""Command-line entry point.

Subcommands wire scenario files to the library: ``simulate`` ground
truth, ``train`` an agent, ``eval`` a method, ``compare`` adaptive vs
fixed, ``validate`` a feeder or scenario file. All randomness derives
from the scenario seeds, overridable with ``--seed``; outputs are CSV
artifacts in the ``--out`` directory. Wall-clock stats go to
``timing.csv``, which is the one output excluded from byte-for-byte
reproducibility.
"""

import argparse
import os
import sys
from dataclasses import replace

from . import harness
from .agent import load_agent, save_agent
from .errors import GridFaseError, ParseError, ValidationError
from .feeder import load_feeder, topology_order
from .powerflow import profile_from_csv, profile_to_csv, trajectory_to_csv, true_trajectory

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2
EXIT_VALIDATION = 3


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gridfase",
        description="Adaptive multi-rate state estimation for distribution feeders",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, scenario=True):
        if scenario:
            p.add_argument("scenario", help="scenario YAML file")
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--seed", type=int, default=None, help="override all scenario seeds")
        p.add_argument("--quiet", action="store_true")

    p = sub.add_parser("validate", help="lint a feeder or scenario file")
    p.add_argument("path")
    p.add_argument("--quiet", action="store_true")

    p = sub.add_parser("simulate", help="write the ground-truth trajectory")
    common(p)
    p.add_argument("--profile", default=None, help="injection CSV overriding the scenario profile")

    p = sub.add_parser("train", help="train the coefficient agent")
    common(p)
    p.add_argument("--episodes", type=int, default=None)

    p = sub.add_parser("eval", help="Monte Carlo evaluation of the scenario method")
    common(p)
    p.add_argument("--runs", type=int, default=1)
    p.add_argument("--checkpoint", default=None, help="agent checkpoint (adaptive method)")

    p = sub.add_parser("compare", help="paired adaptive-vs-fixed comparison")
    common(p)
    p.add_argument("--runs", type=int, default=20)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--episodes", type=int, default=None)
    return parser


def _say(args, *message):
    if not getattr(args, "quiet", False):
        print(*message)


def _prepare(args):
    sc = harness.load_scenario(args.scenario)
    if args.seed is not None:
        sc = harness.with_seeds(sc, args.seed)
    os.makedirs(args.out, exist_ok=True)
    return sc


def _cmd_validate(args) -> int:
    if args.path.endswith((".yaml", ".yml")):
        sc = harness.load_scenario(args.path)
        runtime = harness.Runtime(sc)
        _say(
            args,
            f"scenario ok: {len(runtime.model.buses)} buses, "
            f"{len(runtime.model.branches)} branches, "
            f"{runtime.table.m} channels ({runtime.table.n_fast} fast), "
            f"state dim {runtime.n_state}",
        )
        return EXIT_OK
    model = load_feeder(args.path)
    topo = topology_order(model)
    _say(
        args,
        f"feeder ok: {len(model.buses)} buses, {len(model.branches)} branches, "
        f"{len(model.loads)} loads, {len(model.ders)} ders, "
        f"max depth {max(topo.depth.values())}",
    )
    return EXIT_OK


def _cmd_simulate(args) -> int:
    sc = _prepare(args)
    runtime = harness.Runtime(sc)
    if args.profile is not None:
        profile = profile_from_csv(args.profile, runtime.index)
    else:
        profile = runtime.profile(sc.profile_seed)
        profile_to_csv(profile, os.path.join(args.out, "profile.csv"))
    states = true_trajectory(runtime.model, profile, index=runtime.index)
    trajectory_to_csv(states, os.path.join(args.out, "trajectory.csv"))
    _say(args, f"wrote {len(states)} states to {os.path.join(args.out, 'trajectory.csv')}")
    return EXIT_OK


def _train(sc, runtime, args, episodes=None) -> str:
    if episodes is not None:
        sc = replace(sc, train_config=replace(sc.train_config, episodes=episodes))
    trained = harness.train_scenario_agent(sc, runtime)
    ckpt = os.path.join(args.out, "agent.ckpt")
    save_agent(trained, ckpt)
    harness.training_log_to_csv(trained.log, os.path.join(args.out, "training_log.csv"))
    return ckpt


def _cmd_train(args) -> int:
    sc = _prepare(args)
    runtime = harness.Runtime(sc)
    ckpt = _train(sc, runtime, args, episodes=args.episodes)
    _say(args, f"checkpoint: {ckpt}")
    return EXIT_OK


def _load_trained(sc, runtime, args):
    if args.checkpoint is not None:
        return load_agent(
            args.checkpoint, expect_n_state=runtime.n_state, expect_m_fast=runtime.table.n_fast
        )
    if sc.method.kind == "adaptive" and sc.method.checkpoint is not None:
        return runtime.load_trained_agent()
    return None


def _cmd_eval(args) -> int:
    sc = _prepare(args)
    runtime = harness.Runtime(sc)
    trained = _load_trained(sc, runtime, args)
    if sc.method.kind == "adaptive" and trained is None:
        raise ValidationError("adaptive method needs --checkpoint or a scenario checkpoint")

    p_seed, n_seed = harness.run_seeds(sc.noise_seed, 0)
    trace = harness.run_scenario(
        sc, runtime=runtime, trained=trained, profile_seed=p_seed, noise_seed=n_seed
    )
    harness.trace_to_csv(trace, os.path.join(args.out, "trace.csv"))

    aggregate, reports = harness.monte_carlo(
        sc, args.runs, sc.noise_seed, runtime=runtime, trained=trained
    )
    harness.metrics_to_csv(aggregate, os.path.join(args.out, "metrics.csv"))
    harness.per_run_to_csv(reports, os.path.join(args.out, "per_run.csv"))
    harness.timing_to_csv(aggregate, os.path.join(args.out, "timing.csv"))
    _say(
        args,
        f"{args.runs} run(s): voltage MAPE {aggregate['vmag_mape_pct_mean']:.4f} %, "
        f"angle MAE {aggregate['vang_mae_rad_mean']:.6f} rad",
    )
    return EXIT_OK


def _cmd_compare(args) -> int:
    sc = _prepare(args)
    runtime = harness.Runtime(sc)
    sc_fixed = replace(sc, method=harness.Method("fixed", sc.method.alpha, sc.method.beta))
    sc_adaptive = replace(sc, method=replace(sc.method, kind="adaptive"))

    trained = _load_trained(sc_adaptive, runtime, args)
    if trained is None:
        _say(args, "no checkpoint given; training the agent first")
        ckpt = _train(sc, runtime, args, episodes=args.episodes)
        trained = load_agent(ckpt)

    result = harness.compare(
        sc_adaptive, sc_fixed, args.runs, sc.noise_seed, runtime=runtime, trained=trained
    )
    harness.compare_to_csv(result, os.path.join(args.out, "compare.csv"))
    harness.metrics_to_csv(result["adaptive"], os.path.join(args.out, "metrics.csv"))
    harness.timing_to_csv(result["adaptive"], os.path.join(args.out, "timing.csv"))
    harness.per_run_to_csv(result["per_run_adaptive"], os.path.join(args.out, "per_run_adaptive.csv"))
    harness.per_run_to_csv(result["per_run_fixed"], os.path.join(args.out, "per_run_fixed.csv"))
    _say(args, harness.compare_table(result))
    return EXIT_OK


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK

    handlers = {
        "validate": _cmd_validate,
        "simulate": _cmd_simulate,
        "train": _cmd_train,
        "eval": _cmd_eval,
        "compare": _cmd_compare,
    }
    try:
        return handlers[args.command](args)
    except (ParseError, ValidationError) as exc:
        print(f"gridfase: validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except GridFaseError as exc:
        print(f"gridfase: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except OSError as exc:
        print(f"gridfase: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def entrypoint():
    sys.exit(main())
