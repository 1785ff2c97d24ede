"""Command-line front end: ``shopdispatch <subcommand> [flags]``.

Subcommands
  simulate  roll out a rule dispatcher and log the trajectory
  train     REINFORCE training, checkpoint and learning curve
  evaluate  metrics of a rule or a checkpoint on the held-out seeds
  imitate   fit the network to a rule (neural hyper-heuristic)
  transfer  source training, alignment, recovery and fine-tuning
  ablate    the three state variants trained side by side
  report    run an experiment spec end to end, or summarise an output dir
"""
from __future__ import annotations

import argparse
import dataclasses
import csv
import json
import os
import sys

from . import codec
from .harness import (METRIC_FIELDS, ExperimentSpec, SpecError, evaluate_policy, evaluate_runs,
                      run_experiment, train_policy)
from .heuristics import HeuristicDispatcher, train_imitation
from .sim import ConfigError, ShopConfig, episode_metrics, run_episode, write_trajectory_csv


def load_spec(path, args) -> ExperimentSpec:
    """A spec file, a manifest, or a bare ShopConfig JSON; CLI flags override."""
    if path is None:
        spec = ExperimentSpec()
    else:
        with open(path) as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError:
                data = None  # let the spec parser report the position
        spec_keys = {f.name for f in dataclasses.fields(ExperimentSpec)} | {"spec"}
        if not isinstance(data, dict) or spec_keys & set(data):
            spec = ExperimentSpec.from_json(path)
        else:
            spec = ExperimentSpec(config=ShopConfig.from_dict(data))
    if getattr(args, "objective", None):
        spec.config = spec.config.replace(objective=args.objective)
    if getattr(args, "seed", None) is not None:
        spec.seed = args.seed
    if getattr(args, "dispatcher", None) and args.dispatcher in ("edf", "lst", "random", "imitation",
                                                                 "reinforce", "transfer"):
        spec.dispatcher = args.dispatcher
    if getattr(args, "out", None):
        spec.out_dir = args.out
    return spec


def _print_row(label: str, row) -> None:
    print(f"{label:<12}" + "  ".join(f"{f}={getattr(row, f):.4g}" for f in METRIC_FIELDS))


def cmd_simulate(args) -> int:
    spec = load_spec(args.config, args)
    kind = args.dispatcher or "edf"
    seed = spec.seed if args.seed is not None else spec.eval_seeds[0]
    state, rewards, log = run_episode(spec.config, HeuristicDispatcher(kind, seed), seed)
    os.makedirs(spec.out_dir, exist_ok=True)
    path = os.path.join(spec.out_dir, "trajectory.csv")
    write_trajectory_csv(log, path)
    m = episode_metrics(state, rewards, spec.config.gamma)
    print(json.dumps(m))
    print(f"wrote {path}")
    return 0


def cmd_train(args) -> int:
    spec = load_spec(args.config, args)
    if args.iters is not None:
        spec.train["iters"] = args.iters
    os.makedirs(spec.out_dir, exist_ok=True)
    params, report = train_policy(spec, variant=args.variant)
    params.save(os.path.join(spec.out_dir, "policy.npz"))
    report.to_csv(os.path.join(spec.out_dir, "learning_curve.csv"))
    _print_row("reinforce", evaluate_policy(params, spec, args.variant))
    print(f"wrote {spec.out_dir}/policy.npz and learning_curve.csv")
    return 0


def cmd_evaluate(args) -> int:
    spec = load_spec(args.config, args)
    target = args.checkpoint or args.dispatcher or spec.checkpoint or spec.dispatcher
    if target in ("imitation", "reinforce", "transfer"):
        raise SpecError("evaluate: trained dispatchers need --checkpoint")
    rows = evaluate_runs(target, spec.config, spec.eval_seeds, args.variant)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "metrics.csv"), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["seed"] + METRIC_FIELDS)
            for s, r in zip(spec.eval_seeds, rows):
                w.writerow([s] + [repr(float(v)) for v in r.values()])
    _print_row(os.path.basename(str(target)), evaluate_policy(target, spec, args.variant))
    return 0


def cmd_imitate(args) -> int:
    spec = load_spec(args.config, args)
    rule = args.dispatcher if args.dispatcher in ("edf", "lst", "random") else spec.imitation["rule"]
    im = spec.imitation
    params = train_imitation(rule, spec.config, im["samples"], seed=spec.seed, epochs=im["epochs"], lr=im["lr"])
    os.makedirs(spec.out_dir, exist_ok=True)
    params.save(os.path.join(spec.out_dir, "policy.npz"))
    _print_row(f"nn-{rule}", evaluate_policy(params, spec))
    _print_row(rule, evaluate_policy(rule, spec))
    return 0


def _run(spec: ExperimentSpec) -> int:
    paths = run_experiment(spec)
    for name, path in paths.items():
        print(f"{name}: {path}")
    return cmd_summary(spec.out_dir)


def cmd_transfer(args) -> int:
    spec = load_spec(args.config, args)
    spec.dispatcher = "transfer"
    return _run(spec)


def cmd_ablate(args) -> int:
    spec = load_spec(args.config, args)
    spec.dispatcher = "reinforce"
    spec.variants = list(codec.VARIANTS)
    return _run(spec)


def cmd_summary(out_dir) -> int:
    path = os.path.join(out_dir, "metrics.csv")
    if not os.path.exists(path):
        print(f"no metrics.csv in {out_dir}", file=sys.stderr)
        return 2
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    for r in rows:
        print("  ".join(c[:14].ljust(min(w, 14)) for c, w in zip(r, widths)))
    return 0


def cmd_report(args) -> int:
    if args.config:
        return _run(load_spec(args.config, args))
    return cmd_summary(args.out or ExperimentSpec().out_dir)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="shopdispatch", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="experiment spec, manifest or ShopConfig JSON")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="output directory")
        p.add_argument("--objective", choices=["lateness", "tardiness"])
        p.add_argument("--dispatcher", help="edf | lst | random | imitation | reinforce | transfer")
        return p

    common(sub.add_parser("simulate", help="heuristic rollout")).set_defaults(func=cmd_simulate)
    p = common(sub.add_parser("train", help="REINFORCE training"))
    p.add_argument("--iters", type=int)
    p.add_argument("--variant", choices=codec.VARIANTS, default=codec.PROC_SLACK)
    p.set_defaults(func=cmd_train)
    p = common(sub.add_parser("evaluate", help="evaluate a rule or checkpoint"))
    p.add_argument("--checkpoint")
    p.add_argument("--variant", choices=codec.VARIANTS, default=codec.PROC_SLACK)
    p.set_defaults(func=cmd_evaluate)
    common(sub.add_parser("imitate", help="neural hyper-heuristic")).set_defaults(func=cmd_imitate)
    common(sub.add_parser("transfer", help="policy transfer with a scratch baseline")).set_defaults(func=cmd_transfer)
    common(sub.add_parser("ablate", help="state-representation ablation")).set_defaults(func=cmd_ablate)
    common(sub.add_parser("report", help="run a spec or summarise --out")).set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (SpecError, ConfigError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
