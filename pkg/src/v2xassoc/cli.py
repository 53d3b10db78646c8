"""Command-line front end.

Subcommands: generate-traces, train, evaluate, baseline, sweep, report.
Exit code 0 on success; failures print one machine-readable line to stderr
(``error: code=<code> msg="..."``) and exit nonzero.
"""

import argparse
import os
import sys

from . import a3c, harness
from .channel import export_trace_csv, write_trace
from .errors import ConfigInvalid, InvalidArgument, SimError


def _add_common(parser):
    parser.add_argument("config", help="experiment config file (key = value lines)")
    parser.add_argument("--out", default="out", help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="v2xassoc",
        description="mmWave vehicular association simulator and trainer")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate-traces", help="generate and store a channel trace")
    _add_common(p)
    p.add_argument("--csv", action="store_true", help="also export a CSV dump")

    p = sub.add_parser("train", help="offline-train the RSU agents")
    _add_common(p)

    p = sub.add_parser("evaluate", help="evaluate a policy over the eval trace")
    _add_common(p)
    p.add_argument("--policy", required=True, choices=harness.ALL_POLICIES)
    p.add_argument("--checkpoint", default="", help="parameter checkpoint path")

    p = sub.add_parser("baseline", help="run a baseline policy")
    _add_common(p)
    p.add_argument("--policy", required=True,
                   choices=[n for n in harness.ALL_POLICIES if not n.startswith("drl")])

    p = sub.add_parser("sweep", help="sweep one axis over a list of values")
    _add_common(p)
    p.add_argument("--axis", required=True, choices=harness.SWEEP_AXES)
    p.add_argument("--values", required=True,
                   help="comma-separated values, e.g. 2,4,6")

    p = sub.add_parser("report", help="summarize metrics CSVs in a directory")
    p.add_argument("directory")
    p.add_argument("--out", default=None, help="summary CSV path")
    return parser


def cmd_generate_traces(args) -> int:
    cfg = harness.load_config(args.config)
    os.makedirs(args.out, exist_ok=True)
    env, trace = harness.build_eval_env(cfg)
    path = os.path.join(args.out, "trace.v2xt")
    write_trace(trace, path)
    if args.csv:
        export_trace_csv(trace, os.path.join(args.out, "trace.csv"))
    print(f"wrote {path} ({trace.slots} slots, {trace.rsus} RSUs, "
          f"{trace.vehicles} vehicles)")
    return 0


def cmd_train(args) -> int:
    cfg = harness.load_config(args.config)
    params, stats = harness.train_drl(cfg, args.out)
    print(f"trained {params.agents} agents over {len(stats['episodes'])} episodes; "
          f"checkpoint at {os.path.join(args.out, 'checkpoint.v2xp')}")
    return 0


def cmd_evaluate(args) -> int:
    cfg = harness.load_config(args.config)
    cfg = cfg.replace(**{"run.policies": (args.policy,)})
    params = None
    if args.checkpoint:
        params, _ = a3c.load_checkpoint(args.checkpoint)
    elif args.policy == "drl_offline":
        raise InvalidArgument("evaluate --policy drl_offline needs --checkpoint")
    bundle = harness.run_experiment(cfg, args.out, params=params)
    summary = bundle.summaries[args.policy]
    print(f"{args.policy}: reward {summary.mean_reward:.4f}, "
          f"sum rate {summary.mean_sum_rate_bps / 1e9:.3f} Gbps, "
          f"violation probability {summary.violation_probability:.4f}")
    return 0


def cmd_baseline(args) -> int:
    return cmd_evaluate(argparse.Namespace(
        config=args.config, out=args.out, policy=args.policy, checkpoint=""))


def cmd_sweep(args) -> int:
    cfg = harness.load_config(args.config)
    values = [tok for tok in args.values.split(",") if tok]
    if not values:
        raise ConfigInvalid("sweep --values must list at least one value")
    rows = harness.sweep(cfg, args.axis, values, args.out)
    for row in rows:
        print(f"{row['axis']}={row['value']} {row['policy']}: "
              f"sum rate {row['mean_sum_rate_bps'] / 1e9:.3f} Gbps, "
              f"violations {row['violation_probability']:.4f}")
    return 0


def cmd_report(args) -> int:
    out_path = args.out or os.path.join(args.directory, "summary.csv")
    bundle = harness.report_directory(args.directory, out_path)
    for name in sorted(bundle.summaries):
        s = bundle.summaries[name]
        print(f"{name}: reward {s.mean_reward:.4f}, "
              f"sum rate {s.mean_sum_rate_bps / 1e9:.3f} Gbps, "
              f"violation probability {s.violation_probability:.4f}")
    return 0


COMMANDS = {
    "generate-traces": cmd_generate_traces,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "baseline": cmd_baseline,
    "sweep": cmd_sweep,
    "report": cmd_report,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except SimError as exc:
        print(f'error: code={exc.code} msg="{exc}"', file=sys.stderr)
        return 2
    except OSError as exc:
        print(f'error: code=io-failure msg="{exc}"', file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
