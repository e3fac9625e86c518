"""Command line entry point.

Subcommands:
  train                 train a task model and save it
  evaluate              full evaluation matrix for a run config
  report                render report.txt / report.csv from a finished run
  demo-sign-distortion  rectified-sine spectrum figure
"""

from __future__ import annotations

import argparse
import sys

from .runner import ConfigError, RunConfig, config_from_dict, evaluate_run, \
    load_config, train_run


def _config(args) -> RunConfig:
    if args.config is not None:
        cfg = load_config(args.config)
    elif args.task is not None:
        cfg = config_from_dict({"task": args.task})
    elif args.dataset is not None:
        cfg = config_from_dict({"dataset": args.dataset})
    else:
        raise ConfigError("one of --config, --task, --dataset is required")
    if args.seed is not None:
        cfg.seed = args.seed
    return cfg


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="aimeval",
                                     description=__doc__.strip().splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    for name in ("train", "evaluate"):
        p = sub.add_parser(name)
        p.add_argument("-c", "--config", help="run config JSON")
        p.add_argument("--task", help="task name (shortcut for a default config)")
        p.add_argument("--dataset", help="dataset directory (spec.json + CSVs)")
        p.add_argument("-o", "--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None)

    p = sub.add_parser("report")
    p.add_argument("run_dir", help="finished evaluate output directory")
    p.add_argument("-o", "--out", default=None,
                   help="where to write report files (default: run_dir)")

    p = sub.add_parser("demo-sign-distortion")
    p.add_argument("-o", "--out", required=True, help="output directory")
    p.add_argument("--fs", type=int, default=512)
    p.add_argument("--freq", type=float, default=10.0)

    args = parser.parse_args(argv)
    try:
        if args.command == "train":
            doc = train_run(_config(args), args.out)
            print(f"train_acc={doc['train_acc']:.4f} "
                  f"test_acc={doc['test_acc']:.4f} -> {args.out}")
        elif args.command == "evaluate":
            doc = evaluate_run(_config(args), args.out)
            print(f"task={doc['task']} test_acc={doc['test_acc']:.4f} "
                  f"operators={len(doc['metrics'])} -> {args.out}")
        elif args.command == "report":
            from .reporting import write_report
            for path in write_report(args.run_dir, args.out):
                print(path)
        elif args.command == "demo-sign-distortion":
            from .reporting import demo_sign_distortion
            doc = demo_sign_distortion(args.out, fs=args.fs, freq=args.freq)
            print(f"peak_original={doc['peak_original_hz']:g}Hz "
                  f"peak_rectified={doc['peak_rectified_hz']:g}Hz -> {args.out}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
