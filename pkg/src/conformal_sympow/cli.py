"""Command-line entry point: ``verify``, ``train``, ``eval`` and ``dim``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import ConfigError, load_config
from .recurrent import state_nbytes
from .sympow import embed_dim


def _lengths(text: str) -> list[int]:
    try:
        vals = [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad length list {text!r}") from None
    if not vals or vals != sorted(vals):
        raise argparse.ArgumentTypeError("lengths must be a non-empty ascending list")
    return vals


def cmd_verify(args) -> int:
    from .verify import FAULTS, format_report, run_all

    cfg = load_config(args.config)
    if args.inject_fault and args.inject_fault not in FAULTS:
        print(f"unknown fault {args.inject_fault!r}; choose from {', '.join(FAULTS)}", file=sys.stderr)
        return 2
    instances = args.instances if args.instances is not None else cfg.verify_instances
    results = run_all(instances=instances, seed=cfg.seed, fault=args.inject_fault,
                      tolerances=cfg.tolerances, with_gradients=not args.no_gradients)
    report = format_report(results)
    sys.stdout.write(report)
    if args.report:
        Path(args.report).parent.mkdir(parents=True, exist_ok=True)
        Path(args.report).write_text(report)
    failed = [r.name for r in results if not r.passed]
    if failed:
        print(f"{len(failed)} suite(s) failed: {', '.join(failed)}", file=sys.stderr)
        return 1
    return 0


def cmd_train(args) -> int:
    from .train import cmd_train as run

    cfg = load_config(args.config)
    if args.steps is not None:
        cfg = cfg.replace(steps=args.steps)
    data = None if args.task else args.data
    res = run(cfg, data, out_dir=args.out, resume=args.resume)
    print(f"initial_loss {res.initial_loss:.4f} final_loss {res.final_loss:.4f}")
    print(f"checkpoint {res.checkpoint}")
    print(f"metrics {res.metrics}")
    return 0


def cmd_eval(args) -> int:
    from .train import EVAL_HEADER, cmd_eval as run

    out = args.out or str(Path(args.checkpoint).with_name("eval.csv"))
    rows = run(args.checkpoint, args.lengths, out, data=args.data, impl=args.formulation)
    print(",".join(EVAL_HEADER))
    for r in rows:
        print(f"{r[0]},{r[1]},{r[2]:.6f},{r[3]}")
    return 0


def cmd_dim(args) -> int:
    D = embed_dim(args.d, args.p)
    nbytes = state_nbytes(args.d, args.p, args.heads, args.bytes) * args.layers
    print(f"D {D}")
    print(f"state_bytes {nbytes} (d+1={args.d + 1} x D={D} x heads={args.heads} x layers={args.layers}"
          f" x {args.bytes} B)")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="conformal-sympow", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("verify", help="run the numerical verification suites")
    p.add_argument("--config")
    p.add_argument("--inject-fault", metavar="NAME")
    p.add_argument("--instances", type=int)
    p.add_argument("--report", help="also write the report to this file")
    p.add_argument("--no-gradients", action="store_true", help="skip the finite-difference gradient suite")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("train", help="train a toy model")
    p.add_argument("--config")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--data", help="local text file, read as bytes")
    src.add_argument("--task", choices=["recall"])
    p.add_argument("--out", help="output directory (default: config out_dir)")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--steps", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="per-position loss at several context lengths")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--lengths", type=_lengths, required=True)
    p.add_argument("--out")
    p.add_argument("--data")
    p.add_argument("--formulation", choices=["recurrent", "quadratic"], default="recurrent")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("dim", help="feature dimension and recurrent state size")
    p.add_argument("--d", type=int, required=True)
    p.add_argument("--p", type=int, required=True)
    p.add_argument("--heads", type=int, default=1)
    p.add_argument("--layers", type=int, default=1)
    p.add_argument("--bytes", type=int, choices=[2, 4, 8], default=4)
    p.set_defaults(func=cmd_dim)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (ConfigError, ValueError, OverflowError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
