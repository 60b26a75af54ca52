"""Command-line entry point: ``ctta {pretrain,run,ablate,sweep,report}``."""

from __future__ import annotations

import argparse
import logging
import sys

from ..errors import CTTAError
from . import config as cfgmod
from . import runner


def _flag(key: str) -> str:
    return "--" + key.replace("_", "-")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI file with [source] [stream] [adapt] [run] sections")
    common.add_argument("-v", "--verbose", action="store_true")
    group = common.add_argument_group("config overrides")
    for section, key, _ in cfgmod.field_names():
        group.add_argument(_flag(key), dest=f"set_{key}", metavar="VALUE", help=f"override {section}.{key}")

    p = argparse.ArgumentParser(prog="ctta", description="Online continual test-time adaptation experiments.")
    sub = p.add_subparsers(dest="command", required=True)
    sp = sub.add_parser("pretrain", parents=[common], help="train and save source models")
    sp.add_argument("--force", action="store_true", help="retrain even if a matching checkpoint exists")
    sp = sub.add_parser("run", parents=[common], help="adapt one method over the stream for each seed")
    sp.add_argument("--resume", action="store_true", help="continue from the latest checkpoint")
    sp.add_argument("--jobs", type=int, default=1)
    sp = sub.add_parser("ablate", parents=[common], help="compare methods on identical streams")
    sp.add_argument("--methods", default=",".join(cfgmod.ABLATION_ROWS))
    sp.add_argument("--jobs", type=int, default=1)
    sp = sub.add_parser("sweep", parents=[common], help="grid over lambda_crp and alpha")
    sp.add_argument("--lambdas", default=",".join(f"{v:g}" for v in runner.SWEEP_LAMBDAS))
    sp.add_argument("--alphas", default=",".join(f"{v:g}" for v in runner.SWEEP_ALPHAS))
    sp.add_argument("--jobs", type=int, default=1)
    sp = sub.add_parser("report", help="re-fold persisted steps.csv files into tables")
    sp.add_argument("path")
    return p


def resolve_config(args: argparse.Namespace) -> cfgmod.RunConfig:
    cfg = cfgmod.load(args.config) if args.config else cfgmod.RunConfig()
    overrides = {}
    for key, value in vars(args).items():
        if key.startswith("set_") and value is not None:
            name = key[4:]
            overrides[name] = cfgmod.parse_value(name, value)
    return cfg.override(**overrides) if overrides else cfg


def _floats(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise cfgmod.ConfigError(f"expected comma-separated numbers, got {text!r}") from None


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING, format="%(message)s")
    try:
        if args.command == "report":
            print(runner.report(args.path))
            return 0
        cfg = resolve_config(args)
        if args.command == "pretrain":
            for seed in cfg.run.seeds:
                print(runner.pretrain(cfg, seed, force=args.force))
        elif args.command == "run":
            for r in runner.run_seeds(cfg, workers=args.jobs, resume=args.resume):
                print(f"{r.method} seed {r.seed}: mean error {100 * r.mean_error:.2f}%  "
                      f"source acc {100 * r.source_acc_before:.2f}% -> {100 * r.source_acc_after:.2f}%  [{r.run_dir}]")
        elif args.command == "ablate":
            methods = tuple(m.strip() for m in args.methods.split(",") if m.strip())
            for m in methods:
                cfg.with_method(m)
            runner.ablate(cfg, methods, workers=args.jobs)
            print((cfg.out_root() / "ablation.txt").read_text(), end="")
        elif args.command == "sweep":
            cells = runner.sweep(cfg, _floats(args.lambdas), _floats(args.alphas), workers=args.jobs)
            for c in cells:
                errs = [r.mean_error for r in c.results]
                print(f"lambda_crp={c.lambda_crp:g} alpha={c.alpha:g}: mean error {100 * sum(errs) / len(errs):.2f}%")
    except CTTAError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
