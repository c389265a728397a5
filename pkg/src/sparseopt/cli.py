"""Command line interface.

Subcommands:
  train      run an experiment from a JSON config file
  aggregate  summarize the run files in a directory
  membudget  print closed-form memory tables for a layer list
  pretrain   train a dense-Adam model and write an SOMLP1 checkpoint
"""

from __future__ import annotations

import argparse
import sys

from . import data as datamod
from . import membudget as mb
from .harness import ExperimentConfig, aggregate_dir, pretrain, render_summary_markdown, run_experiment


def _cmd_train(args) -> int:
    cfg = ExperimentConfig.from_file(args.config)
    summary = run_experiment(cfg, out_dir=args.out, seed_offset=args.seed_offset, verbose=True)
    print(render_summary_markdown(summary))
    return 0


def _cmd_aggregate(args) -> int:
    summary = aggregate_dir(args.dir)
    print(render_summary_markdown(summary))
    return 0


def _cmd_membudget(args) -> int:
    if args.layers:
        layers = mb.read_layers_csv(args.layers)
    elif args.preset == "clip-vit-b16":
        layers = mb.clip_vit_b16_layers()
    elif args.preset == "mlp":
        layers = mb.mlp_layers()
    else:
        print("membudget needs --layers FILE or --preset", file=sys.stderr)
        return 2
    spec = mb.MethodSpec(
        args.method,
        kappa=args.kappa if args.method == "sparse" else None,
        rank=args.rank if args.method not in ("sparse", "adam") else None,
    )
    if args.per_layer:
        rows = [mb.budget(layer, spec) for layer in layers]
    else:
        rows = [mb.budget_model(layers, spec)]
    render = mb.render_csv if args.format == "csv" else mb.render_markdown
    print(render(rows), end="")
    return 0


def _cmd_pretrain(args) -> int:
    if args.flat:
        train = datamod.load_flat(args.flat)
    else:
        train = datamod.load_idx(args.images, args.labels)
    pretrain(train, args.ckpt, seed=args.seed, lr=args.lr, tau=args.tau,
             max_iters=args.max_iters, batch_size=args.batch_size, verbose=True)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sparseopt")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run an experiment from a config file")
    p.add_argument("--config", required=True, help="JSON experiment config")
    p.add_argument("--seed-offset", type=int, default=0)
    p.add_argument("--out", default=None, help="output directory (default: config out_dir)")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("aggregate", help="summarize run files in a directory")
    p.add_argument("dir")
    p.set_defaults(func=_cmd_aggregate)

    p = sub.add_parser("membudget", help="closed-form memory accounting")
    p.add_argument("--layers", help="CSV file with one m,n row per layer")
    p.add_argument("--preset", choices=("mlp", "clip-vit-b16"))
    p.add_argument("--method", required=True, choices=mb.METHODS)
    p.add_argument("--kappa", type=float, default=None)
    p.add_argument("--rank", type=int, default=None)
    p.add_argument("--format", choices=("csv", "md"), default="md")
    p.add_argument("--per-layer", action="store_true",
                   help="one row per layer instead of the aggregate")
    p.set_defaults(func=_cmd_membudget)

    p = sub.add_parser("pretrain", help="dense-Adam pretraining to a checkpoint")
    p.add_argument("--images", help="IDX image file")
    p.add_argument("--labels", help="IDX label file")
    p.add_argument("--flat", help="flat dataset file (alternative to --images/--labels)")
    p.add_argument("--ckpt", required=True, help="checkpoint output path")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--tau", type=float, default=1e-4)
    p.add_argument("--max-iters", type=int, default=3000)
    p.add_argument("--batch-size", type=int, default=64)
    p.set_defaults(func=_cmd_pretrain)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
