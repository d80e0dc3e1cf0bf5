"""Command line front end: train, eval, verify-theory, gen-grid, aggregate.

Exit codes: 0 on success, 1 on any domain/format/numerics error (also on
failed theory checks), 2 on usage errors (argparse's convention).
"""

import argparse
import json
import sys

from . import config as config_mod
from . import evaluate, theory, training
from .errors import FormatError, UganError
from .models import FourPlayerModel, load_checkpoint


def _load_cfg(args):
    return config_mod.load_config(args.config, tuple(args.set or ()))


def _model_from_checkpoint(cfg, ckpt_path):
    profile = training.profile_from_config(cfg)
    model = FourPlayerModel(profile, seed=int(cfg["train"]["seed"]))
    tensors, _, _ = load_checkpoint(ckpt_path)
    model.load_tensors(tensors)
    return model


def cmd_train(args):
    cfg = _load_cfg(args)
    summary = training.train_run(cfg, args.run_dir, resume=args.resume, log=print)
    print("summary: " + json.dumps(summary, sort_keys=True))
    return 0


def cmd_eval(args):
    cfg = _load_cfg(args)
    model = _model_from_checkpoint(cfg, args.ckpt)
    dataset = training.dataset_from_config(cfg)
    acc = evaluate.split_accuracy(model, dataset, args.split)
    print(f"{args.split}_acc={acc:.6f}")
    return 0


def cmd_verify_theory(args):
    results = theory.verify_suite(trials=args.trials, seed=args.seed)
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"{status}  {r.name}  residual={r.residual:.3e}  tolerance={r.tolerance:.1e}")
    n_pass = sum(r.passed for r in results)
    print(f"{n_pass}/{len(results)} checks passed")
    return 0 if n_pass == len(results) else 1


def cmd_gen_grid(args):
    cfg = _load_cfg(args)
    model = _model_from_checkpoint(cfg, args.ckpt)
    if args.kind == "class":
        grid = evaluate.render_class_grid(model, args.rows, args.seed)
    else:
        grid = evaluate.render_interpolation_grid(model, args.steps, args.seed)
    evaluate.write_pgm(args.out, grid)
    print(f"wrote {args.out} ({grid.shape[0]}x{grid.shape[1]})")
    return 0


def cmd_aggregate(args):
    values = []
    for path in args.summaries:
        try:
            with open(path) as fh:
                summary = json.load(fh)
        except OSError as exc:
            raise FormatError(f"cannot read summary {path}: {exc}")
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: invalid JSON ({exc})")
        acc = summary.get("test_acc")
        if acc is None:
            raise FormatError(f"{path}: no test accuracy recorded")
        print(f"{path}: test_acc={acc:.6f}")
        values.append(float(acc))
    print("test accuracy: " + evaluate.aggregate_accuracies(values))
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="ugan",
        description="Four-player semi-supervised GAN laboratory",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_config_args(p):
        p.add_argument("--config", default=None, help="INI config file (defaults apply if omitted)")
        p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                       help="override a config value (repeatable)")

    p = sub.add_parser("train", help="train a model into a run directory")
    add_config_args(p)
    p.add_argument("--run-dir", required=True, help="output directory for this run")
    p.add_argument("--resume", action="store_true", help="continue from the run's last checkpoint")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="report accuracy of a checkpoint on a dataset split")
    add_config_args(p)
    p.add_argument("--ckpt", required=True, help="checkpoint file")
    p.add_argument("--split", default="test", help="dataset split name (default: test)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("verify-theory", help="run the exact finite-support theory checks")
    p.add_argument("--trials", type=int, default=20, help="random instances per check")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_verify_theory)

    p = sub.add_parser("gen-grid", help="render a PGM sample grid from a checkpoint")
    add_config_args(p)
    p.add_argument("--ckpt", required=True, help="checkpoint file")
    p.add_argument("--out", required=True, help="output PGM path")
    p.add_argument("--kind", choices=("class", "interp"), default="class")
    p.add_argument("--rows", type=int, default=5, help="rows of a class grid")
    p.add_argument("--steps", type=int, default=8, help="columns of an interpolation grid")
    p.add_argument("--seed", type=int, default=0, help="latent seed for the grid")
    p.set_defaults(func=cmd_gen_grid)

    p = sub.add_parser("aggregate", help="combine run summaries into mean ± std accuracy")
    p.add_argument("summaries", nargs="+", help="summary.json files from train runs")
    p.set_defaults(func=cmd_aggregate)

    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except UganError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
