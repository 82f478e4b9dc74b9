"""Command line entry point: ``glocalk <command> [options]``."""

import argparse
import json
import logging
import os
import sys

from . import data as D
from . import pipeline as P

OVERRIDES = [
    # flag, config key, type
    ("--lambda2", "lambda2", float),
    ("--lambda-s", "lambda_s", float),
    ("--h", "hidden", int),
    ("--num-hidden", "num_hidden", int),
    ("--d", "kernel_dim", int),
    ("--t", "conv_size", int),
    ("--maxiter-p", "maxiter_p", int),
    ("--maxiter-f", "maxiter_f", int),
    ("--pretrain-epochs", "pretrain_epochs", int),
    ("--finetune-epochs", "finetune_epochs", int),
    ("--train-ratio", "train_ratio", float),
    ("--conv-layers", "conv_layers", int),
    ("--split", "split", str),
    ("--test-fraction", "test_fraction", float),
]


def _common(p):
    p.add_argument("--dataset", choices=P.DATASETS, default=None)
    p.add_argument("--data-path", default=None)
    p.add_argument("--config", default=None, help="file of 'key = value' lines")
    p.add_argument("--seed-list", default=None, help="comma-separated seeds, e.g. 0,1,2,3,4")
    p.add_argument("--out", default=None, help="output directory")
    p.add_argument("--agg", choices=("weighted", "avg"), default=None)
    for flag, key, typ in OVERRIDES:
        p.add_argument(flag, dest=key, type=typ, default=None)


def _config(args):
    file_values = P.parse_config_file(args.config) if args.config else {}
    overrides = {key: getattr(args, key) for _, key, _ in OVERRIDES}
    overrides["data_path"] = args.data_path
    overrides["agg_mode"] = args.agg
    if args.seed_list is not None:
        overrides["seeds"] = args.seed_list
    if args.dataset is not None:
        overrides["dataset"] = args.dataset
    dataset = overrides.get("dataset") or file_values.get("dataset") or "ml100k"
    return P.build_config(dataset, file_values, overrides)


def _ints(text):
    return [int(x) for x in text.replace(",", " ").split()]


def _floats(text):
    return [float(x) for x in text.replace(",", " ").split()]


def cmd_train(args):
    cfg = _config(args)
    report = P.run_experiment(cfg, out_dir=args.out)
    for run in report.runs:
        print(f"seed {run['seed']}: rmse {run['rmse']:.4f}")
    print(f"mean rmse {report.mean_rmse:.4f} over {len(report.runs)} seeds")
    return 0


def cmd_evaluate(args):
    cfg = _config(args)
    seed = cfg.seeds[0]
    score = P.evaluate_checkpoint(cfg, args.checkpoint, seed)
    print(f"rmse {score:.4f}")
    return 0


def cmd_sweep_epochs(args):
    cfg = _config(args)
    reports = P.sweep_pretrain_epochs(cfg, _ints(args.epochs), out_dir=args.out)
    for e, rep in reports.items():
        print(f"pretrain_epochs={e:<3d} mean rmse {rep.mean_rmse:.4f}")
    return 0


def cmd_sweep_ratio(args):
    cfg = _config(args)
    reports = P.sweep_train_ratio(cfg, _floats(args.ratios), out_dir=args.out)
    for r, rep in reports.items():
        print(f"train_ratio={r:.2f} mean rmse {rep.mean_rmse:.4f}")
    return 0


def cmd_sweep_kernel(args):
    cfg = _config(args)
    cells = P.global_kernel_grid(_ints(args.sizes), _ints(args.layers), full=args.full)
    reports = P.sweep_global_kernel(cfg, cells, out_dir=args.out)
    for (t, c, a), rep in reports.items():
        print(f"t={t} conv_layers={c} agg={a:<15s} mean rmse {rep.mean_rmse:.4f}")
    return 0


def cmd_gradcheck(args):
    sizes = json.loads(args.sizes) if args.sizes else None
    results = P.gradcheck_command(args.draws, args.seed, sizes=sizes)
    ok = True
    for stage, k, rep in results:
        ok &= rep.passed
        lines = rep.lines()
        print(f"[{stage} draw {k}] {lines[0]}")
        if args.verbose or not rep.passed:
            print("\n".join(lines[1:]))
    print("gradcheck", "PASS" if ok else "FAIL")
    return 0 if ok else 1


def cmd_stats(args):
    cfg = _config(args)
    stats = D.dataset_stats(P.load_full(cfg))
    print(json.dumps(stats, indent=2))
    return 0


def make_parser():
    parser = argparse.ArgumentParser(prog="glocalk", description=__doc__)
    parser.add_argument("-v", "--log-level", default="INFO")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="pre-train, fine-tune and evaluate every seed")
    _common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score a fine-tuning checkpoint on the test split")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep-epochs", help="RMSE versus number of pre-training epochs")
    _common(p)
    p.add_argument("--epochs", default="0,10,20,30,40,50,60")
    p.set_defaults(func=cmd_sweep_epochs)

    p = sub.add_parser("sweep-ratio", help="RMSE versus fraction of training ratings kept")
    _common(p)
    p.add_argument("--ratios", default="0.2,0.4,0.6,0.8,1.0")
    p.set_defaults(func=cmd_sweep_ratio)

    p = sub.add_parser("sweep-kernel", help="global kernel size / depth / aggregation table")
    _common(p)
    p.add_argument("--sizes", default="3,5,7")
    p.add_argument("--layers", default="1,2,3")
    p.add_argument("--full", action="store_true", help="full grid instead of one factor at a time")
    p.set_defaults(func=cmd_sweep_kernel)

    p = sub.add_parser("gradcheck", help="finite-difference check of both objectives")
    p.add_argument("--draws", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sizes", default=None,
                   help='JSON dict of instance sizes, e.g. {"m": 6, "n": 4, "hidden": 3, "d": 2}')
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("stats", help="users, items, ratings and density of a dataset")
    _common(p)
    p.set_defaults(func=cmd_stats)
    return parser


def main(argv=None):
    parser = make_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.INFO),
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    if getattr(args, "out", None):
        os.makedirs(args.out, exist_ok=True)
    try:
        return args.func(args)
    except (FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
