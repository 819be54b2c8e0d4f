"""Command-line entry point.

One binary, five subcommands: ``train`` fits a network and writes a
checkpoint plus a per-epoch metrics log, ``eval-loo`` runs the
leave-one-source-out protocol for one or more methods, ``predict`` labels
values with a saved checkpoint, ``gradcheck`` validates the backward passes
against finite differences, and ``synth`` emits the bundled synthetic
dataset.

Exit codes: 0 success, 2 usage errors, 3 data errors, 4 failed numeric
checks.
"""

import argparse
import json
import sys
from dataclasses import replace

from attrpool.data import DataFormatError, DomainCatalog, ingest
from attrpool.evaluation import DL_METHODS, METHODS, render_report, report_records, run_loo
from attrpool.synth import ATTRIBUTES, generate_records, write_csv
from attrpool.training import TrainConfig, TrainedModel, grad_check, metrics_lines, train

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_CHECK = 4


class UsageError(Exception):
    pass


def _build_parser():
    parser = argparse.ArgumentParser(prog="attrpool", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def add_data_args(p):
        p.add_argument("--data", required=True, help="input dataset path")
        p.add_argument("--format", choices=["delimited", "jsonl"], default=None,
                       help="input format (default: by extension, .jsonl else delimited)")

    def add_train_args(p, multi_method=False):
        p.add_argument("--method", default="hybrid-max",
                       help="comma-separated methods" if multi_method else "model variant")
        p.add_argument("--embedding-size", default=None,
                       help="embedding size (comma-separated list for eval-loo grids)")
        p.add_argument("--window", default=None,
                       help="convolution window (comma-separated list for eval-loo grids)")
        p.add_argument("--pooling", default=None, help="override pooling op of hybrid methods")
        p.add_argument("--epochs", type=int, default=None)
        p.add_argument("--batch-size", type=int, default=None)
        p.add_argument("--lr", type=float, default=None)
        p.add_argument("--dropout", type=float, default=None, help="drop rate")
        p.add_argument("--seed", type=int, default=0)

    p_train = sub.add_parser("train", help="train a network and write a checkpoint")
    add_data_args(p_train)
    add_train_args(p_train)
    p_train.add_argument("--out", required=True, help="checkpoint output path")
    p_train.add_argument("--metrics-log", default=None,
                         help="per-epoch csv log path (default: <out>.metrics.csv)")

    p_eval = sub.add_parser("eval-loo", help="leave-one-source-out evaluation")
    add_data_args(p_eval)
    add_train_args(p_eval, multi_method=True)
    p_eval.add_argument("--out", default=None, help="report path prefix (writes .txt and .jsonl)")

    p_pred = sub.add_parser("predict", help="label values with a saved checkpoint")
    p_pred.add_argument("--model", required=True, help="checkpoint path")
    p_pred.add_argument("values", nargs="*", help="attribute values (default: one per stdin line)")

    p_gc = sub.add_parser("gradcheck", help="finite-difference check of the backward passes")
    p_gc.add_argument("--eps", type=float, default=1e-5)
    p_gc.add_argument("--tol", type=float, default=1e-4)

    p_synth = sub.add_parser("synth", help="write the bundled synthetic dataset")
    p_synth.add_argument("--out", required=True, help="csv output path")
    p_synth.add_argument("--sources", type=int, default=3)
    p_synth.add_argument("--attributes", default=",".join(ATTRIBUTES),
                         help=f"comma-separated attribute names from {', '.join(ATTRIBUTES)}")
    p_synth.add_argument("--records-per-source", type=int, default=200)
    p_synth.add_argument("--seed", type=int, default=42)
    return parser


def _load_records(args):
    fmt = args.format or ("jsonl" if str(args.data).endswith(".jsonl") else "delimited")
    return ingest(args.data, fmt)


def _int_list(text, flag):
    try:
        return [int(x) for x in str(text).split(",") if x != ""]
    except ValueError:
        raise UsageError(f"{flag} expects integers, got {text!r}") from None


def _base_config(args, method):
    if method not in METHODS:
        raise UsageError(f"unknown method {method!r}; choose from {', '.join(METHODS)}")
    cfg = TrainConfig(seed=args.seed)
    if method in DL_METHODS:
        branch_mode, pooling = DL_METHODS[method]
        cfg = replace(cfg, branch_mode=branch_mode, pooling=pooling)
        if args.pooling is not None and branch_mode == "hybrid":
            cfg = replace(cfg, pooling=args.pooling)
    overrides = {}
    if args.epochs is not None:
        overrides["epochs"] = args.epochs
    if args.batch_size is not None:
        overrides["batch_size"] = args.batch_size
    if args.lr is not None:
        overrides["learning_rate"] = args.lr
    if args.dropout is not None:
        overrides["drop_rate"] = args.dropout
    try:
        return replace(cfg, **overrides) if overrides else cfg
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _cmd_train(args):
    method = args.method
    if method not in DL_METHODS:
        raise UsageError(f"train supports the network methods ({', '.join(DL_METHODS)}); "
                         f"got {method!r}")
    cfg = _base_config(args, method)
    if args.embedding_size is not None:
        cfg = replace(cfg, embedding_size=_int_list(args.embedding_size, "--embedding-size")[0])
    if args.window is not None:
        cfg = replace(cfg, window=_int_list(args.window, "--window")[0])
    records = _load_records(args)
    model = train(DomainCatalog(records), cfg)
    model.save(args.out)
    log_path = args.metrics_log or f"{args.out}.metrics.csv"
    with open(log_path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(metrics_lines(model.history)) + "\n")
    acc = model.best_validation_accuracy
    acc_text = "n/a" if acc is None else f"{acc:.4f}"
    print(f"saved checkpoint to {args.out} (best validation accuracy {acc_text}, "
          f"epoch {model.best_epoch}); metrics log at {log_path}")
    return EXIT_OK


def _cmd_eval_loo(args):
    methods = [m.strip() for m in args.method.split(",") if m.strip()]
    if not methods:
        raise UsageError("--method must name at least one method")
    for m in methods:
        if m not in METHODS:
            raise UsageError(f"unknown method {m!r}; choose from {', '.join(METHODS)}")
    records = _load_records(args)
    embeddings = _int_list(args.embedding_size, "--embedding-size") if args.embedding_size else [100, 200, 300]
    windows = _int_list(args.window, "--window") if args.window else [3, 5]
    grid = [(e, w) for e in embeddings for w in windows]
    reports = []
    for method in methods:
        cfg = _base_config(args, method)
        reports.append(run_loo(records, method, cfg, grid))
    text = render_report(reports)
    print(text, end="")
    if args.out:
        with open(f"{args.out}.txt", "w", encoding="utf-8") as fh:
            fh.write(text)
        with open(f"{args.out}.jsonl", "w", encoding="utf-8") as fh:
            for rec in report_records(reports):
                fh.write(json.dumps(rec, sort_keys=True, ensure_ascii=False) + "\n")
        print(f"wrote {args.out}.txt and {args.out}.jsonl")
    return EXIT_OK


def _cmd_predict(args):
    model = TrainedModel.load(args.model)
    values = args.values if args.values else [line.rstrip("\n") for line in sys.stdin]
    for value in values:
        label, prob = model.predict(value)
        print(f"{label}\t{prob:.6f}")
    return EXIT_OK


def _cmd_gradcheck(args):
    if args.eps <= 0:
        raise UsageError(f"--eps must be positive, got {args.eps}")
    if args.tol <= 0:
        raise UsageError(f"--tol must be positive, got {args.tol}")
    report = grad_check(eps=args.eps, tol=args.tol)
    for line in report.lines():
        print(line)
    return EXIT_OK if report.passed else EXIT_CHECK


def _cmd_synth(args):
    attributes = tuple(a.strip() for a in args.attributes.split(",") if a.strip())
    try:
        records = generate_records(args.sources, attributes, args.records_per_source, args.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    write_csv(records, args.out)
    print(f"wrote {len(records)} records over {args.sources} sources to {args.out}")
    return EXIT_OK


_COMMANDS = {
    "train": _cmd_train,
    "eval-loo": _cmd_eval_loo,
    "predict": _cmd_predict,
    "gradcheck": _cmd_gradcheck,
    "synth": _cmd_synth,
}


def main(argv=None):
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataFormatError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
