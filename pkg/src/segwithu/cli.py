"""Command-line entry point: ``segwithu <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 data or format error, 3 numerical failure.
"""

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import io
from .field import NonFiniteError
from .head import infer
from .losses import error_indicator
from .metrics import (
    accuracy_threshold_curve,
    case_metrics,
    entropy_score,
    fit_temperature,
    reference_curves,
    risk_coverage_curve,
    softmax_np,
)
from .stats import pairwise_matrix, total_column_sums
from .synth import generate_split
from .trainer import collate, train_head
from .variants import GRIDS, VARIANTS, apply_variant

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
METHODS = ("segwithu-ranking", "entropy", "ts-entropy")
# metric -> higher is better
METRICS = {"dice": True, "brier": False, "auroc": True, "aurc": False}

log = logging.getLogger("segwithu")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# shared helpers -----------------------------------------------------------

def _configs(args):
    if args.config:
        synth, train, variant, splits, _, _ = io.load_run_config(args.config)
    else:
        synth, train, variant, splits, _, _ = io.parse_run_config({})
    if getattr(args, "seed", None) is not None:
        synth.seed = train.seed = args.seed
    if getattr(args, "variant", None):
        variant = args.variant
    if variant not in VARIANTS:
        raise UsageError(f"unknown variant {variant!r}; choose from {', '.join(sorted(VARIANTS))}")
    return synth, train, variant, splits


def _split_dir(data, split):
    path = Path(data) / split
    if not path.is_dir():
        raise io.FormatError(f"missing split directory {path}")
    return path


def _scores(method, cases, args):
    """(probabilities, score map) for every case under the chosen scoring rule."""
    taps, z, y = collate(cases)
    if method == "segwithu-ranking":
        if not args.checkpoint:
            raise UsageError("segwithu-ranking needs --checkpoint")
        params, config, _ = io.load_checkpoint(args.checkpoint)
        bundle = infer(params, taps, z, config.head)
        return softmax_np(bundle.z_tilde), bundle.score
    if method == "entropy":
        p = softmax_np(z)
        return p, entropy_score(p)
    val = io.load_cases(_split_dir(args.data, "val"))
    _, zv, yv = collate(val)
    temperature = fit_temperature(zv, yv)
    log.info("fitted temperature %.6f", temperature)
    p = softmax_np(z, temperature)
    return p, entropy_score(p)


def _write_curves(out, probs, score, z, y):
    errors = error_indicator(z, y)
    method = risk_coverage_curve(score, errors, kind="method")
    random, oracle = reference_curves(errors)
    rows = [(c.kind, cov, risk) for c in (method, oracle, random) for cov, risk in zip(c.coverage, c.risk)]
    io.write_csv(out / "risk_coverage.csv", ["kind", "coverage", "risk"], rows)
    io.write_csv(out / "accuracy_threshold.csv", ["threshold", "accuracy", "retained_fraction"],
                 accuracy_threshold_curve(probs, y))


def _evaluate(method, cases, args, out):
    probs, score = _scores(method, cases, args)
    _, z, y = collate(cases)
    errors = error_indicator(z, y)
    metrics = [case_metrics(c.case_id, method, probs[i:i + 1], y[i:i + 1], score[i], errors[i])
               for i, c in enumerate(cases)]
    out.mkdir(parents=True, exist_ok=True)
    io.write_case_metrics(out / "metrics.csv", metrics)
    _write_curves(out, probs, score, z, y)
    return metrics


def _summary_row(metrics):
    return [float(np.nanmean([getattr(m, k) for m in metrics])) for k in METRICS]


# subcommands ----------------------------------------------------------------

def cmd_synth(args):
    synth, _, _, splits = _configs(args)
    out = Path(args.out)
    for split, n in splits.items():
        io.save_cases(out / split, generate_split(synth, n, split))
    io.dump_json(out / "dataset.json", {"schema_version": io.SCHEMA_VERSION, "synth": synth,
                                        "splits": splits})


def _train(data, config, out):
    train_cases = io.load_cases(_split_dir(data, "train"))
    val_cases = io.load_cases(_split_dir(data, "val"))
    params, history = train_head(train_cases, val_cases, config)
    io.save_checkpoint(out, params, config, history)
    keys = sorted({k for r in history.records for k in r} - {"epoch"})
    io.write_csv(Path(out) / "history.csv", ["epoch"] + keys,
                 [[r["epoch"]] + [r.get(k, float("nan")) for k in keys] for r in history.records])
    return params, history


def cmd_train(args):
    _, train, variant, _ = _configs(args)
    _, history = _train(args.data, apply_variant(variant, train), args.out)
    log.info("best epoch %d of %d", history.best_epoch, len(history.records) - 1)


def cmd_infer(args):
    params, config, _ = io.load_checkpoint(args.checkpoint)
    cases = io.load_cases(args.data)
    out = Path(args.out)
    for case in cases:
        bundle = infer(params, case.taps, case.logits, config.head)
        d = out / case.case_id
        d.mkdir(parents=True, exist_ok=True)
        fields = {"probs": bundle.probs, **bundle.maps()}
        for name, arr in fields.items():
            io.write_tensor(d / f"{name}.swut", np.asarray(arr, dtype=np.float32))


def cmd_eval(args):
    cases = io.load_cases(_split_dir(args.data, args.split))
    _evaluate(args.method, cases, args, Path(args.out))


def cmd_curves(args):
    cases = io.load_cases(_split_dir(args.data, args.split))
    probs, score = _scores(args.method, cases, args)
    _, z, y = collate(cases)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_curves(out, probs, score, z, y)


def cmd_compare(args):
    tables = []
    for d in args.results:
        path = Path(d) / "metrics.csv"
        if not path.is_file():
            raise io.FormatError(f"no metrics.csv in {d}")
        tables.append((Path(d), io.read_case_metrics(path)))
    names = [m for _, t in tables for m in t]
    per_metric = {k: {} for k in METRICS}
    for d, table in tables:
        for method, by_metric in table.items():
            label = method if names.count(method) == 1 else f"{d.name}/{method}"
            if label in per_metric["dice"]:
                raise io.FormatError(f"duplicate method label {label!r}")
            for k in METRICS:
                per_metric[k][label] = by_metric[k]

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    matrices = []
    for metric, higher in METRICS.items():
        mat = pairwise_matrix(per_metric[metric], metric, higher, alpha=args.alpha)
        matrices.append(mat)
        rows = [[r] + list(mat.cells[i]) for i, r in enumerate(mat.methods)]
        rows.append(["column_sum"] + list(mat.column_sums))
        io.write_csv(out / f"pairwise_{metric}.csv", ["row"] + mat.methods, rows)
    rows = [[m.metric] + list(m.column_sums) for m in matrices]
    rows.append(["all"] + list(total_column_sums(matrices)))
    io.write_csv(out / "column_sums.csv", ["metric"] + matrices[0].methods, rows)


def cmd_ablate(args):
    synth, train, _, splits = _configs(args)
    out = Path(args.out)
    data = Path(args.data) if args.data else out / "data"
    if not args.data:
        for split, n in splits.items():
            io.save_cases(data / split, generate_split(synth, n, split))
    test_cases = io.load_cases(_split_dir(data, "test"))
    summary = []
    for name in GRIDS[args.grid]:
        run = out / name
        _train(data, apply_variant(name, train), run / "checkpoint")
        args.checkpoint = run / "checkpoint"
        metrics = _evaluate("segwithu-ranking", test_cases, args, run)
        summary.append([name] + _summary_row(metrics))
    io.write_csv(out / "summary.csv", ["variant"] + list(METRICS), summary)


# parser ---------------------------------------------------------------------

def build_parser():
    parser = _Parser(prog="segwithu", description="Uncertainty head for a frozen segmentation backbone.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", metavar="command", parser_class=_Parser)

    def common(p, config=True, seed=True):
        if config:
            p.add_argument("--config", help="run-config JSON (defaults used when omitted)")
        if seed:
            p.add_argument("--seed", type=int, help="overrides every seed in the config")

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    common(p)
    p.add_argument("--out", required=True, help="dataset directory to create")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="fit the head; writes checkpoint and history")
    common(p)
    p.add_argument("--data", required=True, help="dataset directory with train/ and val/")
    p.add_argument("--variant", help="named ablation variant (default: from config, else 'full')")
    p.add_argument("--out", required=True, help="checkpoint directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="write every uncertainty map for a set of cases")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="directory of cases (one split)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_infer)

    for name, func, what in (("eval", cmd_eval, "per-case metrics and curve CSVs"),
                             ("curves", cmd_curves, "risk-coverage and accuracy-threshold CSVs")):
        p = sub.add_parser(name, help=what)
        p.add_argument("--data", required=True, help="dataset directory")
        p.add_argument("--split", default="test")
        p.add_argument("--method", choices=METHODS, default="segwithu-ranking")
        p.add_argument("--checkpoint", help="required for segwithu-ranking")
        p.add_argument("--out", required=True)
        p.set_defaults(func=func)

    p = sub.add_parser("compare", help="pairwise significance matrices across result directories")
    p.add_argument("--results", nargs="+", required=True, help="directories holding metrics.csv")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("ablate", help="train and evaluate every variant of a grid")
    common(p)
    p.add_argument("--grid", choices=sorted(GRIDS), required=True)
    p.add_argument("--data", help="existing dataset (generated from the config when omitted)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("a command is required; see --help")
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(message)s")
        args.func(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except NonFiniteError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (io.FormatError, OSError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
