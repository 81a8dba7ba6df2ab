"""``aeroemu`` command line: gen, train, eval, predict, bench.

Exit codes: 0 success, 1 usage error, 2 data/schema error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import bench, data, evaluation, model, refmodel, training
from .classifier import BundleError, LogPipelineBundle, predict_tendencies, train_log_pipeline
from .schema import SCHEMA, SchemaError
from .transforms import DegenerateColumnError, ProvenanceError

log = logging.getLogger("aeroemu")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
DATA_ERRORS = (SchemaError, data.DataError, model.CheckpointError, BundleError, OSError,
               refmodel.ConfigError, DegenerateColumnError, ProvenanceError, evaluation.MetricError,
               json.JSONDecodeError)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _write(text: str, out):
    if out in (None, "-"):
        sys.stdout.write(text if text.endswith("\n") else text + "\n")
    else:
        Path(out).write_text(text)


def load_model(path):
    """A checkpoint file or a log-pipeline bundle directory."""
    p = Path(path)
    if p.is_dir():
        return LogPipelineBundle.load(p)
    return model.Checkpoint.load(p)


def apply_completion_override(m, text):
    """Merge ``SO4=4,BC=5`` style completion indices into the model's constraint config."""
    if not text:
        return
    target = m.regressor if isinstance(m, LogPipelineBundle) else m
    idx = dict(target.constraint.completion_indices)
    try:
        for item in text.split(","):
            name, j = item.split("=")
            idx[name.strip()] = int(j)
        target.constraint = model.ConstraintConfig(target.constraint.mode, idx)
    except ValueError as e:
        raise UsageError(f"bad --completion {text!r}: {e}") from None


# ---------------------------------------------------------------- commands

def cmd_gen(args):
    params = refmodel.GeneratorParams()
    if args.params:
        params = refmodel.GeneratorParams.from_dict(json.loads(Path(args.params).read_text()))
    if args.n < 1:
        raise UsageError("--n must be at least 1")
    ds = refmodel.generate_dataset(args.n, args.seed, params)
    refmodel.check_dataset(ds)
    data.save(ds, args.out)
    log.info("wrote %d rows to %s", len(ds), args.out)


_OVERRIDES = ("seed", "epochs", "lr", "weight_decay", "batch_size", "lam", "mu", "transform",
              "activation", "constraint_mode", "val_fraction")


def build_config(args) -> training.TrainConfig:
    cfg = {}
    if args.config:
        cfg = json.loads(Path(args.config).read_text())
    for key in _OVERRIDES:
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    if args.arch:
        cfg["arch"] = [int(a) for a in args.arch.split(",")]
    try:
        return training.TrainConfig.from_dict(cfg)
    except (TypeError, ValueError) as e:
        raise UsageError(f"bad training config: {e}") from None


def cmd_train(args):
    config = build_config(args)
    train = data.load(args.train)
    val = data.load(args.val) if args.val else None
    out = Path(args.out)
    if config.transform == "log":
        bundle, reg_log, clf_log = train_log_pipeline(config, train, val)
        bundle.save(out)
        reg_log.write_csv(out / "regressor_epochs.csv")
        clf_log.write_csv(out / "classifier_epochs.csv")
    else:
        ckpt, elog = training.train(config, train, val)
        ckpt.meta["id"] = out.stem
        ckpt.save(out)
        elog.write_csv(args.log or out.with_suffix(".epochs.csv"))
    log.info("saved model to %s", out)


def cmd_eval(args):
    m = load_model(args.ckpt)
    apply_completion_override(m, args.completion)
    ds = data.load(args.data)
    report = evaluation.evaluate(m, ds, args.constraint)
    _write(report.to_json(), args.out)
    if args.out not in (None, "-"):
        base = Path(args.out).with_suffix("")
        Path(args.per_variable or f"{base}_per_variable.csv").write_text(report.per_variable_csv())
        Path(f"{base}.csv").write_text(report.to_csv())


def cmd_predict(args):
    m = load_model(args.ckpt)
    apply_completion_override(m, args.completion)
    ds = data.load(args.input)
    if isinstance(m, LogPipelineBundle):
        pred = predict_tendencies(m, ds.x, args.constraint)
    else:
        pred = evaluation.predict(m, ds.x, args.constraint)
    header = [f"truth_{n}" for n in SCHEMA.output_names] + [f"pred_{n}" for n in SCHEMA.output_names]
    fh = open(args.out, "w", newline="") if args.out not in (None, "-") else sys.stdout
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in np.hstack([ds.y, pred]).tolist():
            w.writerow(map(repr, row))
    finally:
        if fh is not sys.stdout:
            fh.close()


def cmd_bench(args):
    ckpt = model.Checkpoint.load(args.ckpt) if args.ckpt else None
    if args.n < 1:
        raise UsageError("--n must be at least 1")
    kinds = ["refmodel", "nn-standard"] + (["nn-constrained"] if args.constrained else [])
    reports = bench.run_bench(ckpt, args.n, args.threads, args.float32, args.repeats, args.seed,
                              kinds)
    _write(bench.reports_to_json(reports), args.out)


# ---------------------------------------------------------------- parser

def build_parser():
    p = _Parser(prog="aeroemu", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen", help="generate a synthetic dataset")
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True, help=".csv for CSV, anything else for binary")
    g.add_argument("--params", help="JSON file with generator parameter overrides")
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="train a regressor (or a log-pipeline bundle)")
    t.add_argument("--config")
    t.add_argument("--train", required=True)
    t.add_argument("--val")
    t.add_argument("--out", required=True)
    t.add_argument("--log", help="epoch-log CSV path")
    t.add_argument("--seed", type=int)
    t.add_argument("--epochs", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--weight-decay", type=float)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--lam", type=int, choices=(0, 1))
    t.add_argument("--mu", type=int, choices=(0, 1))
    t.add_argument("--transform", choices=("standard", "log"))
    t.add_argument("--activation", choices=model.ACTIVATIONS)
    t.add_argument("--constraint", dest="constraint_mode", choices=model.CONSTRAINT_MODES)
    t.add_argument("--val-fraction", type=float)
    t.add_argument("--arch", help="comma-separated layer widths, e.g. 32,128,128,128,28")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="score a model on a dataset")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--constraint", choices=model.CONSTRAINT_MODES)
    e.add_argument("--completion", help="completion output index per species, e.g. SO4=0,BC=5")
    e.add_argument("--out")
    e.add_argument("--per-variable")
    e.set_defaults(func=cmd_eval)

    pr = sub.add_parser("predict", help="write truth/prediction pairs as CSV")
    pr.add_argument("--ckpt", required=True)
    pr.add_argument("--in", dest="input", required=True)
    pr.add_argument("--out")
    pr.add_argument("--constraint", choices=model.CONSTRAINT_MODES)
    pr.add_argument("--completion", help="completion output index per species, e.g. SO4=0,BC=5")
    pr.set_defaults(func=cmd_predict)

    b = sub.add_parser("bench", help="throughput of box model vs emulator")
    b.add_argument("--ckpt")
    b.add_argument("--n", type=int, default=bench.GLOBAL_STEP_ROWS)
    b.add_argument("--threads", type=int, default=1)
    b.add_argument("--float32", action="store_true")
    b.add_argument("--constrained", action="store_true")
    b.add_argument("--repeats", type=int, default=5)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--out")
    b.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except UsageError as e:
        print(f"aeroemu: usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except training.NumericalError as e:
        print(f"aeroemu: numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except DATA_ERRORS as e:
        print(f"aeroemu: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
