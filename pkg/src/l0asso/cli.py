"""Command-line entry points: ``train``, ``eval`` and ``report``.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime error
(including divergence).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import statistics
import sys
from dataclasses import asdict, fields

from threadpoolctl import threadpool_limits

from . import __version__
from .config import load_config, parse_config
from .data import load_mnist, make_synthetic
from .errors import ConfigError, DimensionError, IDXParseError, TrainingDiverged
from .metrics import error_rate, sparsity_report
from .model import build_lenet5_caffe, build_mlp, check_compatible, load_checkpoint, save_checkpoint
from .optim import TrainRecord, train

log = logging.getLogger("l0asso")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2

CSV_FIELDS = [f.name for f in fields(TrainRecord) if f.name != "wall_time"]
RECORDS_FILE = "records.csv"
TIMING_FILE = "timing.csv"
REPORT_FILE = "report.json"
LAYERS_FILE = "sparsity.json"
CHECKPOINT_FILE = "checkpoint.npz"
CONFIG_FILE = "config.ini"

METHOD_NAMES = {
    "none": "unregularized",
    "l1": "l1",
    "l0": "l0 (penalty decomposition)",
    "gl": "group lasso",
    "sgl": "sparse group lasso",
    "sgl0": "sparse group l0asso",
}
REPORT_METRICS = ("weight_sparsity", "neuron_sparsity", "test_error")


def _fmt(x):
    return repr(float(x))


def load_datasets(cfg):
    if cfg.source == "mnist":
        train_data = load_mnist(cfg.mnist_dir or None, "train")
        test_data = load_mnist(cfg.mnist_dir or None, "test")
    else:
        train_data = make_synthetic(cfg.synthetic_classes, cfg.synthetic_dim, cfg.synthetic_per_class,
                                    cfg.seed, cfg.synthetic_spread, "train")
        test_data = make_synthetic(cfg.synthetic_classes, cfg.synthetic_dim, cfg.synthetic_test_per_class,
                                   cfg.seed, cfg.synthetic_spread, "test")
    return train_data.astype(cfg.dtype), test_data.astype(cfg.dtype)


def build_model(cfg):
    if cfg.arch == "lenet5-caffe":
        return build_lenet5_caffe(cfg.seed, cfg.dtype, cfg.grouping)
    return build_mlp(cfg.mlp_sizes, cfg.seed, cfg.dtype, cfg.grouping)


def final_metrics(net, test_data, cfg):
    """Prune, evaluate, and return ``(flat metrics dict, per-layer report)``."""
    pruned, report = sparsity_report(net, net.partition, cfg.weight_threshold, cfg.neuron_threshold)
    metrics = {
        "test_error": error_rate(pruned, test_data),
        "weight_sparsity": report.weight_sparsity,
        "neuron_sparsity": report.neuron_sparsity,
        "total_params": report.total_params,
        "total_groups": report.total_groups,
        "weight_threshold": cfg.weight_threshold,
        "neuron_threshold": cfg.neuron_threshold,
    }
    return metrics, report


def _write_report(path, cfg, status, metrics=None, last=None):
    report = {
        "status": status,
        "method": cfg.kind,
        "arch": cfg.arch,
        "grouping": cfg.grouping,
        "seed": cfg.seed,
        "epochs": cfg.epochs,
        "lambda": cfg.lam,
        "config_hash": cfg.hash(),
        "version": __version__,
    }
    if last is not None:
        report.update(epochs_completed=last.epoch, train_loss=last.train_loss, f_beta=last.f_beta,
                      beta=last.beta, lr=last.lr)
    report.update(metrics or {})
    with open(path, "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return report


def run_train(cfg):
    """Train per ``cfg`` into ``cfg.out_dir``; returns the final report dict."""
    out = cfg.out_dir
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, CONFIG_FILE), "w") as fh:
        fh.write(cfg.to_ini())
    train_data, test_data = load_datasets(cfg)
    net = build_model(cfg)
    settings = cfg.train_settings()

    records_fh = open(os.path.join(out, RECORDS_FILE), "w", newline="")
    timing_fh = open(os.path.join(out, TIMING_FILE), "w", newline="")
    records_csv, timing_csv = csv.writer(records_fh, lineterminator="\n"), csv.writer(timing_fh, lineterminator="\n")
    records_csv.writerow(CSV_FIELDS)
    timing_csv.writerow(["epoch", "wall_time"])
    last = []

    def on_epoch(rec):
        row = asdict(rec)
        records_csv.writerow([row["epoch"]] + [_fmt(row[k]) for k in CSV_FIELDS[1:]])
        timing_csv.writerow([rec.epoch, f"{rec.wall_time:.3f}"])
        records_fh.flush()
        timing_fh.flush()
        last.append(rec)
        log.info("epoch %d loss %.4f f_beta %.4f err %.2f%% w-sp %.2f%% n-sp %.2f%% beta %.3g lr %.3g (%.0fs)",
                 rec.epoch, rec.train_loss, rec.f_beta, rec.test_error, rec.weight_sparsity,
                 rec.neuron_sparsity, rec.beta, rec.lr, rec.wall_time)

    try:
        result = train(net, train_data, test_data, settings, on_epoch)
    except TrainingDiverged as exc:
        if exc.last_good is not None:
            save_checkpoint(exc.last_good, os.path.join(out, CHECKPOINT_FILE))
        _write_report(os.path.join(out, REPORT_FILE), cfg, "diverged", {"error": str(exc)},
                      last[-1] if last else None)
        raise
    finally:
        records_fh.close()
        timing_fh.close()

    save_checkpoint(result.net, os.path.join(out, CHECKPOINT_FILE))
    metrics, layer_report = final_metrics(result.net, test_data, cfg)
    with open(os.path.join(out, LAYERS_FILE), "w") as fh:
        json.dump(layer_report.to_dict(), fh, indent=2)
        fh.write("\n")
    return _write_report(os.path.join(out, REPORT_FILE), cfg, "completed", metrics, last[-1])


def run_eval(cfg, checkpoint_path):
    net = load_checkpoint(checkpoint_path)
    check_compatible(net, build_model(cfg))
    if net.grouping != cfg.grouping:
        log.warning("checkpoint grouping %r overrides config grouping %r", net.grouping, cfg.grouping)
    _, test_data = load_datasets(cfg)
    metrics, _ = final_metrics(net.astype(cfg.dtype), test_data, cfg)
    return metrics


def _load_report(run_dir):
    path = os.path.join(run_dir, REPORT_FILE)
    with open(path) as fh:
        report = json.load(fh)
    if report.get("status") != "completed":
        raise ValueError(f"run status is {report.get('status')!r}")
    for key in REPORT_METRICS + ("method",):
        if key not in report:
            raise ValueError(f"missing {key!r}")
        if key != "method" and not math.isfinite(report[key]):
            raise ValueError(f"non-finite {key!r}")
    return report


def aggregate(reports):
    """Mean and sample std per method, in first-seen method order.

    A method with a single run reports std 0.
    """
    by_method = {}
    for r in reports:
        by_method.setdefault(r["method"], []).append(r)
    rows = []
    for method, runs in by_method.items():
        row = {"method": method, "runs": len(runs)}
        for key in REPORT_METRICS:
            values = [float(r[key]) for r in runs]
            row[f"{key}_mean"] = statistics.fmean(values)
            row[f"{key}_std"] = statistics.stdev(values) if len(values) > 1 else 0.0
        rows.append(row)
    return rows


def format_table(rows):
    header = ("Method", "Mean Weight Sparsity (%) [Std (%)]", "Mean Neuron Sparsity (%) [Std (%)]",
              "Test Error (%) [Std (%)]", "Runs")
    body = []
    for row in rows:
        cells = [METHOD_NAMES.get(row["method"], row["method"])]
        cells += [f"{row[k + '_mean']:.2f} [{row[k + '_std']:.2f}]" for k in REPORT_METRICS]
        cells.append(str(row["runs"]))
        body.append(cells)
    widths = [max(len(str(c)) for c in col) for col in zip(header, *body)]
    lines = [" | ".join(str(c).ljust(w) for c, w in zip(header, widths))]
    lines.append("-+-".join("-" * w for w in widths))
    lines += [" | ".join(c.ljust(w) for c, w in zip(cells, widths)) for cells in body]
    return "\n".join(lines)


# -- argument handling ---------------------------------------------------------


def _parser():
    p = argparse.ArgumentParser(prog="l0asso", description="Sparse group l0asso training and evaluation.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a model from a config file or preset")
    t.add_argument("--config", required=True, help="INI file path or preset name")
    t.add_argument("--seed", type=int, help="override train.seed")
    t.add_argument("--out", help="override output.out_dir")
    t.add_argument("--threads", type=int, default=1, help="BLAS threads (1 = deterministic)")

    e = sub.add_parser("eval", help="prune and evaluate a checkpoint")
    e.add_argument("--run", help="run directory (uses its config.ini and checkpoint.npz)")
    e.add_argument("--config", help="config file or preset (dataset and model)")
    e.add_argument("--checkpoint", help="checkpoint file")
    e.add_argument("--weight-threshold", type=float)
    e.add_argument("--neuron-threshold", type=float)
    e.add_argument("--out", help="write the metrics JSON here as well")
    e.add_argument("--threads", type=int, default=1)

    r = sub.add_parser("report", help="aggregate final reports across run directories")
    r.add_argument("runs", nargs="+", help="run directories")
    r.add_argument("--csv", help="also write the aggregate table as CSV")
    return p


def _cmd_train(args):
    cfg = load_config(args.config)
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.out is not None:
        changes["out_dir"] = args.out
    cfg = cfg.replace(**changes).validate()
    with threadpool_limits(args.threads):
        report = run_train(cfg)
    print(json.dumps({k: report[k] for k in ("test_error", "weight_sparsity", "neuron_sparsity")}))
    return EXIT_OK


def _cmd_eval(args):
    if args.run:
        cfg_path = os.path.join(args.run, CONFIG_FILE)
        with open(cfg_path) as fh:
            cfg = parse_config(fh.read())
        ckpt = args.checkpoint or os.path.join(args.run, CHECKPOINT_FILE)
    else:
        if not (args.config and args.checkpoint):
            raise ConfigError("give --run DIR, or both --config and --checkpoint", "eval")
        cfg, ckpt = load_config(args.config), args.checkpoint
    changes = {}
    if args.weight_threshold is not None:
        changes["weight_threshold"] = args.weight_threshold
    if args.neuron_threshold is not None:
        changes["neuron_threshold"] = args.neuron_threshold
    cfg = cfg.replace(**changes).validate()
    with threadpool_limits(args.threads):
        metrics = run_eval(cfg, ckpt)
    text = json.dumps(metrics, indent=2, sort_keys=True)
    print(text)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text + "\n")
    return EXIT_OK


def _cmd_report(args):
    reports = []
    for run in args.runs:
        try:
            reports.append(_load_report(run))
        except (OSError, ValueError) as exc:
            log.warning("skipping %s: %s", run, exc)
    if not reports:
        log.error("no usable run reports")
        return EXIT_RUNTIME
    rows = aggregate(reports)
    print(format_table(rows))
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
            writer.writeheader()
            writer.writerows(rows)
    return EXIT_OK


def main(argv=None):
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s", stream=sys.stderr)
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    handlers = {"train": _cmd_train, "eval": _cmd_eval, "report": _cmd_report}
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return EXIT_USAGE
    except TrainingDiverged as exc:
        log.error("training diverged: %s", exc)
        return EXIT_RUNTIME
    except (OSError, IDXParseError, DimensionError, ValueError) as exc:
        log.error("%s", exc)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
