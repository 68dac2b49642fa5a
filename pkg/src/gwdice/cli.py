"""Command-line front end.

Exit codes: 0 success, 2 input or validation error, 3 numerical divergence.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import evaluation, synth_data
from .holistic_net import DivergenceError, NetworkConfig, Phase, format_log, predict, train
from .holistic_net import checkpoint
from .label_metric import BRATS_SPACE, GroundMetric, LabelSpace, MetricError, metric_tree_brats, metric_zero_one, read_metric_file
from .wasserstein import ProbabilityError, ShapeError, emd_lp

EXIT_OK, EXIT_INPUT, EXIT_DIVERGED = 0, 2, 3


class InputError(Exception):
    """Bad user input; reported with exit code 2."""


def _status(args, message: str) -> None:
    if not args.quiet:
        print(message)


def _vector(text: str, field: str) -> np.ndarray:
    path = Path(text)
    if path.is_file():
        text = path.read_text(encoding="utf-8")
    try:
        return np.array([float(x) for x in text.replace("\n", ",").split(",") if x.strip()])
    except ValueError as exc:
        raise InputError(f"{field}: cannot parse probability vector ({exc})") from exc


def _metric(spec: str, n_labels: int | None = None) -> GroundMetric:
    if spec == "M_tree":
        return metric_tree_brats()
    if spec == "M_0-1":
        if n_labels is None or n_labels == len(BRATS_SPACE):
            return metric_zero_one(BRATS_SPACE)
        return metric_zero_one(LabelSpace.anonymous(n_labels))
    if not Path(spec).is_file():
        raise InputError(f"metric: no such file or built-in metric {spec!r}")
    try:
        return read_metric_file(spec)
    except MetricError as exc:
        raise InputError(f"metric {spec}: {exc}") from exc


def cmd_emd(args) -> int:
    p = _vector(args.p, "p")
    q = _vector(args.q, "q")
    metric = _metric(args.metric, p.size)
    for name, v in (("p", p), ("q", q)):
        if v.size != len(metric):
            raise InputError(f"{name}: has {v.size} entries, metric has {len(metric)} labels")
    try:
        value, plan = emd_lp(p, q, metric)
    except ProbabilityError as exc:
        raise InputError(f"p/q: {exc}") from exc
    print(f"{value:.12g}")
    if args.verbose:
        for row in plan.t:
            print(" ".join(f"{x:.12g}" for x in row))
    return EXIT_OK


def _load_gt(path: str) -> np.ndarray:
    if path.endswith(".bin"):
        return synth_data.read_sample(path)[1]
    return np.load(path)


def _regions(path: str | None):
    if path is None:
        return evaluation.BRATS_REGIONS
    try:
        return evaluation.parse_regions(Path(path).read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise InputError(f"regions: {exc}") from exc


def cmd_eval(args) -> int:
    regions = _regions(args.regions)
    meta = {"timestamp": args.timestamp} if args.timestamp else {}
    try:
        if args.checkpoint:
            if not args.data:
                raise InputError("--checkpoint needs --data")
            model = checkpoint.load(args.checkpoint)
            samples = synth_data.load_dataset(args.data)
            metrics = [_metric(m, model.config.classes) for m in args.metric]
            reports = [
                evaluation.build_report(predict(model, im), lab, metrics, regions, validate=False, threads=args.threads)
                for im, lab in samples
            ]
            meta.update({"checkpoint": Path(args.checkpoint).name, "data": Path(args.data).name})
            report = evaluation.aggregate_reports(reports, meta)
        else:
            if not (args.pred and args.gt):
                raise InputError("need --pred and --gt, or --checkpoint and --data")
            p = np.load(args.pred)
            g = _load_gt(args.gt)
            metrics = [_metric(m, p.shape[-1]) for m in args.metric]
            report = evaluation.build_report(p, g, metrics, regions, meta=meta, threads=args.threads)
    except (ShapeError, ProbabilityError, ValueError, OSError) as exc:
        raise InputError(f"eval: {exc}") from exc
    if args.out:
        Path(args.out).write_text(report.to_json(), encoding="utf-8")
    sys.stdout.write(report.render_table())
    return EXIT_OK


def cmd_gen_data(args) -> int:
    try:
        config = synth_data.SynthConfig(
            size=args.size,
            fractions=tuple(args.fractions),
            noise=args.noise,
            modalities=args.modalities,
            samples=args.samples,
            seed=args.seed,
        )
    except synth_data.SynthConfigError as exc:
        raise InputError(f"gen-data: {exc}") from exc
    synth_data.save_dataset(synth_data.generate(config), args.out, config)
    _status(args, f"wrote {args.samples} samples to {args.out}")
    return EXIT_OK


def load_train_config(path: str) -> dict:
    """JSON file with keys ``data``, ``schedule`` and optional ``val_data``,
    ``network``, ``batch_size``, ``checkpoint``, ``log``. Relative paths are
    resolved against the config file's directory."""
    base = Path(path).parent
    try:
        cfg = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"config: {exc}") from exc
    for key in ("data", "schedule"):
        if key not in cfg:
            raise InputError(f"config: missing {key!r}")
    for key in ("data", "val_data", "checkpoint", "log"):
        if cfg.get(key):
            cfg[key] = str(base / cfg[key])
    return cfg


def cmd_train(args) -> int:
    cfg = load_train_config(args.config)
    try:
        net = dict(cfg.get("network", {}))
        if args.seed is not None:
            net["seed"] = args.seed
        schedule = [Phase(ph["loss"], int(ph["epochs"]), float(ph["lr"])) for ph in cfg["schedule"]]
        data = synth_data.load_dataset(cfg["data"])
        val = synth_data.load_dataset(cfg["val_data"]) if cfg.get("val_data") else None
        if data:
            net.setdefault("input_channels", data[0][0].shape[0])
        config = NetworkConfig(**net)
    except (KeyError, TypeError, ValueError, OSError) as exc:
        raise InputError(f"config: {exc}") from exc
    out_ckpt = args.checkpoint or cfg.get("checkpoint") or "model.wdhn"
    out_log = args.log or cfg.get("log") or "train_log.csv"
    for out in (out_ckpt, out_log):
        if not Path(out).resolve().parent.is_dir():
            raise InputError(f"output directory for {out} does not exist")
    try:
        model, rows = train(
            config, data, schedule, val_dataset=val, batch_size=int(cfg.get("batch_size", 4)), threads=args.threads
        )
    except DivergenceError as exc:
        print(f"error: training diverged at epoch {exc.epoch}: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except ValueError as exc:
        raise InputError(f"train: {exc}") from exc
    checkpoint.save(model, out_ckpt)
    Path(out_log).write_text(format_log(rows), encoding="utf-8")
    _status(args, f"wrote {out_ckpt} and {out_log}")
    return EXIT_OK


def compare_table(reports, names, metric: GroundMetric) -> str:
    """Side-by-side scores, with differences against the first input."""
    labels = [r.meta.get("labels") for r in reports]
    if any(l != labels[0] for l in labels) or any(len(r.confusion) != len(metric) for r in reports):
        raise InputError("compare: reports do not share a label space with the metric")
    rows = []
    for k in reports[0].regions:
        rows.append((k, [r.regions.get(k, float("nan")) for r in reports]))
    rows.append(("mean dice", [r.mean_dice for r in reports]))
    for k in reports[0].wasserstein_dice:
        rows.append((f"D^{k}", [r.wasserstein_dice.get(k, float("nan")) for r in reports]))
    rows.append((f"confusion mass ({metric.name})", [evaluation.confusion_mass(r.confusion, metric) for r in reports]))

    heads = list(names) + [f"{n}-{names[0]}" for n in names[1:]]
    first = max(len(r[0]) for r in rows) + 2
    width = max(12, max(len(h) for h in heads) + 2)
    out = [" " * first + "".join(f"{h:>{width}}" for h in heads)]
    for label, vals in rows:
        diffs = [v - vals[0] for v in vals[1:]]
        out.append(f"{label:<{first}}" + "".join(f"{v:>{width}.4f}" for v in vals + diffs))
    return "\n".join(out) + "\n"


def cmd_compare(args) -> int:
    if len(args.reports) < 2:
        raise InputError("compare: need at least two reports")
    try:
        reports = [evaluation.read_report(p) for p in args.reports]
    except (OSError, KeyError, json.JSONDecodeError) as exc:
        raise InputError(f"compare: {exc}") from exc
    names = args.names or [Path(p).stem for p in args.reports]
    if len(names) != len(reports):
        raise InputError("compare: one --names entry per report is required")
    metric = _metric(args.metric, len(reports[0].confusion))
    table = compare_table(reports, names, metric)
    sys.stdout.write(table)
    if args.out:
        Path(args.out).write_text(table, encoding="utf-8")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--threads", type=int, default=os.cpu_count() or 1, help="worker threads (default: all cores)")
    common.add_argument("-q", "--quiet", action="store_true", help="print results only, no status messages")
    ap = argparse.ArgumentParser(prog="gwdice", description="Generalised Wasserstein Dice tools")
    sub = ap.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("emd", parents=[common], help="Wasserstein distance between two label probability vectors")
    sp.add_argument("p", help="comma-separated probabilities or a file holding them")
    sp.add_argument("q", help="comma-separated probabilities or a file holding them")
    sp.add_argument("--metric", default="M_tree", help="metric file, or built-in M_tree / M_0-1 (default: M_tree)")
    sp.add_argument("-v", "--verbose", action="store_true", help="also print an optimal transport plan")
    sp.set_defaults(func=cmd_emd)

    sp = sub.add_parser("eval", parents=[common], help="score a segmentation and write a report")
    sp.add_argument("--pred", help=".npy label probabilities, labels on the last axis")
    sp.add_argument("--gt", help=".npy integer label map, or a dataset sample .bin")
    sp.add_argument("--checkpoint", help="evaluate a trained model instead of --pred")
    sp.add_argument("--data", help="dataset directory used with --checkpoint")
    sp.add_argument("--metric", action="append", help="metric file or built-in (repeatable; default M_0-1 and M_tree)")
    sp.add_argument("--regions", help="region file with 'name: id,id,...' lines (default: whole/core/enhancing)")
    sp.add_argument("--timestamp", help="timestamp recorded in the report metadata")
    sp.add_argument("--out", help="report JSON path")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("gen-data", parents=[common], help="generate a synthetic nested-tumour dataset")
    sp.add_argument("--out", required=True)
    sp.add_argument("--samples", type=int, default=200)
    sp.add_argument("--size", type=int, default=64)
    sp.add_argument("--noise", type=float, default=0.5)
    sp.add_argument("--modalities", type=int, default=2)
    sp.add_argument("--fractions", type=float, nargs=4, default=[0.02, 0.10, 0.03, 0.01], metavar="F")
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_gen_data)

    sp = sub.add_parser("train", parents=[common], help="train the holistic network from a JSON config")
    sp.add_argument("config")
    sp.add_argument("--seed", type=int, help="override network.seed")
    sp.add_argument("--checkpoint", help="output checkpoint path")
    sp.add_argument("--log", help="output training log path")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("compare", parents=[common], help="side-by-side table of two or more reports")
    sp.add_argument("reports", nargs="+")
    sp.add_argument("--names", nargs="+", help="column names (default: file stems)")
    sp.add_argument("--metric", default="M_tree", help="metric weighting the confusion mass")
    sp.add_argument("--out", help="also write the table here")
    sp.set_defaults(func=cmd_compare)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(message)s")
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_INPUT
    if getattr(args, "metric", None) is None and args.command == "eval":
        args.metric = ["M_0-1", "M_tree"]
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    raise SystemExit(main())
