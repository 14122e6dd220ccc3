"""Command-line entry point: ``ecgssl <subcommand> --config c.json [overrides]``.

Exit status: 0 success, 1 runtime failure, 2 usage error, 3 config error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import rng as rngs
from .checkpoint import Checkpoint, CheckpointError, load_checkpoint, save_checkpoint
from .config import ConfigError, RunConfig
from .data import Dataset, DatasetError, open_dataset, split_folds, synth_ecg, write_dataset
from .diagnostics import format_cases, grad_check_suite
from .metrics import macro_auc
from .models import Classifier
from .records import EcgRecord
from .training import (
    MetricsReport,
    TrainingError,
    finetune_two_step,
    label_efficiency_sweep,
    linear_evaluate,
    noise_robustness_sweep,
    pretrain,
    predict_tta_batch,
)
from .transforms import TransformSpec

log = logging.getLogger("ecgssl")

SUBCOMMANDS = ("pretrain", "linear-eval", "finetune", "noise-bench", "label-sweep", "augment-preview", "grad-check", "synth-data")
SWEEP_HEADER = ("sweep_key", "seed", "macro_auc", "mean_snr_db")
SYNTH_DEFAULTS = {"n_records": 512, "n_channels": 12, "duration_s": 10.0, "fs": 100.0, "seed": 0}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ecgssl", description="Self-supervised ECG representation learning toolkit.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="{" + ",".join(SUBCOMMANDS) + "}")
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, help="JSON run configuration")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", type=Path, default=Path("."), help="output directory")
        if name in ("linear-eval", "finetune", "noise-bench", "label-sweep"):
            p.add_argument("--checkpoint", type=Path, help="pretrained (or, for noise-bench, finetuned) checkpoint")
        if name in ("pretrain", "linear-eval", "finetune", "noise-bench", "label-sweep"):
            p.add_argument("--folds", type=int, help="training fold count (label-sweep: the single count to run)")
        if name == "noise-bench":
            p.add_argument("--noise-level", type=int, choices=range(1, 7), metavar="{1..6}")
        if name == "label-sweep":
            p.add_argument("--repeats", type=int)
        if name == "augment-preview":
            p.add_argument("--record", help="record id (default: first record)")
        if name == "grad-check":
            p.add_argument("--tolerance", type=float, default=1e-4)
    return parser


def load_config(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config is not None else RunConfig()
    overrides: dict[str, Any] = {"seed": args.seed}
    folds = getattr(args, "folds", None)
    if folds is not None:
        if args.command == "label-sweep":
            overrides["fold_counts"] = [folds]
        else:
            overrides["train_folds"] = folds
    if getattr(args, "noise_level", None) is not None:
        overrides["noise_levels"] = [args.noise_level]
    if getattr(args, "repeats", None) is not None:
        overrides["repeats"] = args.repeats
    try:
        cfg = cfg.with_overrides(**overrides)
    except (TypeError, ValueError) as e:
        if isinstance(e, ConfigError):
            raise
        raise ConfigError("<override>", str(e)) from e
    return cfg


def synthetic_dataset(spec: dict[str, Any]) -> Dataset:
    opts = {**SYNTH_DEFAULTS, **spec}
    seed = opts.pop("seed")
    if "class_spec" in opts:
        opts["class_spec"] = tuple(opts["class_spec"])
    if "hr_range" in opts:
        opts["hr_range"] = tuple(opts["hr_range"])
    try:
        return synth_ecg(rng=rngs.stream(seed, "synthetic"), **opts)
    except TypeError as e:
        raise ConfigError("data.synthetic", str(e)) from e


def dataset_for(cfg: RunConfig) -> Dataset:
    if "dir" in cfg.data:
        return open_dataset(cfg.data["dir"])
    return synthetic_dataset(cfg.data.get("synthetic") or {})


def _write_json(path: Path, obj: Any) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, default=str))


def _metrics(cfg: RunConfig, **fields: Any) -> dict[str, Any]:
    return {"config_hash": cfg.digest(), "seed": cfg.seed, **fields}


def _write_sweep(path: Path, rows: Sequence[Sequence[Any]]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(SWEEP_HEADER)
        w.writerows(rows)


def _load_ckpt(path: Path | None, required: bool = False) -> Checkpoint | None:
    if path is None:
        if required:
            raise ConfigError("--checkpoint", "this subcommand needs a checkpoint")
        return None
    return load_checkpoint(path)


def _report_metrics(cfg: RunConfig, report: MetricsReport) -> dict[str, Any]:
    return _metrics(cfg, **report.to_json())


def augment_preview(cfg: RunConfig, record: EcgRecord, out_path: Path) -> list[str]:
    """CSV with a time column, the original channels and each configured transform's output."""
    seg = record.as_segment()
    blocks = [("original", seg.samples)]
    for i, spec in enumerate(cfg.pipeline()):
        spec = TransformSpec.parse(spec)
        out = spec(seg, rngs.stream(cfg.seed, "preview", record.id, i, spec.name))
        blocks.append((spec.name, out.samples))
    header = ["time_s"] + [f"{name}_ch{c}" for name, x in blocks for c in range(x.shape[0])]
    table = np.concatenate([np.arange(seg.samples.shape[1])[None, :] / seg.fs] + [np.asarray(x, dtype=np.float64) for _, x in blocks])
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with open(out_path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(header)
        for row in table.T:
            w.writerow([f"{v:.9g}" for v in row])
    return header


def _run(args: argparse.Namespace) -> int:
    cfg = load_config(args)
    out: Path = args.out
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "config.json", cfg.to_dict())

    if args.command == "grad-check":
        cases = grad_check_suite(tolerance=args.tolerance, bn_tolerance=max(args.tolerance, 1e-3), seed=cfg.seed)
        for line in format_cases(cases):
            print(line)
        failed = [c.name for c in cases if not c.passed]
        _write_json(out / "metrics.json", _metrics(cfg, grad_check={c.name: c.report.max_error for c in cases}, failed=failed))
        if failed:
            print(f"gradient check failed: {', '.join(failed)}", file=sys.stderr)
            return 1
        return 0

    if args.command == "synth-data":
        ds = dataset_for(cfg)
        manifest = write_dataset(out, ds)
        log.info("wrote %d records to %s", len(manifest.records), out)
        return 0

    ds = dataset_for(cfg)
    if args.command == "pretrain":
        ckpt = pretrain(cfg, ds)
        save_checkpoint(out / "checkpoint.ckpt", ckpt)
        _write_json(out / "metrics.json", _metrics(cfg, curve=ckpt.extra["val_loss"], train_loss=ckpt.extra["train_loss"], selected_epoch=ckpt.extra["selected_epoch"]))
    elif args.command == "linear-eval":
        report = linear_evaluate(_load_ckpt(args.checkpoint), ds, cfg)
        save_checkpoint(out / "model.ckpt", Checkpoint.from_model(report.model, cfg.to_dict()))
        _write_json(out / "metrics.json", _report_metrics(cfg, report))
    elif args.command == "finetune":
        report = finetune_two_step(_load_ckpt(args.checkpoint), ds, cfg)
        save_checkpoint(out / "model.ckpt", Checkpoint.from_model(report.model, cfg.to_dict()))
        _write_json(out / "metrics.json", _report_metrics(cfg, report))
    elif args.command == "noise-bench":
        ckpt = _load_ckpt(args.checkpoint, required=True)
        model = ckpt.build()
        if not isinstance(model, Classifier):
            log.info("checkpoint holds no classifier; finetuning it first")
            model = finetune_two_step(ckpt, ds, cfg).model
        _, _, test_ids = split_folds(ds.manifest, cfg.train_folds)
        records, labels = ds.get(test_ids), ds.label_matrix(test_ids)
        clean = predict_tta_batch(model, records, cfg.crop_s)
        rows = noise_robustness_sweep(model, records, labels, cfg.noise_levels, cfg.seed, cfg.crop_s)
        clean_auc, _ = macro_auc(clean, labels)
        table = [("clean", cfg.seed, clean_auc, "inf")] + [(f"level{r['level']}", cfg.seed, r["macro_auc"], r["mean_snr_db"]) for r in rows]
        _write_sweep(out / "sweep.csv", table)
        _write_json(out / "metrics.json", _metrics(cfg, macro_auc=clean_auc, levels=rows))
    elif args.command == "label-sweep":
        ckpt = _load_ckpt(args.checkpoint, required=True)
        result = label_efficiency_sweep(ckpt, ds, cfg)
        _write_sweep(out / "sweep.csv", [(f"{r['variant']}:{r['fold_count']}", r["seed"], r["macro_auc"], "") for r in result["rows"]])
        _write_json(out / "metrics.json", _metrics(cfg, **result))
    elif args.command == "augment-preview":
        rid = args.record if args.record is not None else ds.manifest.ids[0]
        if rid not in ds.records:
            raise DatasetError(f"record {rid!r} not in dataset")
        augment_preview(cfg, ds.records[rid], out / f"preview_{rid}.csv")
    return 0


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s", stream=sys.stderr)
    try:
        return _run(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 3
    except (DatasetError, CheckpointError, TrainingError, OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
