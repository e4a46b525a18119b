"""Command-line entry point.

Every command resolves and fully validates its configuration before
touching the filesystem, and all outputs are deterministic functions of the
run manifest, so re-running a command with the same manifest overwrites its
outputs with identical bytes.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__, baselines, metaopt, report as report_mod
from .config import (apply_overrides, baseline_spec_from, build_datasets, build_manifest,
                     canonical_json, default_config, load_config, noise_spec_from,
                     train_config_from, validate_config)
from .corrector import read_snapshot_csv
from .data import CsvSchema, LabeledDataset, load_csv, save_csv
from .errors import ConfigError, MslcError, TrainingDiverged
from .models import save_checkpoint
from .noise import build_transition, empirical_transition, inject
from .report import RunWriter, confusion, emit, load_report


def _resolve_config(args) -> dict:
    cfg = load_config(args.config) if args.config else default_config()
    if getattr(args, "set", None):
        apply_overrides(cfg, args.set)
    if getattr(args, "method", None):
        cfg["train"]["method"] = args.method
    if getattr(args, "epochs", None) is not None:
        cfg["train"]["epochs"] = args.epochs
        if cfg["train"]["warmup_epochs"] > args.epochs:
            cfg["train"]["warmup_epochs"] = args.epochs
    if getattr(args, "seed", None) is not None:
        cfg["train"]["seed"] = args.seed
    validate_config(cfg)
    return cfg


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, sort_keys=True, indent=1, allow_nan=False) + "\n")


def _schema_for(cfg: dict, split: str) -> CsvSchema:
    return CsvSchema.default(int(cfg["data"]["features"]), int(cfg["data"]["classes"]), split)


def _load_splits(cfg: dict, data_dir: Path):
    train_path = data_dir / "train_noisy.csv"
    if not train_path.exists():
        train_path = data_dir / "train.csv"
    train_set = load_csv(train_path, _schema_for(cfg, "train"))
    meta_set = load_csv(data_dir / "meta.csv", _schema_for(cfg, "meta"))
    test_set = load_csv(data_dir / "test.csv", _schema_for(cfg, "test"))
    return train_set, meta_set, test_set


def cmd_gen_data(args) -> int:
    from .config import build_clean_splits

    cfg = _resolve_config(args)
    train_set, meta_set, test_set = build_clean_splits(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_csv(train_set, out / "train.csv")
    save_csv(meta_set, out / "meta.csv")
    save_csv(test_set, out / "test.csv")
    manifest = build_manifest(cfg, {"train": train_set, "meta": meta_set, "test": test_set})
    _write_json(out / "manifest.json", manifest)
    print(f"wrote clean splits ({len(train_set)}/{len(meta_set)}/{len(test_set)}) to {out}")
    return 0


def cmd_inject(args) -> int:
    cfg = _resolve_config(args)
    data_dir = Path(args.data)
    train_set = load_csv(data_dir / "train.csv", _schema_for(cfg, "train"))
    spec = noise_spec_from(cfg)
    noisy, mask = inject(train_set.true_labels, spec, train_set.n_classes)
    noisy_set = LabeledDataset(train_set.features, train_set.true_labels, noisy,
                               train_set.n_classes, "train")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_csv(noisy_set, out / "train_noisy.csv")
    with open(out / "mask.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["index", "true_label", "observed_label", "corrupted"])
        for i in range(len(noisy_set)):
            writer.writerow([i, int(noisy_set.true_labels[i]),
                             int(noisy_set.observed_labels[i]), int(mask[i])])
    t = build_transition(spec, train_set.n_classes)
    emp, _ = empirical_transition(train_set.true_labels, noisy, train_set.n_classes)
    np.savetxt(out / "transition.csv", t, delimiter=",")
    np.savetxt(out / "transition_empirical.csv", emp, delimiter=",")
    manifest = build_manifest(cfg, {"train": noisy_set})
    _write_json(out / "manifest.json", manifest)
    print(f"injected {spec.kind} noise at ratio {spec.ratio}: "
          f"{int(mask.sum())}/{len(noisy_set)} labels corrupted")
    return 0


def _train_once(cfg: dict, datasets, out_dir: Path | None):
    train_set, meta_set, test_set = datasets
    manifest = build_manifest(cfg, {"train": train_set, "meta": meta_set, "test": test_set})
    train_config = train_config_from(cfg)
    method = baseline_spec_from(cfg)
    writer = None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        _write_json(out_dir / "manifest.json", manifest)
        writer = RunWriter(out_dir, snapshot_every=int(cfg["report"]["snapshot_every"]),
                           checkpoint_every=int(cfg["report"]["checkpoint_every"]))
    result = metaopt.run_training(
        train_set, meta_set, test_set, train_config, method,
        manifest_hash=manifest["manifest_hash"], data_hash=manifest["data_hash"],
        on_epoch=writer.on_epoch if writer else None)
    if out_dir is not None:
        emit(result.report, out_dir)
        tag = manifest["manifest_hash"][:12]
        save_checkpoint(result.classifier, out_dir / "checkpoints" / f"classifier_{tag}.npz")
        if result.alpha_net is not None:
            save_checkpoint(result.alpha_net, out_dir / "checkpoints" / f"alpha_{tag}.npz")
        if hasattr(result.beta_net, "params"):
            save_checkpoint(result.beta_net, out_dir / "checkpoints" / f"beta_{tag}.npz")
    return result, manifest


def cmd_train(args) -> int:
    cfg = _resolve_config(args)
    if args.data:
        train_set, meta_set, test_set = _load_splits(cfg, Path(args.data))
    else:
        train_set, meta_set, test_set, _ = build_datasets(cfg)
    out_dir = Path(args.out) if args.out else None
    result, manifest = _train_once(cfg, (train_set, meta_set, test_set), out_dir)
    summary = result.report.summary()
    print(f"method={cfg['train']['method']} manifest={manifest['manifest_hash'][:12]}")
    print(f"best accuracy  {summary['best_accuracy']:.4f}")
    print(f"last accuracy  {summary['last_accuracy']:.4f} (mean of final {summary['last_window']} epochs)")
    print(f"corrected-label accuracy  {summary['final_corrected_label_accuracy']:.4f}")
    if out_dir is not None:
        print(f"artifacts in {out_dir}")
    return 0


def cmd_ablate_beta(args) -> int:
    cfg = _resolve_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    repeats = args.repeats
    base_seed = int(cfg["train"]["seed"])
    train_sets, meta_sets, test_sets, configs = [], [], [], []
    for r in range(repeats):
        rep_cfg = json.loads(json.dumps(cfg))
        rep_cfg["train"]["seed"] = base_seed + r
        rep_cfg["data"]["seed"] = int(cfg["data"]["seed"]) + r
        rep_cfg["noise"]["seed"] = int(cfg["noise"]["seed"]) + r
        tr, me, te, _ = build_datasets(rep_cfg)
        train_sets.append(tr)
        meta_sets.append(me)
        test_sets.append(te)
        configs.append(train_config_from(rep_cfg))
    cells = baselines.beta_sweep(train_sets, meta_sets, test_sets, configs)
    manifest = build_manifest(cfg, {"train": train_sets[0], "meta": meta_sets[0],
                                    "test": test_sets[0]})
    sweep = {"repeats": repeats, "cells": cells, "manifest_hash": manifest["manifest_hash"]}
    _write_json(out / "beta_sweep.json", sweep)
    print(f"{'beta':>8}  {'best(mean)':>10}  {'last(mean)':>10}  {'corrected(mean)':>15}")
    for beta, cell in cells.items():
        print(f"{beta:>8}  {cell['best_accuracy_mean']:>10.4f}  "
              f"{cell['last_accuracy_mean']:>10.4f}  "
              f"{cell['corrected_label_accuracy_mean']:>15.4f}")
    print(f"sweep written to {out / 'beta_sweep.json'}")
    return 0


def _find_report(run_dir: Path) -> Path:
    candidates = sorted(run_dir.glob("report_*.json"))
    if not candidates:
        raise ConfigError(f"no report_*.json in {run_dir}")
    return candidates[0]


def cmd_compare(args) -> int:
    rows = []
    data_hashes = set()
    for run in args.runs:
        path = Path(run)
        rep = load_report(path if path.is_file() else _find_report(path))
        rows.append({
            "run": str(run),
            "method": rep["method"],
            "best_accuracy": rep["summary"]["best_accuracy"],
            "last_accuracy": rep["summary"]["last_accuracy"],
            "corrected_label_accuracy": rep["summary"]["final_corrected_label_accuracy"],
            "data_hash": rep["data_hash"],
        })
        data_hashes.add(rep["data_hash"])
    if len(data_hashes) > 1 and not args.allow_mismatch:
        raise ConfigError("runs were trained on different data "
                          "(data_hash mismatch); pass --allow-mismatch to compare anyway")
    print(f"{'method':>12}  {'best':>8}  {'last':>8}  {'corrected':>9}  run")
    for row in rows:
        print(f"{row['method']:>12}  {row['best_accuracy']:>8.4f}  {row['last_accuracy']:>8.4f}  "
              f"{row['corrected_label_accuracy']:>9.4f}  {row['run']}")
    if args.out:
        _write_json(Path(args.out), {"runs": rows})
    return 0


def cmd_report(args) -> int:
    """Recompute correction metrics from the emitted store snapshots and
    check them against the stored report."""
    run_dir = Path(args.run)
    rep = load_report(_find_report(run_dir))
    n_classes = rep["n_classes"]
    recomputed = []
    mismatches = 0
    for snap_path in sorted(run_dir.glob("snapshots/snapshot_epoch*.csv")):
        snap = read_snapshot_csv(snap_path)
        epoch = int(snap_path.name.split("epoch")[1][:4])
        correct = snap.corrected_hard == snap.true_labels
        mask = snap.observed_labels != snap.true_labels
        row = {
            "epoch": epoch,
            "corrected_label_accuracy": float(correct.mean()),
            "clean_subset_accuracy": float(correct[~mask].mean()) if (~mask).any() else None,
            "noisy_subset_accuracy": float(correct[mask].mean()) if mask.any() else None,
            "confusion_corrected": confusion(snap.true_labels, snap.corrected_hard,
                                             n_classes).tolist(),
        }
        recomputed.append(row)
        stored = next((e for e in rep["epochs"] if e["epoch"] == epoch), None)
        if stored is not None:
            for key in ("corrected_label_accuracy", "clean_subset_accuracy",
                        "noisy_subset_accuracy", "confusion_corrected"):
                if stored[key] != row[key]:
                    mismatches += 1
    if not recomputed:
        raise ConfigError(f"no snapshots found under {run_dir}/snapshots")
    if args.out:
        _write_json(Path(args.out), {"recomputed": recomputed})
    print(f"recomputed {len(recomputed)} epochs from snapshots; "
          f"{'all consistent with stored report' if mismatches == 0 else f'{mismatches} field mismatches'}")
    return 0 if mismatches == 0 else 1


def _add_common(parser, config=True, out_required=False):
    if config:
        parser.add_argument("--config", help="JSON config file (defaults built in)")
        parser.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                            help="override a config key (repeatable)")
    if out_required:
        parser.add_argument("--out", required=True, help="output directory")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="mslc",
        description="Train classifiers under label noise with a meta-learned soft label corrector.")
    parser.add_argument("--version", action="version", version=f"mslc {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="synthesize clean train/meta/test splits")
    _add_common(p, out_required=True)
    p.set_defaults(fn=cmd_gen_data)

    p = sub.add_parser("inject", help="corrupt the training labels of a generated dataset")
    _add_common(p, out_required=True)
    p.add_argument("--data", required=True, help="directory holding train.csv")
    p.set_defaults(fn=cmd_inject)

    p = sub.add_parser("train", help="run training (corrector or a baseline)")
    _add_common(p)
    p.add_argument("--data", help="directory with train[_noisy].csv/meta.csv/test.csv; "
                                  "omitted: data is synthesized from the config")
    p.add_argument("--out", help="output directory for report/snapshots/checkpoints")
    p.add_argument("--method", choices=metaopt.METHODS, help="override train.method")
    p.add_argument("--epochs", type=int, help="override train.epochs")
    p.add_argument("--seed", type=int, help="override train.seed")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("ablate-beta", help="sweep fixed beta values against the learned net")
    _add_common(p, out_required=True)
    p.add_argument("--repeats", type=int, default=3, help="seeded repetitions per cell")
    p.set_defaults(fn=cmd_ablate_beta)

    p = sub.add_parser("compare", help="side-by-side table of finished runs")
    p.add_argument("runs", nargs="+", help="run directories or report files")
    p.add_argument("--out", help="also write the comparison as JSON")
    p.add_argument("--allow-mismatch", action="store_true",
                   help="compare runs even if their data hashes differ")
    p.set_defaults(fn=cmd_compare)

    p = sub.add_parser("report", help="recompute metrics from emitted snapshots")
    p.add_argument("--run", required=True, help="run directory")
    p.add_argument("--out", help="write recomputed metrics as JSON")
    p.set_defaults(fn=cmd_report)

    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except TrainingDiverged as exc:
        print(f"error: training diverged: {exc} "
              f"(step={exc.step_index}, batch={exc.batch_indices})", file=sys.stderr)
        return 2
    except MslcError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
