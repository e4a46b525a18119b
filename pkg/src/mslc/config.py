"""Run configuration: one structured JSON document with a section per
subsystem, plus the manifest hashing that makes runs reproducible and
comparable."""
from __future__ import annotations

import copy
import hashlib
import json
from pathlib import Path

from . import __version__
from .baselines import BaselineSpec
from .data import LabeledDataset, split, synth_gaussian
from .errors import ConfigError
from .metaopt import METHODS, TrainConfig
from .noise import NoiseSpec

DEFAULTS = {
    "data": {
        "classes": 4,
        "features": 16,
        "per_class": 1260,
        "center_spread": 3.0,
        "within_std": 1.0,
        "seed": 7,
        "meta_size": 40,
        "test_fraction": 0.1984126984126984,  # 1000 of 5040
        "split_seed": 11,
    },
    "noise": {
        "kind": "symmetric",
        "ratio": 0.4,
        "include_self": False,
        "pair_map": None,
        "seed": 13,
    },
    "train": {
        "method": "mslc",
        "epochs": 60,
        "warmup_epochs": 40,
        "batch_size": 32,
        "meta_batch_size": 32,
        "classifier_hidden": [64, 64],
        "coef_hidden": 100,
        "clf_lr": 0.1,
        "clf_momentum": 0.9,
        "clf_weight_decay": 5e-4,
        "lr_drop_epoch": None,
        "lr_drop_factor": 10.0,
        "virtual_lr": 1e-3,
        "meta_lr": 1e-3,
        "adam_beta1": 0.9,
        "adam_beta2": 0.999,
        "adam_eps": 1e-8,
        "seed": 1,
        "pseudo_refresh": "batch",
        "prediction_form": "soft",
        "reuse_score_grads": False,
    },
    "baseline": {
        "bootstrap_weight": 0.8,
        "history_window": 10,
        "fixed_beta": 0.4,
        "finetune_epochs": 5,
        "finetune_lr_factor": 0.1,
    },
    "report": {
        "snapshot_every": 1,
        "checkpoint_every": 0,  # 0: final checkpoint only
    },
}


def default_config() -> dict:
    return copy.deepcopy(DEFAULTS)


def _merge_section(section_name: str, base: dict, override: dict) -> None:
    for key, value in override.items():
        if key not in base:
            raise ConfigError(f"unknown config key {section_name}.{key}")
        base[key] = value


def merge_config(overrides: dict) -> dict:
    cfg = default_config()
    for section, values in overrides.items():
        if section not in cfg:
            raise ConfigError(f"unknown config section {section!r}")
        if not isinstance(values, dict):
            raise ConfigError(f"config section {section!r} must be an object")
        _merge_section(section, cfg[section], values)
    return cfg


def load_config(path) -> dict:
    with open(path) as fh:
        try:
            overrides = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from None
    return merge_config(overrides)


def apply_overrides(cfg: dict, assignments) -> dict:
    """Apply `section.key=value` strings; values are parsed as JSON with a
    plain-string fallback."""
    for assignment in assignments:
        if "=" not in assignment:
            raise ConfigError(f"override {assignment!r} is not of the form section.key=value")
        target, raw = assignment.split("=", 1)
        if "." not in target:
            raise ConfigError(f"override target {target!r} is not of the form section.key")
        section, key = target.split(".", 1)
        if section not in cfg or key not in cfg[section]:
            raise ConfigError(f"unknown config key {target!r}")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        cfg[section][key] = value
    return cfg


def train_config_from(cfg: dict) -> TrainConfig:
    t = cfg["train"]
    return TrainConfig(
        epochs=int(t["epochs"]),
        warmup_epochs=int(t["warmup_epochs"]),
        batch_size=int(t["batch_size"]),
        meta_batch_size=int(t["meta_batch_size"]),
        classifier_hidden=tuple(int(h) for h in t["classifier_hidden"]),
        coef_hidden=int(t["coef_hidden"]),
        clf_lr=float(t["clf_lr"]),
        clf_momentum=float(t["clf_momentum"]),
        clf_weight_decay=float(t["clf_weight_decay"]),
        lr_drop_epoch=None if t["lr_drop_epoch"] is None else int(t["lr_drop_epoch"]),
        lr_drop_factor=float(t["lr_drop_factor"]),
        virtual_lr=float(t["virtual_lr"]),
        meta_lr=float(t["meta_lr"]),
        adam_beta1=float(t["adam_beta1"]),
        adam_beta2=float(t["adam_beta2"]),
        adam_eps=float(t["adam_eps"]),
        seed=int(t["seed"]),
        pseudo_refresh=t["pseudo_refresh"],
        prediction_form=t["prediction_form"],
        reuse_score_grads=bool(t["reuse_score_grads"]),
    )


def noise_spec_from(cfg: dict) -> NoiseSpec:
    n = cfg["noise"]
    pair_map = n["pair_map"]
    if pair_map is not None:
        pair_map = {int(k): int(v) for k, v in pair_map.items()}
    return NoiseSpec(kind=n["kind"], ratio=float(n["ratio"]),
                     include_self=bool(n["include_self"]),
                     pair_map=pair_map, seed=int(n["seed"]))


def baseline_spec_from(cfg: dict, kind: str | None = None) -> BaselineSpec:
    b = cfg["baseline"]
    return BaselineSpec(
        kind=kind if kind is not None else cfg["train"]["method"],
        bootstrap_weight=float(b["bootstrap_weight"]),
        history_window=int(b["history_window"]),
        fixed_beta=float(b["fixed_beta"]),
        finetune_epochs=int(b["finetune_epochs"]),
        finetune_lr_factor=float(b["finetune_lr_factor"]),
    )


def validate_config(cfg: dict) -> None:
    """Full validation of every section before any filesystem activity."""
    d = cfg["data"]
    if d["classes"] < 2 or d["features"] < 2:
        raise ConfigError("data needs at least 2 classes and 2 features")
    if d["per_class"] < 1:
        raise ConfigError("data.per_class must be >= 1")
    if not 0.0 < d["test_fraction"] < 1.0:
        raise ConfigError("data.test_fraction must be in (0, 1)")
    if d["meta_size"] < 1:
        raise ConfigError("data.meta_size must be >= 1")
    if cfg["train"]["method"] not in METHODS:
        raise ConfigError(f"train.method must be one of {METHODS}")
    noise_spec_from(cfg).validate(int(d["classes"]))
    train_config_from(cfg).validate()
    baseline_spec_from(cfg).validate()
    r = cfg["report"]
    if int(r["snapshot_every"]) < 0 or int(r["checkpoint_every"]) < 0:
        raise ConfigError("report cadences must be >= 0")


# ---------------------------------------------------------------------------
# deterministic dataset pipeline
# ---------------------------------------------------------------------------

def build_clean_splits(cfg: dict):
    """Synthesize the clean pool and carve (train, meta, test) before any
    noise is injected."""
    d = cfg["data"]
    pool = synth_gaussian(int(d["classes"]), int(d["features"]), int(d["per_class"]),
                          float(d["center_spread"]), float(d["within_std"]), int(d["seed"]))
    return split(pool, int(d["meta_size"]), float(d["test_fraction"]), int(d["split_seed"]))


def build_datasets(cfg: dict):
    """Clean splits plus noise injected into the training split only.
    Returns (train_noisy, meta, test, corruption_mask)."""
    from .noise import inject

    train_set, meta_set, test_set = build_clean_splits(cfg)
    spec = noise_spec_from(cfg)
    noisy, mask = inject(train_set.true_labels, spec, train_set.n_classes)
    train_noisy = LabeledDataset(train_set.features, train_set.true_labels, noisy,
                                 train_set.n_classes, "train")
    return train_noisy, meta_set, test_set, mask


# ---------------------------------------------------------------------------
# manifests
# ---------------------------------------------------------------------------

def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def sha256_hex(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()


def dataset_hash(dataset: LabeledDataset) -> str:
    h = hashlib.sha256()
    h.update(dataset.features.astype("<f8").tobytes())
    h.update(dataset.true_labels.astype("<i8").tobytes())
    h.update(dataset.observed_labels.astype("<i8").tobytes())
    h.update(f"{dataset.n_classes}:{dataset.split}".encode())
    return h.hexdigest()


def build_manifest(cfg: dict, datasets: dict) -> dict:
    """Run manifest: config snapshot, per-split dataset hashes, the shared
    data hash (method-independent, for cross-run comparability) and the full
    manifest hash."""
    hashes = {name: dataset_hash(ds) for name, ds in datasets.items()}
    data_part = {"data": cfg["data"], "noise": cfg["noise"], "dataset_hashes": hashes}
    data_hash = sha256_hex(canonical_json(data_part))
    manifest = {
        "config": cfg,
        "dataset_hashes": hashes,
        "data_hash": data_hash,
        "code_version": __version__,
    }
    manifest["manifest_hash"] = sha256_hex(canonical_json(manifest))
    return manifest
