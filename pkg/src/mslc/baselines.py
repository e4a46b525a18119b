"""Reference training strategies sharing the engine, classifier and data
pipeline, for directional comparison against the learned corrector."""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .data import LabeledDataset
from .errors import ConfigError
from .metaopt import METHODS, TrainConfig, TrainResult, run_training


@dataclass
class BaselineSpec:
    """Training strategy plus its per-kind parameters.

    bootstrap_weight is the fixed mixing weight between the observed label
    and the current prediction; history_window is the number of past
    per-epoch prediction snapshots averaged into a pseudo-label; fixed_beta
    replaces the learned beta coefficient with a constant.
    """
    kind: str = "ce"
    bootstrap_weight: float = 0.8
    history_window: int = 10
    fixed_beta: float = 0.4
    finetune_epochs: int = 5
    finetune_lr_factor: float = 0.1

    def validate(self) -> None:
        if self.kind not in METHODS:
            raise ConfigError(f"unknown method kind {self.kind!r}, expected one of {METHODS}")
        if not 0.0 <= self.bootstrap_weight <= 1.0:
            raise ConfigError("bootstrap weight must be in [0, 1]")
        if not 0.0 <= self.fixed_beta <= 1.0:
            raise ConfigError("fixed beta must be in [0, 1]")
        if self.history_window < 1:
            raise ConfigError("history window must be >= 1")
        if self.finetune_epochs < 1 or self.finetune_lr_factor <= 0:
            raise ConfigError("finetune epochs must be >= 1 and lr factor > 0")


def train_ce(train_set: LabeledDataset, test_set: LabeledDataset,
             config: TrainConfig, **kwargs) -> TrainResult:
    """Plain cross entropy on the observed labels; bitwise identical to a
    corrector run whose warm-up spans all epochs."""
    return run_training(train_set, None, test_set, config, BaselineSpec(kind="ce"), **kwargs)


def train_finetune(train_set: LabeledDataset, meta_set: LabeledDataset,
                   test_set: LabeledDataset, config: TrainConfig,
                   spec: BaselineSpec | None = None, **kwargs) -> TrainResult:
    """CE run followed by a few reduced-rate epochs on the meta set."""
    spec = replace(spec, kind="finetune") if spec else BaselineSpec(kind="finetune")
    return run_training(train_set, meta_set, test_set, config, spec, **kwargs)


def train_bootstrap(train_set: LabeledDataset, test_set: LabeledDataset,
                    config: TrainConfig, weight: float = 0.8, **kwargs) -> TrainResult:
    """After warm-up, train against weight*y + (1-weight)*prediction."""
    spec = BaselineSpec(kind="bootstrap", bootstrap_weight=weight)
    spec.validate()
    return run_training(train_set, None, test_set, config, spec, **kwargs)


def train_jointopt(train_set: LabeledDataset, test_set: LabeledDataset,
                   config: TrainConfig, window: int = 10, **kwargs) -> TrainResult:
    """After warm-up, train against the normalized mean of the last `window`
    per-epoch prediction snapshots; observed labels are discarded."""
    spec = BaselineSpec(kind="joint-opt", history_window=window)
    spec.validate()
    return run_training(train_set, None, test_set, config, spec, **kwargs)


def train_fixed_beta(train_set: LabeledDataset, meta_set: LabeledDataset,
                     test_set: LabeledDataset, config: TrainConfig,
                     beta: float = 0.4, **kwargs) -> TrainResult:
    """Full corrector loop with the beta coefficient pinned to a constant;
    alpha stays meta-learned."""
    spec = BaselineSpec(kind="fixed-beta", fixed_beta=beta)
    spec.validate()
    return run_training(train_set, meta_set, test_set, config, spec, **kwargs)


BETA_GRID = (0.0, 0.2, 0.4, 0.6, 0.8, "learned")


def beta_sweep(train_sets, meta_sets, test_sets, configs, betas=BETA_GRID) -> dict:
    """Ablation sweep over fixed beta values plus the learned net.

    The three dataset/config lists are the seeded repetitions; every cell
    consumes the identical repetitions so the comparison is fair. Returns
    per-cell mean best/last/corrected-label accuracies.
    """
    reps = len(configs)
    if not (len(train_sets) == len(meta_sets) == len(test_sets) == reps):
        raise ConfigError("sweep needs one dataset triple per repetition")
    cells = {}
    for beta in betas:
        best, last, corrected = [], [], []
        for r in range(reps):
            if beta == "learned":
                from .metaopt import train
                result = train(train_sets[r], meta_sets[r], test_sets[r], configs[r])
            else:
                result = train_fixed_beta(train_sets[r], meta_sets[r], test_sets[r],
                                          configs[r], beta=float(beta))
            best.append(result.report.best_accuracy)
            last.append(result.report.last_accuracy)
            corrected.append(result.report.records[-1].corrected_label_accuracy)
        cells[str(beta)] = {
            "best_accuracy_mean": float(np.mean(best)),
            "last_accuracy_mean": float(np.mean(last)),
            "corrected_label_accuracy_mean": float(np.mean(corrected)),
            "best_accuracy_per_rep": [float(b) for b in best],
        }
    return cells
