"""Bi-level training engine.

Each post-warm-up iteration does four things on one mini-batch:

1. virtual step: a plain-SGD update of the classifier against the corrected
   labels produced under the current corrector parameters,
       w_hat(theta) = w - eta1 * mean_i grad_w CE(f(x_i; w), y_tilde_i(theta)).
2. meta gradient: the exact gradient of the meta loss at w_hat with respect
   to the corrector parameters. Soft-target CE is linear in its target, so
   w_hat is linear in the corrected labels and the chain rule closes in
   first-order terms only:
       d L_meta / d theta
         = (eta1 / n) * sum_i sum_c  d y_tilde[i, c] / d theta * s[i, c],
       s[i, c] = < grad_w log p[i, c] |_w , grad_w L_meta |_w_hat >,
   with d y_tilde / d alpha = y - (beta*prev + (1-beta)*y_hat) and
   d y_tilde / d beta = (1-alpha) * (prev - y_hat). The two loss inputs of
   the coefficient nets are computed from stored quantities and are
   constants under differentiation.
3. meta update: one Adam step on the coefficient-net parameters.
4. actual step: the real classifier update (SGD with momentum and weight
   decay) against labels re-corrected under the new corrector parameters,
   followed by refreshing the per-sample store.

Warm-up epochs are plain CE on the observed labels and are bitwise
identical to a pure-CE run with the same seed.
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass

import numpy as np

from .corrector import (PseudoLabelStore, correct_label, snapshot_from_store,
                        snapshot_uncorrected)
from .data import BatchSampler, LabeledDataset, MetaCycler, one_hot
from .errors import ConfigError, TrainingDiverged
from .models import ClassifierMLP, CoefficientNet, ce_loss_and_grad, logprob_grads_batch
from .nn import Adam, Array, SgdMomentum, optimizer_step, softmax_forward
from .report import RunReport

METHODS = ("mslc", "ce", "finetune", "bootstrap", "joint-opt", "fixed-beta")


@dataclass
class TrainConfig:
    """Everything the training loop needs besides the datasets.

    Defaults are the desk-scale benchmark settings: 60 epochs with a 40-epoch
    warm-up and one /10 learning-rate drop at the warm-up boundary.
    """
    epochs: int = 60
    warmup_epochs: int = 40
    batch_size: int = 32
    meta_batch_size: int = 32
    classifier_hidden: tuple = (64,)
    coef_hidden: int = 100
    clf_lr: float = 0.1
    clf_momentum: float = 0.9
    clf_weight_decay: float = 5e-4
    lr_drop_epoch: int | None = None  # defaults to ceil(2*epochs/3)
    lr_drop_factor: float = 10.0
    virtual_lr: float = 1e-3  # eta1: plain-SGD rate of the virtual step
    meta_lr: float = 1e-3     # eta2: Adam rate of the corrector update
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 1
    pseudo_refresh: str = "batch"   # "batch" | "epoch"
    prediction_form: str = "soft"   # "soft" | "hard"
    reuse_score_grads: bool = False

    def resolved_drop_epoch(self) -> int:
        if self.lr_drop_epoch is not None:
            return self.lr_drop_epoch
        return math.ceil(2 * self.epochs / 3)

    def lr_at(self, epoch: int) -> float:
        if epoch >= self.resolved_drop_epoch():
            return self.clf_lr / self.lr_drop_factor
        return self.clf_lr

    def validate(self) -> None:
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if not 0 <= self.warmup_epochs <= self.epochs:
            raise ConfigError(
                f"warm-up epochs must lie in [0, epochs], got {self.warmup_epochs}/{self.epochs}")
        if self.batch_size < 1 or self.meta_batch_size < 1:
            raise ConfigError("batch sizes must be >= 1")
        for name in ("clf_lr", "virtual_lr", "meta_lr"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be > 0")
        if self.pseudo_refresh not in ("batch", "epoch"):
            raise ConfigError(f"pseudo_refresh must be 'batch' or 'epoch', got {self.pseudo_refresh}")
        if self.prediction_form not in ("soft", "hard"):
            raise ConfigError(f"prediction_form must be 'soft' or 'hard', got {self.prediction_form}")
        if not self.classifier_hidden:
            raise ConfigError("classifier needs at least one hidden layer")


def derive_seeds(seed: int) -> dict:
    """Independent integer seeds for every random component of a run."""
    children = np.random.SeedSequence(seed).spawn(6)
    names = ("classifier", "alpha", "beta", "sampler", "meta", "finetune")
    return {name: int(child.generate_state(1)[0]) for name, child in zip(names, children)}


@dataclass
class CorrectionBatch:
    """One training mini-batch together with its stored label state."""
    x: Array
    y: Array             # observed labels, one-hot
    y_hat: Array         # stored predictions
    y_tilde_prev: Array  # stored corrected labels
    indices: Array


@dataclass
class MetaGradient:
    alpha: Array
    beta: Array | None


def virtual_step(clf: ClassifierMLP, x: Array, y_tilde: Array, eta1: float) -> Array:
    """One plain-SGD update (no momentum, no weight decay) against the
    corrected labels; returns the new flat parameter vector."""
    _, g = ce_loss_and_grad(clf, x, y_tilde)
    return clf.params.values - eta1 * g


def _meta_gradient_parts(clf, alpha_net, beta_net, batch: CorrectionBatch,
                         meta_x: Array, meta_y: Array, eta1: float):
    out = correct_label(batch.y, batch.y_hat, batch.y_tilde_prev, alpha_net, beta_net)
    w_hat = virtual_step(clf, batch.x, out.y_tilde, eta1)
    _, v = ce_loss_and_grad(clf, meta_x, meta_y, params_flat=w_hat)
    score_grads = logprob_grads_batch(clf, batch.x)  # (n, c, P) at the current w
    s = np.einsum("ncp,p->nc", score_grads, v)

    n = batch.x.shape[0]
    beta_col = out.beta[:, np.newaxis]
    z = beta_col * batch.y_tilde_prev + (1.0 - beta_col) * batch.y_hat
    coef_alpha = ((batch.y - z) * s).sum(axis=1)
    grad_alpha = (eta1 / n) * (coef_alpha @ alpha_net.param_grads(out.l_alpha))

    grad_beta = None
    if isinstance(beta_net, CoefficientNet):
        coef_beta = (1.0 - out.alpha) * ((batch.y_tilde_prev - batch.y_hat) * s).sum(axis=1)
        grad_beta = (eta1 / n) * (coef_beta @ beta_net.param_grads(out.l_beta))

    bad = not np.all(np.isfinite(grad_alpha))
    if grad_beta is not None:
        bad = bad or not np.all(np.isfinite(grad_beta))
    if bad:
        raise TrainingDiverged("non-finite meta gradient",
                               batch_indices=np.asarray(batch.indices).tolist())
    return MetaGradient(grad_alpha, grad_beta), score_grads


def meta_gradient(clf: ClassifierMLP, alpha_net: CoefficientNet, beta_net,
                  batch: CorrectionBatch, meta_x: Array, meta_y: Array,
                  eta1: float) -> MetaGradient:
    """Exact gradient of the meta loss at the virtually updated classifier
    with respect to the corrector parameters (closed form, no second-order
    machinery). `beta_net` may be a CoefficientNet or a fixed float, in which
    case the beta component is None."""
    mg, _ = _meta_gradient_parts(clf, alpha_net, beta_net, batch, meta_x, meta_y, eta1)
    return mg


def meta_update(alpha_net: CoefficientNet, beta_net, meta_grad: MetaGradient,
                alpha_opt: Adam, beta_opt: Adam | None) -> None:
    """One Adam step on the corrector parameters."""
    optimizer_step(alpha_opt, alpha_net.params.values, meta_grad.alpha)
    if meta_grad.beta is not None and isinstance(beta_net, CoefficientNet):
        optimizer_step(beta_opt, beta_net.params.values, meta_grad.beta)


def actual_step(clf: ClassifierMLP, x: Array, targets: Array, clf_opt: SgdMomentum) -> float:
    """The real classifier update: SGD with momentum and weight decay."""
    loss, g = ce_loss_and_grad(clf, x, targets)
    optimizer_step(clf_opt, clf.params.values, g)
    return loss


@dataclass
class TrainResult:
    classifier: ClassifierMLP
    alpha_net: CoefficientNet | None
    beta_net: object  # CoefficientNet, float (fixed) or None
    report: RunReport
    store: PseudoLabelStore | None


def _prediction(clf: ClassifierMLP, x: Array, form: str) -> Array:
    probs = softmax_forward(clf.forward(x))
    if form == "hard":
        return one_hot(np.argmax(probs, axis=1), probs.shape[1])
    return probs


def _test_accuracy(clf: ClassifierMLP, test_set: LabeledDataset) -> float:
    logits = clf.forward(test_set.features)
    return float(np.mean(np.argmax(logits, axis=1) == test_set.true_labels))


def run_training(train_set: LabeledDataset, meta_set: LabeledDataset | None,
                 test_set: LabeledDataset, config: TrainConfig, method,
                 manifest_hash: str = "", data_hash: str = "",
                 on_epoch=None, on_step=None) -> TrainResult:
    """Shared engine behind the corrector run and every baseline.

    `method` is a BaselineSpec-like object with a `kind` attribute in
    METHODS plus the per-kind parameters. Warm-up epochs are identical
    across kinds, so a run with warmup_epochs == epochs degenerates to the
    plain-CE baseline bitwise.
    """
    config.validate()
    kind = method.kind
    if kind not in METHODS:
        raise ConfigError(f"unknown method {kind!r}")
    needs_meta = kind in ("mslc", "fixed-beta", "finetune")
    if needs_meta and (meta_set is None or len(meta_set) == 0):
        raise ConfigError(f"method {kind!r} requires a non-empty meta set")

    c = train_set.n_classes
    x_all = train_set.features
    y_obs = train_set.observed_labels
    y_true = train_set.true_labels
    onehot_obs = one_hot(y_obs, c)
    mask = y_obs != y_true

    seeds = derive_seeds(config.seed)
    clf = ClassifierMLP.build((train_set.n_features, *config.classifier_hidden, c),
                              seeds["classifier"])
    clf_opt = SgdMomentum(lr=config.clf_lr, momentum=config.clf_momentum,
                          weight_decay=config.clf_weight_decay)

    alpha_net = None
    beta_net = None
    alpha_opt = beta_opt = None
    uses_corrector = kind in ("mslc", "fixed-beta")
    if uses_corrector:
        alpha_net = CoefficientNet.build(seeds["alpha"], config.coef_hidden)
        alpha_opt = Adam(lr=config.meta_lr, beta1=config.adam_beta1,
                         beta2=config.adam_beta2, eps=config.adam_eps)
        if kind == "mslc":
            beta_net = CoefficientNet.build(seeds["beta"], config.coef_hidden)
            beta_opt = Adam(lr=config.meta_lr, beta1=config.adam_beta1,
                            beta2=config.adam_beta2, eps=config.adam_eps)
        else:
            beta_net = float(method.fixed_beta)

    sampler = BatchSampler(len(train_set), config.batch_size, seeds["sampler"])
    meta_cycler = None
    meta_x = meta_y = None
    if uses_corrector:
        meta_cycler = MetaCycler(len(meta_set), config.meta_batch_size, seeds["meta"])
        meta_x = meta_set.features
        meta_y = one_hot(meta_set.observed_labels, c)

    corrects = kind in ("mslc", "fixed-beta", "bootstrap", "joint-opt")
    history = deque(maxlen=method.history_window) if kind == "joint-opt" else None

    report = RunReport(method=kind, n_classes=c,
                       manifest_hash=manifest_hash, data_hash=data_hash)
    store: PseudoLabelStore | None = None
    step = 0

    for epoch in range(config.epochs):
        clf_opt.lr = config.lr_at(epoch)
        correcting = corrects and epoch >= config.warmup_epochs

        if correcting and store is None:
            probs = _prediction(clf, x_all, config.prediction_form)
            store = PseudoLabelStore.from_predictions(probs, step)
            if kind == "joint-opt" and history:
                target = np.mean(history, axis=0)
                store.y_tilde_prev[...] = target / target.sum(axis=1, keepdims=True)

        for batch_idx in sampler.epoch(epoch):
            xb = x_all[batch_idx]
            yb = onehot_obs[batch_idx]
            if not correcting:
                _, g = ce_loss_and_grad(clf, xb, yb)
                optimizer_step(clf_opt, clf.params.values, g)
            elif uses_corrector:
                y_hat_b, y_prev_b = store.read(batch_idx)
                batch = CorrectionBatch(xb, yb, y_hat_b, y_prev_b, batch_idx)
                mbi = meta_cycler.next_batch()
                mg, score_grads = _meta_gradient_parts(
                    clf, alpha_net, beta_net, batch,
                    meta_x[mbi], meta_y[mbi], config.virtual_lr)
                meta_update(alpha_net, beta_net, mg, alpha_opt, beta_opt)
                out_new = correct_label(yb, y_hat_b, y_prev_b, alpha_net, beta_net)
                if config.reuse_score_grads:
                    g = -np.einsum("nc,ncp->p", out_new.y_tilde, score_grads) / xb.shape[0]
                    optimizer_step(clf_opt, clf.params.values, g)
                else:
                    actual_step(clf, xb, out_new.y_tilde, clf_opt)
                if config.pseudo_refresh == "batch":
                    new_pred = _prediction(clf, xb, config.prediction_form)
                    store.update(batch_idx, new_pred, out_new.y_tilde, step)
                if on_step is not None:
                    on_step({"step": step, "epoch": epoch,
                             "virtual_indices": batch.indices,
                             "actual_indices": batch_idx})
            elif kind == "bootstrap":
                y_hat_b, _ = store.read(batch_idx)
                lam = float(method.bootstrap_weight)
                target = lam * yb + (1.0 - lam) * y_hat_b
                _, g = ce_loss_and_grad(clf, xb, target)
                optimizer_step(clf_opt, clf.params.values, g)
                new_pred = _prediction(clf, xb, config.prediction_form)
                store.update(batch_idx, new_pred, target, step)
            elif kind == "joint-opt":
                _, y_prev_b = store.read(batch_idx)
                _, g = ce_loss_and_grad(clf, xb, y_prev_b)
                optimizer_step(clf_opt, clf.params.values, g)
            step += 1

        # ---- epoch boundary bookkeeping ----
        if kind == "joint-opt":
            probs = softmax_forward(clf.forward(x_all))
            history.append(probs)
            if store is not None:
                target = np.mean(history, axis=0)
                store.y_hat[...] = probs if config.prediction_form == "soft" else \
                    one_hot(np.argmax(probs, axis=1), c)
                store.y_tilde_prev[...] = target / target.sum(axis=1, keepdims=True)
                store.last_updated_step[...] = step
        elif config.pseudo_refresh == "epoch" and correcting and uses_corrector:
            out_all = correct_label(onehot_obs, store.y_hat, store.y_tilde_prev,
                                    alpha_net, beta_net)
            new_pred = _prediction(clf, x_all, config.prediction_form)
            store.update(np.arange(len(train_set)), new_pred, out_all.y_tilde, step)

        test_acc = _test_accuracy(clf, test_set)
        if store is not None and correcting:
            snap = snapshot_from_store(epoch, store, onehot_obs, y_true, y_obs,
                                       alpha_net, beta_net)
        else:
            snap = snapshot_uncorrected(epoch, y_true, y_obs)
        record = report.add_epoch(epoch, test_acc, snap, mask)
        if on_epoch is not None:
            on_epoch({"epoch": epoch, "record": record, "snapshot": snap,
                      "classifier": clf, "alpha_net": alpha_net,
                      "beta_net": beta_net, "report": report})

    if kind == "finetune":
        ft_opt = SgdMomentum(lr=config.lr_at(config.epochs - 1) * method.finetune_lr_factor,
                             momentum=config.clf_momentum,
                             weight_decay=config.clf_weight_decay)
        ft_sampler = BatchSampler(len(meta_set), config.batch_size, seeds["finetune"])
        meta_targets = one_hot(meta_set.observed_labels, c)
        for ft_epoch in range(method.finetune_epochs):
            for batch_idx in ft_sampler.epoch(ft_epoch):
                _, g = ce_loss_and_grad(clf, meta_set.features[batch_idx],
                                        meta_targets[batch_idx])
                optimizer_step(ft_opt, clf.params.values, g)
            epoch = config.epochs + ft_epoch
            snap = snapshot_uncorrected(epoch, y_true, y_obs)
            record = report.add_epoch(epoch, _test_accuracy(clf, test_set), snap, mask)
            if on_epoch is not None:
                on_epoch({"epoch": epoch, "record": record, "snapshot": snap,
                          "classifier": clf, "alpha_net": None, "beta_net": None,
                          "report": report})

    return TrainResult(clf, alpha_net, beta_net, report, store)


def train(train_set: LabeledDataset, meta_set: LabeledDataset,
          test_set: LabeledDataset, config: TrainConfig,
          manifest_hash: str = "", data_hash: str = "",
          on_epoch=None, on_step=None) -> TrainResult:
    """Train the full corrector pipeline (warm-up, then the bi-level loop)."""
    from .baselines import BaselineSpec
    return run_training(train_set, meta_set, test_set, config,
                        BaselineSpec(kind="mslc"), manifest_hash, data_hash,
                        on_epoch, on_step)
