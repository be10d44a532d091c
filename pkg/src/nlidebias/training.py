"""Baseline, adversarial-classifier and random-premise training under the InferSent schedule."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import Node
from .data import NEUTRAL, Batch, Dataset, batches, sample_donors, swap_premises
from .model import NLIModel, predict
from .seeding import rng_for

METHODS = ("baseline", "advcls", "advdat")


@dataclass
class TrainConfig:
    method: str = "baseline"
    lambda_loss: float = 1.0
    lambda_enc: float = 1.0
    lambda_rand: float = 0.0
    lr_init: float = 0.1
    lr_shrink: float = 5.0
    lr_decay: float = 0.99
    lr_floor: float = 1e-5
    max_epochs: int = 20
    batch_size: int = 64
    seed: int = 0
    restrict_labels: bool = False
    fixed_swaps: bool = False
    bernoulli_mix: bool = False
    clip_norm: float | None = None

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        if not 0.0 <= self.lambda_rand <= 1.0:
            raise ValueError(f"lambda_rand must be in [0, 1], got {self.lambda_rand}")
        if self.lambda_loss < 0 or self.lambda_enc < 0:
            raise ValueError("lambda_loss and lambda_enc must be >= 0")
        if not self.lr_init > self.lr_floor:
            raise ValueError("lr_init must exceed lr_floor")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ValueError("batch_size and max_epochs must be >= 1")


@dataclass
class ScheduleState:
    lr: float
    best_val: float = -math.inf
    prev_val: float | None = None
    epoch: int = 0
    stop: bool = False
    stop_reason: str = ""


def lr_update(state: ScheduleState, val_acc: float, cfg: TrainConfig | None = None
              ) -> ScheduleState:
    """End-of-epoch schedule step.

    Decay by ``lr_decay`` every epoch, then divide by ``lr_shrink`` if
    validation accuracy fell below the previous epoch's. Stop once the rate
    is under ``lr_floor`` or ``max_epochs`` epochs have run.
    """
    cfg = cfg or TrainConfig()
    lr = state.lr * cfg.lr_decay
    if state.prev_val is not None and val_acc < state.prev_val:
        lr = lr / cfg.lr_shrink
    epoch = state.epoch + 1
    reason = ""
    if lr < cfg.lr_floor:
        reason = "lr_floor"
    elif epoch >= cfg.max_epochs:
        reason = "max_epochs"
    return ScheduleState(lr=lr, best_val=max(state.best_val, val_acc), prev_val=val_acc,
                         epoch=epoch, stop=bool(reason), stop_reason=reason)


@dataclass
class RunMetrics:
    rows: list[dict] = field(default_factory=list)
    best_epoch: int = 0
    best_val_acc: float = 0.0
    stop_reason: str = ""

    COLUMNS = ("epoch", "lr", "loss_nli", "loss_adv", "train_acc", "val_acc", "val_acc_hyp")

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.COLUMNS)
        for row in self.rows:
            w.writerow(["" if row.get(c) is None else repr(row[c]) if isinstance(row[c], float)
                        else row[c] for c in self.COLUMNS])
        return buf.getvalue()

    def summary(self) -> dict:
        return {"best_epoch": self.best_epoch, "best_val_acc": self.best_val_acc,
                "stop_reason": self.stop_reason, "epochs_run": len(self.rows)}


# --------------------------------------------------------------------- losses


def loss_nli(model: NLIModel, batch: Batch) -> Node:
    return ad.softmax_xent(model.nli_logits(batch), batch.labels)


def _advcls_terms(model, batch, lambda_enc):
    p = model.enc_p(batch.premise, batch.premise_mask)
    h = model.enc_h(batch.hypothesis, batch.hypothesis_mask)
    logits = model.cls_nli(model.features(p, h))
    hyp_logits = model.cls_hyp(ad.grl(h, lambda_enc))
    return (ad.softmax_xent(logits, batch.labels), ad.softmax_xent(hyp_logits, batch.labels),
            logits)


def loss_advcls(model: NLIModel, batch: Batch, lambda_loss: float, lambda_enc: float) -> Node:
    """``L_nli + lambda_loss * xent(cls_hyp(grl(h, lambda_enc)), y)``."""
    if lambda_loss < 0 or lambda_enc < 0:
        raise ValueError("lambda_loss and lambda_enc must be >= 0")
    nli, adv, _ = _advcls_terms(model, batch, lambda_enc)
    return nli + lambda_loss * adv


def _advdat_terms(model, clean, swapped, lambda_rand, lambda_enc, weights=None):
    p = model.enc_p(clean.premise, clean.premise_mask)
    h = model.enc_h(clean.hypothesis, clean.hypothesis_mask)
    logits = model.cls_nli(model.features(p, h))
    p_swap = ad.grl_block(model.enc_p(swapped.premise, swapped.premise_mask))
    h_rev = ad.grl(h, lambda_enc)
    swap_logits = model.cls_nli(model.features(p_swap, h_rev))
    if weights is None:
        nli = ad.softmax_xent(logits, clean.labels)
        rand = ad.softmax_xent(swap_logits, clean.labels)
        total = (1.0 - lambda_rand) * nli + lambda_rand * rand
    else:
        w_clean, w_swap = weights
        nli = ad.softmax_xent(logits, clean.labels, w_clean)
        rand = ad.softmax_xent(swap_logits, clean.labels, w_swap)
        total = nli + rand
    return total, nli, rand, logits


def loss_advdat(model: NLIModel, clean_batch: Batch, swapped_batch: Batch,
                lambda_rand: float, lambda_enc: float) -> Node:
    """``(1 - lambda_rand) * L_nli(clean) + lambda_rand * L_rand(swapped)``.

    The swapped term feeds ``grl_block(g_P(P'))`` and ``grl(g_H(H), lambda_enc)``
    into the NLI classifier.
    """
    if not 0.0 <= lambda_rand <= 1.0:
        raise ValueError(f"lambda_rand must be in [0, 1], got {lambda_rand}")
    total, _, _, _ = _advdat_terms(model, clean_batch, swapped_batch, lambda_rand, lambda_enc)
    return total


# ------------------------------------------------------------------ schedule


def snapshot(params) -> list[np.ndarray]:
    return [p.value.copy() for p in params]


def restore(params, values) -> None:
    for p, v in zip(params, values):
        p.value = v.copy()


def run_schedule(params, epoch_fn: Callable[[float], dict], eval_fn: Callable[[], dict],
                 cfg: TrainConfig, on_epoch_end: Callable | None = None) -> RunMetrics:
    """Shared epoch loop: SGD epochs, validation, schedule, best-epoch restore.

    ``epoch_fn(lr)`` trains one epoch and returns logged numbers;
    ``eval_fn()`` returns a dict with at least ``val_acc``.
    """
    params = list(params)
    state = ScheduleState(lr=cfg.lr_init)
    metrics = RunMetrics()
    best = snapshot(params)
    while True:
        lr = state.lr
        row = {"epoch": state.epoch + 1, "lr": lr}
        row.update(epoch_fn(lr))
        row.update(eval_fn())
        metrics.rows.append(row)
        if row["val_acc"] > state.best_val:
            best = snapshot(params)
            metrics.best_epoch = row["epoch"]
            metrics.best_val_acc = row["val_acc"]
        if on_epoch_end is not None:
            on_epoch_end(row["epoch"], params)
        state = lr_update(state, row["val_acc"], cfg)
        if state.stop:
            metrics.stop_reason = state.stop_reason
            break
    restore(params, best)
    return metrics


def _step(params, loss: Node, lr: float, cfg: TrainConfig) -> None:
    ad.backward(loss)
    if cfg.clip_norm is not None:
        ad.clip_grad_norm(params, cfg.clip_norm)
    ad.sgd_step(params, lr)


# -------------------------------------------------------------------- driving


def evaluate(model: NLIModel, dataset: Dataset, batch_size: int = 512) -> float:
    """Accuracy of the NLI classifier's argmax."""
    if not len(dataset):
        raise ValueError("evaluate: empty dataset")
    return float((predict_nli(model, dataset, batch_size) == dataset.labels).mean())


def predict_nli(model: NLIModel, dataset: Dataset, batch_size: int = 512) -> np.ndarray:
    out = []
    with ad.no_grad():
        for b in batches(dataset, batch_size, shuffle=False):
            out.append(predict(model.nli_logits(b)))
    return np.concatenate(out)


def predict_hyp(model: NLIModel, dataset: Dataset, batch_size: int = 512) -> np.ndarray:
    out = []
    with ad.no_grad():
        for b in batches(dataset, batch_size, shuffle=False):
            out.append(predict(model.hyp_logits(b)))
    return np.concatenate(out)


def evaluate_hyp(model: NLIModel, dataset: Dataset, batch_size: int = 512) -> float:
    return float((predict_hyp(model, dataset, batch_size) == dataset.labels).mean())


def _mean(xs):
    return float(np.mean(xs)) if xs else None


def train(model: NLIModel, datasets: dict[str, Dataset], cfg: TrainConfig,
          on_epoch_end: Callable | None = None) -> tuple[NLIModel, RunMetrics]:
    """Train ``model`` in place with ``cfg.method``; keeps the best-val epoch."""
    cfg.validate()
    train_set, val_set = datasets["train"], datasets["val"]
    params = [p for p in model.parameters()]
    trainable = [p for p in params if p.trainable]
    batch_rng = rng_for(cfg.seed, "batches")
    swap_rng = rng_for(cfg.seed, "swaps")
    fixed = None
    if cfg.method == "advdat" and cfg.fixed_swaps:
        fixed = sample_donors(swap_rng, np.arange(len(train_set)), len(train_set))

    def epoch_fn(lr):
        nli_losses, adv_losses, correct, seen = [], [], 0, 0
        for b in batches(train_set, cfg.batch_size, seed=int(batch_rng.integers(2 ** 32))):
            if cfg.method == "baseline":
                logits = model.nli_logits(b)
                total = nli = ad.softmax_xent(logits, b.labels)
                adv = None
            elif cfg.method == "advcls":
                nli, adv, logits = _advcls_terms(model, b, cfg.lambda_enc)
                total = nli + cfg.lambda_loss * adv
            else:
                total, nli, adv, logits = _advdat_step_terms(model, b, train_set, cfg,
                                                             swap_rng, fixed)
            nli_losses.append(float(nli.value))
            if adv is not None:
                adv_losses.append(float(adv.value))
            correct += int((predict(logits) == b.labels).sum())
            seen += len(b)
            _step(trainable, total, lr, cfg)
        return {"loss_nli": _mean(nli_losses), "loss_adv": _mean(adv_losses),
                "train_acc": correct / seen}

    def eval_fn():
        out = {"val_acc": evaluate(model, val_set), "val_acc_hyp": None}
        if cfg.method == "advcls":
            out["val_acc_hyp"] = evaluate_hyp(model, val_set)
        return out

    metrics = run_schedule(params, epoch_fn, eval_fn, cfg, on_epoch_end)
    return model, metrics


def _advdat_step_terms(model, b, train_set, cfg, swap_rng, fixed):
    donors = fixed[b.indices] if fixed is not None else None
    swapped = swap_premises(b, swap_rng, train_set, cfg.restrict_labels, donors)
    n = len(b)
    eligible = np.ones(n, dtype=bool) if not cfg.restrict_labels else b.labels != NEUTRAL
    if cfg.bernoulli_mix:
        picked = eligible & (swap_rng.random(n) < cfg.lambda_rand)
        weights = ((~picked) / n, picked / n)
        return _advdat_terms(model, b, swapped, cfg.lambda_rand, cfg.lambda_enc, weights)
    if cfg.restrict_labels:
        k = int(eligible.sum())
        w_swap = eligible * (cfg.lambda_rand / k) if k else np.zeros(n)
        weights = (np.full(n, (1.0 - cfg.lambda_rand) / n), w_swap)
        return _advdat_terms(model, b, swapped, cfg.lambda_rand, cfg.lambda_enc, weights)
    return _advdat_terms(model, b, swapped, cfg.lambda_rand, cfg.lambda_enc)


def train_hypothesis_only(model: NLIModel, datasets: dict[str, Dataset], cfg: TrainConfig,
                          on_epoch_end: Callable | None = None) -> tuple[NLIModel, RunMetrics]:
    """Train ``enc_h`` + ``cls_hyp`` on hypotheses alone; val accuracy from ``cls_hyp``."""
    train_set, val_set = datasets["train"], datasets["val"]
    params = [model.embedding] + model.enc_h.parameters() + model.cls_hyp.parameters()
    trainable = [p for p in params if p.trainable]
    batch_rng = rng_for(cfg.seed, "batches")

    def epoch_fn(lr):
        losses, correct, seen = [], 0, 0
        for b in batches(train_set, cfg.batch_size, seed=int(batch_rng.integers(2 ** 32))):
            logits = model.hyp_logits(b)
            loss = ad.softmax_xent(logits, b.labels)
            losses.append(float(loss.value))
            correct += int((predict(logits) == b.labels).sum())
            seen += len(b)
            _step(trainable, loss, lr, cfg)
        return {"loss_nli": _mean(losses), "loss_adv": None, "train_acc": correct / seen}

    def eval_fn():
        return {"val_acc": evaluate_hyp(model, val_set), "val_acc_hyp": None}

    metrics = run_schedule(params, epoch_fn, eval_fn, cfg, on_epoch_end)
    return model, metrics
