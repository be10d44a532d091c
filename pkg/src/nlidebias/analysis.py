"""Residual-bias measurements: frozen-encoder probes, baselines, indicator words, sweeps."""

from __future__ import annotations

import csv
import hashlib
import io
import itertools
import json
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from . import autodiff as ad
from .data import CONTRADICTION, PAD_ID, UNK_ID, Dataset
from .model import MLP, ModelConfig, NLIModel, SentenceEncoder, predict
from .seeding import rng_for
from .training import (TrainConfig, _step, batches, predict_nli, run_schedule, train,
                       train_hypothesis_only)

DEFAULT_GRID = (0.05, 0.1, 0.2, 0.4, 0.8, 1.0)
STRONG_GRID = (0.05, 0.1, 0.2, 0.4, 0.8, 1.0, 1.5, 2.0, 3.0, 5.0)


def majority_baseline(dataset: Dataset) -> float:
    if not len(dataset):
        raise ValueError("majority_baseline: empty dataset")
    return max(Counter(dataset.labels.tolist()).values()) / len(dataset)


def params_digest(params) -> str:
    h = hashlib.sha256()
    for p in params:
        h.update(p.value.tobytes())
    return h.hexdigest()


# ---------------------------------------------------------------------- probe


@dataclass
class ProbeResult:
    provenance: str
    probe_val_acc: float
    majority: float
    hypothesis_only: float | None = None
    adversary_val_acc: float | None = None
    best_epoch: int = 0

    def __post_init__(self):
        for name in ("probe_val_acc", "majority", "hypothesis_only", "adversary_val_acc"):
            v = getattr(self, name)
            if v is not None and not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} outside [0, 1]")


def encode_dataset(encoder: SentenceEncoder, dataset: Dataset, batch_size: int = 512
                   ) -> np.ndarray:
    out = []
    with ad.no_grad():
        for b in batches(dataset, batch_size, shuffle=False):
            out.append(encoder(b.hypothesis, b.hypothesis_mask).value)
    return np.concatenate(out)


def probe_retrain(encoder: SentenceEncoder, datasets: Mapping[str, Dataset],
                  cfg: TrainConfig | None = None, hidden: int = 32,
                  provenance: str = "baseline", **references) -> ProbeResult:
    """Fit a fresh hypothesis-only classifier on frozen ``encoder`` outputs.

    Features are computed once; only the probe's weights train, under the
    usual schedule. ``references`` fill the optional ProbeResult fields.
    """
    if not getattr(encoder, "frozen", False):
        raise ValueError("probe_retrain: encoder must be frozen (call .freeze())")
    cfg = cfg or TrainConfig()
    before = params_digest(encoder.parameters() + [encoder.embedding])
    x_train = encode_dataset(encoder, datasets["train"])
    x_val = encode_dataset(encoder, datasets["val"])
    y_train, y_val = datasets["train"].labels, datasets["val"].labels
    probe = MLP("probe", x_train.shape[1], hidden, rng_for(cfg.seed, "probe"))
    params = probe.parameters()
    batch_rng = rng_for(cfg.seed, "batches")
    n = len(y_train)

    def epoch_fn(lr):
        order = np.random.default_rng(int(batch_rng.integers(2 ** 32))).permutation(n)
        losses = []
        for i in range(0, n, cfg.batch_size):
            idx = order[i: i + cfg.batch_size]
            loss = ad.softmax_xent(probe(x_train[idx]), y_train[idx])
            losses.append(float(loss.value))
            _step(params, loss, lr, cfg)
        return {"loss_nli": float(np.mean(losses)), "loss_adv": None, "train_acc": None}

    def eval_fn():
        with ad.no_grad():
            acc = float((predict(probe(x_val)) == y_val).mean())
        return {"val_acc": acc, "val_acc_hyp": None}

    metrics = run_schedule(params, epoch_fn, eval_fn, cfg)
    if params_digest(encoder.parameters() + [encoder.embedding]) != before:
        raise RuntimeError("probe_retrain: encoder parameters changed")
    return ProbeResult(provenance, metrics.best_val_acc, majority_baseline(datasets["val"]),
                       best_epoch=metrics.best_epoch, **references)


def hypothesis_only_model(datasets: Mapping[str, Dataset], model_cfg: ModelConfig | None = None,
                          cfg: TrainConfig | None = None, embeddings: np.ndarray | None = None
                          ) -> tuple[NLIModel, float]:
    """Train g_H plus a classifier on hypotheses alone; returns (model, val accuracy)."""
    cfg = cfg or TrainConfig()
    model = NLIModel(len(datasets["train"].vocab), model_cfg, seed=cfg.seed, embeddings=embeddings)
    model, metrics = train_hypothesis_only(model, datasets, cfg)
    return model, metrics.best_val_acc


# ----------------------------------------------------------------- indicators


@dataclass
class IndicatorRow:
    word: str
    count: int
    p_hat: float
    p_model: dict[str, float] = field(default_factory=dict)
    pct_decrease: dict[str, float | None] = field(default_factory=dict)


def percentage_decrease(p_base: float, p_model: float) -> float | None:
    """``100 * (p_base - p_model) / p_base``; None when the baseline rate is zero."""
    if p_base == 0:
        return None
    return 100.0 * (p_base - p_model) / p_base


def indicator_stats_from_predictions(train_set: Dataset, predictions: Mapping[str, np.ndarray],
                                     top_k: int = 10, min_count: int = 20,
                                     target_label: int = CONTRADICTION,
                                     baseline: str | None = None) -> list[IndicatorRow]:
    """Indicator table from per-model predicted labels on ``train_set``.

    A word's count is the number of hypotheses containing it. Words are
    ranked by p_hat, then count, then alphabetically.
    """
    if min_count < 1:
        raise ValueError("min_count must be >= 1")
    labels = train_set.labels
    preds = {k: np.asarray(v) for k, v in predictions.items()}
    for k, v in preds.items():
        if v.shape != labels.shape:
            raise ValueError(f"predictions for {k!r} have shape {v.shape}, expected {labels.shape}")
    rows_of: dict[int, list[int]] = {}
    for i, ex in enumerate(train_set.examples):
        for tok in set(ex.hypothesis):
            if tok not in (PAD_ID, UNK_ID):
                rows_of.setdefault(tok, []).append(i)
    candidates = []
    for tok, rows in rows_of.items():
        if len(rows) < min_count:
            continue
        rows = np.asarray(rows)
        p_hat = float((labels[rows] == target_label).mean())
        candidates.append((tok, rows, p_hat))
    vocab = train_set.vocab
    candidates.sort(key=lambda c: (-c[2], -len(c[1]), vocab.itos[c[0]]))
    if baseline is None and preds:
        baseline = next(iter(preds))
    out = []
    for tok, rows, p_hat in candidates[:top_k]:
        p_model = {k: float((v[rows] == target_label).mean()) for k, v in preds.items()}
        dec = {}
        if baseline is not None:
            dec = {k: percentage_decrease(p_model[baseline], p) for k, p in p_model.items()}
        out.append(IndicatorRow(vocab.itos[tok], len(rows), p_hat, p_model, dec))
    return out


def indicator_stats(train_set: Dataset, models: Mapping[str, NLIModel], top_k: int = 10,
                    min_count: int = 20, target_label: int = CONTRADICTION,
                    baseline: str | None = None) -> list[IndicatorRow]:
    """Same as :func:`indicator_stats_from_predictions`, predicting with each model."""
    preds = {name: predict_nli(m, train_set) for name, m in models.items()}
    return indicator_stats_from_predictions(train_set, preds, top_k, min_count,
                                            target_label, baseline)


def indicator_csv(rows: Sequence[IndicatorRow]) -> str:
    models = list(rows[0].p_model) if rows else []
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["word", "count", "p_hat"] + [f"p_{m}" for m in models]
               + [f"decrease_{m}" for m in models])
    for r in rows:
        w.writerow([r.word, r.count, repr(r.p_hat)] + [repr(r.p_model[m]) for m in models]
                   + ["" if r.pct_decrease.get(m) is None else repr(r.pct_decrease[m])
                      for m in models])
    return buf.getvalue()


# ---------------------------------------------------------------------- sweep


AXES = {"advcls": ("lambda_loss", "lambda_enc"), "advdat": ("lambda_rand", "lambda_enc")}


@dataclass
class SweepCell:
    values: dict[str, float]
    val_acc: float | None = None
    probe_acc: float | None = None
    error: str | None = None

    @property
    def failed(self) -> bool:
        return self.error is not None


@dataclass
class SweepGrid:
    method: str
    axes: dict[str, list[float]]
    cells: list[SweepCell] = field(default_factory=list)

    def rows(self) -> list[dict]:
        out = []
        for c in self.cells:
            row = dict(c.values)
            row.update(val_acc=c.val_acc, probe_acc=c.probe_acc,
                       status="failed" if c.failed else "ok", error=c.error or "")
            out.append(row)
        return out

    def to_csv(self) -> str:
        cols = list(self.axes) + ["val_acc", "probe_acc", "status", "error"]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(cols)
        for row in self.rows():
            w.writerow(["" if row[c] is None else repr(row[c]) if isinstance(row[c], float)
                        else row[c] for c in cols])
        return buf.getvalue()

    def to_json(self) -> str:
        doc = {"method": self.method, "axes": self.axes, "cells": self.rows()}
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"

    def plot_data(self, metric: str = "val_acc") -> str:
        """x = first axis value, series = second axis value, y = ``metric``."""
        names = list(self.axes)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["x", "y", "series"])
        for c in self.cells:
            y = getattr(c, metric)
            series = f"{names[1]}={c.values[names[1]]!r}" if len(names) > 1 else metric
            w.writerow([repr(c.values[names[0]]), "" if y is None else repr(y), series])
        return buf.getvalue()


def _run_cell(args):
    method, values, base_cfg, model_cfg, datasets, probe, embeddings = args
    try:
        cfg = replace(base_cfg, method=method, **values)
        model = NLIModel(len(datasets["train"].vocab), model_cfg, seed=cfg.seed,
                         embeddings=embeddings)
        model, metrics = train(model, datasets, cfg)
        probe_acc = None
        if probe:
            probe_acc = probe_retrain(model.enc_h.freeze(), datasets, cfg,
                                      hidden=model.cfg.hidden).probe_val_acc
        return SweepCell(dict(values), metrics.best_val_acc, probe_acc)
    except Exception as exc:  # recorded per cell, the sweep goes on
        return SweepCell(dict(values), error=f"{type(exc).__name__}: {exc}")


def sweep(method: str, axis_values: Mapping[str, Sequence[float]], base_cfg: TrainConfig,
          datasets: Mapping[str, Dataset], model_cfg: ModelConfig | None = None,
          probe: bool = True, jobs: int = 1, embeddings: np.ndarray | None = None) -> SweepGrid:
    """Train one model per cell of the cross product of ``axis_values``."""
    if method not in AXES and method != "baseline":
        raise ValueError(f"sweep: unknown method {method!r}")
    if not axis_values or any(len(v) == 0 for v in axis_values.values()):
        raise ValueError("sweep: axes must be non-empty")
    names = list(axis_values)
    axes = {k: [float(x) for x in axis_values[k]] for k in names}
    jobs_args = [(method, dict(zip(names, combo)), base_cfg, model_cfg, datasets, probe,
                  embeddings)
                 for combo in itertools.product(*(axes[k] for k in names))]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            cells = list(pool.map(_run_cell, jobs_args))
    else:
        cells = [_run_cell(a) for a in jobs_args]
    return SweepGrid(method, axes, cells)


def probe_plot_data(results: Sequence[ProbeResult]) -> str:
    """Rows ``x=provenance, y=accuracy, series=quantity`` for a grouped bar chart."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["x", "y", "series"])
    for r in results:
        for series, y in (("probe", r.probe_val_acc), ("majority", r.majority),
                          ("hypothesis_only", r.hypothesis_only),
                          ("adversary", r.adversary_val_acc)):
            if y is not None:
                w.writerow([r.provenance, repr(y), series])
    return buf.getvalue()


def probe_csv(results: Sequence[ProbeResult]) -> str:
    cols = ["provenance", "probe_val_acc", "majority", "hypothesis_only", "adversary_val_acc",
            "best_epoch"]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for r in results:
        d = asdict(r)
        w.writerow(["" if d[c] is None else repr(d[c]) if isinstance(d[c], float) else d[c]
                    for c in cols])
    return buf.getvalue()
