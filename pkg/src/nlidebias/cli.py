"""Command-line entry point.

Every command takes an optional JSON config (``--config``) with sections
``data`` (SyntheticConfig), ``model`` (ModelConfig) and ``train``
(TrainConfig), plus ``--set section.key=value`` overrides. Outputs are
staged in a temporary directory and moved into ``--out`` only when the
command succeeds, so a failed run leaves nothing behind.
"""

from __future__ import annotations

import argparse
import json
import logging
import shutil
import sys
import tempfile
from contextlib import contextmanager
from dataclasses import asdict, fields, replace
from pathlib import Path

from . import analysis
from .data import (SyntheticConfig, Vocab, gen_synthetic, load_embeddings, load_snli,
                   synthetic_manifest, write_splits)
from .model import ModelConfig, NLIModel, load_checkpoint, random_encoder, save_checkpoint
from .training import TrainConfig, evaluate, evaluate_hyp, train

log = logging.getLogger("nlidebias")

SECTIONS = {"data": SyntheticConfig, "model": ModelConfig, "train": TrainConfig}


class UsageError(Exception):
    pass


# --------------------------------------------------------------------- config


def resolve_config(path: str | None, overrides: list[str], seed: int | None) -> dict:
    doc: dict = {name: {} for name in SECTIONS}
    if path:
        loaded = json.loads(Path(path).read_text(encoding="utf-8"))
        for section, values in loaded.items():
            if section not in SECTIONS:
                raise UsageError(f"unknown config section {section!r}")
            doc[section].update(values)
    for item in overrides:
        key, sep, raw = item.partition("=")
        section, dot, name = key.partition(".")
        if not sep or not dot or section not in SECTIONS:
            raise UsageError(f"bad override {item!r}; expected section.key=value")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        doc[section][name] = value
    if seed is not None:
        doc["data"]["seed"] = seed
        doc["train"]["seed"] = seed
    resolved = {}
    for section, cls in SECTIONS.items():
        known = {f.name for f in fields(cls)}
        unknown = set(doc[section]) - known
        if unknown:
            raise UsageError(f"unknown {section} config keys: {sorted(unknown)}")
        try:
            resolved[section] = cls(**doc[section])
        except (TypeError, ValueError) as exc:
            raise UsageError(f"invalid {section} config: {exc}") from None
    return resolved


def config_echo(cfg: dict, **extra) -> str:
    doc = {name: asdict(value) for name, value in cfg.items()}
    doc.update(extra)
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def dumps(doc) -> str:
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


@contextmanager
def staged_output(out: str):
    """Yield a staging directory; on success its files replace those in ``out``."""
    out_dir = Path(out)
    parent = out_dir.parent
    parent.mkdir(parents=True, exist_ok=True)
    stage = Path(tempfile.mkdtemp(prefix=".stage-", dir=parent))
    try:
        yield stage
    except BaseException:
        shutil.rmtree(stage, ignore_errors=True)
        raise
    out_dir.mkdir(parents=True, exist_ok=True)
    for item in sorted(stage.iterdir()):
        target = out_dir / item.name
        if target.is_dir():
            shutil.rmtree(target)
        elif target.exists():
            target.unlink()
        shutil.move(str(item), str(target))
    stage.rmdir()


def _read_splits(data_dir: str, vocab: Vocab | None = None, need=("train", "val")):
    d = Path(data_dir)
    for name in need:
        if not (d / f"{name}.jsonl").exists():
            raise FileNotFoundError(f"missing {name} split: {d / f'{name}.jsonl'}")
    train = load_snli(d / "train.jsonl", vocab, split="train")
    out = {"train": train}
    for name in ("val", "test"):
        if (d / f"{name}.jsonl").exists():
            out[name] = load_snli(d / f"{name}.jsonl", train.vocab, split=name)
    return out


def _checkpoint(path: str, cfg: dict, model_overridden: bool):
    model, doc = load_checkpoint(path, cfg["model"] if model_overridden else None)
    vocab = Vocab(doc["vocab"][2:]) if doc.get("vocab") else None
    return model, doc, vocab


def _provenance(doc: dict) -> str:
    extra = doc.get("extra", {})
    method = extra.get("method", "baseline")
    if method == "advcls":
        return f"advcls({extra['lambda_loss']!r},{extra['lambda_enc']!r})"
    if method == "advdat":
        return f"advdat({extra['lambda_rand']!r},{extra['lambda_enc']!r})"
    return method


# ------------------------------------------------------------------- commands


def cmd_gen_data(args, cfg):
    splits = gen_synthetic(cfg["data"])
    with staged_output(args.out) as stage:
        write_splits(splits, stage, synthetic_manifest(cfg["data"], splits))
        (stage / "config.json").write_text(config_echo(cfg), encoding="utf-8")
    log.info("wrote %s", ", ".join(f"{k}={len(v)}" for k, v in splits.items()))


def _train_cfg_from_args(args, cfg) -> TrainConfig:
    updates = {}
    for flag, key in (("method", "method"), ("lambda_loss", "lambda_loss"),
                      ("lambda_enc", "lambda_enc"), ("lambda_rand", "lambda_rand")):
        value = getattr(args, flag, None)
        if value is not None:
            updates[key] = value
    try:
        return replace(cfg["train"], **updates)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def cmd_train(args, cfg):
    tcfg = _train_cfg_from_args(args, cfg)
    cfg = dict(cfg, train=tcfg)
    splits = _read_splits(args.data)
    vocab = splits["train"].vocab
    embeddings, coverage = None, None
    if args.embeddings:
        embeddings, coverage = load_embeddings(args.embeddings, vocab, seed=tcfg.seed)
        cfg["model"] = replace(cfg["model"], d_emb=embeddings.shape[1])
    model = NLIModel(len(vocab), cfg["model"], seed=tcfg.seed, embeddings=embeddings)
    model, metrics = train(model, splits, tcfg)
    summary = metrics.summary()
    if "test" in splits:
        summary["test_acc"] = evaluate(model, splits["test"])
    if coverage is not None:
        summary["embedding_coverage"] = coverage
    with staged_output(args.out) as stage:
        save_checkpoint(stage / "checkpoint.json", model, vocab.itos,
                        extra={"method": tcfg.method, "lambda_loss": tcfg.lambda_loss,
                               "lambda_enc": tcfg.lambda_enc, "lambda_rand": tcfg.lambda_rand})
        (stage / "metrics.csv").write_text(metrics.to_csv(), encoding="utf-8")
        (stage / "summary.json").write_text(dumps(summary), encoding="utf-8")
        (stage / "config.json").write_text(config_echo(cfg), encoding="utf-8")
    log.info("best val acc %.4f at epoch %d (%s)", metrics.best_val_acc, metrics.best_epoch,
             metrics.stop_reason)


def cmd_eval(args, cfg):
    model, doc, vocab = _checkpoint(args.checkpoint, cfg, args.model_overridden)
    splits = _read_splits(args.data, vocab, need=("train", args.split))
    ds = splits[args.split]
    report = {"split": args.split, "n": len(ds), "accuracy": evaluate(model, ds),
              "hypothesis_classifier_accuracy": evaluate_hyp(model, ds),
              "majority": analysis.majority_baseline(ds)}
    with staged_output(args.out) as stage:
        (stage / "eval.json").write_text(dumps(report), encoding="utf-8")
        (stage / "config.json").write_text(config_echo(cfg, checkpoint=args.checkpoint),
                                           encoding="utf-8")


def cmd_probe(args, cfg):
    model, doc, vocab = _checkpoint(args.checkpoint, cfg, args.model_overridden)
    splits = _read_splits(args.data, vocab)
    tcfg = cfg["train"]
    refs = {}
    if args.hypothesis_only:
        _, refs["hypothesis_only"] = analysis.hypothesis_only_model(
            splits, model.cfg, tcfg, embeddings=model.embedding.value)
    results = []
    method = doc.get("extra", {}).get("method")
    adversary = evaluate_hyp(model, splits["val"]) if method == "advcls" else None
    results.append(analysis.probe_retrain(model.enc_h.freeze(), splits, tcfg, model.cfg.hidden,
                                          _provenance(doc), adversary_val_acc=adversary, **refs))
    for seed in args.random_seeds:
        enc = random_encoder(seed, model.cfg, model.embedding)
        results.append(analysis.probe_retrain(enc, splits, tcfg, model.cfg.hidden,
                                              f"random({seed})", **refs))
    with staged_output(args.out) as stage:
        (stage / "probe.csv").write_text(analysis.probe_csv(results), encoding="utf-8")
        (stage / "probe.json").write_text(dumps([asdict(r) for r in results]), encoding="utf-8")
        (stage / "plot_probes.csv").write_text(analysis.probe_plot_data(results), encoding="utf-8")
        (stage / "config.json").write_text(
            config_echo(cfg, checkpoint=args.checkpoint, random_seeds=args.random_seeds),
            encoding="utf-8")


def cmd_indicators(args, cfg):
    models, vocab = {}, None
    for item in args.checkpoint:
        name, sep, path = item.partition("=")
        if not sep:
            name, path = Path(item).parent.name or "model", item
        model, doc, ck_vocab = _checkpoint(path, cfg, args.model_overridden)
        if vocab is not None and ck_vocab is not None and ck_vocab.itos != vocab.itos:
            raise ValueError(f"checkpoint {path} was trained with a different vocabulary")
        vocab = vocab or ck_vocab
        models[name] = model
    splits = _read_splits(args.data, vocab, need=("train",))
    baseline = args.baseline or next(iter(models))
    if baseline not in models:
        raise UsageError(f"--baseline {baseline!r} is not one of {sorted(models)}")
    ordered = {baseline: models[baseline], **{k: v for k, v in models.items() if k != baseline}}
    rows = analysis.indicator_stats(splits["train"], ordered, args.top_k, args.min_count,
                                    args.target_label, baseline)
    with staged_output(args.out) as stage:
        (stage / "indicators.csv").write_text(analysis.indicator_csv(rows), encoding="utf-8")
        (stage / "indicators.json").write_text(dumps([asdict(r) for r in rows]),
                                               encoding="utf-8")
        (stage / "config.json").write_text(
            config_echo(cfg, checkpoints=args.checkpoint, baseline=baseline, top_k=args.top_k,
                        min_count=args.min_count, target_label=args.target_label),
            encoding="utf-8")


def _parse_axis(item: str):
    name, sep, values = item.partition("=")
    if not sep or not values:
        raise UsageError(f"bad --axis {item!r}; expected name=v1,v2,...")
    try:
        return name, [float(v) for v in values.split(",")]
    except ValueError:
        raise UsageError(f"bad --axis values in {item!r}") from None


def cmd_sweep(args, cfg):
    axes = dict(_parse_axis(a) for a in args.axis) if args.axis else None
    if axes is None:
        grid = analysis.STRONG_GRID if args.strong else analysis.DEFAULT_GRID
        axes = {name: list(grid) for name in analysis.AXES[args.method]}
    allowed = set(analysis.AXES[args.method])
    if set(axes) - allowed:
        raise UsageError(f"axes for {args.method} must be among {sorted(allowed)}")
    splits = _read_splits(args.data)
    result = analysis.sweep(args.method, axes, cfg["train"], splits, cfg["model"],
                            probe=not args.no_probe, jobs=args.jobs)
    with staged_output(args.out) as stage:
        (stage / "sweep.csv").write_text(result.to_csv(), encoding="utf-8")
        (stage / "sweep.json").write_text(result.to_json(), encoding="utf-8")
        (stage / "plot_val_acc.csv").write_text(result.plot_data("val_acc"), encoding="utf-8")
        if not args.no_probe:
            (stage / "plot_probe_acc.csv").write_text(result.plot_data("probe_acc"),
                                                  encoding="utf-8")
        (stage / "config.json").write_text(config_echo(cfg, axes=axes, method=args.method),
                                           encoding="utf-8")
    failed = sum(c.failed for c in result.cells)
    log.info("%d cells, %d failed", len(result.cells), failed)


# --------------------------------------------------------------------- parser


def _lambda(lo: float, hi: float | None = None):
    def parse(text):
        try:
            x = float(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
        if x < lo or (hi is not None and x > hi):
            rng = f"[{lo}, {hi}]" if hi is not None else f">= {lo}"
            raise argparse.ArgumentTypeError(f"{x} outside {rng}")
        return x
    return parse


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nlidebias", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out=True):
        p.add_argument("--config", help="JSON config with data/model/train sections")
        p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                       help="override one config value (repeatable)")
        p.add_argument("--seed", type=int, help="seed for data generation and training")
        if out:
            p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("gen-data", help="write a synthetic dataset in SNLI JSON-Lines format")
    common(p)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train baseline, advcls or advdat")
    common(p)
    p.add_argument("--data", required=True, help="directory with train/val[/test].jsonl")
    p.add_argument("--embeddings", help="text embeddings file (token f1 ... fd)")
    p.add_argument("--method", choices=("baseline", "advcls", "advdat"))
    p.add_argument("--lambda-loss", type=_lambda(0.0))
    p.add_argument("--lambda-enc", type=_lambda(0.0))
    p.add_argument("--lambda-rand", type=_lambda(0.0, 1.0))
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="accuracy of a checkpoint on one split")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("probe", help="retrain a classifier on a frozen hypothesis encoder")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--random-seeds", type=lambda s: [int(x) for x in s.split(",") if x],
                   default=[], help="comma-separated seeds for random-encoder references")
    p.add_argument("--hypothesis-only", action="store_true",
                   help="also train a hypothesis-only reference model")
    p.set_defaults(func=cmd_probe)

    p = sub.add_parser("indicators", help="indicator-word table over the training set")
    common(p)
    p.add_argument("--checkpoint", action="append", required=True, metavar="NAME=PATH")
    p.add_argument("--data", required=True)
    p.add_argument("--baseline", help="checkpoint name used as the baseline")
    p.add_argument("--top-k", type=int, default=10)
    p.add_argument("--min-count", type=int, default=20)
    p.add_argument("--target-label", type=int, default=2, help="label id (2 = contradiction)")
    p.set_defaults(func=cmd_indicators)

    p = sub.add_parser("sweep", help="grid over adversarial hyper-parameters")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--method", choices=("advcls", "advdat"), required=True)
    p.add_argument("--axis", action="append", metavar="NAME=V1,V2,...")
    p.add_argument("--strong", action="store_true", help="use the extended grid up to 5")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--no-probe", action="store_true")
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = resolve_config(args.config, args.set, args.seed)
        args.model_overridden = bool(args.config and "model" in json.loads(
            Path(args.config).read_text(encoding="utf-8"))) or any(
            s.startswith("model.") for s in args.set)
        args.func(args, cfg)
    except UsageError as exc:
        parser.error(str(exc))
    except (OSError, ValueError) as exc:
        print(f"nlidebias: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
