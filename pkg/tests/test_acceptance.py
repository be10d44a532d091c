"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v -s``; the summary lines
are also repeated at the end of any pytest session that includes this file.

Criteria 6 to 8 share one synthetic dataset (bias 0.9, vocab 200, 5k/1k/1k)
and d=16 models trained with lr 0.1 for at most 10 epochs. Trained runs are
cached per module so each (method, lambdas, seed) is fitted once.
"""

import json
import time
from dataclasses import replace

import numpy as np
import pytest

from acceptance_log import criterion
from conftest import SNLI_LINES
from graphs import OPS, check_graph
from nlidebias import autodiff as ad
from nlidebias.analysis import (DEFAULT_GRID, hypothesis_only_model,
                                indicator_stats_from_predictions, majority_baseline,
                                percentage_decrease, probe_retrain)
from nlidebias.cli import main
from nlidebias.data import (CONTRADICTION, Dataset, Example, SyntheticConfig, Vocab,
                            gen_synthetic, load_snli)
from nlidebias.model import ModelConfig, NLIModel, random_encoder
from nlidebias.training import ScheduleState, TrainConfig, evaluate_hyp, lr_update, train

SEEDS = (0, 1, 2)
MODEL = ModelConfig(d_emb=16, d_h=16, hidden=32)
BASE = TrainConfig(lr_init=0.1, max_epochs=10)


class Runs:
    """Lazily trained models on the shared dataset, keyed by config."""

    def __init__(self):
        self.data = None
        self.data_seconds = None
        self.models = {}
        self.hyp_only = {}

    def splits(self):
        if self.data is None:
            t = time.process_time()
            self.data = gen_synthetic(SyntheticConfig(vocab_size=200, n_train=5000, n_val=1000,
                                                      n_test=1000, bias_strength=0.9))
            self.data_seconds = time.process_time() - t
        return self.data

    def fit(self, seed, **kw):
        key = (seed, tuple(sorted(kw.items())))
        if key not in self.models:
            ds = self.splits()
            model = NLIModel(len(ds["train"].vocab), MODEL, seed=seed)
            self.models[key] = train(model, ds, replace(BASE, seed=seed, **kw))
        return self.models[key]

    def hypothesis_only(self, seed):
        if seed not in self.hyp_only:
            self.hyp_only[seed] = hypothesis_only_model(self.splits(), MODEL,
                                                        replace(BASE, seed=seed))[1]
        return self.hyp_only[seed]

    def probe(self, encoder, seed):
        return probe_retrain(encoder, self.splits(), replace(BASE, seed=seed),
                             MODEL.hidden).probe_val_acc


@pytest.fixture(scope="module")
def runs():
    return Runs()


# ---------------------------------------------------------------- criterion 1


def test_c1_snli_fixture_loader(tmp_path):
    path = tmp_path / "snli.jsonl"
    path.write_text("".join(json.dumps(x) + "\n" for x in SNLI_LINES), encoding="utf-8")
    with criterion("1", "10-line SNLI fixture loads 9 labelled examples"):
        ds = load_snli(path)
        assert len(SNLI_LINES) == 10 and len(ds) == 9
        assert ds.labels.tolist() == [2, 0, 1, 2, 0, 1, 2, 0, 1]


# ---------------------------------------------------------------- criterion 2


def test_c2_gradients_match_finite_differences():
    with criterion("2", "100 random graphs, max rel. error < 1e-6, < 60 s"):
        start = time.perf_counter()
        worst, seen = 0.0, set()
        for seed in range(100):
            err, ops = check_graph(seed)
            worst = max(worst, err)
            seen.update(ops)
        elapsed = time.perf_counter() - start
        print(f"  worst relative error {worst:.2e}, {elapsed:.1f} s")
        assert seen == set(OPS)
        assert worst < 1e-6
        assert elapsed < 60


# ---------------------------------------------------------------- criterion 3


@pytest.mark.parametrize("dtype", [np.float32, np.float64])
def test_c3_grl_semantics(dtype):
    rng = np.random.default_rng(0)
    with criterion("3", f"grl/grl_block exact semantics ({np.dtype(dtype).name})"), \
            ad.default_dtype(dtype):
        values = rng.normal(size=(3, 4)).astype(dtype)
        weights = ad.Parameter(rng.normal(size=(4, 2)).astype(dtype), "w")
        for lam in (0.0, 0.4, 1.0, 5.0):
            x = ad.Parameter(values.copy(), "x")
            out = ad.grl(x, lam)
            assert out.value.tobytes() == x.value.tobytes()
            loss = ad.softmax_xent(ad.matmul(ad.tanh(out), weights), [0, 1, 1])
            ad.backward(loss)
            upstream = out.grad
            assert np.any(upstream != 0)
            np.testing.assert_array_equal(x.grad, -lam * upstream)
            assert x.grad.dtype == np.dtype(dtype)
        x = ad.Parameter(values.copy(), "x")
        out = ad.grl_block(x)
        assert out.value.tobytes() == x.value.tobytes()
        ad.backward(ad.softmax_xent(ad.matmul(ad.tanh(out), weights), [0, 1, 1]))
        assert np.any(out.grad != 0)
        assert not np.any(x.grad)


# ------------------------------------------------------------- criteria 4, 5


def _trajectory(runs, **kw):
    ds = runs.splits()
    cfg = replace(BASE, max_epochs=3, **kw)
    model = NLIModel(len(ds["train"].vocab), MODEL, seed=cfg.seed)
    initial = {p.name: p.value.tobytes() for p in model.parameters()}
    states = []
    train(model, ds, cfg, on_epoch_end=lambda e, params: states.append(
        {p.name: p.value.tobytes() for p in params}))
    return initial, states


@pytest.mark.parametrize("kw", [{"method": "advcls", "lambda_loss": 0.0},
                                {"method": "advdat", "lambda_rand": 0.0}],
                         ids=["advcls", "advdat"])
def test_c4_method_reduction(runs, kw):
    with criterion("4", f"{kw['method']} with zero weight is bit-identical to baseline, 3 epochs"):
        _, base = _trajectory(runs)
        _, reduced = _trajectory(runs, **kw)
        assert len(base) == len(reduced) == 3
        for eb, er in zip(base, reduced):
            shared = [n for n in eb if not n.startswith("cls_hyp.")]
            assert shared and all(eb[n] == er[n] for n in shared)


def test_c5_premise_encoder_blocked(runs):
    with criterion("5", "advdat(1) leaves every premise-encoder parameter bit-identical"):
        initial, states = _trajectory(runs, method="advdat", lambda_rand=1.0)
        enc_p = [n for n in initial if n.startswith("enc_p.")]
        assert enc_p
        for state in states:
            assert all(state[n] == initial[n] for n in enc_p)
        assert states[-1]["enc_h.fwd.W"] != initial["enc_h.fwd.W"]


# ---------------------------------------------------------------- criterion 6


def test_c6_synthetic_bias(runs):
    with criterion("6", "hypothesis-only >= 0.70, majority within 2 points of 1/3, < 5 min"):
        start = time.process_time()
        ds = runs.splits()
        acc = runs.hypothesis_only(0)
        elapsed = runs.data_seconds + time.process_time() - start
        majority = majority_baseline(ds["val"])
        print(f"  hypothesis-only {acc:.3f}, majority {majority:.3f}, {elapsed:.0f} s CPU")
        assert len(ds["train"]) == 5000 and len(ds["val"]) == 1000
        assert acc >= 0.70
        assert abs(majority - 1 / 3) <= 0.02
        assert elapsed < 300


# ---------------------------------------------------------------- criterion 7


def test_c7a_baseline_probe_close_to_hypothesis_only(runs):
    with criterion("7a", "probe on baseline encoder >= hypothesis-only - 5 points"):
        probes, hyp = [], []
        for seed in SEEDS:
            model, _ = runs.fit(seed)
            probes.append(runs.probe(model.enc_h.freeze(), seed))
            hyp.append(runs.hypothesis_only(seed))
        print(f"  probe {np.mean(probes):.3f} vs hypothesis-only {np.mean(hyp):.3f}")
        assert np.mean(probes) >= np.mean(hyp) - 0.05


def test_c7b_retraining_recovers_bias(runs):
    with criterion("7b", "advcls(1,1): retrained probe >= in-training adversary + 10 points"):
        probes, adversary = [], []
        for seed in SEEDS:
            model, _ = runs.fit(seed, method="advcls", lambda_loss=1.0, lambda_enc=1.0)
            adversary.append(evaluate_hyp(model, runs.splits()["val"]))
            probes.append(runs.probe(model.enc_h.freeze(), seed))
        print(f"  probe {np.mean(probes):.3f} vs adversary {np.mean(adversary):.3f}")
        assert np.mean(probes) - np.mean(adversary) >= 0.10


def test_c7c_advdat_below_random_encoder(runs):
    with criterion("7c", "advdat(1,1) probe < random-encoder probe"):
        adv, rand = [], []
        for seed in SEEDS:
            model, _ = runs.fit(seed, method="advdat", lambda_rand=1.0, lambda_enc=1.0)
            adv.append(runs.probe(model.enc_h.freeze(), seed))
            rand.append(runs.probe(random_encoder(seed, MODEL, model.embedding), seed))
        print(f"  advdat probe {np.mean(adv):.3f} vs random encoder {np.mean(rand):.3f}")
        assert np.mean(adv) < np.mean(rand)


# ---------------------------------------------------------------- criterion 8


def test_c8_advdat_accuracy_falls_with_lambda_rand(runs):
    with criterion("8", "advdat val accuracy non-increasing in lambda_rand (2-point tolerance)"):
        means = []
        for lam in DEFAULT_GRID:
            accs = [runs.fit(seed, method="advdat", lambda_rand=lam, lambda_enc=1.0)[1].best_val_acc
                    for seed in SEEDS]
            means.append(float(np.mean(accs)))
        print("  " + ", ".join(f"{lam}: {m:.3f}" for lam, m in zip(DEFAULT_GRID, means)))
        for a, b in zip(means, means[1:]):
            assert b <= a + 0.02


# ---------------------------------------------------------------- criterion 9


def _count_oracle(examples, itos, preds, target):
    out = {}
    for w in range(len(itos)):
        containing = [i for i, ex in enumerate(examples) if w in ex.hypothesis]
        if containing:
            out[itos[w]] = (len(containing),
                            sum(examples[i].label == target for i in containing) / len(containing),
                            {k: sum(p[i] == target for i in containing) / len(containing)
                             for k, p in preds.items()})
    return out


def test_c9_indicator_statistics():
    with criterion("9", "indicator stats match counting oracle; decrease sign convention"):
        rng = np.random.default_rng(2024)
        vocab = Vocab(["nobody", "sleeping", "cat", "tall", "outdoors", "a", "man", "is"])
        examples = [Example((7, 8), tuple(int(t) for t in rng.integers(2, len(vocab),
                                                                      int(rng.integers(1, 6)))),
                            int(rng.integers(0, 3))) for _ in range(50)]
        ds = Dataset("train", examples, vocab)
        preds = {"baseline": rng.integers(0, 3, 50), "advdat": rng.integers(0, 3, 50)}
        rows = indicator_stats_from_predictions(ds, preds, top_k=1000, min_count=1,
                                                target_label=CONTRADICTION)
        oracle = _count_oracle(examples, vocab.itos, preds, CONTRADICTION)
        assert {r.word for r in rows} == set(oracle)
        for r in rows:
            count, p_hat, p_model = oracle[r.word]
            assert (r.count, r.p_hat, r.p_model) == (count, p_hat, p_model)
        assert percentage_decrease(0.32, 0.16) == 50.0
        assert percentage_decrease(0.32, 0.40) < 0


# --------------------------------------------------------------- criterion 10


def test_c10_schedule():
    with criterion("10", "lr schedule: 0.099, 0.0198, floor stop, epoch-20 stop"):
        cfg = TrainConfig()
        s = lr_update(ScheduleState(lr=0.1, prev_val=0.5, epoch=1), 0.6, cfg)
        assert s.lr == 0.099 and not s.stop
        s = lr_update(ScheduleState(lr=0.1, prev_val=0.6, epoch=1), 0.5, cfg)
        assert s.lr == 0.0198 and not s.stop
        s = lr_update(ScheduleState(lr=1.1e-5, prev_val=0.6, epoch=1), 0.5, cfg)
        assert s.lr < 1e-5 and s.stop and s.stop_reason == "lr_floor"
        s = lr_update(ScheduleState(lr=0.1, prev_val=0.5, epoch=18), 0.6, cfg)
        assert s.epoch == 19 and not s.stop
        s = lr_update(ScheduleState(lr=0.1, prev_val=0.5, epoch=19), 0.6, cfg)
        assert s.epoch == 20 and s.stop and s.stop_reason == "max_epochs"


# --------------------------------------------------------------- criterion 11


def test_c11_cli_determinism(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({
        "data": {"vocab_size": 30, "n_train": 120, "n_val": 40, "n_test": 40,
                 "min_len": 2, "max_len": 4},
        "model": {"d_emb": 4, "d_h": 3, "hidden": 5},
        "train": {"max_epochs": 2, "batch_size": 32}}))
    with criterion("11", "every command re-run with the same seed is byte-identical"):
        root = tmp_path / "run"

        def run():
            c = ["--config", str(cfg), "--seed", "5"]
            ck = str(root / "adv" / "checkpoint.json")
            commands = [
                ["gen-data", *c, "--out", str(root / "data")],
                ["train", *c, "--data", str(root / "data"), "--out", str(root / "base")],
                ["train", *c, "--data", str(root / "data"), "--out", str(root / "adv"),
                 "--method", "advdat", "--lambda-rand", "0.5"],
                ["eval", *c, "--checkpoint", ck, "--data", str(root / "data"),
                 "--out", str(root / "eval")],
                ["probe", *c, "--checkpoint", ck, "--data", str(root / "data"),
                 "--random-seeds", "0", "--hypothesis-only", "--out", str(root / "probe")],
                ["indicators", *c, "--checkpoint", f"baseline={root / 'base' / 'checkpoint.json'}",
                 "--checkpoint", f"advdat={ck}", "--data", str(root / "data"), "--min-count", "3",
                 "--out", str(root / "ind")],
                ["sweep", *c, "--data", str(root / "data"), "--method", "advdat",
                 "--axis", "lambda_rand=0.1,0.5", "--out", str(root / "sweep")],
            ]
            for argv in commands:
                assert main(argv) == 0, argv[0]
            return {p.relative_to(root).as_posix(): p.read_bytes()
                    for p in sorted(root.rglob("*")) if p.is_file()}
        first, second = run(), run()
        reports = [k for k in first if k.endswith((".csv", ".json"))]
        assert len(reports) >= 20
        assert set(first) == set(second)
        assert all(first[k] == second[k] for k in first), \
            [k for k in first if first[k] != second[k]]
