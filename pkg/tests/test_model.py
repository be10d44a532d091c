import numpy as np
import pytest

from nlidebias import autodiff as ad
from nlidebias.model import (ModelConfig, NLIModel, classify_hyp, classify_nli, combine, encode,
                             load_checkpoint, predict, random_encoder, reverse_valid,
                             save_checkpoint)


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def lstm_oracle(W, b, xs, d):
    """Straight-line LSTM: gates laid out [input, forget, output, candidate]."""
    h = np.zeros(d)
    c = np.zeros(d)
    states = []
    for x in xs:
        z = np.concatenate([x, h]) @ W + b
        i, f, o = sigmoid(z[:d]), sigmoid(z[d:2 * d]), sigmoid(z[2 * d:3 * d])
        g = np.tanh(z[3 * d:])
        c = f * c + i * g
        h = o * np.tanh(c)
        states.append(h)
    return np.array(states)


@pytest.fixture
def model64(tiny_cfg):
    with ad.default_dtype(np.float64):
        yield NLIModel(12, tiny_cfg, seed=5)


class TestEncode:
    def test_output_width(self, model64):
        out = model64.enc_h(np.array([[2, 3, 4]]), np.ones((1, 3), dtype=bool))
        assert out.shape == (1, model64.cfg.d_sent)

    def test_single_token_is_state(self, model64):
        enc = model64.enc_p
        x = model64.embedding.value[[7]]
        d = model64.cfg.d_h
        fwd = lstm_oracle(enc.fwd.W.value, enc.fwd.b.value, x, d)[0]
        bwd = lstm_oracle(enc.bwd.W.value, enc.bwd.b.value, x, d)[0]
        out = encode(enc, [7], [True]).value
        np.testing.assert_allclose(out, np.concatenate([fwd, bwd]), rtol=1e-12)

    def test_two_token_recurrence_matches_oracle(self, model64):
        enc = model64.enc_h
        ids = [4, 9]
        x = model64.embedding.value[ids]
        d = model64.cfg.d_h
        fwd = lstm_oracle(enc.fwd.W.value, enc.fwd.b.value, x, d).max(axis=0)
        bwd = lstm_oracle(enc.bwd.W.value, enc.bwd.b.value, x[::-1], d).max(axis=0)
        out = encode(enc, ids, [True, True]).value
        np.testing.assert_allclose(out, np.concatenate([fwd, bwd]), rtol=1e-12)

    def test_padding_invariant(self, model64):
        a = encode(model64.enc_h, [3, 5, 2], [True] * 3).value
        b = encode(model64.enc_h, [3, 5, 2, 0, 0], [True, True, True, False, False]).value
        assert a.tobytes() == b.tobytes()

    def test_batch_rows_match_single(self, model64):
        toks = np.array([[3, 5, 2, 8], [6, 4, 0, 0]])
        mask = toks != 0
        batch = encode(model64.enc_h, toks, mask).value
        np.testing.assert_allclose(batch[1], encode(model64.enc_h, [6, 4], [True, True]).value,
                                   rtol=1e-12)

    def test_order_sensitive(self, model64):
        a = encode(model64.enc_h, [3, 5, 2], [True] * 3).value
        b = encode(model64.enc_h, [2, 5, 3], [True] * 3).value
        assert not np.allclose(a, b)

    def test_empty_sequence_raises(self, model64):
        with pytest.raises(ValueError):
            encode(model64.enc_h, [0, 0], [False, False])

    def test_reverse_valid(self):
        toks = np.array([[1, 2, 3, 0], [4, 5, 0, 0]])
        np.testing.assert_array_equal(reverse_valid(toks, toks != 0), [[3, 2, 1, 0], [5, 4, 0, 0]])

    def test_gru_variant_runs(self):
        m = NLIModel(10, ModelConfig(d_emb=3, d_h=2, hidden=4, cell="gru"), seed=0)
        assert m.enc_h([2, 3], [True, True]).shape == (4,)


class TestCombine:
    @pytest.mark.parametrize("p,h,expected", [
        ([1.0, 2.0], [1.0, 2.0], [1, 2, 1, 2, 0, 0, 1, 4]),
        ([0.0, 0.0], [0.0, 0.0], [0] * 8),
        ([2.0], [3.0], [2, 3, -1, 6]),
    ])
    def test_values(self, p, h, expected):
        np.testing.assert_array_equal(combine(np.array(p), np.array(h)).value, expected)

    def test_abs_diff_variant(self):
        np.testing.assert_array_equal(combine(np.array([2.0]), np.array([3.0]), True).value,
                                      [2, 3, 1, 6])

    def test_length_mismatch(self):
        with pytest.raises(ad.ShapeError):
            combine(np.zeros(2), np.zeros(3))


class TestClassifiers:
    def zero_head(self, mlp, bias=(0.0, 0.0, 0.0)):
        for p in mlp.parameters():
            p.value = np.zeros_like(p.value)
        mlp.b2.value = np.array(bias, dtype=mlp.b2.value.dtype)

    def test_zero_weights_tie_to_entailment(self, model64):
        self.zero_head(model64.cls_nli)
        logits = classify_nli(model64, np.ones(4 * model64.cfg.d_sent))
        assert logits.value.tolist() == [0, 0, 0] and predict(logits) == 0

    def test_bias_selects_contradiction(self, model64):
        self.zero_head(model64.cls_hyp, (0, 0, 5))
        assert predict(classify_hyp(model64, np.ones(model64.cfg.d_sent))) == 2

    def test_matches_dense_oracle(self, model64):
        rng = np.random.default_rng(0)
        for mlp, width, fn in ((model64.cls_nli, 4 * model64.cfg.d_sent, classify_nli),
                               (model64.cls_hyp, model64.cfg.d_sent, classify_hyp)):
            x = rng.normal(size=width)
            want = np.tanh(x @ mlp.W1.value + mlp.b1.value) @ mlp.W2.value + mlp.b2.value
            np.testing.assert_allclose(fn(model64, x).value, want, rtol=1e-12)

    def test_wrong_width(self, model64):
        with pytest.raises(ad.ShapeError):
            classify_nli(model64, np.ones(5))
        with pytest.raises(ad.ShapeError):
            classify_hyp(model64, np.ones(5))

    def test_pure(self, model64):
        x = np.linspace(-1, 1, model64.cfg.d_sent)
        assert classify_hyp(model64, x).value.tobytes() == classify_hyp(model64, x).value.tobytes()


class TestStructure:
    def test_encoders_share_no_weights(self, model64):
        p_ids = {id(p) for p in model64.enc_p.parameters()}
        assert not p_ids & {id(p) for p in model64.enc_h.parameters()}
        names = [p.name for p in model64.parameters()]
        assert len(names) == len(set(names))

    def test_embeddings_frozen_by_default(self, model64):
        assert not model64.embedding.trainable
        assert NLIModel(5, ModelConfig(train_embeddings=True)).embedding.trainable

    def test_random_encoder_seeded(self, model64, tiny_cfg):
        a = random_encoder(1, tiny_cfg, model64.embedding)
        b = random_encoder(1, tiny_cfg, model64.embedding)
        c = random_encoder(2, tiny_cfg, model64.embedding)
        assert a.frozen and all(not p.trainable for p in a.parameters())
        for pa, pb, pc in zip(a.parameters(), b.parameters(), c.parameters()):
            assert pa.value.tobytes() == pb.value.tobytes()
            assert pa.value.tobytes() != pc.value.tobytes()

    def test_freeze_copies(self, model64):
        frozen = model64.enc_h.freeze()
        assert frozen.frozen and not model64.enc_h.frozen
        assert model64.enc_h.fwd.W.trainable


class TestCheckpoint:
    def test_round_trip(self, tmp_path, tiny_cfg):
        m = NLIModel(9, tiny_cfg, seed=2)
        save_checkpoint(tmp_path / "m.json", m, ["<pad>", "<unk>"] + list("abcdefg"))
        loaded, doc = load_checkpoint(tmp_path / "m.json")
        assert doc["vocab"][2] == "a"
        for name, p in m.named_parameters().items():
            q = loaded.named_parameters()[name]
            assert p.value.dtype == q.value.dtype and p.value.tobytes() == q.value.tobytes()

    def test_byte_identical(self, tmp_path, tiny_cfg):
        for name in ("a.json", "b.json"):
            save_checkpoint(tmp_path / name, NLIModel(9, tiny_cfg, seed=2))
        assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()

    def test_dimension_mismatch_names_shapes(self, tmp_path, tiny_cfg):
        save_checkpoint(tmp_path / "m.json", NLIModel(9, tiny_cfg, seed=2))
        with pytest.raises(ad.ShapeError) as info:
            load_checkpoint(tmp_path / "m.json", ModelConfig(d_emb=4, d_h=6, hidden=5))
        assert "(6, 5)" in str(info.value) and "(12, 5)" in str(info.value)

    def test_bad_magic(self, tmp_path):
        (tmp_path / "x.json").write_text('{"magic": "nope"}')
        with pytest.raises(ValueError, match="not a checkpoint"):
            load_checkpoint(tmp_path / "x.json")
