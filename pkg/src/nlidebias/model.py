"""Dual-encoder NLI model: BiLSTM max-pool sentence encoders and MLP heads."""

from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Node, Parameter
from .seeding import rng_for

LABELS = ("entailment", "neutral", "contradiction")
N_CLASSES = len(LABELS)
CHECKPOINT_MAGIC = "NLIDEBIAS-CHECKPOINT-v1"


@dataclass
class ModelConfig:
    d_emb: int = 16
    d_h: int = 16
    hidden: int = 32
    cell: str = "lstm"  # "gru" is a faster non-default variant
    abs_diff: bool = False
    train_embeddings: bool = False

    def __post_init__(self):
        if self.cell not in ("lstm", "gru"):
            raise ValueError(f"unknown cell {self.cell!r}")
        for name in ("d_emb", "d_h", "hidden"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")

    @property
    def d_sent(self) -> int:
        return 2 * self.d_h


def _uniform(rng, shape, bound):
    return rng.uniform(-bound, bound, size=shape).astype(ad.get_default_dtype())


class Recurrence:
    """One direction of a recurrent layer. Gates share one matmul."""

    def __init__(self, name: str, d_in: int, d_h: int, cell: str, rng):
        self.cell = cell
        self.d_h = d_h
        n_gates = 4 if cell == "lstm" else 3
        bound = 1.0 / np.sqrt(d_h)
        self.W = Parameter(_uniform(rng, (d_in + d_h, n_gates * d_h), bound), f"{name}.W")
        self.b = Parameter(_uniform(rng, (n_gates * d_h,), bound), f"{name}.b")
        if cell == "gru":
            # candidate state uses the reset-gated hidden state
            self.U = Parameter(_uniform(rng, (d_h, d_h), bound), f"{name}.U")

    def parameters(self) -> list[Parameter]:
        return [self.W, self.b] + ([self.U] if self.cell == "gru" else [])

    def run(self, xs: Node) -> list[Node]:
        """Run over ``xs`` (B, T, d_in); returns the T hidden states (B, d_h)."""
        B, T = xs.shape[0], xs.shape[1]
        d = self.d_h
        zero = np.zeros((B, d), dtype=xs.value.dtype)
        h, c = ad.as_node(zero), ad.as_node(zero)
        out = []
        for t in range(T):
            x_t = xs[:, t, :]
            if self.cell == "lstm":
                # gate layout: input, forget, output | candidate
                z = ad.concat([x_t, h], axis=1) @ self.W + self.b
                s = ad.sigmoid(z[:, : 3 * d])
                g = ad.tanh(z[:, 3 * d:])
                i, f, o = s[:, :d], s[:, d: 2 * d], s[:, 2 * d:]
                c = f * c + i * g
                h = o * ad.tanh(c)
            else:
                z = ad.concat([x_t, h], axis=1) @ self.W + self.b
                s = ad.sigmoid(z[:, : 2 * d])
                r, u = s[:, :d], s[:, d:]
                n = ad.tanh(z[:, 2 * d:] + (r * h) @ self.U)
                h = n + u * (h - n)
            out.append(h)
        return out


class SentenceEncoder:
    """Bidirectional recurrent encoder with max-pooling over time.

    The embedding table is shared with other encoders and is not part of
    :meth:`parameters`.
    """

    def __init__(self, name: str, embedding: Parameter, cfg: ModelConfig, rng):
        self.name = name
        self.embedding = embedding
        self.cfg = cfg
        self.fwd = Recurrence(f"{name}.fwd", cfg.d_emb, cfg.d_h, cfg.cell, rng)
        self.bwd = Recurrence(f"{name}.bwd", cfg.d_emb, cfg.d_h, cfg.cell, rng)
        self.frozen = False

    def parameters(self) -> list[Parameter]:
        return self.fwd.parameters() + self.bwd.parameters()

    def freeze(self) -> "SentenceEncoder":
        """A deep copy with every weight marked non-trainable."""
        enc = copy.deepcopy(self)
        for p in enc.parameters():
            p.freeze()
        enc.embedding.freeze()
        enc.frozen = True
        return enc

    def __call__(self, tokens, mask) -> Node:
        return encode(self, tokens, mask)


def reverse_valid(tokens: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Reverse each row's unmasked prefix, leaving trailing padding in place."""
    lengths = mask.sum(axis=1)
    T = tokens.shape[1]
    pos = np.arange(T)[None, :]
    src = np.where(pos < lengths[:, None], lengths[:, None] - 1 - pos, pos)
    return np.take_along_axis(tokens, src, axis=1)


def encode(encoder: SentenceEncoder, tokens, mask) -> Node:
    """Embed, run both directions, max-pool each over valid positions.

    ``tokens`` is (B, T) or (T,) of ints, ``mask`` the matching booleans.
    Returns (B, 2*d_h) (or (2*d_h,) for 1-d input).
    """
    tokens = np.asarray(tokens, dtype=np.int64)
    mask = np.asarray(mask, dtype=bool)
    single = tokens.ndim == 1
    if single:
        tokens, mask = tokens[None, :], mask[None, :]
    if tokens.shape != mask.shape:
        raise ad.ShapeError(f"encode: tokens {tokens.shape} and mask {mask.shape} differ")
    if tokens.shape[1] == 0 or not mask.any(axis=1).all():
        raise ValueError("encode: empty sequence")
    # drop all-padding columns so trailing padding never changes the output
    T = int(mask.sum(axis=1).max())
    tokens, mask = tokens[:, :T], mask[:, :T]
    emb = encoder.embedding
    fwd_states = encoder.fwd.run(ad.embed(emb, tokens))
    bwd_states = encoder.bwd.run(ad.embed(emb, reverse_valid(tokens, mask)))
    # the reversed pass also keeps its valid positions in the prefix
    fwd = ad.max_pool(ad.stack(fwd_states, axis=1), mask)
    bwd = ad.max_pool(ad.stack(bwd_states, axis=1), mask)
    out = ad.concat([fwd, bwd], axis=1)
    return out[0] if single else out


def combine(p, h, abs_diff: bool = False) -> Node:
    """Features ``[p; h; p - h; p * h]`` along the last axis."""
    p, h = ad.as_node(p), ad.as_node(h)
    if p.shape != h.shape:
        raise ad.ShapeError(f"combine: premise {p.shape} and hypothesis {h.shape} differ")
    diff = p - h
    if abs_diff:
        diff = ad.absolute(diff)
    return ad.concat([p, h, diff, p * h], axis=-1)


class MLP:
    """in -> hidden (tanh) -> 3 logits."""

    def __init__(self, name: str, d_in: int, hidden: int, rng, n_out: int = N_CLASSES):
        self.name = name
        self.d_in = d_in
        b1, b2 = 1.0 / np.sqrt(d_in), 1.0 / np.sqrt(hidden)
        self.W1 = Parameter(_uniform(rng, (d_in, hidden), b1), f"{name}.W1")
        self.b1 = Parameter(_uniform(rng, (hidden,), b1), f"{name}.b1")
        self.W2 = Parameter(_uniform(rng, (hidden, n_out), b2), f"{name}.W2")
        self.b2 = Parameter(_uniform(rng, (n_out,), b2), f"{name}.b2")

    def parameters(self) -> list[Parameter]:
        return [self.W1, self.b1, self.W2, self.b2]

    def __call__(self, x) -> Node:
        x = ad.as_node(x)
        single = x.value.ndim == 1
        if single:
            x = ad.index(x, (None, slice(None)))
        if x.shape[-1] != self.d_in:
            raise ad.ShapeError(f"{self.name}: expected input width {self.d_in}, got shape {x.shape}")
        out = ad.tanh(x @ self.W1 + self.b1) @ self.W2 + self.b2
        return out[0] if single else out


def predict(logits) -> np.ndarray:
    """Argmax over the last axis; ties go to the lowest index."""
    value = logits.value if isinstance(logits, Node) else np.asarray(logits)
    return np.argmax(value, axis=-1)


class NLIModel:
    """Embedding table, premise/hypothesis encoders and the two classifiers."""

    def __init__(self, vocab_size: int, cfg: ModelConfig | None = None, seed: int = 0,
                 embeddings: np.ndarray | None = None):
        self.cfg = cfg = cfg or ModelConfig()
        self.vocab_size = vocab_size
        rng = rng_for(seed, "init")
        if embeddings is None:
            table = rng_for(seed, "embeddings").normal(0.0, 1.0, (vocab_size, cfg.d_emb))
            table[0] = 0.0
        else:
            table = np.asarray(embeddings)
            if table.shape != (vocab_size, cfg.d_emb):
                raise ad.ShapeError(
                    f"embeddings: got shape {table.shape}, expected {(vocab_size, cfg.d_emb)}")
        self.embedding = Parameter(table, "embedding", trainable=cfg.train_embeddings)
        self.enc_p = SentenceEncoder("enc_p", self.embedding, cfg, rng)
        self.enc_h = SentenceEncoder("enc_h", self.embedding, cfg, rng)
        self.cls_nli = MLP("cls_nli", 4 * cfg.d_sent, cfg.hidden, rng)
        self.cls_hyp = MLP("cls_hyp", cfg.d_sent, cfg.hidden, rng)

    def parameters(self) -> list[Parameter]:
        return ([self.embedding] + self.enc_p.parameters() + self.enc_h.parameters()
                + self.cls_nli.parameters() + self.cls_hyp.parameters())

    def named_parameters(self) -> dict[str, Parameter]:
        return {p.name: p for p in self.parameters()}

    def features(self, p, h) -> Node:
        return combine(p, h, self.cfg.abs_diff)

    def nli_logits(self, batch) -> Node:
        p = self.enc_p(batch.premise, batch.premise_mask)
        h = self.enc_h(batch.hypothesis, batch.hypothesis_mask)
        return self.cls_nli(self.features(p, h))

    def hyp_logits(self, batch) -> Node:
        return self.cls_hyp(self.enc_h(batch.hypothesis, batch.hypothesis_mask))


def classify_nli(model: NLIModel, features) -> Node:
    return model.cls_nli(features)


def classify_hyp(model: NLIModel, h) -> Node:
    return model.cls_hyp(h)


def random_encoder(seed: int, cfg: ModelConfig, embedding: Parameter,
                   name: str = "random") -> SentenceEncoder:
    """A frozen encoder straight from the initializer."""
    enc = SentenceEncoder(f"{name}.enc", embedding, cfg, rng_for(seed, "random_encoder"))
    return enc.freeze()


# ---------------------------------------------------------------- checkpoints


def save_checkpoint(path, model: NLIModel, vocab_tokens: list[str] | None = None,
                    extra: dict | None = None) -> None:
    """Write a JSON checkpoint.

    Layout::

        {"magic": CHECKPOINT_MAGIC,
         "config": {ModelConfig fields},
         "vocab_size": int, "vocab": [token, ...] | null,
         "extra": {...},
         "params": {name: {"shape": [...], "dtype": "float32", "data": [...]}}}
    """
    params = {}
    for name, p in model.named_parameters().items():
        params[name] = {"shape": list(p.value.shape), "dtype": p.value.dtype.name,
                        "data": [float(v) for v in p.value.reshape(-1)]}
    doc = {"magic": CHECKPOINT_MAGIC, "config": asdict(model.cfg),
           "vocab_size": model.vocab_size, "vocab": vocab_tokens,
           "extra": extra or {}, "params": params}
    Path(path).write_text(json.dumps(doc, sort_keys=True) + "\n", encoding="utf-8")


def load_checkpoint(path, cfg: ModelConfig | None = None) -> tuple[NLIModel, dict]:
    """Load a checkpoint; with ``cfg`` given, shapes must agree with it."""
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("magic") != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint (magic {doc.get('magic')!r})")
    stored = ModelConfig(**doc["config"])
    cfg = cfg or stored
    model = NLIModel(doc["vocab_size"], cfg)
    targets = model.named_parameters()
    for name, entry in doc["params"].items():
        if name not in targets:
            raise ValueError(f"{path}: unexpected parameter {name!r}")
        shape = tuple(entry["shape"])
        if shape != targets[name].shape:
            raise ad.ShapeError(
                f"{path}: parameter {name!r} has checkpoint shape {shape} "
                f"but config expects {targets[name].shape}")
        targets[name].value = np.asarray(entry["data"], dtype=entry["dtype"]).reshape(shape)
    missing = set(targets) - set(doc["params"])
    if missing:
        raise ValueError(f"{path}: missing parameters {sorted(missing)}")
    return model, doc
