"""NLI datasets: SNLI-format loading, embeddings, synthetic bias, batching, premise swaps."""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .model import LABELS
from .seeding import rng_for

PAD, UNK = "<pad>", "<unk>"
PAD_ID, UNK_ID = 0, 1
LABEL_IDS = {name: i for i, name in enumerate(LABELS)}
ENTAILMENT, NEUTRAL, CONTRADICTION = 0, 1, 2


class DataError(ValueError):
    pass


class Vocab:
    """Token/index maps with ``<pad>`` at 0 and ``<unk>`` at 1."""

    def __init__(self, tokens: Iterable[str] = ()):
        self.itos = [PAD, UNK]
        self.stoi = {PAD: PAD_ID, UNK: UNK_ID}
        for tok in tokens:
            if tok not in self.stoi:
                self.stoi[tok] = len(self.itos)
                self.itos.append(tok)

    @classmethod
    def build(cls, sentences: Iterable[Sequence[str]], min_count: int = 1) -> "Vocab":
        """Tokens by descending count, ties alphabetical."""
        counts = Counter(tok for sent in sentences for tok in sent)
        ordered = sorted((t for t, c in counts.items() if c >= min_count and t not in (PAD, UNK)),
                         key=lambda t: (-counts[t], t))
        return cls(ordered)

    def __len__(self):
        return len(self.itos)

    def __contains__(self, tok):
        return tok in self.stoi

    def encode(self, tokens: Sequence[str]) -> tuple[int, ...]:
        return tuple(self.stoi.get(t, UNK_ID) for t in tokens)

    def decode(self, ids: Sequence[int]) -> list[str]:
        return [self.itos[i] for i in ids]


@dataclass(frozen=True)
class Example:
    premise: tuple[int, ...]
    hypothesis: tuple[int, ...]
    label: int

    def __post_init__(self):
        if not self.premise or not self.hypothesis:
            raise DataError("premise and hypothesis must be non-empty")
        if self.label not in (0, 1, 2):
            raise DataError(f"label must be 0, 1 or 2, got {self.label}")


@dataclass
class Dataset:
    split: str
    examples: list[Example]
    vocab: Vocab
    provenance: str = "real"

    def __len__(self):
        return len(self.examples)

    def __iter__(self):
        return iter(self.examples)

    @property
    def labels(self) -> np.ndarray:
        return np.array([ex.label for ex in self.examples], dtype=np.int64)

    def to_jsonl(self, path) -> None:
        """Write SNLI-style JSON-Lines (gold_label, sentence1, sentence2)."""
        lines = []
        for ex in self.examples:
            lines.append(json.dumps({
                "gold_label": LABELS[ex.label],
                "sentence1": " ".join(self.vocab.decode(ex.premise)),
                "sentence2": " ".join(self.vocab.decode(ex.hypothesis)),
            }, sort_keys=True))
        Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")


def tokenize(sentence: str, lowercase: bool = True) -> list[str]:
    return (sentence.lower() if lowercase else sentence).split()


def read_snli(path, lowercase: bool = True) -> list[tuple[list[str], list[str], int]]:
    """Parse an SNLI JSON-Lines file into (premise tokens, hypothesis tokens, label)."""
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: invalid JSON ({exc})") from None
            for key in ("gold_label", "sentence1", "sentence2"):
                if key not in obj:
                    raise DataError(f"{path}:{lineno}: missing field {key!r}")
            gold = obj["gold_label"]
            if gold == "-":
                continue
            if gold not in LABEL_IDS:
                raise DataError(f"{path}:{lineno}: unknown label {gold!r}")
            prem = tokenize(obj["sentence1"], lowercase)
            hyp = tokenize(obj["sentence2"], lowercase)
            if not prem or not hyp:
                raise DataError(f"{path}:{lineno}: empty sentence")
            rows.append((prem, hyp, LABEL_IDS[gold]))
    return rows


def _index(rows, vocab: Vocab, split: str, provenance: str) -> Dataset:
    examples = [Example(vocab.encode(p), vocab.encode(h), y) for p, h, y in rows]
    return Dataset(split, examples, vocab, provenance)


def load_snli(path, vocab: Vocab | None = None, split: str | None = None,
              lowercase: bool = True, provenance: str = "real") -> Dataset:
    """Load one split. Without ``vocab`` one is built from this file."""
    rows = read_snli(path, lowercase)
    if vocab is None:
        vocab = Vocab.build(s for p, h, _ in rows for s in (p, h))
    return _index(rows, vocab, split or Path(path).stem, provenance)


def load_splits(directory, lowercase: bool = True,
                names: Sequence[str] = ("train", "val", "test")) -> dict[str, Dataset]:
    """Load ``<name>.jsonl`` files from a directory; vocab comes from train only."""
    directory = Path(directory)
    train_path = directory / f"{names[0]}.jsonl"
    if not train_path.exists():
        raise FileNotFoundError(f"no training split at {train_path}")
    provenance = "real"
    manifest = directory / "manifest.json"
    if manifest.exists():
        provenance = json.loads(manifest.read_text(encoding="utf-8")).get("provenance", provenance)
    out = {names[0]: load_snli(train_path, split=names[0], lowercase=lowercase,
                               provenance=provenance)}
    vocab = out[names[0]].vocab
    for name in names[1:]:
        path = directory / f"{name}.jsonl"
        if path.exists():
            out[name] = load_snli(path, vocab, split=name, lowercase=lowercase,
                                  provenance=provenance)
    return out


def load_embeddings(path, vocab: Vocab, seed: int = 0, scale: float = 1.0
                    ) -> tuple[np.ndarray, float]:
    """Read ``token f1 ... fd`` lines into a ``(len(vocab), d)`` table.

    Tokens missing from the file get seeded normal vectors; the padding row
    is zero. Returns the table and the fraction of non-reserved vocab tokens
    found in the file.
    """
    found: dict[int, np.ndarray] = {}
    dim = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.rstrip("\n").split(" ")
            if len(parts) < 2:
                continue
            if dim is None:
                dim = len(parts) - 1
            elif len(parts) - 1 != dim:
                raise DataError(f"{path}:{lineno}: expected {dim} values, got {len(parts) - 1}")
            idx = vocab.stoi.get(parts[0])
            if idx is not None and idx > UNK_ID and idx not in found:
                found[idx] = np.array(parts[1:], dtype=np.float64)
    if dim is None:
        raise DataError(f"{path}: no embedding rows")
    table = rng_for(seed, "embeddings").normal(0.0, scale, (len(vocab), dim))
    table[PAD_ID] = 0.0
    for idx, vec in found.items():
        table[idx] = vec
    n_real = len(vocab) - 2
    coverage = len(found) / n_real if n_real else 0.0
    return table, coverage


# ------------------------------------------------------------------ synthetic


@dataclass
class SyntheticConfig:
    """Generator settings.

    Labels are balanced within each split and shuffled. Each hypothesis holds one indicator token. With probability
    ``bias_strength`` it is the indicator of the true label, otherwise the
    indicator of a uniformly drawn label. With probability ``premise_signal``
    the premise holds the true label's cue token; otherwise it is all filler.
    Filler tokens are drawn uniformly from the rest of the vocabulary.
    """
    vocab_size: int = 200
    n_train: int = 5000
    n_val: int = 1000
    n_test: int = 1000
    bias_strength: float = 0.9
    indicators_per_label: int = 1
    premise_signal: float = 0.7
    min_len: int = 4
    max_len: int = 8
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.bias_strength <= 1.0:
            raise ValueError(f"bias_strength must be in [0, 1], got {self.bias_strength}")
        if not 0.0 <= self.premise_signal <= 1.0:
            raise ValueError(f"premise_signal must be in [0, 1], got {self.premise_signal}")
        if self.min_len < 1 or self.max_len < self.min_len:
            raise ValueError("need 1 <= min_len <= max_len")
        if self.indicators_per_label < 1:
            raise ValueError("indicators_per_label must be >= 1")
        if self.vocab_size < 6 * self.indicators_per_label + 1:  # need filler
            raise ValueError("vocab_size too small for the indicator and cue tokens")

    @property
    def provenance(self) -> str:
        return f"synthetic(seed={self.seed}, bias_strength={self.bias_strength})"


def indicator_tokens(cfg: SyntheticConfig) -> dict[int, list[str]]:
    """Hypothesis indicator words per label id."""
    return {y: [f"hyp_{LABELS[y]}_{k}" for k in range(cfg.indicators_per_label)]
            for y in range(3)}


def premise_cue_tokens(cfg: SyntheticConfig) -> dict[int, list[str]]:
    return {y: [f"prem_{LABELS[y]}_{k}" for k in range(cfg.indicators_per_label)]
            for y in range(3)}


def _synthetic_rows(cfg: SyntheticConfig, n: int, rng) -> list:
    ind = indicator_tokens(cfg)
    cue = premise_cue_tokens(cfg)
    n_filler = cfg.vocab_size - 6 * cfg.indicators_per_label
    filler = [f"w{i}" for i in range(n_filler)]
    rows = []

    def sentence(special: str | None) -> list[str]:
        length = int(rng.integers(cfg.min_len, cfg.max_len + 1))
        n_fill = length - 1 if special is not None else length
        words = [filler[i] for i in rng.integers(0, n_filler, size=n_fill)]
        if special is not None:
            words.insert(int(rng.integers(0, length)), special)
        return words

    # balanced labels: each class gets n // 3 rows, the remainder goes to the first classes
    labels = rng.permutation(np.arange(n) % 3)
    for y in labels.tolist():
        hyp_label = y if rng.random() < cfg.bias_strength else int(rng.integers(0, 3))
        k_h = int(rng.integers(0, cfg.indicators_per_label))
        k_p = int(rng.integers(0, cfg.indicators_per_label))
        prem_token = cue[y][k_p] if rng.random() < cfg.premise_signal else None
        rows.append((sentence(prem_token), sentence(ind[hyp_label][k_h]), y))
    return rows


def gen_synthetic(cfg: SyntheticConfig) -> dict[str, Dataset]:
    """Train/val/test splits; vocab built from train exactly as ``load_snli`` does."""
    rng = rng_for(cfg.seed, "synthetic")
    raw = {name: _synthetic_rows(cfg, n, rng)
           for name, n in (("train", cfg.n_train), ("val", cfg.n_val), ("test", cfg.n_test))}
    vocab = Vocab.build(s for p, h, _ in raw["train"] for s in (p, h))
    return {name: _index(rows, vocab, name, cfg.provenance) for name, rows in raw.items()}


def write_splits(splits: dict[str, Dataset], directory, manifest: dict | None = None) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for name, ds in splits.items():
        ds.to_jsonl(directory / f"{name}.jsonl")
    if manifest is not None:
        (directory / "manifest.json").write_text(
            json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def synthetic_manifest(cfg: SyntheticConfig, splits: dict[str, Dataset]) -> dict:
    return {"provenance": cfg.provenance, "synthetic_config": asdict(cfg),
            "counts": {k: len(v) for k, v in splits.items()}}


# ------------------------------------------------------------------- batching


@dataclass
class Batch:
    premise: np.ndarray          # (B, Tp) int64
    premise_mask: np.ndarray     # (B, Tp) bool
    hypothesis: np.ndarray       # (B, Th) int64
    hypothesis_mask: np.ndarray  # (B, Th) bool
    labels: np.ndarray           # (B,) int64
    indices: np.ndarray          # (B,) positions in the source dataset

    def __len__(self):
        return len(self.labels)


def pad(seqs: Sequence[Sequence[int]]) -> tuple[np.ndarray, np.ndarray]:
    T = max(len(s) for s in seqs)
    out = np.full((len(seqs), T), PAD_ID, dtype=np.int64)
    mask = np.zeros((len(seqs), T), dtype=bool)
    for i, s in enumerate(seqs):
        out[i, : len(s)] = s
        mask[i, : len(s)] = True
    return out, mask


def make_batch(dataset: Dataset, idx: Sequence[int]) -> Batch:
    idx = np.asarray(idx, dtype=np.int64)
    exs = [dataset.examples[i] for i in idx]
    p, pm = pad([e.premise for e in exs])
    h, hm = pad([e.hypothesis for e in exs])
    return Batch(p, pm, h, hm, np.array([e.label for e in exs], dtype=np.int64), idx)


def batches(dataset: Dataset, size: int, seed: int | None = 0, shuffle: bool = True
            ) -> list[Batch]:
    """Shuffled (under ``seed``) padded batches; the last one may be short."""
    if size < 1:
        raise ValueError("batch size must be >= 1")
    order = np.arange(len(dataset))
    if shuffle:
        order = np.random.default_rng(seed).permutation(len(dataset))
    return [make_batch(dataset, order[i: i + size]) for i in range(0, len(dataset), size)]


def sample_donors(rng, indices: np.ndarray, pool_size: int) -> np.ndarray:
    """Uniform donor index per entry, never equal to the entry itself."""
    if pool_size < 2:
        raise DataError("premise swap needs a donor pool of at least 2 examples")
    donors = rng.integers(0, pool_size, size=len(indices))
    clash = donors == indices
    while clash.any():
        donors[clash] = rng.integers(0, pool_size, size=int(clash.sum()))
        clash = donors == indices
    return donors


def swap_premises(batch: Batch, rng, pool: Dataset | None = None,
                  restrict_labels: bool = False, donors: np.ndarray | None = None) -> Batch:
    """Replace each premise with one from another example.

    Donors are drawn uniformly from ``pool`` (the batch itself when ``pool``
    is None), rejecting the example itself. Hypotheses and labels stay. With
    ``restrict_labels`` only entailment and contradiction examples change.
    Precomputed ``donors`` (pool indices) skip the sampling.
    """
    eligible = np.ones(len(batch), dtype=bool)
    if restrict_labels:
        eligible = batch.labels != NEUTRAL
    if pool is None:
        premises = [tuple(row[m]) for row, m in zip(batch.premise, batch.premise_mask)]
        self_idx = np.arange(len(batch))
    else:
        premises = [ex.premise for ex in pool.examples]
        self_idx = batch.indices
    if not eligible.any():
        return batch
    if donors is None:
        donors = sample_donors(rng, self_idx[eligible], len(premises))
    else:
        donors = np.asarray(donors)[eligible]
    new = [tuple(row[m]) for row, m in zip(batch.premise, batch.premise_mask)]
    for i, d in zip(np.flatnonzero(eligible), donors):
        new[i] = premises[d]
    p, pm = pad(new)
    return Batch(p, pm, batch.hypothesis, batch.hypothesis_mask, batch.labels, batch.indices)
