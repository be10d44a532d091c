import json

import pytest

from nlidebias.data import SyntheticConfig, gen_synthetic
from nlidebias.model import ModelConfig

SNLI_LINES = [
    {"gold_label": "contradiction", "sentence1": "A dog runs", "sentence2": "The dog is sleeping"},
    {"gold_label": "entailment", "sentence1": "A man plays guitar", "sentence2": "A man plays music"},
    {"gold_label": "neutral", "sentence1": "A woman reads", "sentence2": "A woman reads a novel"},
    {"gold_label": "-", "sentence1": "Two kids jump", "sentence2": "Kids are outside"},
    {"gold_label": "contradiction", "sentence1": "A man is doing tricks on a skateboard",
     "sentence2": "Nobody is doing tricks"},
    {"gold_label": "entailment", "sentence1": "A cat sits on a mat", "sentence2": "A cat sits"},
    {"gold_label": "neutral", "sentence1": "People walk in a park",
     "sentence2": "People walk to work", "annotator_labels": ["neutral"]},
    {"gold_label": "contradiction", "sentence1": "A person writing something on a newspaper",
     "sentence2": "A person is driving a fire truck"},
    {"gold_label": "entailment", "sentence1": "A girl eats an apple", "sentence2": "A girl eats"},
    {"gold_label": "neutral", "sentence1": "A band plays", "sentence2": "A band plays jazz"},
]


@pytest.fixture
def snli_file(tmp_path):
    path = tmp_path / "train.jsonl"
    path.write_text("".join(json.dumps(line) + "\n" for line in SNLI_LINES), encoding="utf-8")
    return path


@pytest.fixture(scope="session")
def tiny_splits():
    cfg = SyntheticConfig(vocab_size=30, n_train=90, n_val=45, n_test=30, bias_strength=0.9,
                          min_len=2, max_len=4, seed=3)
    return gen_synthetic(cfg)


@pytest.fixture
def tiny_cfg():
    return ModelConfig(d_emb=4, d_h=3, hidden=5)


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import RESULTS
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
