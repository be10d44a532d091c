"""
A dataset with a planted hypothesis-only shortcut
==================================================

The synthetic generator puts one indicator word in every hypothesis. With
probability ``bias_strength`` it names the true label, so a model that never
reads the premise can still beat the majority class by a wide margin. The
premise carries a weaker, honest cue.
"""

from nlidebias.analysis import hypothesis_only_model, majority_baseline
from nlidebias.data import SyntheticConfig, gen_synthetic, indicator_tokens
from nlidebias.model import ModelConfig, NLIModel
from nlidebias.training import TrainConfig, train

cfg = SyntheticConfig(vocab_size=200, n_train=2000, n_val=500, n_test=500, bias_strength=0.9)
splits = gen_synthetic(cfg)
vocab = splits["train"].vocab

ex = splits["train"].examples[0]
print("premise   :", " ".join(vocab.decode(ex.premise)))
print("hypothesis:", " ".join(vocab.decode(ex.hypothesis)), "| label", ex.label)
print("indicators:", indicator_tokens(cfg))

###############################################################################
# Majority class, hypothesis-only model and the full premise+hypothesis model.

model_cfg = ModelConfig(d_emb=16, d_h=16, hidden=32)
train_cfg = TrainConfig(max_epochs=6)
_, hyp_acc = hypothesis_only_model(splits, model_cfg, train_cfg)
_, metrics = train(NLIModel(len(vocab), model_cfg, seed=0), splits, train_cfg)

print(f"majority          {majority_baseline(splits['val']):.3f}")
print(f"hypothesis-only   {hyp_acc:.3f}")
print(f"full model        {metrics.best_val_acc:.3f}")
