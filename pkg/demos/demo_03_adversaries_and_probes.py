"""
Adversarial training and what a probe still finds
==================================================

Two ways to push bias out of the hypothesis encoder:

* ``advcls`` trains a hypothesis-only classifier on top of it and reverses
  that classifier's gradient into the encoder;
* ``advdat`` trains the NLI classifier on pairs whose premise was swapped
  for a random one, again reversing the gradient into the hypothesis side.

Afterwards the encoder is frozen and a fresh classifier ("probe") is trained
on its outputs. A low in-training adversary score does not mean the bias is
gone; the probe tells us how much is left.
"""

from nlidebias.analysis import probe_plot_data, probe_retrain
from nlidebias.data import SyntheticConfig, gen_synthetic
from nlidebias.model import ModelConfig, NLIModel, random_encoder
from nlidebias.training import TrainConfig, evaluate_hyp, train

splits = gen_synthetic(SyntheticConfig(n_train=2000, n_val=500, n_test=500))
V = len(splits["train"].vocab)
model_cfg = ModelConfig()
base = TrainConfig(max_epochs=6)

results = []
for name, kw in [("baseline", {}),
                 ("advcls(1,1)", {"method": "advcls", "lambda_loss": 1.0, "lambda_enc": 1.0}),
                 ("advdat(1,1)", {"method": "advdat", "lambda_rand": 1.0, "lambda_enc": 1.0})]:
    cfg = TrainConfig(**{**base.__dict__, **kw})
    model, metrics = train(NLIModel(V, model_cfg, seed=0), splits, cfg)
    adversary = evaluate_hyp(model, splits["val"]) if name.startswith("advcls") else None
    res = probe_retrain(model.enc_h.freeze(), splits, base, provenance=name,
                        adversary_val_acc=adversary)
    results.append(res)
    print(f"{name:12s} nli val {metrics.best_val_acc:.3f}  probe {res.probe_val_acc:.3f}"
          + (f"  in-training adversary {adversary:.3f}" if adversary is not None else ""))

###############################################################################
# A randomly initialised, never-trained encoder is the reference point.

rand = probe_retrain(random_encoder(0, model_cfg, model.embedding), splits, base,
                     provenance="random")
results.append(rand)
print(f"{'random':12s} probe {rand.probe_val_acc:.3f}")

###############################################################################
# Long-format plot data (x, y, series), ready for any plotting tool.

print(probe_plot_data(results))
