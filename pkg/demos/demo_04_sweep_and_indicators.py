"""
Sweeping adversarial strength and reading indicator words
==========================================================

A small grid over ``lambda_rand`` for ``advdat`` shows the trade-off: more
swapped-premise training lowers NLI accuracy. The indicator table then
compares how often the baseline and a debiased model predict
*contradiction* for hypotheses that contain each biased word.
"""

from dataclasses import replace

from nlidebias.analysis import SweepGrid, indicator_csv, indicator_stats, sweep
from nlidebias.data import SyntheticConfig, gen_synthetic
from nlidebias.model import ModelConfig, NLIModel
from nlidebias.training import TrainConfig, train

splits = gen_synthetic(SyntheticConfig(n_train=2000, n_val=500, n_test=500))
model_cfg = ModelConfig()
base = TrainConfig(max_epochs=5)

grid: SweepGrid = sweep("advdat", {"lambda_rand": [0.1, 0.4, 1.0], "lambda_enc": [1.0]},
                        base, splits, model_cfg, probe=False)
print(grid.to_csv())

###############################################################################
# Indicator words over the training set, baseline against advdat(0.4, 1).

V = len(splits["train"].vocab)
baseline, _ = train(NLIModel(V, model_cfg, seed=0), splits, base)
debiased, _ = train(NLIModel(V, model_cfg, seed=0), splits,
                    replace(base, method="advdat", lambda_rand=0.4))
rows = indicator_stats(splits["train"], {"baseline": baseline, "advdat": debiased},
                       top_k=5, min_count=20, baseline="baseline")
print(indicator_csv(rows))
