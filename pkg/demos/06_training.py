"""Train a small model on synthetic data with a planted, propagating motif."""

from dataclasses import replace

import numpy as np

from tgcn.data import SyntheticSpec, generate
from tgcn.graph import random_adjacency
from tgcn.model import build, named_config
from tgcn.training import TrainSpec, evaluate, train

adj = random_adjacency(8, np.random.default_rng(123), 0.25, connected=True)
spec = SyntheticSpec(p=8, t_raw=1920, duration=3.0, amplitude=2.0, decay=0.5, seed=1)
train_set = generate(spec, 200, adj)
tuning = generate(replace(spec, seed=2), 60, adj)

cfg = named_config("II", rule="B", channels=(8, 16), head=(32, 32), signal_len=1920)
result = train(build(cfg, seed=0), train_set,
               TrainSpec(max_steps=200, eval_every=50, keep_negatives=1.0), eval_set=tuning)
for row in result.log:
    if row.get("eval_auroc") is not None:
        print(f"step {row['step']:>4}  loss {row['train_loss']:.3f}  tuning AU-ROC {row['eval_auroc']:.3f}")
print("best step", result.best_step, "metrics", {k: v for k, v in evaluate(result.best, tuning).items()
                                                  if k != "diagnostics"})
