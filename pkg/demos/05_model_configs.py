"""The five named architectures: layer stacks, parameter counts, and the shape trace."""

import numpy as np

from tgcn.graph import random_adjacency
from tgcn.model import NAMED_CONFIGS, build, format_config, named_config, param_count

adj = random_adjacency(21, np.random.default_rng(0), 0.2, connected=True)
x = np.random.default_rng(1).standard_normal((1, 599, 21, 33))
for name in NAMED_CONFIGS:
    cfg = named_config(name, rule="B")
    res = build(cfg, seed=0).forward(x, adj)
    print(f"config {name}: {param_count(cfg):,} parameters, pooled shapes {res.shapes}")

print()
print(format_config(named_config("II", rule="B", channels=(8, 16), head=(32, 32), signal_len=1920)))
