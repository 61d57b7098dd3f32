"""Explanations for one prediction: sequence dropout and gradient attribution.

The model here is untrained, so the scores only show the mechanics."""

import numpy as np

from tgcn.data import MONTAGE_PAIRS, SyntheticSpec, builtin_topology, generate_sample
from tgcn.explain import gradient_attribution, render_overlay_data, sequence_dropout
from tgcn.model import build, named_config

topo = builtin_topology()
sample = generate_sample(SyntheticSpec(t_raw=1920, duration=3.0, decay=0.0, origin_nodes=(topo.index("O1"),)),
                         topo.adjacency, 0, label=1)
ensemble = [build(named_config("II", rule="B", channels=(8, 16), head=(32, 32), signal_len=1920), s)
            for s in range(2)]

regions = topo.region_indices()
drop = sequence_dropout(ensemble, sample, list(regions.values()), list(regions))
for name, score in sorted(zip(drop.labels, drop.scores), key=lambda r: -r[1]):
    print(f"{name:>16}: logit reduction {score:+.4f}")

attr = gradient_attribution(ensemble, sample)
print("attribution map", attr.scores.shape, "top lead", topo.leads[int(attr.scores.sum(axis=0).argmax())])
overlay = render_overlay_data(attr, MONTAGE_PAIRS, topo.leads)
print("montage overlay pairs", len(overlay))
