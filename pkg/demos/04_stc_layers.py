"""One spatio-temporal convolution under each propagation rule."""

import numpy as np

from tgcn.graph import from_edges, reachability
from tgcn.layers import StcLayerSpec, init_buffer, init_param, stc_buffer_shapes, stc_forward, stc_param_shapes
from tgcn.tensor import Tensor

rng = np.random.default_rng(1)
adj = from_edges(4, [(0, 1), (1, 2), (2, 3)])
h = Tensor(rng.standard_normal((1, 10, 4, 2)))   # (batch, time, nodes, channels)

for rule in ("A", "B"):
    spec = StcLayerSpec(k=1, t=3, c_out=5, rule=rule, aggregate="max")
    params = {k: Tensor(init_param(k, s, rng)) for k, s in stc_param_shapes(spec, 2).items()}
    buffers = {k: init_buffer(k, s) for k, s in stc_buffer_shapes(spec).items()}
    out = stc_forward(h, reachability(adj, spec.k), spec, params, buffers, train=False)
    n_params = sum(int(np.prod(p.shape)) for p in params.values())
    print(f"rule {rule}: output {out.shape}, {n_params} parameters ({', '.join(params)})")
