"""Spatio-temporal convolution (STC) layers, temporal pooling and the scalar head.

Hidden tensors are laid out ``(batch, time, node, channel)``.  An STC layer
convolves every node's sequence with one shared temporal filter, then
aggregates the results over each node's k-step neighborhood:

* rule A: ``h_i = g(BN(AGG_{j in N_k(i)} a_j))``
* rule B: ``h_i = g2(BN(W_comb * g1(BN([AGG_{j in N_k(i) minus i} a_j, a_i]))))``

Parameter shapes depend only on the layer spec and input channel count,
never on the graph.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Optional

import numpy as np

from . import tensor as tn
from .errors import ConfigError, DimensionError
from .graph import Reachability, neighbor_index
from .tensor import Tensor

BN_MOMENTUM = 0.1
BN_EPS = 1e-5


@dataclass(frozen=True)
class StcLayerSpec:
    """One "STC k-t-c" layer plus its propagation options."""

    k: int
    t: int
    c_out: int
    rule: str = "A"
    aggregate: str = "max"
    t2: int = 1
    use_g1: bool = True

    def __post_init__(self):
        if self.k < 0:
            raise ConfigError(f"k must be >= 0, got {self.k}")
        if self.t < 1 or self.t % 2 == 0:
            raise ConfigError(f"temporal kernel size must be odd, got {self.t}")
        if self.c_out < 1:
            raise ConfigError(f"c_out must be >= 1, got {self.c_out}")
        if self.rule not in ("A", "B"):
            raise ConfigError(f"rule must be 'A' or 'B', got {self.rule!r}")
        if self.aggregate not in ("max", "mean"):
            raise ConfigError(f"aggregate must be 'max' or 'mean', got {self.aggregate!r}")
        if self.rule == "B" and self.t2 not in (1, self.t):
            raise ConfigError(f"t2 must be 1 or t={self.t}, got {self.t2}")

    @property
    def notation(self) -> str:
        return f"{self.k}-{self.t}-{self.c_out}"


def stc_param_shapes(spec: StcLayerSpec, c_in: int) -> dict[str, tuple]:
    c = spec.c_out
    shapes = {"w_int": (spec.t, c, c_in), "b_int": (c,)}
    if spec.rule == "A":
        shapes.update({"bn.gamma": (c,), "bn.beta": (c,)})
    else:
        if spec.use_g1:
            shapes.update({"bn1.gamma": (2 * c,), "bn1.beta": (2 * c,)})
        shapes.update({
            "w_comb": (spec.t2, c, 2 * c),
            "b_comb": (c,),
            "bn2.gamma": (c,),
            "bn2.beta": (c,),
        })
    return shapes


def stc_buffer_shapes(spec: StcLayerSpec) -> dict[str, tuple]:
    c = spec.c_out
    if spec.rule == "A":
        sites = {"bn": c}
    else:
        sites = {"bn2": c}
        if spec.use_g1:
            sites["bn1"] = 2 * c
    out = {}
    for site, n in sorted(sites.items()):
        out[f"{site}.mean"] = (n,)
        out[f"{site}.var"] = (n,)
    return out


def init_param(name: str, shape: tuple, rng: np.random.Generator) -> np.ndarray:
    """Fan-in scaled uniform kernels, zero biases, unit gammas, zero betas."""
    leaf = name.rsplit(".", 1)[-1]
    if leaf == "gamma":
        return np.ones(shape)
    if leaf.startswith("b"):
        return np.zeros(shape)
    if len(shape) == 3:
        fan_in = shape[0] * shape[2]
    else:
        fan_in = shape[-1]
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


def init_buffer(name: str, shape: tuple) -> np.ndarray:
    return np.ones(shape) if name.endswith(".var") else np.zeros(shape)


@lru_cache(maxsize=512)
def _neighbor_table(reach: Reachability, include_self: bool):
    return neighbor_index(reach, include_self)


def aggregate(a: Tensor, reach: Reachability, kind: str, include_self: bool = True) -> Tensor:
    """Max or mean of ``a[:, :, j]`` over the neighbors ``j`` of every node.

    Neighbor maps are stacked on a new axis then reduced; means divide by each
    node's own neighborhood size.
    """
    if reach.p != a.shape[2]:
        raise DimensionError(f"reachability is over {reach.p} nodes but input has {a.shape[2]}")
    index, weight = _neighbor_table(reach, include_self)
    stacked = tn.take(a, index, axis=2)                       # (B, T, p, m, c)
    if kind == "max":
        return tn.reduce(stacked, axis=3, kind="max")
    if kind == "mean":
        return tn.reduce(stacked * weight[:, :, None], axis=3, kind="sum")
    raise ValueError(f"unknown aggregation {kind!r}")


def _bn(x: Tensor, params: dict, buffers: dict, site: str, train: bool) -> Tensor:
    return tn.batch_norm(x, params[f"{site}.gamma"], params[f"{site}.beta"],
                         buffers[f"{site}.mean"], buffers[f"{site}.var"],
                         train=train, momentum=BN_MOMENTUM, eps=BN_EPS)


def stc_forward(h: Tensor, reach: Reachability, spec: StcLayerSpec, params: dict,
                buffers: dict, train: bool = False) -> Tensor:
    """Apply one STC layer to ``h`` of shape ``(B, T, p, c_in)``.

    ``reach`` must be the k-step reachability for ``spec.k``.  Train mode
    updates the batch-norm running statistics in ``buffers``.
    """
    if h.ndim != 4:
        raise DimensionError(f"STC input must be (B, T, p, c), got {h.shape}")
    if reach.p != h.shape[2]:
        raise DimensionError(f"reachability is over {reach.p} nodes but input has {h.shape[2]}")
    a = tn.conv1d(h, params["w_int"], params["b_int"], padding="same", axis=1)
    if spec.rule == "A":
        z = aggregate(a, reach, spec.aggregate, include_self=True)
        return tn.relu(_bn(z, params, buffers, "bn", train))
    z = aggregate(a, reach, spec.aggregate, include_self=False)
    both = tn.concat([z, a], axis=-1)
    if spec.use_g1:
        both = tn.relu(_bn(both, params, buffers, "bn1", train))
    pad = "same" if spec.t2 > 1 else "valid"
    y = tn.conv1d(both, params["w_comb"], params["b_comb"], padding=pad, axis=1)
    return tn.relu(_bn(y, params, buffers, "bn2", train))


def pooled_length(T: int) -> int:
    return -(-T // 2)


def temporal_pool(h: Tensor, kind: str = "max") -> Tensor:
    """Non-overlapping width-2 pooling along time; an odd tail forms its own window."""
    T = h.shape[1]
    starts = np.arange(0, T, 2)
    # an odd tail window holds the last step twice: max is unchanged, mean is exact
    index = np.stack([starts, np.minimum(starts + 1, T - 1)], axis=1)
    windows = tn.take(h, index, axis=1)                       # (B, T/2, 2, p, c)
    if kind not in ("max", "mean"):
        raise ValueError(f"unknown pooling {kind!r}")
    return tn.reduce(windows, axis=2, kind=kind)


def head_param_shapes(flat: int, hidden: tuple) -> dict[str, tuple]:
    shapes = {}
    n_in = flat
    for i, width in enumerate(tuple(hidden) + (1,)):
        shapes[f"dense{i}.weight"] = (width, n_in)
        shapes[f"dense{i}.bias"] = (width,)
        n_in = width
    return shapes


def prediction_head(h: Tensor, params: dict, hidden: tuple, dropout: float = 0.2,
                    train: bool = False, rng: Optional[np.random.Generator] = None
                    ) -> tuple[Tensor, Tensor]:
    """Spatial mean, flatten, hidden dense+ReLU+dropout layers, one output unit.

    Returns ``(logit, probability)``, each of shape ``(B,)``.
    """
    pooled = tn.reduce(h, axis=2, kind="mean")                # (B, T, c)
    B = pooled.shape[0]
    x = tn.reshape(pooled, (B, -1))
    expected = params["dense0.weight"].shape[1]
    if x.shape[1] != expected:
        raise DimensionError(f"flattened size {x.shape[1]} != first dense input {expected}")
    for i in range(len(hidden)):
        x = tn.relu(tn.dense(x, params[f"dense{i}.weight"], params[f"dense{i}.bias"]))
        x = tn.dropout(x, dropout, train, rng)
    n = len(hidden)
    logit = tn.reshape(tn.dense(x, params[f"dense{n}.weight"], params[f"dense{n}.bias"]), (B,))
    return logit, tn.sigmoid(logit)
