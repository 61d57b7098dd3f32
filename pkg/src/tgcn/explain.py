"""Model explanations: ensemble gradient attribution on raw waveforms and
sequence dropout (removing nodes from the input graph).

Both procedures work on the pre-sigmoid logit and run models in eval mode,
so results are deterministic.  Sequence dropout reuses the batch-norm
running statistics as-is for the reduced graphs.
"""

from __future__ import annotations

import csv
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import tensor as tn
from .data import StructuralTimeSeries
from .errors import ConfigError, GraphError
from .graph import drop_nodes
from .model import TgcnModel
from .tensor import Tape, Tensor

DROPOUT_CAVEAT = "batch-norm running statistics are not refreshed for reduced graphs"


@dataclass
class AttributionResult:
    kind: str                       # gradient | dropout_single | dropout_group
    scores: np.ndarray              # (T_raw, p) for gradient, (n_sets,) for dropout
    labels: list = field(default_factory=list)
    drop_sets: list = field(default_factory=list)
    per_model: Optional[np.ndarray] = None
    metadata: dict = field(default_factory=dict)


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get("STGRAPH_THREADS", "1")))
    except ValueError:
        return 1


def _map(fn, items, threads: Optional[int]):
    threads = worker_count() if threads is None else threads
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def waveform_gradient(model: TgcnModel, signal: np.ndarray, adjacency) -> np.ndarray:
    """d(logit)/d(raw waveform) for one ``(T_raw, p)`` sample, through the STFT."""
    x = Tensor(np.asarray(signal, dtype=np.float64)[None], requires_grad=True)
    with Tape() as tape:
        logit = tn.reduce(model.forward_raw(x, adjacency, train=False).logit, kind="sum")
    (grad,) = tape.gradient(logit, [x])
    return grad[0]


def gradient_attribution(ensemble: Sequence[TgcnModel], sample: StructuralTimeSeries,
                         threads: Optional[int] = None) -> AttributionResult:
    """|mean over models of d(logit)/d(waveform)|, shape ``(T_raw, p)``."""
    if not ensemble:
        raise ConfigError("ensemble is empty")
    grads = _map(lambda m: waveform_gradient(m, sample.x, sample.adjacency), list(ensemble), threads)
    mean = np.mean(grads, axis=0)
    return AttributionResult("gradient", np.abs(mean),
                             metadata={"sample_id": sample.sample_id, "ensemble_size": len(ensemble)})


def _logit(model: TgcnModel, x: np.ndarray, adjacency) -> float:
    return float(model.forward_raw(np.asarray(x, dtype=np.float64)[None], adjacency).logit.data[0])


def sequence_dropout(ensemble: Sequence[TgcnModel], sample: StructuralTimeSeries,
                     drops: Sequence, labels: Optional[Sequence[str]] = None,
                     kind: str = "dropout_group", threads: Optional[int] = None) -> AttributionResult:
    """Logit reduction ``logit(full) - logit(without D)`` for every drop set ``D``,
    averaged over the ensemble."""
    if not ensemble:
        raise ConfigError("ensemble is empty")
    p = sample.p
    drops = [sorted(set(int(i) for i in d)) for d in drops]
    for d in drops:
        if len(d) >= p:
            raise GraphError("a drop set must leave at least one node")

    def run(model):
        full = _logit(model, sample.x, sample.adjacency)
        out = []
        for d in drops:
            if not d:
                out.append(0.0)
                continue
            adj, remap = drop_nodes(sample.adjacency, d)
            keep = sorted(remap, key=remap.get)
            out.append(full - _logit(model, sample.x[:, keep], adj))
        return out

    per_model = np.array(_map(run, list(ensemble), threads))
    return AttributionResult(kind, per_model.mean(axis=0),
                             labels=list(labels) if labels is not None else [str(d) for d in drops],
                             drop_sets=drops, per_model=per_model,
                             metadata={"sample_id": sample.sample_id, "ensemble_size": len(ensemble),
                                       "caveat": DROPOUT_CAVEAT})


def single_lead_sets(p: int) -> list[list[int]]:
    return [[i] for i in range(p)]


def render_overlay_data(attr: AttributionResult, montage_pairs: Sequence[tuple],
                        lead_names: Sequence[str]) -> dict:
    """Per montage pair ``(a, b)``: ``score[:, a] + score[:, b]`` over time."""
    if attr.kind != "gradient":
        raise ValueError("overlay data needs a gradient attribution")
    pos = {name: i for i, name in enumerate(lead_names)}
    out = {}
    for a, b in montage_pairs:
        if a not in pos or b not in pos:
            raise KeyError(f"montage pair ({a}, {b}) references an unknown lead")
        out[(a, b)] = attr.scores[:, pos[a]] + attr.scores[:, pos[b]]
    return out


def write_attribution_csv(attr: AttributionResult, path, lead_names: Optional[Sequence[str]] = None) -> None:
    """Long format ``t,lead,score``, one row per sample and lead."""
    T, p = attr.scores.shape
    names = list(lead_names) if lead_names else [str(i) for i in range(p)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "lead", "score"])
        for t in range(T):
            for j in range(p):
                w.writerow([t, names[j], repr(float(attr.scores[t, j]))])


def write_overlay_csv(overlay: dict, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "pair", "intensity"])
        for (a, b), series in overlay.items():
            for t, v in enumerate(series):
                w.writerow([t, f"{a}-{b}", repr(float(v))])


def dropout_records(attr: AttributionResult, lead_names: Optional[Sequence[str]] = None) -> list[dict]:
    recs = []
    for i, d in enumerate(attr.drop_sets):
        recs.append({
            "label": attr.labels[i],
            "drop_set": [lead_names[j] for j in d] if lead_names else d,
            "mean_reduction": float(attr.scores[i]),
            "per_model_reductions": [float(v) for v in attr.per_model[:, i]],
        })
    return recs


def write_dropout_json(attr: AttributionResult, path, lead_names=None) -> None:
    """``control`` holds the empty drop set (if present), ``entries`` the rest."""
    recs = dropout_records(attr, lead_names)
    control = [r for r in recs if not r["drop_set"]]
    doc = {
        "kind": attr.kind,
        "metadata": attr.metadata,
        "control": control[0] if control else None,
        "entries": [r for r in recs if r["drop_set"]],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
