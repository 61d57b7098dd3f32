"""Cross-entropy training with momentum SGD and a step-decayed learning rate."""

from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from . import tensor as tn
from .data import Dataset
from .errors import ConfigError, DivergenceError
from .metrics import metric_report
from .model import TgcnModel
from .tensor import Tape, Tensor

logger = logging.getLogger(__name__)

LOG_FIELDS = ("step", "lr", "train_loss", "eval_auroc", "eval_aupr", "eval_f1",
              "eval_sens97", "eval_sens99")


@dataclass(frozen=True)
class TrainSpec:
    lr0: float = 0.01
    momentum: float = 0.9
    decay_every: int = 100
    decay_factor: float = 0.9
    batch_size: int = 16
    max_steps: int = 1000
    seed: int = 0
    keep_negatives: float = 0.1
    eval_every: int = 100

    def __post_init__(self):
        if self.decay_every <= 0:
            raise ConfigError("decay_every must be positive")
        if not 0.0 < self.decay_factor <= 1.0:
            raise ConfigError("decay_factor must be in (0, 1]")
        if not 0.0 < self.keep_negatives <= 1.0:
            raise ConfigError("keep_negatives must be in (0, 1]")
        if self.batch_size < 1 or self.max_steps < 0 or self.eval_every < 1:
            raise ConfigError("batch_size and eval_every must be positive, max_steps >= 0")

    def to_dict(self) -> dict:
        return asdict(self)


def lr_at(step: int, spec: TrainSpec) -> float:
    return spec.lr0 * spec.decay_factor ** (step // spec.decay_every)


def bce_loss(prob, labels) -> Tensor:
    """Batch-mean binary cross-entropy; probabilities are clamped to [1e-7, 1-1e-7]."""
    return tn.bce(prob, labels, eps=1e-7)


def sgd_momentum_step(params: dict, grads: dict, velocity: dict, lr: float, mu: float):
    """Classical momentum: ``v <- mu v + g``, ``theta <- theta - lr v``.

    Works on plain arrays and returns new ``(params, velocity)`` dicts.
    """
    new_v = {k: mu * velocity[k] + grads[k] for k in params}
    new_p = {k: params[k] - lr * new_v[k] for k in params}
    return new_p, new_v


def subsample_negatives(ds: Dataset, keep: float, seed: int) -> Dataset:
    """Keep every positive and each negative independently with probability ``keep``."""
    if keep >= 1.0:
        return ds
    rng = np.random.default_rng(seed)
    draws = rng.random(len(ds))
    idx = [i for i, s in enumerate(ds.samples) if s.label == 1 or draws[i] < keep]
    return ds.subset(idx)


def _topology_groups(ds: Dataset) -> list[list[int]]:
    groups: dict = {}
    for i, s in enumerate(ds.samples):
        groups.setdefault(s.adjacency.key(), []).append(i)
    return list(groups.values())


def preprocess_dataset(model: TgcnModel, ds: Dataset) -> list[np.ndarray]:
    """Spectrogram of every sample (no tape), in dataset order."""
    out = [None] * len(ds)
    for group in _topology_groups(ds):
        for start in range(0, len(group), 64):
            idx = group[start:start + 64]
            x = np.stack([ds.samples[i].x for i in idx]).astype(np.float64)
            spec = model.preprocess(x).data
            for j, i in enumerate(idx):
                out[i] = spec[j]
    return out


def predict_logits(model: TgcnModel, ds: Dataset, features: Optional[list] = None,
                   batch_size: int = 32) -> np.ndarray:
    """Eval-mode logits for every sample, in dataset order."""
    if features is None:
        features = preprocess_dataset(model, ds)
    logits = np.empty(len(ds))
    for group in _topology_groups(ds):
        adj = ds.samples[group[0]].adjacency
        for start in range(0, len(group), batch_size):
            idx = group[start:start + batch_size]
            res = model.forward(np.stack([features[i] for i in idx]), adj, train=False)
            logits[idx] = res.logit.data
    return logits


def evaluate(model: TgcnModel, ds: Dataset, features: Optional[list] = None) -> dict:
    return metric_report(predict_logits(model, ds, features), ds.labels)


@dataclass
class TrainResult:
    best: TgcnModel
    final: TgcnModel
    log: list = field(default_factory=list)
    best_step: Optional[int] = None
    best_auroc: Optional[float] = None


def _batches(groups: list, batch_size: int, rng: np.random.Generator) -> list:
    batches = []
    for group in groups:
        perm = rng.permutation(group)
        batches += [perm[i:i + batch_size] for i in range(0, len(perm), batch_size)]
    order = rng.permutation(len(batches))
    return [batches[i] for i in order]


def train(model: TgcnModel, dataset: Dataset, spec: TrainSpec,
          eval_set: Optional[Dataset] = None, log_path=None) -> TrainResult:
    """Train ``model`` in place; returns the best-AU-ROC checkpoint and the step log.

    Batches never mix graph topologies, so batch norm always sees one graph.
    Without an eval set (or with a single-class one) the final model is also
    the best one.
    """
    ds = subsample_negatives(dataset, spec.keep_negatives, spec.seed)
    if len(ds) == 0:
        raise ConfigError("no training samples left after subsampling")
    rng = np.random.default_rng(spec.seed)
    drop_rng = np.random.default_rng([spec.seed, 1])
    features = preprocess_dataset(model, ds)
    eval_features = preprocess_dataset(model, eval_set) if eval_set is not None else None
    labels = ds.labels.astype(np.float64)
    groups = _topology_groups(ds)
    names = list(model.params)
    velocity = {k: np.zeros_like(model.params[k].data) for k in names}

    log = []
    best, best_step, best_auroc = model.copy(), None, None
    queue: list = []
    for step in range(spec.max_steps):
        if not queue:
            queue = _batches(groups, spec.batch_size, rng)
        idx = queue.pop(0)
        adj = ds.samples[idx[0]].adjacency
        x = np.stack([features[i] for i in idx])
        lr = lr_at(step, spec)
        with Tape() as tape:
            res = model.forward(x, adj, train=True, rng=drop_rng)
            loss = bce_loss(res.prob, labels[idx])
        loss_value = float(loss.data)
        if not np.isfinite(loss_value):
            raise DivergenceError(f"non-finite loss {loss_value} at step {step} (lr={lr:g})")
        grads = tape.gradient(loss, [model.params[k] for k in names])
        current = {k: model.params[k].data for k in names}
        new_p, velocity = sgd_momentum_step(current, dict(zip(names, grads)), velocity,
                                            lr, spec.momentum)
        bad = [k for k in names if not np.all(np.isfinite(new_p[k]))]
        if bad:
            raise DivergenceError(f"non-finite parameter {bad[0]} after step {step} (lr={lr:g})")
        model.params = {k: Tensor(new_p[k], requires_grad=True) for k in names}

        row = {"step": step, "lr": lr, "train_loss": loss_value}
        last = step == spec.max_steps - 1
        if eval_set is not None and ((step + 1) % spec.eval_every == 0 or last):
            report = evaluate(model, eval_set, eval_features)
            row.update(eval_auroc=report["auroc"], eval_aupr=report["aupr"], eval_f1=report["f1"],
                       eval_sens97=report["sens_at_97"], eval_sens99=report["sens_at_99"])
            auroc = report["auroc"]
            if auroc is not None and (best_auroc is None or auroc > best_auroc):
                best, best_step, best_auroc = model.copy(), step, auroc
            logger.info("step %d lr %.4g loss %.4f eval auroc %s", step, lr, loss_value, auroc)
        log.append(row)

    if best_step is None:
        best = model.copy()
        best_step = spec.max_steps - 1 if spec.max_steps else None
    if log_path is not None:
        write_log(log, log_path)
    return TrainResult(best, model, log, best_step, best_auroc)


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_log(rows: list, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(LOG_FIELDS)
        for row in rows:
            writer.writerow([_fmt(row.get(k)) for k in LOG_FIELDS])
