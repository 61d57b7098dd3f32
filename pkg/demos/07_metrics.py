"""Epoch-level metrics, including the alarm-style sensitivity at fixed specificity."""

import numpy as np

from tgcn.metrics import metric_report

rng = np.random.default_rng(0)
labels = (rng.random(500) < 0.1).astype(int)
scores = rng.standard_normal(500) + 2.0 * labels
report = metric_report(scores, labels)
for key in ("auroc", "aupr", "f1", "sens_at_97", "sens_at_99"):
    print(f"{key:>10}: {report[key]:.3f}")
