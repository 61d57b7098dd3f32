"""Reverse-mode autodiff on a tape: record a forward pass, then ask for gradients."""

import numpy as np

from tgcn import tensor as tn
from tgcn.tensor import Tape, Tensor

rng = np.random.default_rng(0)
x = Tensor(rng.standard_normal((2, 8, 3)), requires_grad=True)   # (batch, time, channels)
kernel = Tensor(rng.standard_normal((3, 4, 3)), requires_grad=True)  # (t, c_out, c_in)

with Tape() as tape:
    h = tn.relu(tn.conv1d(x, kernel, padding="same"))
    loss = tn.reduce(h, kind="mean")

gx, gk = tape.gradient(loss, [x, kernel])
print("loss", float(loss.data))
print("d loss / d x      shape", gx.shape)
print("d loss / d kernel shape", gk.shape)

# central differences agree with the tape
i = (0, 3, 1)
step = 1e-6
bumped = x.data.copy()
bumped[i] += step
up = float(tn.reduce(tn.relu(tn.conv1d(Tensor(bumped), kernel, padding="same")), kind="mean").data)
bumped[i] -= 2 * step
down = float(tn.reduce(tn.relu(tn.conv1d(Tensor(bumped), kernel, padding="same")), kind="mean").data)
print("tape", gx[i], "finite difference", (up - down) / (2 * step))
