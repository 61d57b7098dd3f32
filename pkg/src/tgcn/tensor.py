"""Dense tensors with tape-based reverse-mode differentiation.

A :class:`Tape` records every operation applied to tensors it tracks while it
is active (``with Tape() as tape: ...``).  :meth:`Tape.gradient` then walks the
recorded nodes once, in reverse, accumulating gradients.  Tensors themselves
are immutable value holders; all graph bookkeeping lives on the tape.

Only the operations the temporal graph model needs are provided: elementwise
arithmetic, matmul, gathers, reductions, 1D convolution, dense layers, batch
normalization and dropout.
"""

from __future__ import annotations

import threading
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .errors import DimensionError, UnrecordedTensorError

ArrayLike = Union[np.ndarray, float, int, Sequence]


_local = threading.local()


def _active_tapes() -> list:
    tapes = getattr(_local, "tapes", None)
    if tapes is None:
        tapes = _local.tapes = []
    return tapes


class Tensor:
    """An immutable n-dimensional array of real scalars.

    ``requires_grad`` marks a leaf that any active tape should track the first
    time it is used (parameters, or inputs we want attributions for).
    """

    __slots__ = ("data", "requires_grad")
    __array_priority__ = 100

    def __init__(self, data: ArrayLike, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if dtype is None and arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = requires_grad

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype})"

    def __len__(self) -> int:
        return len(self.data)

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)

    def sum(self, axis=None):
        return reduce(self, axis, "sum")

    def mean(self, axis=None):
        return reduce(self, axis, "mean")

    def max(self, axis=None):
        return reduce(self, axis, "max")


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class _Node:
    __slots__ = ("op", "inputs", "backward", "output")

    def __init__(self, op, inputs, backward, output):
        self.op = op
        self.inputs = inputs
        self.backward = backward
        self.output = output


class Tape:
    """Append-only record of differentiable operations.

    Nodes are appended in execution order, so the list is already
    topologically sorted.  Several tapes may be active on one thread (all of
    them record); tapes on different threads are independent.
    """

    def __init__(self):
        self.nodes: list[_Node] = []
        self._index: dict[int, int] = {}

    def __enter__(self) -> "Tape":
        _active_tapes().append(self)
        return self

    def __exit__(self, *exc) -> None:
        tapes = _active_tapes()
        tapes.remove(self)

    def watch(self, tensor: Tensor) -> Tensor:
        """Start tracking ``tensor`` as a leaf."""
        if id(tensor) not in self._index:
            self._index[id(tensor)] = len(self.nodes)
            self.nodes.append(_Node("leaf", (), None, tensor))
        return tensor

    def is_recorded(self, tensor: Tensor) -> bool:
        return id(tensor) in self._index

    def _lookup(self, tensor) -> Optional[int]:
        if not isinstance(tensor, Tensor):
            return None
        idx = self._index.get(id(tensor))
        if idx is None and tensor.requires_grad:
            self.watch(tensor)
            idx = self._index[id(tensor)]
        return idx

    def _record(self, op, inputs, backward, output) -> None:
        refs = tuple(self._lookup(x) for x in inputs)
        if all(r is None for r in refs):
            return
        self._index[id(output)] = len(self.nodes)
        self.nodes.append(_Node(op, refs, backward, output))

    def gradient(self, target: Tensor, sources: Sequence[Tensor], output_grad=None) -> list:
        """Gradients of ``target`` with respect to each of ``sources``.

        ``target`` must be a recorded scalar unless ``output_grad`` supplies the
        cotangent.  Sources that were recorded but do not influence the target
        get zero gradients; sources never recorded raise
        :class:`UnrecordedTensorError`.
        """
        if id(target) not in self._index:
            raise UnrecordedTensorError("target was not produced on this tape")
        src_idx = []
        for s in sources:
            if id(s) not in self._index:
                raise UnrecordedTensorError(f"source {s!r} was not recorded on this tape")
            src_idx.append(self._index[id(s)])
        if output_grad is None:
            if target.size != 1:
                raise DimensionError(f"loss must be scalar, got shape {target.shape}")
            output_grad = np.ones_like(target.data)
        grads: list = [None] * len(self.nodes)
        start = self._index[id(target)]
        grads[start] = np.asarray(output_grad, dtype=target.dtype).reshape(target.shape)
        for i in range(start, -1, -1):
            g = grads[i]
            node = self.nodes[i]
            if g is None or node.backward is None:
                continue
            needs = tuple(r is not None for r in node.inputs)
            in_grads = node.backward(g, needs)
            for r, ig in zip(node.inputs, in_grads):
                if r is None or ig is None:
                    continue
                grads[r] = ig if grads[r] is None else grads[r] + ig
        out = []
        for s, i in zip(sources, src_idx):
            out.append(grads[i] if grads[i] is not None else np.zeros_like(s.data))
        return out


def _make(op: str, data: np.ndarray, inputs: tuple, backward: Callable) -> Tensor:
    out = Tensor(data)
    for tape in _active_tapes():
        tape._record(op, inputs, backward, out)
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


def _data(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    da, db = _data(a), _data(b)

    def backward(g, needs):
        return (_unbroadcast(g, da.shape) if needs[0] else None,
                _unbroadcast(g, db.shape) if needs[1] else None)

    return _make("add", da + db, (a, b), backward)


def sub(a, b) -> Tensor:
    da, db = _data(a), _data(b)

    def backward(g, needs):
        return (_unbroadcast(g, da.shape) if needs[0] else None,
                _unbroadcast(-g, db.shape) if needs[1] else None)

    return _make("sub", da - db, (a, b), backward)


def mul(a, b) -> Tensor:
    da, db = _data(a), _data(b)

    def backward(g, needs):
        return (_unbroadcast(g * db, da.shape) if needs[0] else None,
                _unbroadcast(g * da, db.shape) if needs[1] else None)

    return _make("mul", da * db, (a, b), backward)


def div(a, b) -> Tensor:
    da, db = _data(a), _data(b)

    def backward(g, needs):
        return (_unbroadcast(g / db, da.shape) if needs[0] else None,
                _unbroadcast(-g * da / (db * db), db.shape) if needs[1] else None)

    return _make("div", da / db, (a, b), backward)


def neg(a) -> Tensor:
    return _make("neg", -_data(a), (a,), lambda g, needs: (-g,))


def exp(a) -> Tensor:
    out = np.exp(_data(a))
    return _make("exp", out, (a,), lambda g, needs: (g * out,))


def log(a) -> Tensor:
    da = _data(a)
    return _make("log", np.log(da), (a,), lambda g, needs: (g / da,))


def absolute(a) -> Tensor:
    da = _data(a)
    return _make("abs", np.abs(da), (a,), lambda g, needs: (g * np.sign(da),))


def magnitude(re, im) -> Tensor:
    """Elementwise ``sqrt(re**2 + im**2)``; the gradient at the origin is taken as 0."""
    dr, di = _data(re), _data(im)
    out = np.hypot(dr, di)
    safe = np.where(out > 0, out, 1.0)

    def backward(g, needs):
        scale = np.where(out > 0, g / safe, 0.0)
        return (scale * dr if needs[0] else None, scale * di if needs[1] else None)

    return _make("magnitude", out, (re, im), backward)


def relu(a) -> Tensor:
    da = _data(a)
    mask = da > 0
    return _make("relu", np.where(mask, da, 0.0), (a,), lambda g, needs: (g * mask,))


def sigmoid(a) -> Tensor:
    da = _data(a)
    out = np.empty_like(da)
    pos = da >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-da[pos]))
    e = np.exp(da[~pos])
    out[~pos] = e / (1.0 + e)
    return _make("sigmoid", out, (a,), lambda g, needs: (g * out * (1.0 - out),))


def activation(a, kind: str = "relu") -> Tensor:
    if kind == "relu":
        return relu(a)
    if kind == "sigmoid":
        return sigmoid(a)
    raise ValueError(f"unknown activation {kind!r}")


# ----------------------------------------------------------------- structural


def matmul(a, b) -> Tensor:
    da, db = _data(a), _data(b)
    if da.ndim < 2 or db.ndim < 2:
        raise DimensionError("matmul operands must be at least 2-D")
    if da.shape[-1] != db.shape[-2]:
        raise DimensionError(f"matmul inner dims differ: {da.shape} @ {db.shape}")

    def backward(g, needs):
        ga = _unbroadcast(g @ np.swapaxes(db, -1, -2), da.shape) if needs[0] else None
        gb = _unbroadcast(np.swapaxes(da, -1, -2) @ g, db.shape) if needs[1] else None
        return ga, gb

    return _make("matmul", da @ db, (a, b), backward)


def reshape(a, shape) -> Tensor:
    da = _data(a)
    return _make("reshape", da.reshape(shape), (a,),
                 lambda g, needs: (g.reshape(da.shape),))


def transpose(a, axes=None) -> Tensor:
    da = _data(a)
    if axes is None:
        axes = tuple(reversed(range(da.ndim)))
    inv = np.argsort(axes)
    return _make("transpose", np.transpose(da, axes), (a,),
                 lambda g, needs: (np.transpose(g, inv),))


def take(a, indices, axis: int) -> Tensor:
    """Gather along ``axis``; the axis is replaced by ``indices.shape``.

    Repeated indices are allowed and their gradients accumulate.
    """
    da = _data(a)
    idx = np.asarray(indices, dtype=np.intp)
    axis = axis % da.ndim
    out = np.take(da, idx, axis=axis)

    n_src = da.shape[axis]
    flat_idx = idx.reshape(-1)

    def backward(g, needs):
        g = g.reshape(da.shape[:axis] + (flat_idx.size,) + da.shape[axis + 1:])
        if n_src * flat_idx.size <= 1 << 20:
            # one-hot scatter matrix: sums duplicates in a single matmul
            scatter = np.zeros((flat_idx.size, n_src), dtype=g.dtype)
            scatter[np.arange(flat_idx.size), flat_idx] = 1.0
            grad = np.moveaxis(np.moveaxis(g, axis, -1) @ scatter, -1, axis)
            return (np.ascontiguousarray(grad),)
        grad = np.zeros_like(da)
        np.add.at(np.moveaxis(grad, axis, 0), flat_idx, np.moveaxis(g, axis, 0))
        return (grad,)

    return _make("take", out, (a,), backward)


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    arrays = [_data(t) for t in tensors]
    ref = arrays[0]
    axis = axis % ref.ndim
    for arr in arrays[1:]:
        if arr.ndim != ref.ndim or any(
            arr.shape[d] != ref.shape[d] for d in range(ref.ndim) if d != axis
        ):
            raise DimensionError(f"cannot concatenate shapes {ref.shape} and {arr.shape} on axis {axis}")
    bounds = np.cumsum([arr.shape[axis] for arr in arrays])[:-1]

    def backward(g, needs):
        return tuple(np.split(g, bounds, axis=axis))

    return _make("concat", np.concatenate(arrays, axis=axis), tuple(tensors), backward)


def reduce(a, axis=None, kind: str = "mean") -> Tensor:
    """Sum, mean or max over ``axis`` (removed from the result).

    The max gradient goes to a single element per reduced slice: the lowest
    index among ties.
    """
    da = _data(a)
    if axis is not None:
        if not -da.ndim <= axis < da.ndim:
            raise DimensionError(f"axis {axis} out of range for {da.ndim}-D tensor")
        axis = axis % da.ndim
    if kind == "sum":
        out = da.sum(axis=axis)

        def backward(g, needs):
            g = g if axis is None else np.expand_dims(g, axis)
            return (np.broadcast_to(g, da.shape).copy(),)

    elif kind == "mean":
        n = da.size if axis is None else da.shape[axis]
        out = da.mean(axis=axis)

        def backward(g, needs):
            g = g if axis is None else np.expand_dims(g, axis)
            return (np.broadcast_to(g / n, da.shape).copy(),)

    elif kind == "max":
        if axis is None:
            flat_arg = np.argmax(da)
            out = da.reshape(-1)[flat_arg]

            def backward(g, needs):
                grad = np.zeros(da.size, dtype=da.dtype)
                grad[flat_arg] = g
                return (grad.reshape(da.shape),)

        else:
            m = da.shape[axis]
            if m <= 16:
                # strict > keeps the lowest index among ties, like argmax
                out = np.take(da, 0, axis=axis)
                arg = np.zeros(out.shape, dtype=np.intp)
                for j in range(1, m):
                    cand = np.take(da, j, axis=axis)
                    upd = cand > out
                    out = np.where(upd, cand, out)
                    arg[upd] = j
            else:
                arg = np.argmax(da, axis=axis)
                out = np.take_along_axis(da, np.expand_dims(arg, axis), axis=axis).squeeze(axis)
            slots = np.arange(m).reshape((m,) + (1,) * (da.ndim - axis - 1))

            def backward(g, needs):
                onehot = np.expand_dims(arg, axis) == slots
                return (onehot * np.expand_dims(g, axis),)

    else:
        raise ValueError(f"unknown reduction {kind!r}")
    return _make(f"reduce_{kind}", np.asarray(out), (a,), backward)


# ------------------------------------------------------------- network layers


def conv1d(x, kernel, bias=None, padding: str = "same", axis: int = -2) -> Tensor:
    """1D convolution along ``axis`` with channels on the last axis.

    ``kernel`` has layout ``(t, c_out, c_in)``; every other leading axis of
    ``x`` is treated as batch.  ``out[τ, o] = bias[o] + Σ_δ,i kernel[δ, o, i] ·
    padded[τ + δ, i]``.  Same padding needs an odd ``t`` and pads ``(t-1)/2``
    zeros on each side.
    """
    dx, dk = _data(x), _data(kernel)
    db = None if bias is None else _data(bias)
    if dk.ndim != 3:
        raise DimensionError(f"kernel must be (t, c_out, c_in), got {dk.shape}")
    t, c_out, c_in = dk.shape
    if dx.shape[-1] != c_in:
        raise DimensionError(f"input has {dx.shape[-1]} channels, kernel expects {c_in}")
    if db is not None and db.shape != (c_out,):
        raise DimensionError(f"bias shape {db.shape} != ({c_out},)")
    axis = axis % dx.ndim
    if axis == dx.ndim - 1:
        raise DimensionError("time axis cannot be the channel axis")
    xm = np.moveaxis(dx, axis, -2)
    T = xm.shape[-2]
    if padding == "same":
        if t % 2 == 0:
            raise ValueError(f"same padding needs an odd kernel size, got {t}")
        pad = (t - 1) // 2
    elif padding == "valid":
        if t > T:
            raise DimensionError(f"kernel size {t} exceeds input length {T}")
        pad = 0
    else:
        raise ValueError(f"unknown padding {padding!r}")
    if pad:
        widths = [(0, 0)] * (xm.ndim - 2) + [(pad, pad), (0, 0)]
        xp = np.pad(xm, widths)
    else:
        xp = xm
    T_out = xp.shape[-2] - t + 1
    # windows[..., τ, i, δ] = xp[..., τ + δ, i]
    windows = np.lib.stride_tricks.sliding_window_view(xp, t, axis=-2)
    out = np.tensordot(windows, dk, axes=([-2, -1], [2, 0]))
    if db is not None:
        out = out + db
    result = np.moveaxis(out, -2, axis)

    def backward(g, needs):
        gm = np.moveaxis(g, axis, -2)
        gx = gk = gb = None
        if needs[0]:
            gxp = np.zeros(xp.shape, dtype=np.result_type(gm, dk))
            for d in range(t):
                gxp[..., d:d + T_out, :] += gm @ dk[d]
            gx = gxp[..., pad:pad + T, :] if pad else gxp
            gx = np.moveaxis(gx, -2, axis)
        if needs[1]:
            lead = list(range(gm.ndim - 1))
            # (c_out, c_in, t) -> (t, c_out, c_in)
            gk = np.tensordot(gm, windows, axes=(lead, lead)).transpose(2, 0, 1)
        if len(needs) > 2 and needs[2]:
            gb = gm.reshape(-1, c_out).sum(axis=0)
        return gx, gk, gb

    inputs = (x, kernel) if bias is None else (x, kernel, bias)
    return _make("conv1d", result, inputs, backward)


def dense(x, weight, bias=None) -> Tensor:
    """``out = weight · x + bias`` over the last axis of ``x``; weight is ``(m, n)``."""
    dx, dw = _data(x), _data(weight)
    if dw.ndim != 2 or dx.shape[-1] != dw.shape[1]:
        raise DimensionError(f"dense: input {dx.shape} incompatible with weight {dw.shape}")
    db = None if bias is None else _data(bias)
    if db is not None and db.shape != (dw.shape[0],):
        raise DimensionError(f"dense: bias {db.shape} != ({dw.shape[0]},)")
    out = dx @ dw.T
    if db is not None:
        out = out + db

    def backward(g, needs):
        gx = g @ dw if needs[0] else None
        gw = None
        if needs[1]:
            gw = g.reshape(-1, dw.shape[0]).T @ dx.reshape(-1, dw.shape[1])
        gb = g.reshape(-1, dw.shape[0]).sum(axis=0) if len(needs) > 2 and needs[2] else None
        return gx, gw, gb

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return _make("dense", out, inputs, backward)


def batch_norm(x, gamma, beta, running_mean: np.ndarray, running_var: np.ndarray,
               train: bool, momentum: float = 0.1, eps: float = 1e-5) -> Tensor:
    """Per-channel normalization over every non-channel position (channels last).

    In train mode batch moments are used and the running statistics are
    updated in place by an exponential moving average; in eval mode the
    running statistics are used as-is.
    """
    dx, dg, dbeta = _data(x), _data(gamma), _data(beta)
    c = dx.shape[-1]
    if dg.shape != (c,) or dbeta.shape != (c,):
        raise DimensionError(f"batch_norm: {c} channels but gamma {dg.shape}, beta {dbeta.shape}")
    axes = tuple(range(dx.ndim - 1))
    if train:
        n = dx.size // c
        mean = dx.mean(axis=axes)
        var = dx.var(axis=axes)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mean
        unbiased = var * n / (n - 1) if n > 1 else var
        running_var *= 1.0 - momentum
        running_var += momentum * unbiased
    else:
        mean = running_mean.copy()
        var = running_var.copy()
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (dx - mean) * inv
    out = xhat * dg + dbeta

    def backward(g, needs):
        gx = None
        if needs[0]:
            dxhat = g * dg
            if train:
                n = dx.size // c
                gx = (inv / n) * (n * dxhat - dxhat.sum(axis=axes)
                                  - xhat * (dxhat * xhat).sum(axis=axes))
            else:
                gx = dxhat * inv
        ggamma = (g * xhat).sum(axis=axes) if needs[1] else None
        gbeta = g.sum(axis=axes) if needs[2] else None
        return gx, ggamma, gbeta

    return _make("batch_norm", out, (x, gamma, beta), backward)


def dropout(x, p: float, train: bool, rng: Optional[np.random.Generator] = None) -> Tensor:
    """Inverted dropout: zero with probability ``p`` and rescale survivors by ``1/(1-p)``."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    if not train or p == 0.0:
        return x if isinstance(x, Tensor) else Tensor(x)
    if rng is None:
        rng = np.random.default_rng()
    dx = _data(x)
    mask = (rng.random(dx.shape) >= p) / (1.0 - p)
    return _make("dropout", dx * mask, (x,), lambda g, needs: (g * mask,))


def bce(prob, labels, eps: float = 1e-7) -> Tensor:
    """Mean binary cross-entropy of probabilities clamped to ``[eps, 1-eps]``."""
    dp = _data(prob)
    y = np.asarray(labels, dtype=dp.dtype).reshape(dp.shape)
    clipped = np.clip(dp, eps, 1.0 - eps)
    n = dp.size
    loss = -(y * np.log(clipped) + (1.0 - y) * np.log(1.0 - clipped)).mean()
    inside = (dp >= eps) & (dp <= 1.0 - eps)

    def backward(g, needs):
        d = (-y / clipped + (1.0 - y) / (1.0 - clipped)) / n
        return (g * d * inside,)

    return _make("bce", np.asarray(loss), (prob,), backward)
