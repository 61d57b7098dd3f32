"""Architecture configs, model construction, forward passes and model files."""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from typing import NamedTuple, Optional

import numpy as np

from . import _container
from . import tensor as tn
from .errors import ConfigError, DimensionError, FormatError
from .graph import Adjacency, reachability
from .layers import (
    StcLayerSpec,
    head_param_shapes,
    init_buffer,
    init_param,
    pooled_length,
    prediction_head,
    stc_buffer_shapes,
    stc_forward,
    stc_param_shapes,
    temporal_pool,
)
from .stft import StftSpec, stft_log_magnitude
from .tensor import Tensor

MODEL_MAGIC = b"TGCNMDL\x00"
MODEL_VERSION = 1

# "STC k-t-c" lists per block for each named configuration; channels come
# from the block.
_NAMED_LAYOUTS = {
    "I": [(1, 3)],
    "II": [(1, 3), (1, 3)],
    "III": [(1, 3), (1, 3), (1, 3)],
    "IV": [(0, 3), (1, 3), (1, 3)],
    "V": [(0, 3), (0, 3), (1, 3), (1, 3)],
}
NAMED_CONFIGS = tuple(_NAMED_LAYOUTS)


@dataclass(frozen=True)
class Block:
    layers: tuple  # of (k, t, c) triples
    pool: str = "max"  # max | mean | none

    def __post_init__(self):
        if not self.layers:
            raise ConfigError("a block needs at least one STC layer")
        if self.pool not in ("max", "mean", "none"):
            raise ConfigError(f"unknown pooling {self.pool!r}")


@dataclass(frozen=True)
class ArchitectureConfig:
    blocks: tuple
    rule: str = "B"
    aggregate: str = "max"
    t2: int = 1
    use_g1: bool = True
    head: tuple = (512, 512)
    dropout: float = 0.2
    signal_len: int = 19200
    stft: StftSpec = field(default_factory=StftSpec)
    name: Optional[str] = None

    def __post_init__(self):
        if not self.blocks:
            raise ConfigError("config needs at least one block")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if any(w < 1 for w in self.head):
            raise ConfigError(f"head widths must be positive, got {self.head}")
        self.stft.frames(self.signal_len)
        self.layer_specs()

    def layer_specs(self) -> list[list[StcLayerSpec]]:
        return [
            [StcLayerSpec(k, t, c, rule=self.rule, aggregate=self.aggregate,
                          t2=(1 if self.t2 == 1 else t), use_g1=self.use_g1)
             for (k, t, c) in block.layers]
            for block in self.blocks
        ]

    @property
    def input_frames(self) -> int:
        return self.stft.frames(self.signal_len)

    @property
    def input_channels(self) -> int:
        return self.stft.bins

    def block_lengths(self) -> list[int]:
        """Temporal extent after each block."""
        T = self.input_frames
        out = []
        for block in self.blocks:
            if block.pool != "none":
                T = pooled_length(T)
            out.append(T)
        return out

    @property
    def flat_size(self) -> int:
        return self.block_lengths()[-1] * self.blocks[-1].layers[-1][2]


def named_config(name: str, rule: str = "B", aggregate: str = "max",
                 channels=(32, 64, 128, 256), signal_len: int = 19200,
                 head=(512, 512), **kwargs) -> ArchitectureConfig:
    """Configurations I-V: four blocks of STC layers, each followed by max pooling."""
    if name not in _NAMED_LAYOUTS:
        raise ConfigError(f"unknown named config {name!r}; expected one of {NAMED_CONFIGS}")
    layout = _NAMED_LAYOUTS[name]
    blocks = tuple(Block(tuple((k, t, c) for k, t in layout), "max") for c in channels)
    return ArchitectureConfig(blocks=blocks, rule=rule, aggregate=aggregate, head=tuple(head),
                              signal_len=signal_len, name=name, **kwargs)


# ---------------------------------------------------------------- text format


def format_config(cfg: ArchitectureConfig) -> str:
    lines = []
    if cfg.name:
        lines.append(f"name {cfg.name}")
    s = cfg.stft
    lines += [
        f"signal {cfg.signal_len}",
        f"stft {s.window_len} {s.overlap} {s.window} {s.epsilon!r}",
        f"rule {cfg.rule}",
        f"aggregate {cfg.aggregate}",
        f"t2 {cfg.t2}",
        f"g1 {'on' if cfg.use_g1 else 'off'}",
    ]
    for block in cfg.blocks:
        parts = [f"stc {k}-{t}-{c}" for k, t, c in block.layers] + [f"pool {block.pool}"]
        lines.append("block { " + "; ".join(parts) + " }")
    lines.append("head " + " ".join(str(w) for w in cfg.head))
    lines.append(f"dropout {cfg.dropout!r}")
    return "\n".join(lines) + "\n"


_BLOCK_RE = re.compile(r"^block\s*\{(.*)\}$")
_STC_RE = re.compile(r"^stc\s+(\d+)-(\d+)-(\d+)$")


def parse_config(text: str) -> ArchitectureConfig:
    """Inverse of :func:`format_config`; unknown keys raise :class:`ConfigError`."""
    kw: dict = {}
    blocks = []
    stft_kw: dict = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        m = _BLOCK_RE.match(line)
        try:
            if m:
                layers, pool = [], "none"
                for item in filter(None, (x.strip() for x in m.group(1).split(";"))):
                    sm = _STC_RE.match(item)
                    if sm:
                        layers.append(tuple(int(v) for v in sm.groups()))
                    elif item.startswith("pool "):
                        pool = item.split()[1]
                    else:
                        raise ConfigError(f"bad block item {item!r}")
                blocks.append(Block(tuple(layers), pool))
                continue
            key, *vals = line.split()
            if key == "name":
                kw["name"] = vals[0]
            elif key == "signal":
                kw["signal_len"] = int(vals[0])
            elif key == "stft":
                stft_kw = {"window_len": int(vals[0]), "overlap": int(vals[1])}
                if len(vals) > 2:
                    stft_kw["window"] = vals[2]
                if len(vals) > 3:
                    stft_kw["epsilon"] = float(vals[3])
            elif key == "rule":
                kw["rule"] = vals[0]
            elif key == "aggregate":
                kw["aggregate"] = vals[0]
            elif key == "t2":
                kw["t2"] = int(vals[0])
            elif key == "g1":
                if vals[0] not in ("on", "off"):
                    raise ConfigError(f"g1 must be on/off, got {vals[0]!r}")
                kw["use_g1"] = vals[0] == "on"
            elif key == "head":
                kw["head"] = tuple(int(v) for v in vals)
            elif key == "dropout":
                kw["dropout"] = float(vals[0])
            else:
                raise ConfigError(f"unknown key {key!r}")
        except (IndexError, ValueError) as exc:
            raise ConfigError(f"config line {lineno}: {raw!r}: {exc}") from exc
    if stft_kw:
        kw["stft"] = StftSpec(**stft_kw)
    return ArchitectureConfig(blocks=tuple(blocks), **kw)


# --------------------------------------------------------------------- model


def param_shapes(cfg: ArchitectureConfig) -> dict[str, tuple]:
    shapes = {}
    c_in = cfg.input_channels
    for b, block in enumerate(cfg.layer_specs()):
        for l, spec in enumerate(block):
            for name, shape in stc_param_shapes(spec, c_in).items():
                shapes[f"block{b}.stc{l}.{name}"] = shape
            c_in = spec.c_out
    for name, shape in head_param_shapes(cfg.flat_size, cfg.head).items():
        shapes[f"head.{name}"] = shape
    return shapes


def buffer_shapes(cfg: ArchitectureConfig) -> dict[str, tuple]:
    shapes = {}
    for b, block in enumerate(cfg.layer_specs()):
        for l, spec in enumerate(block):
            for name, shape in stc_buffer_shapes(spec).items():
                shapes[f"block{b}.stc{l}.{name}"] = shape
    return shapes


def param_count(cfg: ArchitectureConfig) -> int:
    """Trainable scalars; a function of the config only, never of any graph."""
    return int(sum(np.prod(s) for s in param_shapes(cfg).values()))


class ForwardResult(NamedTuple):
    logit: Tensor
    prob: Tensor
    hidden: Optional[Tensor]
    shapes: list


def _scoped(store: dict, prefix: str) -> dict:
    n = len(prefix)
    return {k[n:]: v for k, v in store.items() if k.startswith(prefix)}


class TgcnModel:
    """Parameter store plus the forward machinery for one architecture."""

    def __init__(self, config: ArchitectureConfig, params: dict, buffers: dict, seed=None):
        self.config = config
        self.params = params      # name -> Tensor (requires_grad)
        self.buffers = buffers    # name -> ndarray, batch-norm running stats
        self.seed = seed

    @classmethod
    def build(cls, config: ArchitectureConfig, seed: int = 0) -> "TgcnModel":
        rng = np.random.default_rng(seed)
        params = {name: Tensor(init_param(name, shape, rng), requires_grad=True)
                  for name, shape in param_shapes(config).items()}
        buffers = {name: init_buffer(name, shape) for name, shape in buffer_shapes(config).items()}
        return cls(config, params, buffers, seed)

    def param_count(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def copy(self) -> "TgcnModel":
        params = {k: Tensor(v.data.copy(), requires_grad=True) for k, v in self.params.items()}
        buffers = {k: v.copy() for k, v in self.buffers.items()}
        return TgcnModel(self.config, params, buffers, self.seed)

    def forward(self, spectrogram, adjacency: Adjacency, train: bool = False,
                rng: Optional[np.random.Generator] = None,
                return_hidden: bool = False) -> ForwardResult:
        """Run the STC blocks and head on ``(B, frames, p, bins)`` features.

        A 3-D input is treated as a batch of one.  ``shapes`` in the result
        traces the per-sample extent after every block.
        """
        x = tn.as_tensor(spectrogram)
        if x.ndim == 3:
            x = tn.reshape(x, (1,) + x.shape)
        cfg = self.config
        if x.ndim != 4 or x.shape[1] != cfg.input_frames or x.shape[3] != cfg.input_channels:
            raise DimensionError(
                f"expected (B, {cfg.input_frames}, p, {cfg.input_channels}) features, got {x.shape}")
        if x.shape[2] != adjacency.p:
            raise DimensionError(f"features have {x.shape[2]} nodes, adjacency has {adjacency.p}")
        if train and rng is None:
            rng = np.random.default_rng()
        h = x
        trace = []
        for b, (block, specs) in enumerate(zip(cfg.blocks, cfg.layer_specs())):
            for l, spec in enumerate(specs):
                prefix = f"block{b}.stc{l}."
                h = stc_forward(h, reachability(adjacency, spec.k), spec,
                                _scoped(self.params, prefix), _scoped(self.buffers, prefix), train)
            if block.pool != "none":
                h = temporal_pool(h, block.pool)
            trace.append(tuple(h.shape[1:]))
        logit, prob = prediction_head(h, _scoped(self.params, "head."), cfg.head,
                                      cfg.dropout, train, rng)
        return ForwardResult(logit, prob, h if return_hidden else None, trace)

    def forward_raw(self, signal, adjacency: Adjacency, train: bool = False,
                    rng: Optional[np.random.Generator] = None,
                    return_hidden: bool = False) -> ForwardResult:
        """Same as :meth:`forward` but starting from ``(B, T_raw, p)`` waveforms."""
        return self.forward(self.preprocess(signal), adjacency, train, rng, return_hidden)

    def preprocess(self, signal) -> Tensor:
        x = tn.as_tensor(signal)
        if x.shape[-2] != self.config.signal_len:
            raise DimensionError(f"signal length {x.shape[-2]} != configured {self.config.signal_len}")
        return stft_log_magnitude(x, self.config.stft)


def build(config: ArchitectureConfig, seed: int = 0) -> TgcnModel:
    return TgcnModel.build(config, seed)


# ----------------------------------------------------------------- model file


def save_model(model: TgcnModel, path) -> str:
    """Write the model; returns the hex checksum."""
    names = list(model.params)
    bnames = list(model.buffers)
    header = {
        "config": format_config(model.config),
        "params": [[n, list(model.params[n].shape)] for n in names],
        "buffers": [[n, list(model.buffers[n].shape)] for n in bnames],
        "seed": model.seed,
    }
    blob = b"".join(
        np.ascontiguousarray(arr, dtype="<f8").tobytes()
        for arr in [model.params[n].data for n in names] + [model.buffers[n] for n in bnames]
    )
    return _container.write(path, MODEL_MAGIC, MODEL_VERSION, header, blob)


def load_model(path) -> TgcnModel:
    header, payload = _container.read(path, MODEL_MAGIC, MODEL_VERSION)
    config = parse_config(header["config"])
    flat = np.frombuffer(payload, dtype="<f8")
    offset = 0

    def take(shape):
        nonlocal offset
        n = int(np.prod(shape))
        if offset + n > flat.size:
            raise FormatError(f"{path}: parameter blob too short")
        arr = flat[offset:offset + n].reshape(shape).astype(np.float64)
        offset += n
        return arr

    params = {n: Tensor(take(tuple(s)), requires_grad=True) for n, s in header["params"]}
    buffers = {n: take(tuple(s)) for n, s in header["buffers"]}
    if offset != flat.size:
        raise FormatError(f"{path}: {flat.size - offset} trailing values in parameter blob")
    expected = param_shapes(config)
    if {n: tuple(p.shape) for n, p in params.items()} != expected:
        raise FormatError(f"{path}: parameter shapes do not match the stored config")
    return TgcnModel(config, params, buffers, header.get("seed"))


def with_signal_len(cfg: ArchitectureConfig, signal_len: int) -> ArchitectureConfig:
    return replace(cfg, signal_len=signal_len)
