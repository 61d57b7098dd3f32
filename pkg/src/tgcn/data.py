"""Structural time series datasets: the 21-lead EEG topology, a synthetic
generator with planted propagating motifs, epoch labeling and the on-disk
dataset container."""

from __future__ import annotations

import struct
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.signal import lfilter

from . import _container
from .errors import ConfigError, FormatError, GraphError
from .graph import Adjacency, from_edges, hop_distances, validate

DATASET_MAGIC = b"TGCNDAT\x00"
DATASET_VERSION = 1
EDGE_ASSET = "eeg_1020_edges.txt"

LEADS = ("C3", "C4", "Cz", "F3", "F4", "F7", "F8", "Fz", "FT9", "FT10", "Fp1",
         "Fp2", "O1", "O2", "P3", "P4", "P7", "P8", "Pz", "T7", "T8")

REGION_GROUPS = {
    "Left frontal": ("Fp1", "F3", "Fz"),
    "Right frontal": ("Fp2", "F4", "Fz"),
    "Left temporal": ("F7", "T7", "FT9"),
    "Right temporal": ("F8", "T8", "FT10"),
    "Left parietal": ("P7", "P3"),
    "Right parietal": ("P8", "P4"),
    "Left occipital": ("O1", "P7"),
    "Right occipital": ("O2", "P8"),
}

# differenced lead pairs of the longitudinal montage
MONTAGE_PAIRS = (
    ("Fp1", "F7"), ("F7", "T7"), ("T7", "P7"), ("P7", "O1"),
    ("Fp1", "F3"), ("F3", "C3"), ("C3", "P3"), ("P3", "O1"),
    ("Fz", "Cz"), ("Cz", "Pz"),
    ("Fp2", "F4"), ("F4", "C4"), ("C4", "P4"), ("P4", "O2"),
    ("Fp2", "F8"), ("F8", "T8"), ("T8", "P8"), ("P8", "O2"),
    ("FT9", "F7"), ("FT10", "F8"),
)


@dataclass(frozen=True)
class EegTopology:
    leads: tuple
    adjacency: Adjacency
    regions: dict

    def index(self, lead: str) -> int:
        return self.leads.index(lead)

    def region_indices(self) -> dict[str, list[int]]:
        return {name: sorted(self.index(l) for l in members) for name, members in self.regions.items()}


def read_edges(text: str) -> list[tuple[str, str]]:
    edges = []
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            a, b = line.split()
            edges.append((a, b))
    return edges


def topology_from_edges(leads: Sequence[str], edges: Sequence[tuple[str, str]],
                        regions: Optional[dict] = None) -> EegTopology:
    pos = {name: i for i, name in enumerate(leads)}
    unknown = sorted({x for e in edges for x in e} - set(pos))
    if unknown:
        raise GraphError(f"edges reference unknown leads {unknown}")
    adj = from_edges(len(leads), [(pos[a], pos[b]) for a, b in edges])
    return EegTopology(tuple(leads), adj, dict(regions or {}))


def builtin_topology(edge_file=None) -> EegTopology:
    """The 21 analyzed leads with the shipped (or a user-supplied) 10-20 edge list."""
    if edge_file is None:
        text = resources.files("tgcn.assets").joinpath(EDGE_ASSET).read_text()
    else:
        text = Path(edge_file).read_text()
    return topology_from_edges(LEADS, read_edges(text), REGION_GROUPS)


# ------------------------------------------------------------------- samples


@dataclass
class StructuralTimeSeries:
    x: np.ndarray                 # (T_raw, p) raw signal
    adjacency: Adjacency
    label: int
    sample_id: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def p(self) -> int:
        return self.x.shape[1]


@dataclass
class Dataset:
    samples: list
    lead_names: Optional[tuple] = None
    seed: Optional[int] = None
    spec: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.samples)

    def __getitem__(self, i) -> StructuralTimeSeries:
        return self.samples[i]

    def __iter__(self):
        return iter(self.samples)

    @property
    def labels(self) -> np.ndarray:
        return np.array([s.label for s in self.samples], dtype=int)

    def subset(self, indices) -> "Dataset":
        return Dataset([self.samples[i] for i in indices], self.lead_names, self.seed, self.spec)


# ------------------------------------------------------------------ generator


@dataclass(frozen=True)
class SyntheticSpec:
    """Colored background noise plus, for positives, a band-limited burst that
    starts at an origin node and spreads to nodes within ``max_hops`` hops
    with amplitude ``decay ** hop``."""

    p: int = 21
    t_raw: int = 19200
    sample_rate: float = 200.0
    noise_level: float = 1.0
    noise_ar: float = 0.9
    band: tuple = (12.0, 18.0)
    amplitude: float = 2.0
    duration: float = 20.0
    decay: float = 0.5
    max_hops: int = 2
    origin_nodes: Optional[tuple] = None
    positive_frac: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.duration * self.sample_rate >= self.t_raw:
            raise ConfigError("motif duration must be shorter than the epoch")
        if not 0.0 <= self.decay <= 1.0:
            raise ConfigError(f"decay must be in [0, 1], got {self.decay}")
        if not 0.0 <= self.positive_frac <= 1.0:
            raise ConfigError(f"positive_frac must be in [0, 1], got {self.positive_frac}")
        if not 0.0 <= self.noise_ar < 1.0:
            raise ConfigError(f"noise_ar must be in [0, 1), got {self.noise_ar}")
        if self.band[0] >= self.band[1] or self.band[1] > self.sample_rate / 2:
            raise ConfigError(f"bad motif band {self.band}")

    @property
    def motif_len(self) -> int:
        return int(round(self.duration * self.sample_rate))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["band"] = list(self.band)
        d["origin_nodes"] = None if self.origin_nodes is None else list(self.origin_nodes)
        return d


def colored_noise(rng: np.random.Generator, n: int, p: int, ar: float) -> np.ndarray:
    """Unit-variance stationary AR(1) noise, ``(n, p)``."""
    e = rng.standard_normal((n, p))
    x0 = rng.standard_normal(p)
    b = np.sqrt(1.0 - ar * ar)
    return lfilter([b], [1.0, -ar], e, axis=0, zi=(ar * x0)[None, :])[0]


def motif_waveform(rng: np.random.Generator, spec: SyntheticSpec) -> tuple[np.ndarray, float]:
    n = spec.motif_len
    freq = rng.uniform(*spec.band)
    phase = rng.uniform(0, 2 * np.pi)
    t = np.arange(n) / spec.sample_rate
    envelope = np.hanning(n)
    return spec.amplitude * envelope * np.sin(2 * np.pi * freq * t + phase), freq


def generate_sample(spec: SyntheticSpec, adjacency: Adjacency, sample_id: int,
                    label: Optional[int] = None, origin: Optional[int] = None,
                    include_noise: bool = True) -> StructuralTimeSeries:
    """One sample drawn from its own ``(seed, sample_id)`` stream."""
    rng = np.random.default_rng([spec.seed, sample_id])
    if label is None:
        label = int(rng.random() < spec.positive_frac)
    noise = colored_noise(rng, spec.t_raw, spec.p, spec.noise_ar) * spec.noise_level
    x = noise if include_noise else np.zeros_like(noise)
    meta = {}
    if label:
        candidates = spec.origin_nodes if spec.origin_nodes is not None else range(spec.p)
        candidates = list(candidates)
        pick = candidates[int(rng.integers(len(candidates)))]
        origin = pick if origin is None else origin
        onset = int(rng.integers(1, spec.t_raw - spec.motif_len + 1))
        wave, freq = motif_waveform(rng, spec)
        hops = hop_distances(adjacency, origin)
        for node in range(spec.p):
            h = hops[node]
            if 0 <= h <= spec.max_hops:
                gain = spec.decay ** h
                if gain:
                    x[onset:onset + spec.motif_len, node] += gain * wave
        meta = {"origin": int(origin), "onset": onset, "freq": float(freq)}
    return StructuralTimeSeries(x.astype(np.float32), adjacency, int(label), sample_id, meta)


def generate(spec: SyntheticSpec, n: int, adjacency: Optional[Adjacency] = None,
             lead_names: Optional[Sequence[str]] = None, start_id: int = 0) -> Dataset:
    """``n`` samples; deterministic in ``(spec, start_id)``."""
    if adjacency is None:
        if spec.p != len(LEADS):
            raise ConfigError("an adjacency is required unless p == 21 (builtin topology)")
        topo = builtin_topology()
        adjacency, lead_names = topo.adjacency, topo.leads
    if adjacency.p != spec.p:
        raise ConfigError(f"adjacency has {adjacency.p} nodes, spec has p={spec.p}")
    samples = [generate_sample(spec, adjacency, start_id + i) for i in range(n)]
    return Dataset(samples, tuple(lead_names) if lead_names else None, spec.seed, spec.to_dict())


# ---------------------------------------------------------------- epoch labels


@dataclass
class Epoch:
    start: int
    stop: int
    label: int
    signal: np.ndarray


def epoch_label(session: np.ndarray, onsets: Sequence[float], sample_rate: float = 200.0,
                epoch_seconds: float = 96.0) -> list[Epoch]:
    """Split a ``(T, p)`` session into consecutive epochs; an epoch is positive
    iff a seizure onset (seconds) falls in ``[start, stop)``.  A trailing
    partial epoch is discarded."""
    session = np.asarray(session)
    size = int(round(epoch_seconds * sample_rate))
    total = session.shape[0]
    if size > total:
        raise ValueError(f"epoch of {size} samples is longer than the session ({total})")
    onsets = list(onsets)
    if onsets != sorted(onsets):
        raise ValueError("onset annotations must be sorted")
    if onsets and (onsets[0] < 0 or onsets[-1] * sample_rate >= total):
        raise ValueError("onset annotations must lie within the session")
    onset_samples = np.asarray(onsets, dtype=float) * sample_rate
    n_epochs = total // size
    hits = np.zeros(n_epochs, dtype=bool)
    idx = (onset_samples // size).astype(int)
    hits[idx[idx < n_epochs]] = True
    return [Epoch(k * size, (k + 1) * size, int(hits[k]), session[k * size:(k + 1) * size])
            for k in range(n_epochs)]


# ------------------------------------------------------------------ container

_RECORD_HEAD = struct.Struct("<III")


def save_dataset(ds: Dataset, path) -> str:
    """Write ``ds``; returns the hex checksum."""
    t_raws = sorted({s.x.shape[0] for s in ds.samples})
    ps = sorted({s.p for s in ds.samples})
    header = {
        "n": len(ds),
        "p": ps[0] if len(ps) == 1 else ps,
        "t_raw": t_raws[0] if len(t_raws) == 1 else t_raws,
        "lead_names": list(ds.lead_names) if ds.lead_names else None,
        "seed": ds.seed,
        "spec": ds.spec,
        "meta": [s.meta for s in ds.samples],
    }
    chunks = []
    for s in ds.samples:
        t_raw, p = s.x.shape
        chunks.append(_RECORD_HEAD.pack(s.sample_id, p, t_raw))
        chunks.append(s.adjacency.bits.astype(np.uint8).tobytes())
        chunks.append(np.ascontiguousarray(s.x, dtype="<f4").tobytes())
        chunks.append(bytes([s.label]))
    return _container.write(path, DATASET_MAGIC, DATASET_VERSION, header, b"".join(chunks))


def load_dataset(path) -> Dataset:
    header, payload = _container.read(path, DATASET_MAGIC, DATASET_VERSION)
    buf = bytes(payload)
    pos = 0
    samples = []
    metas = header.get("meta") or [{}] * header["n"]
    for i in range(header["n"]):
        if pos + _RECORD_HEAD.size > len(buf):
            raise FormatError(f"{path}: record {i} truncated")
        sid, p, t_raw = _RECORD_HEAD.unpack_from(buf, pos)
        pos += _RECORD_HEAD.size
        end = pos + p * p + 4 * t_raw * p + 1
        if end > len(buf):
            raise FormatError(f"{path}: record {i} truncated")
        adj = validate(np.frombuffer(buf, np.uint8, p * p, pos).reshape(p, p))
        pos += p * p
        x = np.frombuffer(buf, "<f4", t_raw * p, pos).reshape(t_raw, p).astype(np.float32)
        pos += 4 * t_raw * p
        label = buf[pos]
        pos += 1
        samples.append(StructuralTimeSeries(x, adj, int(label), sid, dict(metas[i])))
    if pos != len(buf):
        raise FormatError(f"{path}: {len(buf) - pos} unexpected trailing bytes")
    names = header.get("lead_names")
    return Dataset(samples, tuple(names) if names else None, header.get("seed"), header.get("spec") or {})
