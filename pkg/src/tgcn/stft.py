"""Differentiable log-magnitude short-time Fourier transform.

The DFT is a fixed linear map (cosine and sine basis matrices), so the whole
transform is built from recorded tensor ops and raw-waveform gradients come
for free.  Frames are taken without end padding.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import tensor as tn
from .tensor import Tensor


@dataclass(frozen=True)
class StftSpec:
    window_len: int = 64
    overlap: int = 32
    epsilon: float = 1e-6
    window: str = "rect"

    def __post_init__(self):
        if not 0 <= self.overlap < self.window_len:
            raise ValueError(f"need 0 <= overlap < window_len, got {self.overlap}, {self.window_len}")
        if self.window not in ("rect", "hann"):
            raise ValueError(f"unknown window {self.window!r}")

    @property
    def hop(self) -> int:
        return self.window_len - self.overlap

    @property
    def bins(self) -> int:
        return self.window_len // 2 + 1

    def frames(self, n_samples: int) -> int:
        if n_samples < self.window_len:
            raise ValueError(f"signal of {n_samples} samples is shorter than one window ({self.window_len})")
        return (n_samples - self.window_len) // self.hop + 1


@lru_cache(maxsize=16)
def dft_basis(window_len: int, window: str = "rect") -> tuple[np.ndarray, np.ndarray]:
    """Real and imaginary DFT basis, each ``(window_len, bins)``, with the taper folded in."""
    n = np.arange(window_len)[:, None]
    f = np.arange(window_len // 2 + 1)[None, :]
    angle = 2.0 * np.pi * n * f / window_len
    taper = np.ones(window_len) if window == "rect" else np.hanning(window_len + 1)[:-1]
    re = np.cos(angle) * taper[:, None]
    im = -np.sin(angle) * taper[:, None]
    re.setflags(write=False)
    im.setflags(write=False)
    return re, im


def frame_index(n_samples: int, spec: StftSpec) -> np.ndarray:
    starts = np.arange(spec.frames(n_samples)) * spec.hop
    return starts[:, None] + np.arange(spec.window_len)[None, :]


def stft_log_magnitude(signal, spec: StftSpec = StftSpec()) -> Tensor:
    """Log-magnitude spectrogram of a ``(..., T_raw, p)`` signal.

    Returns ``(..., frames, p, bins)`` where ``value = log(|DFT| + epsilon)``.
    """
    x = tn.as_tensor(signal)
    if x.ndim < 2:
        raise ValueError(f"signal must be (..., T_raw, p), got shape {x.shape}")
    idx = frame_index(x.shape[-2], spec)
    re_b, im_b = dft_basis(spec.window_len, spec.window)
    framed = tn.take(x, idx, axis=x.ndim - 2)             # (..., frames, W, p)
    nd = framed.ndim
    axes = tuple(range(nd - 2)) + (nd - 1, nd - 2)
    framed = tn.transpose(framed, axes)                    # (..., frames, p, W)
    re = tn.matmul(framed, re_b)
    im = tn.matmul(framed, im_b)
    return tn.log(tn.magnitude(re, im) + spec.epsilon)


def band_power(signal: np.ndarray, spec: StftSpec, sample_rate: float,
               band: tuple[float, float]) -> np.ndarray:
    """Mean linear power per frame and lead inside ``band`` (Hz); shape ``(frames, p)``."""
    logmag = stft_log_magnitude(np.asarray(signal, dtype=np.float64), spec).data
    freqs = np.arange(spec.bins) * sample_rate / spec.window_len
    sel = (freqs >= band[0]) & (freqs <= band[1])
    mag = np.exp(logmag[..., sel]) - spec.epsilon
    return (mag ** 2).mean(axis=-1)
