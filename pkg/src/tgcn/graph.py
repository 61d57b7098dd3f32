"""Binary adjacency matrices, k-step reachability and neighborhoods.

Row ``i`` of an adjacency lists the nodes whose features node ``i``
aggregates, so ``A[i, j] = 1`` means "j is a neighbor of i".  Every node is
its own neighbor (the diagonal is all ones).  Graphs may be directed.
"""

from __future__ import annotations

import hashlib
from collections import deque
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable

import numpy as np

from .errors import GraphError


@dataclass(frozen=True, eq=False)
class Adjacency:
    bits: np.ndarray = field(repr=False)

    @property
    def p(self) -> int:
        return self.bits.shape[0]

    def key(self) -> str:
        """Stable content hash, used to cache reachabilities."""
        return hashlib.sha1(self.bits.tobytes() + bytes([self.p % 256])).hexdigest()

    def __eq__(self, other) -> bool:
        return isinstance(other, Adjacency) and np.array_equal(self.bits, other.bits)

    def __hash__(self) -> int:
        return hash(self.key())


@dataclass(frozen=True, eq=False)
class Reachability:
    k: int
    bits: np.ndarray = field(repr=False)

    @property
    def p(self) -> int:
        return self.bits.shape[0]


def validate(matrix) -> Adjacency:
    """Check that ``matrix`` is a square 0/1 matrix with a full diagonal."""
    arr = np.asarray(matrix)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise GraphError(f"adjacency must be square, got shape {arr.shape}")
    if arr.shape[0] == 0:
        raise GraphError("adjacency must have at least one node")
    if not np.all((arr == 0) | (arr == 1)):
        raise GraphError("adjacency entries must be 0 or 1")
    bits = arr.astype(bool)
    if not bits.diagonal().all():
        missing = np.flatnonzero(~bits.diagonal()).tolist()
        raise GraphError(f"adjacency diagonal must be all ones; zero at nodes {missing}")
    bits = bits.copy()
    bits.setflags(write=False)
    return Adjacency(bits)


def from_edges(p: int, edges: Iterable[tuple[int, int]], directed: bool = False) -> Adjacency:
    bits = np.eye(p, dtype=bool)
    for i, j in edges:
        bits[i, j] = True
        if not directed:
            bits[j, i] = True
    return validate(bits)


def _bool_matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # OR/AND semiring; integer product of 0/1 matrices never exceeds p
    return (a.astype(np.int64) @ b.astype(np.int64)) > 0


def reachability(a: Adjacency, k: int) -> Reachability:
    """``A(k)``: entry (i, j) set iff j reaches i's row within ``k`` steps."""
    if k < 0:
        raise GraphError(f"k must be non-negative, got {k}")
    return _reachability_cached(a, k)


@lru_cache(maxsize=256)
def _reachability_cached(a: Adjacency, k: int) -> Reachability:
    result = np.eye(a.p, dtype=bool)
    power = a.bits
    # the full diagonal makes powers monotone, so paths longer than p add nothing
    remaining = min(k, a.p)
    while remaining:
        if remaining & 1:
            result = _bool_matmul(result, power)
        remaining >>= 1
        if remaining:
            power = _bool_matmul(power, power)
    result.setflags(write=False)
    return Reachability(k, result)


def neighborhood(r: Reachability, i: int) -> list[int]:
    """Ascending indices ``j`` with ``A(k)[i, j] = 1``."""
    if not 0 <= i < r.p:
        raise GraphError(f"node index {i} out of range for {r.p} nodes")
    return np.flatnonzero(r.bits[i]).tolist()


def neighbor_index(r: Reachability, include_self: bool) -> tuple[np.ndarray, np.ndarray]:
    """Padded neighbor table for vectorized aggregation.

    Returns ``(index, weight)`` of shape ``(p, m)`` where ``m`` is the largest
    neighborhood.  Short rows are padded by repeating their first entry
    (harmless for max, and ``weight`` is zero there so means are exact).
    With ``include_self=False`` a node with no other neighbors falls back to
    itself.
    """
    rows = []
    for i in range(r.p):
        nb = neighborhood(r, i)
        if not include_self:
            nb = [j for j in nb if j != i] or [i]
        rows.append(nb)
    m = max(len(nb) for nb in rows)
    index = np.empty((r.p, m), dtype=np.intp)
    weight = np.zeros((r.p, m))
    for i, nb in enumerate(rows):
        index[i, : len(nb)] = nb
        index[i, len(nb):] = nb[0]
        weight[i, : len(nb)] = 1.0 / len(nb)
    return index, weight


def drop_nodes(a: Adjacency, drop: Iterable[int]) -> tuple[Adjacency, dict[int, int]]:
    """Delete rows and columns of ``drop``; returns the reduced graph and old→new indices."""
    drop = set(int(d) for d in drop)
    bad = [d for d in drop if not 0 <= d < a.p]
    if bad:
        raise GraphError(f"cannot drop unknown nodes {sorted(bad)}")
    keep = [i for i in range(a.p) if i not in drop]
    if not keep:
        raise GraphError("cannot drop every node")
    remap = {old: new for new, old in enumerate(keep)}
    return validate(a.bits[np.ix_(keep, keep)]), remap


def bfs_reachability(a: Adjacency, k: int) -> np.ndarray:
    """Depth-limited breadth-first search from every node; reference for :func:`reachability`."""
    out = np.zeros((a.p, a.p), dtype=bool)
    for src in range(a.p):
        depth = {src: 0}
        queue = deque([src])
        while queue:
            u = queue.popleft()
            if depth[u] == k:
                continue
            for v in np.flatnonzero(a.bits[u]):
                if v not in depth:
                    depth[v] = depth[u] + 1
                    queue.append(v)
        out[src, list(depth)] = True
    return out


def hop_distances(a: Adjacency, source: int) -> np.ndarray:
    """Shortest path length from ``source`` along rows; -1 where unreachable."""
    dist = np.full(a.p, -1, dtype=int)
    dist[source] = 0
    queue = deque([source])
    while queue:
        u = queue.popleft()
        for v in np.flatnonzero(a.bits[u]):
            if dist[v] < 0:
                dist[v] = dist[u] + 1
                queue.append(v)
    return dist


def random_adjacency(p: int, rng: np.random.Generator, density: float = 0.3,
                     directed: bool = False, connected: bool = False) -> Adjacency:
    """Random 0/1 graph with a full diagonal; ``connected`` adds a spanning path first."""
    bits = rng.random((p, p)) < density
    if not directed:
        bits = np.triu(bits, 1)
        bits = bits | bits.T
    if connected:
        order = rng.permutation(p)
        for u, v in zip(order[:-1], order[1:]):
            bits[u, v] = bits[v, u] = True
    np.fill_diagonal(bits, True)
    return validate(bits)
