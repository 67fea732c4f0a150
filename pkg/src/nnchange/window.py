"""Sliding observation window with a maintained k-nearest-neighbour graph.

The window keeps the ``L`` most recent observations in arrival order together
with their full pairwise distance matrix.  Position ``0`` is always the oldest
observation, so window positions double as the tie-break key for neighbour
ranking: among equidistant candidates the one with the smaller position wins.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Union

import numpy as np

PairMetric = Callable[[np.ndarray, np.ndarray], float]


def _euclidean(rows: np.ndarray, y: np.ndarray) -> np.ndarray:
    return np.sqrt(((rows - y) ** 2).sum(axis=1))


def _manhattan(rows: np.ndarray, y: np.ndarray) -> np.ndarray:
    return np.abs(rows - y).sum(axis=1)


def _chebyshev(rows: np.ndarray, y: np.ndarray) -> np.ndarray:
    return np.abs(rows - y).max(axis=1)


METRICS = {
    "euclidean": _euclidean,
    "manhattan": _manhattan,
    "chebyshev": _chebyshev,
}


def resolve_metric(metric: Union[str, PairMetric]) -> Callable[[np.ndarray, np.ndarray], np.ndarray]:
    """Return a row-vectorised distance function for ``metric``.

    Named metrics are vectorised; a user callable ``f(a, b) -> float`` is
    evaluated once per pair.
    """
    if isinstance(metric, str):
        try:
            return METRICS[metric]
        except KeyError:
            raise ValueError(f"unknown metric {metric!r}; choose from {sorted(METRICS)}") from None
    if not callable(metric):
        raise TypeError("metric must be a name or a callable")

    def pairwise(rows: np.ndarray, y: np.ndarray) -> np.ndarray:
        return np.array([float(metric(r, y)) for r in rows], dtype=float)

    return pairwise


@dataclass(frozen=True)
class NeighborTable:
    """Ranked neighbour lists up to rank ``k + 1`` for a full window.

    ``ranks[i, r]`` is the window position of the ``(r+1)``-th nearest
    neighbour of node ``i``.
    """

    k: int
    ranks: np.ndarray
    in_degree_k: np.ndarray
    in_degree_exact_k1: np.ndarray

    @property
    def L(self) -> int:
        return int(self.ranks.shape[0])

    @classmethod
    def from_ranks(cls, ranks: np.ndarray, k: int) -> "NeighborTable":
        ranks = np.asarray(ranks, dtype=np.intp)
        L = ranks.shape[0]
        if ranks.shape != (L, k + 1):
            raise ValueError(f"ranks must have shape (L, k+1) = ({L}, {k + 1})")
        d = np.bincount(ranks[:, :k].ravel(), minlength=L)
        m = np.bincount(ranks[:, k], minlength=L)
        return cls(k=k, ranks=ranks, in_degree_k=d, in_degree_exact_k1=m)

    def edges(self) -> tuple[np.ndarray, np.ndarray]:
        """Directed k-NN edges as ``(source, target)`` position arrays."""
        src = np.repeat(np.arange(self.L), self.k)
        return src, self.ranks[:, : self.k].ravel()


@dataclass(frozen=True)
class GraphSummary:
    L: int
    k: int
    mutual_per_node: float
    in_deg_sq_per_node: float
    cross_rank_p: float
    cross_rank_q: float


@dataclass(frozen=True)
class NullGraphQuantities:
    """Running means of the graph functionals that drive the ARL formulas."""

    L: int
    k: int
    p_k: float = 0.0
    q_k: float = 0.0
    p_k1: float = 0.0
    q_k1: float = 0.0
    windows_seen: int = 0


def rank_rows(dist_rows: np.ndarray, self_cols: np.ndarray, k: int) -> np.ndarray:
    """First ``k+1`` neighbours of each row, ordered by (distance, position)."""
    d = np.array(dist_rows, dtype=float, copy=True)
    m = d.shape[0]
    d[np.arange(m), self_cols] = np.inf
    kth = np.partition(d, k, axis=1)[:, k]
    mask = d <= kth[:, None]
    simple = mask.sum(axis=1) == k + 1
    out = np.empty((m, k + 1), dtype=np.intp)
    if simple.any():
        # exactly k+1 candidates: nonzero yields them in ascending position
        cols = np.nonzero(mask[simple])[1].reshape(-1, k + 1)
        vals = np.take_along_axis(d[simple], cols, axis=1)
        order = np.argsort(vals, axis=1, kind="stable")
        out[simple] = np.take_along_axis(cols, order, axis=1)
    for r in np.flatnonzero(~simple):
        out[r] = np.argsort(d[r], kind="stable")[: k + 1]
    return out


class Window:
    """Ring buffer of the most recent ``capacity`` observations.

    When ``k`` is given the neighbour ranks are kept up to date on every push
    once the window is full (evicted neighbours trigger a row rebuild, the new
    point is inserted where it beats the current rank ``k+1`` distance).
    """

    def __init__(
        self,
        capacity: int,
        dim: int,
        metric: Union[str, PairMetric] = "euclidean",
        k: Optional[int] = None,
        first_index: int = 1,
    ):
        if capacity < 1 or dim < 1:
            raise ValueError("capacity and dim must be positive")
        if k is not None and capacity < k + 2:
            raise ValueError(f"window length {capacity} < k + 2 = {k + 2}")
        self.capacity = capacity
        self.dim = dim
        self.k = k
        self._metric = resolve_metric(metric)
        self.data = np.zeros((capacity, dim))
        self.indices = np.zeros(capacity, dtype=np.int64)
        self.distances = np.zeros((capacity, capacity))
        self.size = 0
        self.next_index = first_index
        self._ranks: Optional[np.ndarray] = None
        self._rank_dist: Optional[np.ndarray] = None

    @property
    def full(self) -> bool:
        return self.size == self.capacity

    @property
    def newest_index(self) -> int:
        return self.next_index - 1

    def _check(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float).reshape(-1)
        if y.shape[0] != self.dim:
            raise ValueError(f"dimension mismatch: expected {self.dim}, got {y.shape[0]}")
        if not np.all(np.isfinite(y)):
            raise ValueError("observation contains non-finite values")
        return y

    def push(self, y, index: Optional[int] = None) -> None:
        y = self._check(y)
        if index is None:
            index = self.next_index
        L = self.capacity
        if self.full:
            self.data[:-1] = self.data[1:]
            self.indices[:-1] = self.indices[1:]
            self.distances[:-1, :-1] = self.distances[1:, 1:]
            pos = L - 1
        else:
            pos = self.size
            self.size += 1
        dist = self._metric(self.data[:pos], y) if pos else np.zeros(0)
        if dist.size and (not np.all(np.isfinite(dist)) or np.any(dist < 0)):
            raise ValueError("metric returned a negative or non-finite distance")
        self.data[pos] = y
        self.indices[pos] = index
        self.distances[pos, :pos] = dist
        self.distances[:pos, pos] = dist
        self.distances[pos, pos] = 0.0
        self.next_index = index + 1
        if self.k is not None and self.full:
            self._update_ranks(evicted=pos == L - 1 and self._ranks is not None)

    def _update_ranks(self, evicted: bool) -> None:
        k, L = self.k, self.capacity
        if not evicted:
            self._ranks = rank_rows(self.distances, np.arange(L), k)
            self._rank_dist = np.take_along_axis(self.distances, self._ranks, axis=1)
            return
        ranks = self._ranks[1:] - 1
        rdist = self._rank_dist[1:]
        dnew = self.distances[: L - 1, L - 1]
        stale = (ranks < 0).any(axis=1)
        ins = ~stale & (dnew < rdist[:, k])
        if ins.any():
            rows = np.flatnonzero(ins)
            pos = (rdist[rows] <= dnew[rows, None]).sum(axis=1)[:, None]
            cols = np.arange(k + 1)[None, :]
            r_old, d_old = ranks[rows], rdist[rows]
            ranks[rows] = np.where(cols < pos, r_old, np.where(cols == pos, L - 1, np.roll(r_old, 1, axis=1)))
            rdist[rows] = np.where(
                cols < pos, d_old, np.where(cols == pos, dnew[rows, None], np.roll(d_old, 1, axis=1))
            )
        ranks = np.vstack([ranks, np.zeros((1, k + 1), dtype=np.intp)])
        rdist = np.vstack([rdist, np.zeros((1, k + 1))])
        rebuild = np.append(np.flatnonzero(stale), L - 1)
        ranks[rebuild] = rank_rows(self.distances[rebuild], rebuild, k)
        rdist[rebuild] = np.take_along_axis(self.distances[rebuild], ranks[rebuild], axis=1)
        self._ranks, self._rank_dist = ranks, rdist

    def neighbor_table(self) -> NeighborTable:
        """Incrementally maintained table (requires ``k`` at construction)."""
        if self.k is None:
            raise ValueError("window was built without k; use build_neighbor_table")
        if not self.full:
            raise ValueError("window not full")
        return NeighborTable.from_ranks(self._ranks.copy(), self.k)


def build_neighbor_table(window: Window, k: int) -> NeighborTable:
    """Rank neighbours from scratch using the window's distance matrix."""
    if not window.full:
        raise ValueError("window not full")
    L = window.capacity
    if L < k + 2:
        raise ValueError(f"window length {L} < k + 2 = {k + 2}")
    return NeighborTable.from_ranks(rank_rows(window.distances, np.arange(L), k), k)


def summarize(table: NeighborTable) -> GraphSummary:
    L, k, R = table.L, table.k, table.ranks
    src, dst = table.edges()
    mutual = int((R[dst, :k] == src[:, None]).any(axis=1).sum())
    cross_p = int((R[dst, k] == src).sum())
    d = table.in_degree_k.astype(np.int64)
    m = table.in_degree_exact_k1.astype(np.int64)
    return GraphSummary(
        L=L,
        k=k,
        mutual_per_node=mutual / L,
        in_deg_sq_per_node=float(d @ d) / L,
        cross_rank_p=cross_p / L,
        cross_rank_q=float(d @ m) / L,
    )


def update_null_quantities(agg: NullGraphQuantities, s: GraphSummary) -> NullGraphQuantities:
    """Fold one window summary into the running means."""
    if (agg.L, agg.k) != (s.L, s.k):
        raise ValueError(f"summary (L={s.L}, k={s.k}) does not match aggregate (L={agg.L}, k={agg.k})")
    n = agg.windows_seen + 1

    def mean(old: float, new: float) -> float:
        return old + (new - old) / n

    return NullGraphQuantities(
        L=agg.L,
        k=agg.k,
        p_k=mean(agg.p_k, s.mutual_per_node),
        q_k=mean(agg.q_k, s.in_deg_sq_per_node - s.k),
        p_k1=mean(agg.p_k1, s.cross_rank_p),
        q_k1=mean(agg.q_k1, s.cross_rank_q),
        windows_seen=n,
    )


def estimate_null_quantities(history, L: int, k: int, metric: Union[str, PairMetric] = "euclidean") -> NullGraphQuantities:
    """Average the graph functionals over every length-``L`` window of ``history``."""
    history = np.asarray(history, dtype=float)
    if history.ndim == 1:
        history = history[:, None]
    if history.shape[0] < L:
        raise ValueError(f"history has {history.shape[0]} rows, need at least L = {L}")
    w = Window(L, history.shape[1], metric=metric, k=k)
    agg = NullGraphQuantities(L=L, k=k)
    for row in history:
        w.push(row)
        if w.full:
            agg = update_null_quantities(agg, summarize(w.neighbor_table()))
    return agg
