"""Shared helpers for the test suite."""

import numpy as np

from nnchange.edgestats import profile
from nnchange.window import NeighborTable, Window, build_neighbor_table, summarize

ACCEPTANCE = []


def record(criterion: int, name: str, passed: bool, detail: str) -> None:
    ACCEPTANCE.append((criterion, name, bool(passed), detail))


def random_table(rng, L: int, k: int) -> NeighborTable:
    """Abstract k+1 neighbour lists drawn uniformly without replacement."""
    ranks = np.empty((L, k + 1), dtype=np.intp)
    for i in range(L):
        others = np.delete(np.arange(L), i)
        ranks[i] = rng.choice(others, size=k + 1, replace=False)
    return NeighborTable.from_ranks(ranks, k)


def window_of(points, k=None, metric="euclidean") -> Window:
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    w = Window(pts.shape[0], pts.shape[1], metric=metric, k=k)
    for p in pts:
        w.push(p)
    return w


def cycle_table(L: int) -> NeighborTable:
    """Directed cycle i -> i+1 (rank 1) and i -> i+2 (rank 2): every in-degree is 1."""
    i = np.arange(L)
    return NeighborTable.from_ranks(np.stack([(i + 1) % L, (i + 2) % L], axis=1), 1)


def offline_trace(history, stream, c):
    """Scan maxima recomputed from scratch for every monitored window."""
    data = np.vstack([history, stream])
    out = []
    for j in range(len(stream)):
        n = c.N0 + j + 1
        w = Window(c.L, c.dim, first_index=n - c.L + 1)
        for y in data[n - c.L : n]:
            w.push(y)
        t = build_neighbor_table(w, c.k)
        prof = profile(t, summarize(t), n, c.n0, c.n1, c.kappa)
        out.append(prof.argmax(c.kind))
    return out


def shifted_stream(seed, n, dim, at, shift):
    rng = np.random.default_rng(seed)
    s = rng.normal(size=(n, dim))
    s[at:] += shift
    return s
