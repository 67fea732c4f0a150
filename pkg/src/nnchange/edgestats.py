"""Edge counts, permutation-null moments and scan statistics on a k-NN window.

Split sizes are expressed through ``x = t - (n - L)``, the number of window
observations in sample 1 (the ``x`` oldest positions).  All moment and
statistic functions broadcast over ``x`` so a whole scan range is evaluated
in one call.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional, Union

import numpy as np

from .window import GraphSummary, NeighborTable

KINDS = ("Z", "S", "W", "DIFF", "M")

# variances at or below this are treated as zero (statistic unavailable)
VARIANCE_FLOOR = 1e-9
# S is skipped when det(Sigma) < SINGULAR_RTOL * sigma11 * sigma22
SINGULAR_RTOL = 1e-12

ArrayLike = Union[int, float, np.ndarray]


@dataclass(frozen=True)
class SplitContext:
    n: int
    L: int
    t: int

    def __post_init__(self):
        if not (self.n - self.L + 1 <= self.t < self.n):
            raise ValueError(f"t={self.t} outside [{self.n - self.L + 1}, {self.n - 1}]")

    @property
    def x(self) -> int:
        return self.t - (self.n - self.L)

    @property
    def complement(self) -> int:
        return self.n - self.t


@dataclass(frozen=True)
class EdgeCounts:
    r0: ArrayLike
    r1: ArrayLike
    r2: ArrayLike
    rw: ArrayLike
    rdiff: ArrayLike


@dataclass(frozen=True)
class NullMoments:
    eR1: ArrayLike
    eR2: ArrayLike
    sigma11: ArrayLike
    sigma22: ArrayLike
    sigma12: ArrayLike
    eRw: ArrayLike
    varRw: ArrayLike
    eRdiff: ArrayLike
    varRdiff: ArrayLike
    detSigma: ArrayLike
    total: int

    @property
    def eR0(self):
        return self.total - self.eR1 - self.eR2

    @property
    def varR0(self):
        return self.sigma11 + self.sigma22 + 2 * self.sigma12


@dataclass(frozen=True)
class Statistics:
    z: ArrayLike
    zw: ArrayLike
    zdiff: ArrayLike
    s: ArrayLike
    m: ArrayLike

    def get(self, kind: str) -> ArrayLike:
        return {"Z": self.z, "W": self.zw, "DIFF": np.abs(self.zdiff), "S": self.s, "M": self.m}[kind]


@dataclass(frozen=True)
class StatProfile:
    """Statistics over a scan range; ``t`` holds the global split indices."""

    t: np.ndarray
    x: np.ndarray
    counts: EdgeCounts
    moments: NullMoments
    stats: Statistics

    def argmax(self, kind: str) -> tuple[float, int]:
        vals = np.asarray(self.stats.get(kind), dtype=float)
        if vals.size == 0:
            raise ValueError("empty scan range")
        if np.all(np.isnan(vals)):
            raise ValueError(f"all t degenerate for statistic {kind}")
        i = int(np.nanargmax(vals))
        return float(vals[i]), int(self.t[i])


@dataclass(frozen=True)
class PermMomentEstimate:
    mean: float
    variance: float
    third_central: float
    gamma: float
    source: str
    stderr: Optional[float] = None


def _weights(L: int, x: ArrayLike) -> tuple[ArrayLike, ArrayLike]:
    p = (x - 1) / (L - 2)
    return p, 1 - p


def weights(L: int, x: ArrayLike) -> tuple[ArrayLike, ArrayLike]:
    """Return ``(p, q)``: the R2 and R1 weights of the weighted edge count."""
    x = np.asarray(x, dtype=float) if not np.isscalar(x) else float(x)
    return _weights(L, x)


def edge_count_profile(table: NeighborTable) -> tuple[np.ndarray, np.ndarray]:
    """``(r1, r2)`` for every split size ``x = 0..L`` (arrays of length L+1)."""
    L, k = table.L, table.k
    src, dst = table.edges()
    hi = np.maximum(src, dst)
    lo = np.minimum(src, dst)
    below = np.concatenate([[0], np.cumsum(np.bincount(hi, minlength=L))])
    lo_cum = np.concatenate([[0], np.cumsum(np.bincount(lo, minlength=L))])
    r1 = 2 * below
    r2 = 2 * (L * k - lo_cum)
    return r1, r2


def _counts_from(r1, r2, L: int, k: int, x) -> EdgeCounts:
    p, q = weights(L, x)
    return EdgeCounts(r0=2 * L * k - r1 - r2, r1=r1, r2=r2, rw=q * r1 + p * r2, rdiff=r1 - r2)


def edge_counts(table: NeighborTable, ctx: SplitContext) -> EdgeCounts:
    if ctx.L != table.L:
        raise ValueError("context L does not match the table")
    r1, r2 = edge_count_profile(table)
    x = ctx.x
    return _counts_from(int(r1[x]), int(r2[x]), table.L, table.k, x)


def moments_from(L: int, k: int, mutual: float, indeg_sq: float, x: ArrayLike) -> NullMoments:
    """Permutation-null moments given the two graph functionals.

    ``mutual`` is (1/L) sum a+_ij a+_ji and ``indeg_sq`` is (1/L) sum_i d_i^2.
    """
    if L < 4:
        raise ValueError("null moments need L >= 4")
    x = np.asarray(x, dtype=float) if not np.isscalar(x) else float(x)
    P, Q = mutual, indeg_sq
    y = L - x
    den = (L - 1) * (L - 2) * (L - 3)
    c = k * k * (L - 3) / (L - 1)
    eR1 = 2 * k * x * (x - 1) / (L - 1)
    eR2 = 2 * k * y * (y - 1) / (L - 1)
    s11 = 4 * x * (x - 1) * y / den * ((y - 1) * (k + P) + (x - 2) * Q - c * x)
    s22 = 4 * x * y * (y - 1) / den * ((x - 1) * (k + P) + (y - 2) * Q - c * y)
    s12 = 4 * x * (x - 1) * y * (y - 1) / den * (c + k + P - Q)
    eRw = 2 * k * L * (x - 1) * (y - 1) / ((L - 1) * (L - 2))
    varRw = 4 * x * (x - 1) * y * (y - 1) / den * (k + P - (Q + c) / (L - 2))
    eRdiff = 2 * k * (2 * x - L)
    varRdiff = 4 * x * y / (L - 1) * (Q - k * k)
    det = (
        16 * x**2 * (x - 1) * y**2 * (y - 1) * (Q - k * k)
        / ((L - 1) ** 3 * (L - 2) ** 2 * (L - 3))
        * ((L - 1) * (L - 2) * (k + P) - (L - 1) * Q - k * k * (L - 3))
    )
    return NullMoments(eR1, eR2, s11, s22, s12, eRw, varRw, eRdiff, varRdiff, det, 2 * L * k)


def null_moments(summary: GraphSummary, x: ArrayLike) -> NullMoments:
    """Null moments at split size(s) ``x``; requires ``2 <= x <= L-2``."""
    L = summary.L
    xa = np.asarray(x)
    if np.any(xa < 2) or np.any(xa > L - 2):
        raise ValueError(f"split size outside [2, {L - 2}]")
    return moments_from(L, summary.k, summary.mutual_per_node, summary.in_deg_sq_per_node, x)


def _safe_div(num, var):
    var = np.asarray(var, dtype=float)
    ok = var > VARIANCE_FLOOR
    out = np.full(np.broadcast(num, var).shape, np.nan)
    np.divide(num, np.sqrt(np.where(ok, var, 1.0)), out=out, where=ok)
    return out


def statistics(counts: EdgeCounts, moments: NullMoments, kappa: float = 1.0) -> Statistics:
    """Standardised statistics; unavailable values are NaN."""
    if kappa < 0:
        raise ValueError("kappa must be nonnegative")
    mo = moments
    z = _safe_div(mo.eR0 - np.asarray(counts.r0, dtype=float), mo.varR0)
    zw = _safe_div(counts.rw - mo.eRw, mo.varRw)
    zdiff = _safe_div(counts.rdiff - mo.eRdiff, mo.varRdiff)
    u = np.asarray(counts.r1 - mo.eR1, dtype=float)
    v = np.asarray(counts.r2 - mo.eR2, dtype=float)
    a, b, c = (np.asarray(t, dtype=float) for t in (mo.sigma11, mo.sigma22, mo.sigma12))
    det = a * b - c * c
    ok = (det > SINGULAR_RTOL * a * b) & (a > VARIANCE_FLOOR) & (b > VARIANCE_FLOOR)
    s = np.full(np.broadcast(u, det).shape, np.nan)
    np.divide(b * u * u - 2 * c * u * v + a * v * v, np.where(ok, det, 1.0), out=s, where=ok)
    if kappa == 0:
        m = np.abs(zdiff)
    else:
        m = np.maximum(np.abs(zdiff), kappa * zw)
    if np.ndim(z) == 0:
        z, zw, zdiff, s, m = (float(a_) for a_ in (z, zw, zdiff, s, m))
    return Statistics(z=z, zw=zw, zdiff=zdiff, s=s, m=m)


def scan_range(L: int, n0: int, n1: int) -> np.ndarray:
    """Sample-1 sizes ``x`` covered by t in [n - n1, n - n0], ascending in t."""
    if not (n0 >= 2 and n1 <= L - 2 and n0 < n1):
        raise ValueError(f"need 2 <= n0 < n1 <= L-2, got n0={n0}, n1={n1}, L={L}")
    return np.arange(L - n1, L - n0 + 1)


def profile(
    table: NeighborTable,
    summary: GraphSummary,
    n: int,
    n0: int,
    n1: int,
    kappa: float = 1.0,
) -> StatProfile:
    L = table.L
    xs = scan_range(L, n0, n1)
    r1, r2 = edge_count_profile(table)
    counts = _counts_from(r1[xs], r2[xs], L, table.k, xs)
    mo = null_moments(summary, xs)
    return StatProfile(t=n - L + xs, x=xs, counts=counts, moments=mo, stats=statistics(counts, mo, kappa))


def scan_max(
    table: NeighborTable,
    summary: GraphSummary,
    n: int,
    n0: int,
    n1: int,
    kappa: float = 1.0,
    kind: str = "M",
) -> tuple[float, int]:
    """Max of statistic ``kind`` over t in [n-n1, n-n0]; ties go to the smaller t."""
    if kind not in KINDS:
        raise ValueError(f"unknown statistic kind {kind!r}")
    return profile(table, summary, n, n0, n1, kappa).argmax(kind)


# ---------------------------------------------------------------------------
# permutation oracles
# ---------------------------------------------------------------------------

EXACT_MAX_L = 9


def _all_positions(L: int) -> np.ndarray:
    """Row p gives the window position assigned to each node under permutation p."""
    return np.array(list(itertools.permutations(range(L))), dtype=np.int8)


def _joint_counts(table: NeighborTable, x: int, positions: np.ndarray):
    src, dst = table.edges()
    ps, pd = positions[:, src], positions[:, dst]
    r1 = 2 * ((ps < x) & (pd < x)).sum(axis=1)
    r2 = 2 * ((ps >= x) & (pd >= x)).sum(axis=1)
    pairs, freq = np.unique(np.stack([r1, r2], axis=1), axis=0, return_counts=True)
    return [(int(a), int(b), int(f)) for (a, b), f in zip(pairs, freq)]


def _check_exact(table: NeighborTable, x: int) -> None:
    if table.L > EXACT_MAX_L:
        raise ValueError(f"exact enumeration limited to L <= {EXACT_MAX_L}")
    if not 1 <= x <= table.L - 1:
        raise ValueError("split size outside [1, L-1]")


def exact_null_moments(table: NeighborTable, x: int) -> NullMoments:
    """Moments of (R1, R2) by enumerating all L! label permutations (exact rationals)."""
    _check_exact(table, x)
    L, k = table.L, table.k
    joint = _joint_counts(table, x, _all_positions(L))
    total = sum(f for _, _, f in joint)
    E = lambda fn: sum(Fraction(fn(a, b) * f) for a, b, f in joint) / total  # noqa: E731
    e1, e2 = E(lambda a, b: a), E(lambda a, b: b)
    s11 = E(lambda a, b: a * a) - e1 * e1
    s22 = E(lambda a, b: b * b) - e2 * e2
    s12 = E(lambda a, b: a * b) - e1 * e2
    p = Fraction(x - 1, L - 2)
    q = 1 - p
    return NullMoments(
        eR1=float(e1),
        eR2=float(e2),
        sigma11=float(s11),
        sigma22=float(s22),
        sigma12=float(s12),
        eRw=float(q * e1 + p * e2),
        varRw=float(q * q * s11 + p * p * s22 + 2 * p * q * s12),
        eRdiff=float(e1 - e2),
        varRdiff=float(s11 + s22 - 2 * s12),
        detSigma=float(s11 * s22 - s12 * s12),
        total=2 * L * k,
    )


def exact_permutation_moments(table: NeighborTable, x: int, kind: str = "W") -> PermMomentEstimate:
    """Exact mean, variance and third central moment of one edge count.

    ``kind`` is one of ``R0``, ``R1``, ``R2``, ``W`` (weighted) or ``DIFF``.
    """
    _check_exact(table, x)
    L, k = table.L, table.k
    p = Fraction(x - 1, L - 2)
    q = 1 - p
    fns = {
        "R0": lambda a, b: Fraction(2 * L * k - a - b),
        "R1": lambda a, b: Fraction(a),
        "R2": lambda a, b: Fraction(b),
        "W": lambda a, b: q * a + p * b,
        "DIFF": lambda a, b: Fraction(a - b),
    }
    if kind not in fns:
        raise ValueError(f"unknown count kind {kind!r}")
    fn = fns[kind]
    joint = _joint_counts(table, x, _all_positions(L))
    total = sum(f for _, _, f in joint)
    vals = [(fn(a, b), f) for a, b, f in joint]
    mean = sum(v * f for v, f in vals) / total
    var = sum((v - mean) ** 2 * f for v, f in vals) / total
    third = sum((v - mean) ** 3 * f for v, f in vals) / total
    gamma = float(third) / float(var) ** 1.5 if var > 0 else math.nan
    return PermMomentEstimate(float(mean), float(var), float(third), gamma, "exact")


@dataclass(frozen=True)
class SampledSkew:
    """Permutation estimates of E(Z_w^3) and E(Z_diff^3) per split size."""

    x: np.ndarray
    gamma_w: np.ndarray
    gamma_diff: np.ndarray
    se_w: np.ndarray
    se_diff: np.ndarray
    B: int
    seed: int


SKEW_CHUNK = 2000


def sampled_third_moments(
    table: NeighborTable,
    summary: GraphSummary,
    xs,
    B: int = 20000,
    seed: int = 0,
) -> SampledSkew:
    """Monte Carlo permutation estimates of the standardised third moments.

    Each sampled permutation gives R1/R2 at every split at once through
    cumulative counts of edge-endpoint positions.  Chunks draw from seeds
    spawned off ``seed``, so the output depends only on ``(seed, B)``.
    """
    if B < 100:
        raise ValueError("B must be at least 100")
    L, k = table.L, table.k
    xs = np.asarray(xs, dtype=np.intp)
    mo = null_moments(summary, xs)
    p, q = weights(L, xs)
    sd_w = np.sqrt(np.where(mo.varRw > VARIANCE_FLOOR, mo.varRw, np.nan))
    sd_d = np.sqrt(np.where(mo.varRdiff > VARIANCE_FLOOR, mo.varRdiff, np.nan))
    src, dst = table.edges()
    n_chunks = -(-B // SKEW_CHUNK)
    seqs = np.random.SeedSequence(seed).spawn(n_chunks)
    acc = np.zeros((4, xs.size))
    base = np.arange(L)
    for c, ss in enumerate(seqs):
        m = min(SKEW_CHUNK, B - c * SKEW_CHUNK)
        rng = np.random.default_rng(ss)
        pos = rng.permuted(np.broadcast_to(base, (m, L)), axis=1)
        ps, pd = pos[:, src], pos[:, dst]
        hi = np.maximum(ps, pd)
        lo = np.minimum(ps, pd)
        offs = (np.arange(m) * L)[:, None]
        hist_hi = np.bincount((hi + offs).ravel(), minlength=m * L).reshape(m, L)
        hist_lo = np.bincount((lo + offs).ravel(), minlength=m * L).reshape(m, L)
        cum_hi = np.cumsum(hist_hi, axis=1)
        cum_lo = np.cumsum(hist_lo, axis=1)
        r1 = 2 * cum_hi[:, xs - 1]
        r2 = 2 * (L * k - cum_lo[:, xs - 1])
        zw3 = ((q * r1 + p * r2 - mo.eRw) / sd_w) ** 3
        zd3 = ((r1 - r2 - mo.eRdiff) / sd_d) ** 3
        acc[0] += zw3.sum(axis=0)
        acc[1] += (zw3 * zw3).sum(axis=0)
        acc[2] += zd3.sum(axis=0)
        acc[3] += (zd3 * zd3).sum(axis=0)
    gw, gd = acc[0] / B, acc[2] / B
    se_w = np.sqrt(np.maximum(acc[1] / B - gw * gw, 0) / B)
    se_d = np.sqrt(np.maximum(acc[3] / B - gd * gd, 0) / B)
    return SampledSkew(x=xs, gamma_w=gw, gamma_diff=gd, se_w=se_w, se_diff=se_d, B=B, seed=seed)


def central_to_gamma(raw3: float, mean: float, var: float) -> float:
    """E(Z^3) from the raw third moment E(R^3) and exact mean/variance."""
    return (raw3 - 3 * mean * var - mean**3) / var**1.5
