"""Average-run-length approximations and threshold solving.

The integration variable ``u`` is the post-split fraction ``(n - t) / L`` of
the window, running over ``[n0/L, n1/L]``.  Skewness tables are keyed by the
sample-1 size ``x = t - (n - L) = L (1 - u)``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.stats import norm

from .edgestats import sampled_third_moments, scan_range
from .window import NullGraphQuantities, Window, summarize

ARL_KINDS = ("S", "W", "DIFF", "M")
G_CLAMP = 1e-6


class ArlError(RuntimeError):
    pass


def nu(x):
    """Siegmund's closed-form approximation of the overshoot function."""
    xa = np.asarray(x, dtype=float)
    if np.any(xa <= 0):
        raise ValueError("nu(x) requires x > 0")
    y = xa / 2
    small = xa < 1e-8
    ys = np.where(small, 1.0, y)
    val = (1 / ys) * (norm.cdf(ys) - 0.5) / (ys * norm.cdf(ys) + norm.pdf(ys))
    out = np.where(small, 1.0, val)
    return float(out) if np.ndim(x) == 0 else out


@dataclass(frozen=True)
class GInputs:
    k: int
    p_k: float
    q_k: float
    p_k1: float
    q_k1: float

    def __post_init__(self):
        if self.q_k - self.k**2 + self.k <= 0:
            raise ValueError("q_k - k^2 + k must be positive")
        if self.k + self.p_k <= 0:
            raise ValueError("k + p_k must be positive")

    @classmethod
    def from_quantities(cls, q: NullGraphQuantities) -> "GInputs":
        return cls(k=q.k, p_k=q.p_k, q_k=q.q_k, p_k1=q.p_k1, q_k1=q.q_k1)


@dataclass(frozen=True)
class GValues:
    gw1: np.ndarray
    gw2: np.ndarray
    gd1: np.ndarray
    gd2: np.ndarray
    clamped: int = 0


def g_functions(g: GInputs, x) -> GValues:
    """Directional derivatives of the limiting covariance functions at ``x``."""
    xa = np.asarray(x, dtype=float)
    if np.any(xa <= 0) or np.any(xa >= 1):
        raise ValueError("x must lie in (0, 1)")
    k = g.k
    base = 1 / (xa * (1 - xa))
    gw1 = base / 2
    gw2 = (10 * g.q_k - 4 * k * g.q_k1 - (6 * k * k - 10 * k)) / (2 * (g.q_k - k * k + k)) - base / 2
    gd1 = base
    gd2 = (xa * xa - xa + 1) * base + 2 * g.p_k1 / (k + g.p_k)
    bad = (gw2 <= 0) | (gd2 <= 0)
    clamped = int(np.count_nonzero(bad))
    if clamped:
        warnings.warn(f"clamped {clamped} non-positive g values to {G_CLAMP}", RuntimeWarning, stacklevel=2)
        gw2 = np.maximum(gw2, G_CLAMP)
        gd2 = np.maximum(gd2, G_CLAMP)
    return GValues(gw1, gw2, gd1, gd2, clamped)


@dataclass(frozen=True)
class ThetaTable:
    """Tilt parameters per sample-1 size, with Remark-style extrapolation."""

    x: np.ndarray
    theta: np.ndarray
    gamma: np.ndarray
    valid: np.ndarray
    slope: float
    intercept: float
    b: float

    def implied_gamma(self) -> np.ndarray:
        """Skewness consistent with ``theta`` (equals ``gamma`` on valid entries)."""
        th = self.theta
        return np.where(np.isclose(th, self.b, rtol=0, atol=1e-15), 0.0, 2 * (self.b - th) / th**2)


def theta_table(x, gammas, b: float, L: Optional[int] = None) -> ThetaTable:
    """Solve for the tilt ``theta`` at each split; extrapolate where ``1 + 2 gamma b <= 0``.

    Extrapolation is a least-squares line in the split fraction ``x / L``
    fitted on the valid entries.  ``L`` only rescales the abscissa.
    """
    if b <= 0:
        raise ValueError("b must be positive")
    xs = np.asarray(x, dtype=float)
    g = np.asarray(gammas, dtype=float)
    frac = xs / L if L else xs
    disc = 1 + 2 * g * b
    valid = (disc > 0) & np.isfinite(g)
    if not valid.any():
        raise ArlError("skewness correction undefined over the entire scan range")
    theta = np.full(g.shape, np.nan)
    gv = g[valid]
    with np.errstate(divide="ignore", invalid="ignore"):
        tv = np.where(np.abs(gv) < 1e-12, b, (-1 + np.sqrt(disc[valid])) / gv)
    theta[valid] = tv
    if valid.sum() >= 2:
        slope, intercept = np.polyfit(frac[valid], tv, 1)
    else:
        slope, intercept = 0.0, float(tv[0])
    if not valid.all():
        fill = slope * frac[~valid] + intercept
        # keep 1 + gamma*theta > 0 for the implied gamma
        theta[~valid] = np.clip(fill, 1e-3 * b, 2 * b * (1 - 1e-3))
    return ThetaTable(xs, theta, g, valid, float(slope), float(intercept), float(b))


def _k_factor(theta: np.ndarray, b: float) -> np.ndarray:
    # gamma implied by theta: gamma = 2 (b - theta) / theta^2
    return np.exp((b - theta) ** 2 / 2 + theta * (b - theta) / 3) / np.sqrt((2 * b - theta) / theta)


@dataclass(frozen=True)
class SkewTables:
    """Per-split skewness estimates over the scan range (keyed by sample-1 size)."""

    x: np.ndarray
    gamma_w: np.ndarray
    gamma_diff: np.ndarray


def skew_tables_from_history(
    history,
    L: int,
    k: int,
    n0: int,
    n1: int,
    metric="euclidean",
    B: int = 20000,
    seed: int = 0,
    windows: int = 10,
) -> SkewTables:
    """Sampled skewness averaged over the last few disjoint history windows.

    A single window's graph moves the corrected threshold by several
    hundredths, so the null skewness is estimated as the mean over up to
    ``windows`` non-overlapping windows ending at the newest observation.
    """
    history = np.asarray(history, dtype=float)
    if history.ndim == 1:
        history = history[:, None]
    N = history.shape[0]
    if N < L:
        raise ValueError(f"history has {N} rows, need at least L = {L}")
    m = max(1, min(windows, N // L))
    xs = scan_range(L, n0, n1)
    seeds = np.random.SeedSequence(seed).generate_state(m)
    gw, gd = [], []
    for j in range(m):
        w = Window(L, history.shape[1], metric=metric, k=k)
        for row in history[N - (j + 1) * L : N - j * L]:
            w.push(row)
        table = w.neighbor_table()
        sk = sampled_third_moments(table, summarize(table), xs, B=B, seed=int(seeds[j]))
        gw.append(sk.gamma_w)
        gd.append(sk.gamma_diff)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return SkewTables(xs, np.nanmean(gw, axis=0), np.nanmean(gd, axis=0))


@dataclass(frozen=True)
class ArlRequest:
    kind: str
    L: int
    n0: int
    n1: int
    g: GInputs
    kappa: float = 1.0
    skew: Optional[SkewTables] = None
    include_L: bool = True
    printed_pairing: bool = False

    def __post_init__(self):
        if self.kind not in ARL_KINDS:
            raise ValueError(f"kind must be one of {ARL_KINDS}")
        if not (2 <= self.n0 < self.n1 <= self.L - 2):
            raise ValueError("need 2 <= n0 < n1 <= L-2")
        if self.kappa < 0:
            raise ValueError("kappa must be nonnegative")


def _simpson(f: Callable[[int], float], panels: int, tol: float = 1e-6, max_panels: int = 1 << 16) -> float:
    prev = f(panels)
    while panels < max_panels:
        panels *= 2
        cur = f(panels)
        if abs(cur - prev) <= tol * abs(cur):
            return cur
        prev = cur
    raise ArlError("integral refinement did not converge")


def _simpson_weights(m: int) -> np.ndarray:
    w = np.ones(m + 1)
    w[1:-1:2] = 4
    w[2:-1:2] = 2
    return w / (3 * m)


def _theta_at(table: ThetaTable, L: int, u: np.ndarray) -> np.ndarray:
    x = L * (1 - u)
    order = np.argsort(table.x)
    return np.interp(x, table.x[order], table.theta[order])


def _pair_values(gv: GValues, pair: str, printed: bool):
    # R_diff is linear in the labels, so its split-direction decorrelation is
    # the Brownian-bridge rate 1/(2x(1-x)); the centred R_w is a degenerate
    # quadratic form and decorrelates at twice that rate.  The gw*/gd* formulas
    # are therefore paired crosswise unless the literal pairing is requested.
    if (pair == "w") == printed:
        return gv.gw1, gv.gw2
    return gv.gd1, gv.gd2


def _log_arl_1d(b: float, req: ArlRequest, pair: str, skew: bool, x_panels: int) -> float:
    L = req.L
    lo, hi = req.n0 / L, req.n1 / L
    table = None
    if skew:
        gam = req.skew.gamma_w if pair == "w" else req.skew.gamma_diff
        table = theta_table(req.skew.x, gam, b, L)

    def integral(m: int) -> float:
        u = np.linspace(lo, hi, m + 1)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            gv = g_functions(req.g, u)
        g1, g2 = _pair_values(gv, pair, req.printed_pairing)
        f = g1 * g2 * nu(np.sqrt(2 * b * b * g1 / L)) * nu(np.sqrt(2 * b * b * g2 / L))
        if table is not None:
            f = f * _k_factor(_theta_at(table, L, u), b)
        return float((hi - lo) * _simpson_weights(m) @ f)

    I = _simpson(integral, x_panels)
    log_num = 0.5 * math.log(2 * math.pi) + b * b / 2 - 3 * math.log(b)
    if req.include_L:
        log_num += math.log(L)
    if pair == "diff":
        log_num -= math.log(2)
    return log_num - math.log(I)


def _log_arl_s(b: float, req: ArlRequest, x_panels: int, w_panels: int) -> float:
    L = req.L
    lo, hi = req.n0 / L, req.n1 / L

    def integral(m: int) -> float:
        mw = w_panels * m // x_panels
        u = np.linspace(lo, hi, m + 1)
        om = np.linspace(0, 2 * np.pi, mw + 1)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            gv = g_functions(req.g, u)
        s2 = np.sin(om)[:, None] ** 2
        c2 = 1 - s2
        h1 = gv.gw1 * s2 + gv.gd1 * c2
        h2 = gv.gw2 * s2 + gv.gd2 * c2
        f = h1 * h2 * nu(np.sqrt(2 * b * h1 / L)) * nu(np.sqrt(2 * b * h2 / L))
        return float(2 * np.pi * (hi - lo) * _simpson_weights(mw) @ f @ _simpson_weights(m))

    I = _simpson(integral, x_panels)
    log_num = math.log(math.pi) + b / 2 - 2 * math.log(b)
    if req.include_L:
        log_num += math.log(L)
    return log_num - math.log(I)


def log_arl(
    b: float,
    req: ArlRequest,
    skew: bool = False,
    x_panels: int = 400,
    w_panels: int = 256,
) -> float:
    """Natural log of the approximate average run length at threshold ``b``."""
    if b <= 0:
        raise ValueError("threshold must be positive")
    if skew and req.kind == "S":
        raise ValueError("skewness correction is not supported for S")
    if skew and req.skew is None:
        raise ValueError("skewness correction needs skew tables")
    if req.kind == "S":
        return _log_arl_s(b, req, x_panels, w_panels)
    if req.kind == "W":
        return _log_arl_1d(b, req, "w", skew, x_panels)
    if req.kind == "DIFF":
        return _log_arl_1d(b, req, "diff", skew, x_panels)
    d = _log_arl_1d(b, req, "diff", skew, x_panels)
    if req.kappa == 0:
        return d
    w = _log_arl_1d(b / req.kappa, req, "w", skew, x_panels)
    # harmonic combination: 1/E_M = 1/E_diff + 1/E_w
    return d + w - np.logaddexp(d, w)


def arl(b: float, req: ArlRequest, **kw) -> float:
    """Asymptotic (uncorrected) ARL approximation."""
    return math.exp(log_arl(b, req, skew=False, **kw))


def arl_skew(b: float, req: ArlRequest, **kw) -> float:
    """Skewness-corrected ARL approximation (W, DIFF and M only)."""
    return math.exp(log_arl(b, req, skew=True, **kw))


B_MIN, B_MAX = 0.1, 100.0


def solve_threshold(
    target_arl: float,
    req: ArlRequest,
    skew: bool = False,
    rtol: float = 1e-3,
    start: Optional[float] = None,
) -> float:
    """Threshold ``b`` with ``arl(b) = target_arl`` by bracketing bisection.

    The approximations are only increasing in ``b`` past a small-``b``
    minimum, so the bracket is grown outward from ``start`` and must be
    monotone at its endpoints.
    """
    if target_arl < 10 * req.L:
        warnings.warn("target ARL below 10*L: approximation not trustworthy", RuntimeWarning, stacklevel=2)
    log_target = math.log(target_arl)
    f = lambda b: log_arl(b, req, skew=skew) - log_target  # noqa: E731
    b = start if start is not None else (20.0 if req.kind == "S" else 4.0)
    step = 2.0 if req.kind == "S" else 0.5
    fb = f(b)
    if fb < 0:
        lo, flo = b, fb
        hi = b + step
        while (fhi := f(hi)) < 0:
            if fhi < flo:
                raise ArlError("ARL not increasing in b; integration failure?")
            lo, flo = hi, fhi
            hi = hi + step
            step *= 2
            if hi > B_MAX:
                raise ArlError("no bracket found in [0.1, 100]")
    else:
        hi, fhi = b, fb
        while True:
            if hi <= B_MIN:
                raise ArlError("no bracket found in [0.1, 100]")
            lo = max(hi - step, B_MIN)
            flo = f(lo)
            if flo >= fhi:
                raise ArlError("ARL not increasing in b near the solution")
            if flo < 0:
                break
            hi, fhi = lo, flo
    tol = math.log1p(rtol)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        if abs(fm) < tol:
            return mid
        if fm < 0:
            lo = mid
        else:
            hi = mid
    raise ArlError("bisection did not converge")
