"""Synthetic streams, Monte Carlo calibration and power/delay experiments."""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Iterator, Optional, Sequence

import numpy as np
from scipy import stats as sps

from .edgestats import profile as stat_profile
from .edgestats import scan_range
from .window import Window, summarize

DISTRIBUTIONS = ("gaussian", "lognormal")
SCALE_MODES = ("full", "firstFifth")
CHUNK = 256
# per-kind increments of the rising stop level during calibration
LEVEL_STEP = {"Z": 0.1, "W": 0.1, "DIFF": 0.1, "M": 0.1, "S": 0.5}
LEVEL_START = {"Z": 1.0, "W": 1.0, "DIFF": 1.0, "M": 1.0, "S": 4.0}


@dataclass(frozen=True)
class ScenarioSpec:
    """A stream of ``length`` observations; indices ``>= tau`` are post-change."""

    d: int
    N0: int
    tau: int
    length: int
    distribution: str = "gaussian"
    delta: float = 0.0
    sigma: float = 1.0
    scale_mode: str = "full"
    seed: int = 0

    def __post_init__(self):
        if self.distribution not in DISTRIBUTIONS:
            raise ValueError(f"distribution must be one of {DISTRIBUTIONS}")
        if self.scale_mode not in SCALE_MODES:
            raise ValueError(f"scale_mode must be one of {SCALE_MODES}")
        if self.d < 1:
            raise ValueError("d must be positive")
        if self.delta < 0:
            raise ValueError("delta must be nonnegative")
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if self.tau <= self.N0:
            raise ValueError("tau must exceed N0")
        if self.length < self.N0:
            raise ValueError("length must be at least N0")

    def replicate(self, master_seed: int, run: int) -> "ScenarioSpec":
        """Copy with the seed derived from ``(master_seed, run)``."""
        seed = int(np.random.SeedSequence([master_seed, run]).generate_state(1, dtype=np.uint64)[0])
        return replace(self, seed=seed)

    def scale_vector(self) -> np.ndarray:
        s = np.ones(self.d)
        if self.scale_mode == "full":
            s[:] = self.sigma
        else:
            s[: self.d // 5] = self.sigma
        return s


def stream(spec: ScenarioSpec) -> Iterator[np.ndarray]:
    """Yield the observations of ``spec`` one at a time (indices 1, 2, ...)."""
    rng = np.random.default_rng(spec.seed)
    mu = np.full(spec.d, spec.delta / math.sqrt(spec.d))
    scale = spec.scale_vector()
    i = 1
    while i <= spec.length:
        m = min(CHUNK, spec.length - i + 1)
        z = rng.standard_normal((m, spec.d))
        idx = np.arange(i, i + m)
        post = idx >= spec.tau
        z[post] = mu + scale * z[post]
        if spec.distribution == "lognormal":
            z = np.exp(z)
        yield from z
        i += m


def generate(spec: ScenarioSpec, up_to: Optional[int] = None) -> np.ndarray:
    """First ``up_to`` observations (default: the whole stream) as an array."""
    n = spec.length if up_to is None else min(up_to, spec.length)
    out = np.empty((n, spec.d))
    for i, y in zip(range(n), stream(spec)):
        out[i] = y
    return out


@dataclass(frozen=True)
class ScanConfig:
    """Scan geometry shared by all kinds in an experiment."""

    L: int
    k: int
    n0: int
    n1: int
    N0: int
    kappa: float = 1.0
    metric: str = "euclidean"

    def __post_init__(self):
        scan_range(self.L, self.n0, self.n1)
        if self.N0 < self.L:
            raise ValueError("N0 must be at least L")


class _Run:
    """One replicate: window primed with its history plus running-max records."""

    def __init__(self, spec: ScenarioSpec, scan: ScanConfig, kinds: Sequence[str]):
        self.scan = scan
        self.kinds = tuple(kinds)
        self.source = stream(spec)
        self.window = Window(scan.L, spec.d, metric=scan.metric, k=scan.k)
        for _ in range(scan.N0):
            self.window.push(next(self.source))
        self.steps = 0
        self.exhausted = False
        self.runmax = {kd: -math.inf for kd in self.kinds}
        self.rec_steps = {kd: [] for kd in self.kinds}
        self.rec_vals = {kd: [] for kd in self.kinds}

    def advance(self) -> Optional[dict]:
        """Push one observation; returns ``{kind: (value, argmax_t)}`` or None at end of stream."""
        try:
            y = next(self.source)
        except StopIteration:
            self.exhausted = True
            return None
        w, sc = self.window, self.scan
        w.push(y)
        self.steps += 1
        table = w.neighbor_table()
        prof = stat_profile(table, summarize(table), w.newest_index, sc.n0, sc.n1, sc.kappa)
        out = {}
        for kd in self.kinds:
            try:
                v, t = prof.argmax(kd)
            except ValueError:
                v, t = math.nan, -1
            out[kd] = (v, t)
            if v > self.runmax[kd]:
                self.runmax[kd] = v
                self.rec_steps[kd].append(self.steps)
                self.rec_vals[kd].append(v)
        return out

    def first_passage(self, kind: str, b: float, cap: int) -> int:
        vals = self.rec_vals[kind]
        i = int(np.searchsorted(vals, b, side="right"))
        if i < len(vals):
            return min(self.rec_steps[kind][i], cap)
        return cap


@dataclass
class McCalibration:
    kind: str
    threshold: float
    target_arl: float
    runs: int
    mean_run_length: float
    capped_fraction: float
    reliable: bool
    stopping_times: np.ndarray = field(repr=False)

    def ks_exponential(self) -> float:
        """KS distance between the run lengths and an exponential with their mean."""
        t = np.asarray(self.stopping_times, dtype=float)
        return float(sps.kstest(t, "expon", args=(0, t.mean())).statistic)


def mc_thresholds(
    scan: ScanConfig,
    null_spec: ScenarioSpec,
    kinds: Sequence[str],
    target_arl: float,
    runs: int = 500,
    seed: int = 0,
    cap_factor: int = 10,
    rtol: float = 0.05,
) -> dict:
    """Empirical thresholds whose mean change-free run length matches ``target_arl``.

    Every replicate is simulated once; its running maxima of each statistic
    are recorded so the stopping time at any level below the current stop
    level is known exactly.  Stop levels rise until the mean run length at
    the level exceeds the target, then ``b`` is bisected on the records.
    """
    if runs < 100:
        raise ValueError("runs must be at least 100")
    cap = int(cap_factor * target_arl)
    length = scan.N0 + cap
    base = replace(null_spec, tau=length + 1, length=length, delta=0.0, sigma=1.0)
    reps = [_Run(base.replicate(seed, r), scan, kinds) for r in range(runs)]

    def mean_T(kind: str, b: float) -> float:
        return float(np.mean([r.first_passage(kind, b, cap) for r in reps]))

    out = {}
    for kind in kinds:
        level = LEVEL_START.get(kind, 1.0)
        while True:
            for r in reps:
                while r.runmax[kind] <= level and r.steps < cap and not r.exhausted:
                    r.advance()
            if mean_T(kind, level) >= target_arl or all(r.steps >= cap or r.exhausted for r in reps):
                break
            level += LEVEL_STEP.get(kind, 0.1)
        # smallest b whose mean run length reaches the target (a step function of b)
        lo, hi = 0.0, level
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            if mean_T(kind, mid) < target_arl:
                lo = mid
            else:
                hi = mid
        b = hi
        T = np.array([r.first_passage(kind, b, cap) for r in reps])
        capped = float(np.mean(T >= cap))
        out[kind] = McCalibration(
            kind=kind,
            threshold=b,
            target_arl=target_arl,
            runs=runs,
            mean_run_length=float(T.mean()),
            capped_fraction=capped,
            reliable=bool(capped <= 0.2 and abs(T.mean() - target_arl) <= rtol * target_arl),
            stopping_times=T,
        )
    return out


@dataclass
class KindResult:
    kind: str
    threshold: float
    power1: float
    power2: float
    false_alarms: int
    delays: np.ndarray = field(repr=False)
    alarm_steps: np.ndarray = field(repr=False)


@dataclass
class ExperimentResult:
    spec: ScenarioSpec
    scan: ScanConfig
    runs: int
    seed: int
    kinds: dict

    def rows(self) -> list[dict]:
        return [
            {
                "kind": kd,
                "d": self.spec.d,
                "delta": self.spec.delta,
                "sigma": self.spec.sigma,
                "threshold": r.threshold,
                "power1": r.power1,
                "power2": r.power2,
                "false_alarms": r.false_alarms,
            }
            for kd, r in self.kinds.items()
        ]


def _one_run(args) -> dict:
    spec, scan, thresholds = args
    run = _Run(spec, scan, tuple(thresholds))
    alarm = {}
    while len(alarm) < len(thresholds):
        vals = run.advance()
        if vals is None:
            break
        n = run.window.newest_index
        for kd, (v, _) in vals.items():
            if kd not in alarm and v > thresholds[kd]:
                alarm[kd] = n
    return alarm


def power_experiment(
    spec: ScenarioSpec,
    scan: ScanConfig,
    thresholds: dict,
    runs: int = 200,
    seed: int = 0,
    workers: int = 1,
) -> ExperimentResult:
    """Alarm times of every kind on ``runs`` replicates of ``spec``.

    ``power1``/``power2`` count runs alarming before ``tau + 100`` / ``tau + 50``
    (false alarms included, so the change-free rate is the false-alarm rate);
    delays ``n - tau`` are kept for alarms at ``n >= tau`` and are ``inf``
    when the stream ends first.
    """
    if not thresholds:
        raise ValueError("thresholds required")
    if spec.N0 != scan.N0:
        raise ValueError("scenario N0 and scan N0 differ")
    jobs = [(spec.replicate(seed, r), scan, dict(thresholds)) for r in range(runs)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            alarms = list(ex.map(_one_run, jobs, chunksize=max(1, runs // (4 * workers))))
    else:
        alarms = [_one_run(j) for j in jobs]
    tau = spec.tau
    res = {}
    for kd, b in thresholds.items():
        n = np.array([a.get(kd, -1) for a in alarms])
        fired = n >= 0
        delays = np.where(fired & (n >= tau), n - tau, np.inf).astype(float)
        delays = np.where(fired & (n < tau), np.nan, delays)
        res[kd] = KindResult(
            kind=kd,
            threshold=float(b),
            power1=float(np.mean(fired & (n < tau + 100))),
            power2=float(np.mean(fired & (n < tau + 50))),
            false_alarms=int(np.sum(fired & (n < tau))),
            delays=delays[~np.isnan(delays)],
            alarm_steps=n,
        )
    return ExperimentResult(spec=spec, scan=scan, runs=runs, seed=seed, kinds=res)


def binomial_se(p: float, runs: int) -> float:
    return math.sqrt(max(p * (1 - p), 1e-12) / runs)
