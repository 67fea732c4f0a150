"""Online stopping rule built on the window graph and scan statistics."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional

import numpy as np

from .arl import ArlRequest, GInputs, SkewTables, skew_tables_from_history, solve_threshold
from .edgestats import scan_range
from .edgestats import profile as stat_profile
from .window import NullGraphQuantities, Window, summarize, update_null_quantities

DETECTOR_KINDS = ("Z", "S", "W", "M")
CALIBRATIONS = ("analytic", "analytic-skew", "montecarlo", "fixed")


class DetectorError(RuntimeError):
    pass


@dataclass(frozen=True)
class DetectorConfig:
    """Parameters of one stopping rule.

    Exactly one of ``threshold`` and ``target_arl`` is given: ``fixed`` needs a
    threshold, the other calibrations a target ARL.
    """

    k: int
    L: int
    n0: int
    n1: int
    N0: int
    dim: int
    kind: str = "M"
    kappa: float = 1.0
    threshold: Optional[float] = None
    target_arl: Optional[float] = None
    calibration: str = "fixed"
    update_quantities: bool = True
    metric: str = "euclidean"
    resolve_every: Optional[int] = None
    skew_B: int = 20000
    seed: int = 0

    def __post_init__(self):
        if self.kind not in DETECTOR_KINDS:
            raise ValueError(f"kind must be one of {DETECTOR_KINDS}")
        if self.calibration not in CALIBRATIONS:
            raise ValueError(f"calibration must be one of {CALIBRATIONS}")
        if self.k < 1 or self.dim < 1:
            raise ValueError("k and dim must be positive")
        if self.L < self.k + 2:
            raise ValueError(f"L = {self.L} < k + 2")
        if self.N0 < self.L:
            raise ValueError(f"N0 = {self.N0} must be at least L = {self.L}")
        scan_range(self.L, self.n0, self.n1)
        if self.kappa < 0:
            raise ValueError("kappa must be nonnegative")
        if (self.threshold is None) == (self.target_arl is None):
            raise ValueError("give exactly one of threshold and target_arl")
        if self.calibration == "fixed":
            if self.threshold is None:
                raise ValueError("calibration 'fixed' needs a threshold")
            if not self.threshold > 0:
                raise ValueError("threshold must be positive")
        else:
            if self.target_arl is None or not self.target_arl > 0:
                raise ValueError(f"calibration {self.calibration!r} needs a positive target_arl")
        if self.kind == "S" and self.calibration == "analytic-skew":
            raise ValueError("skewness correction is not available for S")
        if self.kind == "Z" and self.calibration.startswith("analytic"):
            raise ValueError("Z has no analytic ARL; use fixed or montecarlo")
        if self.resolve_every is not None and self.resolve_every < 1:
            raise ValueError("resolve_every must be positive")


@dataclass(frozen=True)
class AlarmEvent:
    stopping_time: int
    global_n: int
    change_estimate: int
    statistic_value: float
    threshold: float
    kind: str

    def to_dict(self) -> dict:
        return {
            "stoppingTime": self.stopping_time,
            "globalN": self.global_n,
            "changeEstimate": self.change_estimate,
            "statisticValue": self.statistic_value,
            "threshold": self.threshold,
            "kind": self.kind,
        }


@dataclass(frozen=True)
class TraceRow:
    n: int
    max_value: float
    argmax_t: int


def arl_request(cfg: DetectorConfig, quantities: NullGraphQuantities, skew: Optional[SkewTables]) -> ArlRequest:
    return ArlRequest(
        kind=cfg.kind,
        L=cfg.L,
        n0=cfg.n0,
        n1=cfg.n1,
        g=GInputs.from_quantities(quantities),
        kappa=cfg.kappa,
        skew=skew,
    )


@dataclass
class Detector:
    """Stateful detector; build with :meth:`from_history`."""

    config: DetectorConfig
    window: Window
    quantities: NullGraphQuantities
    threshold: Optional[float]
    skew: Optional[SkewTables] = None
    stopped: bool = False
    keep_trace: bool = False
    trace: list = field(default_factory=list)
    alarm: Optional[AlarmEvent] = None

    @classmethod
    def from_history(cls, history, config: DetectorConfig, keep_trace: bool = False) -> "Detector":
        cfg = config
        hist = np.asarray(history, dtype=float)
        if hist.ndim == 1:
            hist = hist[:, None]
        if hist.shape[0] != cfg.N0:
            raise ValueError(f"history has {hist.shape[0]} rows, config says N0 = {cfg.N0}")
        if hist.shape[1] != cfg.dim:
            raise ValueError(f"dimension mismatch: expected {cfg.dim}, got {hist.shape[1]}")
        w = Window(cfg.L, cfg.dim, metric=cfg.metric, k=cfg.k)
        agg = NullGraphQuantities(L=cfg.L, k=cfg.k)
        for row in hist:
            w.push(row)
            if w.full:
                agg = update_null_quantities(agg, summarize(w.neighbor_table()))
        skew = None
        if cfg.calibration == "analytic-skew":
            skew = skew_tables_from_history(
                hist, cfg.L, cfg.k, cfg.n0, cfg.n1, metric=cfg.metric, B=cfg.skew_B, seed=cfg.seed
            )
        det = cls(config=cfg, window=w, quantities=agg, threshold=cfg.threshold, skew=skew, keep_trace=keep_trace)
        if cfg.calibration.startswith("analytic"):
            det.threshold = det.solve_threshold()
        return det

    @property
    def n(self) -> int:
        """Global index of the newest observation."""
        return self.window.newest_index

    def solve_threshold(self) -> float:
        cfg = self.config
        req = arl_request(cfg, self.quantities, self.skew)
        return solve_threshold(cfg.target_arl, req, skew=cfg.calibration == "analytic-skew")

    def set_threshold(self, b: float) -> None:
        if not b > 0:
            raise ValueError("threshold must be positive")
        self.threshold = float(b)

    def evaluate(self) -> tuple[float, int]:
        """Scan maximum of the configured statistic on the current window.

        Returns ``(nan, -1)`` when the statistic is undefined at every split.
        """
        table = self.window.neighbor_table()
        return self._scan(table, summarize(table))

    def _scan(self, table, summary) -> tuple[float, int]:
        cfg = self.config
        prof = stat_profile(table, summary, self.n, cfg.n0, cfg.n1, cfg.kappa)
        try:
            return prof.argmax(cfg.kind)
        except ValueError:
            return math.nan, -1

    def step(self, y) -> Optional[AlarmEvent]:
        if self.stopped:
            raise DetectorError("detector already stopped")
        if self.threshold is None:
            raise DetectorError("threshold not set; calibrate first")
        cfg = self.config
        self.window.push(y)
        table = self.window.neighbor_table()
        summary = summarize(table)
        value, t_hat = self._scan(table, summary)
        if self.keep_trace:
            self.trace.append(TraceRow(self.n, value, t_hat))
        if value > self.threshold:
            self.stopped = True
            self.alarm = AlarmEvent(
                stopping_time=self.n - cfg.N0,
                global_n=self.n,
                change_estimate=t_hat,
                statistic_value=value,
                threshold=self.threshold,
                kind=cfg.kind,
            )
            return self.alarm
        if cfg.update_quantities:
            self.quantities = update_null_quantities(self.quantities, summary)
            steps = self.n - cfg.N0
            if cfg.resolve_every and cfg.calibration.startswith("analytic") and steps % cfg.resolve_every == 0:
                self.threshold = self.solve_threshold()
        return None

    def run(self, source: Iterable, max_steps: Optional[int] = None) -> Optional[AlarmEvent]:
        """Feed observations until an alarm, the end of ``source`` or ``max_steps``."""
        for i, y in enumerate(source):
            if max_steps is not None and i >= max_steps:
                break
            ev = self.step(y)
            if ev is not None:
                return ev
        return None


def with_threshold(config: DetectorConfig, b: float) -> DetectorConfig:
    """Copy of ``config`` switched to a fixed threshold ``b``."""
    return replace(config, threshold=float(b), target_arl=None, calibration="fixed")
