"""Benchmark suites mirroring the threshold, power and delay tables."""

from __future__ import annotations

import csv
import json
import math
import os
import time
import warnings
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from .arl import ArlRequest, GInputs, skew_tables_from_history, solve_threshold
from .simlab import ScanConfig, ScenarioSpec, mc_thresholds, power_experiment
from .window import estimate_null_quantities

SUITES = ("thresholds", "power", "delay")
SCALES = ("desk", "paper")
MC_KINDS = ("Z", "S", "W", "M")


@dataclass(frozen=True)
class ThresholdGrid:
    L: int
    ds: tuple
    ks: tuple
    n0s: tuple
    windows: int
    skew_B: int
    skew_windows: int
    target_arl: float


@dataclass(frozen=True)
class SimSetting:
    L: int
    k: int
    n0: int
    n1: int
    N0: int
    d: int
    target_arl: float
    calib_runs: int
    runs: int
    tau_offset: int
    cells: tuple  # (delta, sigma, scale_mode)


THRESHOLD_GRIDS = {
    "desk": ThresholdGrid(200, (10, 100), (1,), (25, 40), 300, 5000, 2, 10000.0),
    "paper": ThresholdGrid(200, (10, 100), (1, 5), (25, 30, 35, 40), 10000, 20000, 10, 10000.0),
}
POWER_SETTINGS = {
    "desk": SimSetting(50, 3, 5, 45, 50, 10, 500.0, 100, 100, 100, ((0.0, 1.0, "full"), (1.0, 1.0, "full"), (2.0, 1.0, "full"))),
    "paper": SimSetting(
        200, 5, 25, 175, 200, 100, 2000.0, 1000, 1000, 200,
        ((0.0, 1.0, "full"), (0.5, 0.65, "firstFifth"), (1.0, 1.0, "full"), (2.0, 1.0, "full")),
    ),
}
DELAY_SETTINGS = {
    "desk": SimSetting(50, 3, 5, 45, 50, 20, 500.0, 100, 50, 1, ((2.5, 1.0, "full"), (2.5, 0.75, "full"))),
    "paper": SimSetting(200, 5, 25, 175, 200, 100, 2000.0, 1000, 1000, 1, ((2.5, 1.0, "full"), (2.5, 0.75, "full"))),
}


def _num(v) -> str:
    if isinstance(v, float):
        return "inf" if math.isinf(v) else repr(v)
    return str(v)


def _write_csv(path: str, header: list, rows: list) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_num(r[h]) for h in header])


def threshold_suite(grid: ThresholdGrid, seed: int) -> list[dict]:
    rows = []
    for d in grid.ds:
        for k in grid.ks:
            rng = np.random.default_rng([seed, d, k])
            hist = rng.standard_normal((grid.windows + grid.L - 1, d))
            q = estimate_null_quantities(hist, grid.L, k)
            g = GInputs.from_quantities(q)
            for n0 in grid.n0s:
                n1 = grid.L - n0
                skew = skew_tables_from_history(
                    hist, grid.L, k, n0, n1, B=grid.skew_B, seed=seed, windows=grid.skew_windows
                )
                for kind in ("S", "W", "M"):
                    req = ArlRequest(kind, grid.L, n0, n1, g, skew=skew)
                    a1 = solve_threshold(grid.target_arl, req)
                    a2 = solve_threshold(grid.target_arl, req, skew=True) if kind != "S" else math.nan
                    rows.append({"kind": kind, "d": d, "k": k, "n0": n0, "A1": round(a1, 4), "A2": round(a2, 4)})
    return rows


def _calibrate(s: SimSetting, seed: int) -> tuple[ScanConfig, dict]:
    scan = ScanConfig(L=s.L, k=s.k, n0=s.n0, n1=s.n1, N0=s.N0)
    null = ScenarioSpec(d=s.d, N0=s.N0, tau=s.N0 + 1, length=s.N0 + 1)
    cal = mc_thresholds(scan, null, MC_KINDS, s.target_arl, runs=s.calib_runs, seed=seed)
    return scan, cal


def power_suite(s: SimSetting, seed: int, workers: int = 1) -> tuple[list[dict], dict]:
    scan, cal = _calibrate(s, seed)
    b = {kd: c.threshold for kd, c in cal.items()}
    rows = []
    tau = s.N0 + s.tau_offset
    for i, (delta, sigma, mode) in enumerate(s.cells):
        spec = ScenarioSpec(d=s.d, N0=s.N0, tau=tau, length=tau + 99, delta=delta, sigma=sigma, scale_mode=mode)
        res = power_experiment(spec, scan, b, runs=s.runs, seed=seed + 1 + i, workers=workers)
        for r in res.rows():
            r["scale_mode"] = mode
            rows.append(r)
    return rows, cal


def delay_suite(s: SimSetting, seed: int, workers: int = 1) -> tuple[list[dict], dict]:
    scan, cal = _calibrate(s, seed)
    b = {kd: c.threshold for kd, c in cal.items()}
    tau = s.N0 + s.tau_offset
    rows = []
    for i, (delta, sigma, mode) in enumerate(s.cells):
        spec = ScenarioSpec(
            d=s.d, N0=s.N0, tau=tau, length=tau + 10 * int(s.target_arl), delta=delta, sigma=sigma, scale_mode=mode
        )
        res = power_experiment(spec, scan, b, runs=s.runs, seed=seed + 1 + i, workers=workers)
        for kd, kr in res.kinds.items():
            for run, n in enumerate(kr.alarm_steps):
                delay = float(n - tau) if n >= tau else (math.inf if n < 0 else math.nan)
                rows.append({"scenario": i + 1, "delta": delta, "sigma": sigma, "kind": kd, "run": run, "delay": delay})
    return rows, cal


def run_suite(
    suite: str,
    scale: str,
    out_dir: str,
    seed: int = 0,
    runs: Optional[int] = None,
    target_arl: Optional[float] = None,
    workers: int = 1,
) -> dict:
    """Run one suite and write its CSV tables, METADATA.json and TIMING.json."""
    if suite not in SUITES:
        raise ValueError(f"unknown suite {suite!r}; choose from {SUITES}")
    if scale not in SCALES:
        raise ValueError(f"unknown scale {scale!r}; choose from {SCALES}")
    os.makedirs(out_dir, exist_ok=True)
    start = time.perf_counter()
    meta = {"suite": suite, "scale": scale, "seed": seed}
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        if suite == "thresholds":
            grid = THRESHOLD_GRIDS[scale]
            if target_arl is not None:
                grid = ThresholdGrid(**{**asdict(grid), "target_arl": float(target_arl)})
            rows = threshold_suite(grid, seed)
            _write_csv(os.path.join(out_dir, "thresholds.csv"), ["kind", "d", "k", "n0", "A1", "A2"], rows)
            meta["setting"] = asdict(grid)
        else:
            base = (POWER_SETTINGS if suite == "power" else DELAY_SETTINGS)[scale]
            over = {}
            if runs is not None:
                over.update(runs=runs, calib_runs=max(100, runs))
            if target_arl is not None:
                over["target_arl"] = float(target_arl)
            s = SimSetting(**{**asdict(base), **over})
            if suite == "power":
                rows, cal = power_suite(s, seed, workers)
                _write_csv(os.path.join(out_dir, "power.csv"), ["kind", "d", "delta", "sigma", "power1", "power2"], rows)
                header = ["kind", "d", "delta", "sigma", "scale_mode", "threshold", "power1", "power2", "false_alarms"]
                _write_csv(os.path.join(out_dir, "power_detail.csv"), header, rows)
            else:
                rows, cal = delay_suite(s, seed, workers)
                header = ["scenario", "delta", "sigma", "kind", "run", "delay"]
                _write_csv(os.path.join(out_dir, "delays.csv"), header, rows)
            _write_csv(
                os.path.join(out_dir, "calibration.csv"),
                ["kind", "threshold", "mean_run_length", "capped_fraction", "reliable"],
                [
                    {
                        "kind": c.kind,
                        "threshold": c.threshold,
                        "mean_run_length": c.mean_run_length,
                        "capped_fraction": c.capped_fraction,
                        "reliable": str(c.reliable).lower(),
                    }
                    for c in cal.values()
                ],
            )
            meta["setting"] = asdict(s)
    with open(os.path.join(out_dir, "METADATA.json"), "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(os.path.join(out_dir, "TIMING.json"), "w") as fh:
        json.dump({"runtime_seconds": round(time.perf_counter() - start, 3)}, fh)
        fh.write("\n")
    return meta
