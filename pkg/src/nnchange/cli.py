"""Command-line front end: ``nnchange {calibrate,monitor,simulate,bench}``.

Exit status is 0 on success (with or without an alarm) and 2 on usage,
configuration or input errors.  ``NNCHANGE_SEED`` supplies the default seed
and ``NNCHANGE_THREADS`` the worker count for simulation suites.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import warnings
from typing import Optional

import numpy as np

from . import bench
from .arl import arl, arl_skew
from .detector import Detector, DetectorError, arl_request
from .records import (
    FormatError,
    detector_config,
    format_row,
    parse_config,
    read_matrix,
    read_observations,
    scenario_spec,
)
from .simlab import ScanConfig, mc_thresholds, stream

EXIT_USAGE = 2


class UsageError(Exception):
    pass


def _env_int(name: str, default: int) -> int:
    raw = os.environ.get(name)
    if raw is None or raw == "":
        return default
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"{name} must be an integer, got {raw!r}") from None


def _load_config(path: Optional[str]) -> dict:
    if path is None:
        return {}
    with open(path) as fh:
        return parse_config(fh.read(), source=path)


def _emit(obj: dict, out: Optional[str] = None) -> None:
    text = json.dumps(obj)
    print(text)
    if out:
        with open(out, "w") as fh:
            fh.write(text + "\n")


def _float(v: float):
    return None if v is None or (isinstance(v, float) and math.isnan(v)) else float(v)


def _range_summary(a) -> dict:
    a = np.asarray(a, dtype=float)
    return {"min": _float(np.nanmin(a)), "mean": _float(np.nanmean(a)), "max": _float(np.nanmax(a))}


def cmd_calibrate(args) -> int:
    cfg = _load_config(args.config)
    hist = read_matrix(args.history, cfg.get("dim"))
    cfg.setdefault("dim", hist.shape[1])
    cfg.setdefault("N0", hist.shape[0])
    seed = args.seed if args.seed is not None else cfg.get("seed", _env_int("NNCHANGE_SEED", 0))
    method = args.method or cfg.get("calibration", "analytic-skew")
    target = args.arl if args.arl is not None else cfg.get("target_arl")
    if target is None:
        raise UsageError("no target ARL: pass --arl or set target_arl")
    cfg.update(calibration=method, target_arl=target, threshold=None, seed=seed)
    dc = detector_config(cfg)
    if dc.calibration == "fixed":
        raise UsageError("calibrate needs --method analytic, analytic-skew or montecarlo")
    report = {"kind": dc.kind, "method": dc.calibration}
    det = Detector.from_history(hist, dc)
    gamma = None
    if dc.calibration == "montecarlo":
        scan = ScanConfig(L=dc.L, k=dc.k, n0=dc.n0, n1=dc.n1, N0=dc.N0, kappa=dc.kappa, metric=dc.metric)
        null = scenario_spec(cfg, d=dc.dim, N0=dc.N0, tau=dc.N0 + 1, length=dc.N0 + 1)
        cal = mc_thresholds(scan, null, (dc.kind,), dc.target_arl, runs=args.runs, seed=seed)[dc.kind]
        b = cal.threshold
        check = {"meanRunLength": cal.mean_run_length, "cappedFraction": cal.capped_fraction, "reliable": cal.reliable}
    else:
        b = det.threshold
        req = arl_request(dc, det.quantities, det.skew)
        check = arl_skew(b, req) if dc.calibration == "analytic-skew" else arl(b, req)
        if det.skew is not None:
            gamma = {"gammaW": _range_summary(det.skew.gamma_w), "gammaDiff": _range_summary(det.skew.gamma_diff)}
    q = det.quantities
    report.update(
        b=float(b),
        pK=q.p_k,
        qK=q.q_k,
        pKplus1=q.p_k1,
        qKplus1=q.q_k1,
        gammaSummary=gamma,
        arlCheck=check,
    )
    _emit(report, args.out)
    return 0


def cmd_monitor(args) -> int:
    cfg = _load_config(args.config)
    hist = read_matrix(args.history, cfg.get("dim"))
    cfg.setdefault("dim", hist.shape[1])
    cfg.setdefault("N0", hist.shape[0])
    if args.threshold is not None and args.arl is not None:
        raise UsageError("give at most one of --threshold and --arl")
    if args.threshold is not None:
        cfg.update(threshold=args.threshold, target_arl=None, calibration="fixed")
    elif args.arl is not None:
        cal = cfg.get("calibration", "fixed")
        if cal in ("fixed", "montecarlo"):
            cal = "analytic" if cfg.get("kind", "M") == "S" else "analytic-skew"
        cfg.update(threshold=None, target_arl=args.arl, calibration=cal)
    dc = detector_config(cfg)
    if dc.calibration == "montecarlo":
        raise UsageError("montecarlo thresholds come from 'calibrate'; pass --threshold")
    det = Detector.from_history(hist, dc, keep_trace=args.trace is not None)
    fh = sys.stdin if args.input in (None, "-") else open(args.input)
    try:
        event = det.run(read_observations(fh, dc.dim, source=args.input or "<stdin>"))
    finally:
        if fh is not sys.stdin:
            fh.close()
        if args.trace:
            with open(args.trace, "w") as tf:
                tf.write("n,maxValue,argmaxT\n")
                for row in det.trace:
                    tf.write(f"{row.n},{row.max_value!r},{row.argmax_t}\n")
    _emit(event.to_dict() if event else {"alarm": None})
    return 0


def cmd_simulate(args) -> int:
    cfg = _load_config(args.config)
    if args.dim is not None and "dim" in cfg and cfg["dim"] != args.dim:
        raise UsageError(f"--dim {args.dim} disagrees with config dim = {cfg['dim']}")
    seed = args.seed if args.seed is not None else cfg.get("seed", _env_int("NNCHANGE_SEED", 0))
    over = dict(
        d=args.dim,
        N0=args.N0,
        tau=args.tau,
        length=args.length,
        delta=args.delta,
        sigma=args.sigma,
        scale_mode=args.scale_mode,
        distribution=args.distribution,
        seed=seed,
    )
    spec = scenario_spec(cfg, **over)
    out = sys.stdout if args.out in (None, "-") else open(args.out, "w")
    try:
        for i, y in enumerate(stream(spec), 1):
            if args.format == "jsonl":
                out.write(json.dumps({"t": i, "y": [float(v) for v in y]}) + "\n")
            else:
                out.write(format_row(y) + "\n")
    finally:
        if out is not sys.stdout:
            out.close()
    return 0


def cmd_bench(args) -> int:
    seed = args.seed if args.seed is not None else _env_int("NNCHANGE_SEED", 0)
    workers = _env_int("NNCHANGE_THREADS", 1)
    meta = bench.run_suite(args.suite, args.scale, args.out, seed=seed, runs=args.runs, target_arl=args.arl, workers=workers)
    print(json.dumps({"suite": meta["suite"], "scale": meta["scale"], "out": args.out}))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nnchange", description="Nearest-neighbour sequential change detection.")
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("calibrate", help="solve a threshold for a target ARL")
    c.add_argument("--config", required=True)
    c.add_argument("--history", required=True, help="change-free history (CSV or JSON lines)")
    c.add_argument("--method", choices=["analytic", "analytic-skew", "montecarlo"])
    c.add_argument("--arl", type=float, help="target average run length")
    c.add_argument("--runs", type=int, default=500, help="Monte Carlo replicates")
    c.add_argument("--seed", type=int)
    c.add_argument("--out", help="also write the JSON report here")
    c.set_defaults(func=cmd_calibrate)

    m = sub.add_parser("monitor", help="run the stopping rule over a stream")
    m.add_argument("--config", required=True)
    m.add_argument("--history", required=True)
    m.add_argument("--input", help="observation stream (default: stdin)")
    m.add_argument("--threshold", type=float)
    m.add_argument("--arl", type=float)
    m.add_argument("--trace", help="per-step CSV trace (n,maxValue,argmaxT)")
    m.set_defaults(func=cmd_monitor)

    s = sub.add_parser("simulate", help="write a synthetic stream")
    s.add_argument("--config")
    s.add_argument("--dim", type=int)
    s.add_argument("--N0", type=int)
    s.add_argument("--tau", type=int)
    s.add_argument("--length", type=int)
    s.add_argument("--delta", type=float)
    s.add_argument("--sigma", type=float)
    s.add_argument("--scale-mode", choices=["full", "firstFifth"])
    s.add_argument("--distribution", choices=["gaussian", "lognormal"])
    s.add_argument("--seed", type=int)
    s.add_argument("--format", choices=["csv", "jsonl"], default="csv")
    s.add_argument("--out", help="output file (default: stdout)")
    s.set_defaults(func=cmd_simulate)

    b = sub.add_parser("bench", help="benchmark tables")
    b.add_argument("--suite", required=True)
    b.add_argument("--scale", choices=list(bench.SCALES), default="desk")
    b.add_argument("--out", required=True, help="output directory")
    b.add_argument("--seed", type=int)
    b.add_argument("--runs", type=int, help="override replicate count")
    b.add_argument("--arl", type=float, help="override target ARL")
    b.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code else 0
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            return args.func(args)
    except (UsageError, FormatError, ValueError, DetectorError, OSError) as e:
        print(f"nnchange: error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
