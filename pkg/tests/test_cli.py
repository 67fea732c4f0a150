import json

import numpy as np
import pytest

from _util import offline_trace, shifted_stream
from nnchange.cli import main
from nnchange.detector import DetectorConfig
from nnchange.records import FormatError, format_row, parse_config, read_observations, write_config
from nnchange.window import Window, build_neighbor_table, summarize
from nnchange.edgestats import profile

SMALL_CFG = "k = 1\nL = 20\nn0 = 4\nn1 = 16\nN0 = 20\ndim = 2\nkind = W\n"


def write_rows(path, rows):
    path.write_text("".join(format_row(r) + "\n" for r in rows))
    return str(path)


def run_json(capsys, argv):
    rc = main(argv)
    out = capsys.readouterr().out
    return rc, (json.loads(out.strip().splitlines()[-1]) if out.strip() else None)


def test_config_round_trip():
    text = SMALL_CFG + "threshold = 3.5\nupdate_quantities = false\n# comment\nseed = 4  # trailing\n"
    cfg = parse_config(text)
    assert cfg["threshold"] == 3.5 and cfg["update_quantities"] is False and cfg["seed"] == 4
    assert parse_config(write_config(cfg)) == cfg
    assert write_config(parse_config(write_config(cfg))) == write_config(cfg)


def test_config_rejections():
    with pytest.raises(FormatError, match=":2: unknown key"):
        parse_config("k = 1\nwindow = 3\n")
    with pytest.raises(FormatError, match=":2: duplicate"):
        parse_config("k = 1\nk = 2\n")
    with pytest.raises(FormatError, match=":1: bad value"):
        parse_config("k = one\n")
    with pytest.raises(FormatError, match="key=value"):
        parse_config("k 1\n")


def test_stream_records():
    lines = ['{"t": 1, "y": [1, 2]}\n', "3.0,4.0\n", "\n", '{"t": 5, "y": [5, 6]}\n']
    rows = list(read_observations(iter(lines)))
    assert [r.tolist() for r in rows] == [[1, 2], [3, 4], [5, 6]]
    with pytest.raises(FormatError, match=":2: t must"):
        list(read_observations(iter(['{"t": 2, "y": [1]}\n', '{"t": 2, "y": [1]}\n'])))
    with pytest.raises(FormatError, match=":2: expected 2 values"):
        list(read_observations(iter(["1,2\n", "1,2,3\n"])))
    with pytest.raises(FormatError, match="non-finite"):
        list(read_observations(iter(["1,nan\n"])))


@pytest.fixture()
def small_files(tmp_path):
    rng = np.random.default_rng(4)
    hist = rng.normal(size=(20, 2))
    stream = shifted_stream(5, 30, 2, 6, 2.5)
    cfg = tmp_path / "run.cfg"
    cfg.write_text(SMALL_CFG)
    return dict(
        hist=hist,
        stream=stream,
        cfg=str(cfg),
        history=write_rows(tmp_path / "hist.csv", hist),
        input=write_rows(tmp_path / "in.csv", stream),
        dir=tmp_path,
    )


def test_malformed_history_row(small_files, capsys):
    bad = small_files["dir"] / "bad.csv"
    rows = small_files["history"]
    text = open(rows).read().splitlines()
    text[6] = text[6] + ",1.0"
    bad.write_text("\n".join(text) + "\n")
    rc = main(["calibrate", "--config", small_files["cfg"], "--history", str(bad), "--arl", "1000", "--method", "analytic"])
    assert rc == 2
    assert "bad.csv:7:" in capsys.readouterr().err


def test_calibrate_report_and_monotone(small_files, capsys):
    base = ["calibrate", "--config", small_files["cfg"], "--history", small_files["history"], "--method", "analytic"]
    rc, lo = run_json(capsys, base + ["--arl", "1000"])
    assert rc == 0
    _, hi = run_json(capsys, base + ["--arl", "10000"])
    assert hi["b"] > lo["b"]
    assert set(lo) >= {"kind", "b", "method", "pK", "qK", "pKplus1", "qKplus1", "gammaSummary", "arlCheck"}
    assert lo["arlCheck"] == pytest.approx(1000, rel=1e-3)


def test_calibrate_rejects_s_with_skew(small_files, capsys):
    cfg = small_files["dir"] / "s.cfg"
    cfg.write_text(SMALL_CFG.replace("kind = W", "kind = S"))
    rc = main(["calibrate", "--config", str(cfg), "--history", small_files["history"], "--arl", "1000"])
    assert rc == 2
    assert "skew" in capsys.readouterr().err


def test_calibrate_paper_example(tmp_path, capsys):
    rng = np.random.default_rng(0)
    cfg = tmp_path / "w.cfg"
    cfg.write_text("k = 1\nL = 200\nn0 = 40\nn1 = 160\nkind = W\n")
    hist = write_rows(tmp_path / "h.csv", rng.normal(size=(200, 10)))
    rc, rep = run_json(capsys, ["calibrate", "--config", str(cfg), "--history", hist, "--method", "analytic-skew", "--arl", "10000"])
    assert rc == 0
    assert abs(rep["b"] - 4.33) <= 0.05
    assert rep["gammaSummary"] is not None


def test_monitor_planted_crossing(small_files, capsys):
    c = DetectorConfig(k=1, L=20, n0=4, n1=16, N0=20, dim=2, kind="W", threshold=1e9)
    vals = np.array([v for v, _ in offline_trace(small_files["hist"], small_files["stream"], c)])
    b = 0.5 * (vals[:11].max() + vals[11])
    rc, ev = run_json(
        capsys,
        ["monitor", "--config", small_files["cfg"], "--history", small_files["history"], "--input", small_files["input"], "--threshold", repr(float(b))],
    )
    assert rc == 0
    assert ev["stoppingTime"] == 12
    assert ev["globalN"] == 32
    assert set(ev) >= {"stoppingTime", "globalN", "changeEstimate", "statisticValue", "threshold"}


def test_monitor_no_alarm_and_trace(small_files, capsys):
    trace = small_files["dir"] / "trace.csv"
    argv = ["monitor", "--config", small_files["cfg"], "--history", small_files["history"], "--input", small_files["input"]]
    rc, ev = run_json(capsys, argv + ["--threshold", "1e9", "--trace", str(trace)])
    assert rc == 0 and ev == {"alarm": None}
    lines = trace.read_text().splitlines()
    assert lines[0] == "n,maxValue,argmaxT"
    assert len(lines) == 31
    # recompute each traced value from its window
    data = np.vstack([small_files["hist"], small_files["stream"]])
    for line in lines[1:]:
        n, v, t = line.split(",")
        n = int(n)
        w = Window(20, 2, first_index=n - 19)
        for y in data[n - 20 : n]:
            w.push(y)
        tab = build_neighbor_table(w, 1)
        ref_v, ref_t = profile(tab, summarize(tab), n, 4, 16).argmax("W")
        assert float(v) == pytest.approx(ref_v, abs=1e-12)
        assert int(t) == ref_t


def test_monitor_reads_stdin(small_files, capsys, monkeypatch):
    import io

    monkeypatch.setattr("sys.stdin", io.StringIO(open(small_files["input"]).read()))
    rc, ev = run_json(capsys, ["monitor", "--config", small_files["cfg"], "--history", small_files["history"], "--threshold", "1e9"])
    assert rc == 0 and ev == {"alarm": None}


def test_monitor_usage_errors(small_files, capsys):
    argv = ["monitor", "--config", small_files["cfg"], "--history", small_files["history"], "--input", small_files["input"]]
    assert main(argv + ["--threshold", "3", "--arl", "100"]) == 2
    assert main(argv[:-1] + ["/nonexistent/file"] + ["--threshold", "3"]) == 2
    assert main(["monitor"]) == 2
    capsys.readouterr()


def test_simulate_deterministic_and_dim_mismatch(tmp_path, capsys):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    argv = ["simulate", "--dim", "3", "--N0", "10", "--tau", "20", "--length", "40", "--delta", "2.5", "--sigma", "0.75", "--seed", "9"]
    assert main(argv + ["--out", str(a)]) == 0
    assert main(argv + ["--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
    rows = np.loadtxt(a, delimiter=",")
    assert rows.shape == (40, 3)
    cfg = tmp_path / "sim.cfg"
    cfg.write_text("dim = 5\nN0 = 10\ntau = 20\nlength = 40\n")
    assert main(["simulate", "--config", str(cfg), "--dim", "3"]) == 2
    assert "disagrees" in capsys.readouterr().err


def test_simulate_jsonl(tmp_path):
    out = tmp_path / "s.jsonl"
    assert main(["simulate", "--dim", "2", "--N0", "3", "--tau", "4", "--length", "5", "--format", "jsonl", "--out", str(out)]) == 0
    recs = [json.loads(x) for x in out.read_text().splitlines()]
    assert [r["t"] for r in recs] == [1, 2, 3, 4, 5]
    assert len(recs[0]["y"]) == 2


def test_bench_unknown_suite(tmp_path, capsys):
    assert main(["bench", "--suite", "tables", "--out", str(tmp_path)]) == 2
    assert "unknown suite" in capsys.readouterr().err


def test_env_seed(tmp_path, monkeypatch):
    monkeypatch.setenv("NNCHANGE_SEED", "3")
    a = tmp_path / "a.csv"
    argv = ["simulate", "--dim", "2", "--N0", "3", "--tau", "4", "--length", "5"]
    assert main(argv + ["--out", str(a)]) == 0
    b = tmp_path / "b.csv"
    assert main(argv + ["--seed", "3", "--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
    monkeypatch.setenv("NNCHANGE_SEED", "x")
    assert main(argv) == 2
