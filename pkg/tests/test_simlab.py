import math

import numpy as np
import pytest

from nnchange import simlab
from nnchange.simlab import (
    ScanConfig,
    ScenarioSpec,
    binomial_se,
    generate,
    mc_thresholds,
    power_experiment,
    stream,
)

SMALL = ScanConfig(L=20, k=1, n0=3, n1=17, N0=20)


def spec(**kw):
    base = dict(d=10, N0=20, tau=60, length=120, seed=3)
    base.update(kw)
    return ScenarioSpec(**base)


def test_stream_deterministic_and_chunk_independent(monkeypatch):
    s = spec(delta=1.0, sigma=2.0, length=700)
    a = generate(s)
    assert np.array_equal(a, generate(s))
    assert a.shape == (700, 10)
    # the block size only changes how draws are batched, never their values
    monkeypatch.setattr(simlab, "CHUNK", 700)
    assert np.array_equal(a, generate(s))
    assert not np.array_equal(a, generate(spec(delta=1.0, sigma=2.0, length=700, seed=4)))


def test_null_stream_identical_regardless_of_change_params():
    a = generate(spec(tau=10_000, length=500, delta=2.0, sigma=3.0))
    b = generate(spec(tau=10_000, length=500))
    assert np.array_equal(a, b)
    # Delta = 0 and sigma = 1 make the change invisible
    assert np.array_equal(generate(spec(length=500)), generate(spec(length=500, tau=21)))


def test_post_change_mean_norm():
    s = spec(d=20, tau=21, length=20 + 20000, delta=2.5, seed=1)
    post = generate(s)[20:]
    m = post.mean(axis=0)
    assert np.allclose(m, 2.5 / math.sqrt(20), atol=4 / math.sqrt(20000))
    assert np.linalg.norm(np.full(20, 2.5 / math.sqrt(20))) == pytest.approx(2.5)


def test_scale_modes():
    post = generate(spec(d=10, tau=21, length=20 + 20000, sigma=2.0, scale_mode="firstFifth"))[20:]
    sd = post.std(axis=0)
    assert np.allclose(sd[:2], 2.0, rtol=0.03)
    assert np.allclose(sd[2:], 1.0, rtol=0.03)


def test_lognormal_is_exp_of_gaussian():
    g = generate(spec(delta=1.0))
    ln = generate(spec(delta=1.0, distribution="lognormal"))
    np.testing.assert_allclose(np.log(ln), g, rtol=1e-12, atol=1e-12)


def test_replicate_seeds_distinct():
    s = spec()
    seeds = {s.replicate(7, r).seed for r in range(50)}
    assert len(seeds) == 50
    assert s.replicate(7, 3) == s.replicate(7, 3)


def test_spec_validation():
    with pytest.raises(ValueError):
        spec(tau=20)
    with pytest.raises(ValueError):
        spec(distribution="cauchy")
    with pytest.raises(ValueError):
        spec(sigma=0.0)
    with pytest.raises(ValueError):
        ScanConfig(L=20, k=1, n0=3, n1=17, N0=10)


def test_stream_yields_rows():
    rows = list(stream(spec(length=5, N0=2, tau=3)))
    assert len(rows) == 5 and rows[0].shape == (10,)


@pytest.fixture(scope="module")
def small_cal():
    null = spec(d=3, N0=20, tau=21, length=21)
    return mc_thresholds(SMALL, null, ("W", "M"), target_arl=100, runs=200, seed=5)


def test_mc_calibration_hits_target(small_cal):
    for kd, cal in small_cal.items():
        assert cal.reliable
        assert cal.mean_run_length >= 100
        assert abs(cal.mean_run_length - 100) <= 5
        assert cal.stopping_times.shape == (200,)
        assert 0 <= cal.ks_exponential() <= 1


def test_mc_thresholds_monotone_in_target(small_cal):
    null = spec(d=3, N0=20, tau=21, length=21)
    hi = mc_thresholds(SMALL, null, ("W", "M"), target_arl=300, runs=200, seed=5)
    for kd in ("W", "M"):
        assert hi[kd].threshold > small_cal[kd].threshold
    with pytest.raises(ValueError):
        mc_thresholds(SMALL, null, ("W",), target_arl=100, runs=10)


def test_null_power_is_false_alarm_rate(small_cal):
    # under no change, power1 is the chance of stopping within tau - N0 + 100 steps
    tau = 70
    A = {kd: c.threshold for kd, c in small_cal.items()}
    res = power_experiment(spec(d=3, N0=20, tau=tau, length=tau + 300), SMALL, A, runs=400, seed=11)
    for kd, r in res.kinds.items():
        mean_T = small_cal[kd].mean_run_length
        expect = 1 - math.exp(-(tau - 20 + 99) / mean_T)
        assert abs(r.power1 - expect) <= 3 * binomial_se(expect, 400)
        assert r.power2 <= r.power1


def test_power_ordering_and_delays(small_cal):
    A = {kd: c.threshold for kd, c in small_cal.items()}
    s = spec(d=3, N0=20, tau=60, length=200, delta=3.0)
    res = power_experiment(s, SMALL, A, runs=60, seed=2)
    for r in res.kinds.values():
        assert r.power2 <= r.power1
        assert r.power1 > 0.9
        assert np.all(r.delays[np.isfinite(r.delays)] >= 0)
    assert len(res.rows()) == 2
    par = power_experiment(s, SMALL, A, runs=60, seed=2, workers=2)
    for kd in A:
        assert np.array_equal(par.kinds[kd].alarm_steps, res.kinds[kd].alarm_steps)


def test_power_experiment_validation():
    with pytest.raises(ValueError):
        power_experiment(spec(), SMALL, {})
    with pytest.raises(ValueError):
        power_experiment(spec(N0=30), SMALL, {"W": 3.0})


def test_binomial_se():
    assert binomial_se(0.5, 100) == pytest.approx(0.05)
