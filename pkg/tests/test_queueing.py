import heapq

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from arqos.queueing import (
    TandemQueue,
    Trace,
    ViolationEstimate,
    delay_single,
    delay_tandem,
    empirical_violation,
    sojourn_times,
    violation_counts,
)


def brute_single(tau, s):
    """Max-plus form with an explicit double sum; empty tau sum is zero."""
    n = len(s)
    out = []
    for j in range(n):
        out.append(max(sum(s[m:j + 1]) - sum(tau[m:j]) for m in range(j + 1)))
    return np.array(out)


def brute_tandem(tau, s1, s2):
    n = len(s1)
    out = []
    for j in range(n):
        best = -np.inf
        for m1 in range(j + 1):
            for m2 in range(m1, j + 1):
                best = max(best, sum(s1[m1:m2 + 1]) + sum(s2[m2:j + 1]) - sum(tau[m1:j]))
        out.append(best)
    return np.array(out)


def event_fifo(tau, s):
    """Discrete-event single-server FIFO queue driven by an event heap."""
    arrivals = np.concatenate(([0.0], np.cumsum(tau)))
    events = [(t, 0, i) for i, t in enumerate(arrivals)]  # kind 0 = arrival, 1 = departure
    heapq.heapify(events)
    waiting, busy, delays = [], False, np.empty(len(s))
    while events:
        t, kind, i = heapq.heappop(events)
        if kind == 1:
            delays[i] = t - arrivals[i]
            busy = False
        else:
            waiting.append(i)
        if not busy and waiting:
            j = waiting.pop(0)
            busy = True
            heapq.heappush(events, (t + s[j], 1, j))
    return delays


def random_trace(rng, n, tandem=True):
    tau = rng.exponential(5.0, n - 1)
    s1 = rng.exponential(4.0, n)
    s2 = rng.exponential(4.0, n) if tandem else None
    return Trace(tau, s1, s2)


def test_trace_validation():
    with pytest.raises(ValueError):
        Trace([1.0], [1.0])
    with pytest.raises(ValueError):
        Trace([1.0], [1.0, 2.0], [1.0])
    with pytest.raises(ValueError):
        Trace([-1.0], [1.0, 2.0])
    assert len(Trace([], [3.0])) == 1


def test_single_examples():
    assert delay_single(Trace([], [4.0])).tolist() == [4.0]
    np.testing.assert_array_equal(delay_single(Trace(np.full(9, 10.0), np.full(10, 5.0))), 5.0)


def test_tandem_examples():
    assert delay_tandem(Trace([], [4.0], [2.0])).tolist() == [6.0]
    rng = np.random.default_rng(1)
    t = random_trace(rng, 50)
    np.testing.assert_allclose(delay_tandem(Trace(t.interarrivals, t.service1, np.zeros(50))), delay_single(t))
    with pytest.raises(ValueError):
        delay_tandem(Trace(t.interarrivals, t.service1))


def test_single_matches_brute_force():
    rng = np.random.default_rng(2)
    for _ in range(1000):
        t = random_trace(rng, int(rng.integers(1, 13)), tandem=False)
        np.testing.assert_allclose(delay_single(t), brute_single(t.interarrivals, t.service1), rtol=1e-12, atol=1e-12)


def test_tandem_matches_brute_force():
    rng = np.random.default_rng(3)
    for _ in range(1000):
        t = random_trace(rng, int(rng.integers(1, 13)))
        np.testing.assert_allclose(
            delay_tandem(t), brute_tandem(t.interarrivals, t.service1, t.service2), rtol=1e-12, atol=1e-12
        )


def test_tandem_n30_brute_force():
    rng = np.random.default_rng(4)
    t = random_trace(rng, 30)
    np.testing.assert_allclose(delay_tandem(t), brute_tandem(t.interarrivals, t.service1, t.service2), rtol=1e-12)


def test_single_matches_event_simulation_on_integer_trace():
    rng = np.random.default_rng(5)
    # integer-valued times make every sum exact, so equality is bitwise
    tau = rng.integers(1, 12, 199).astype(float)
    s = rng.integers(1, 12, 200).astype(float)
    assert np.array_equal(delay_single(Trace(tau, s)), event_fifo(tau, s))


def test_single_matches_event_simulation_long():
    rng = np.random.default_rng(6)
    tau = rng.exponential(5.0, 9999)
    s = rng.exponential(4.5, 10_000)
    np.testing.assert_allclose(delay_single(Trace(tau, s)), event_fifo(tau, s), rtol=1e-9, atol=1e-9)


def test_streaming_tandem_equals_batch():
    rng = np.random.default_rng(7)
    t = random_trace(rng, 5000)
    full = delay_tandem(t)
    q = TandemQueue()
    gaps = np.concatenate(([0.0], t.interarrivals))
    parts = []
    for a, b in [(0, 1), (1, 700), (700, 701), (701, 5000)]:
        parts.append(q.feed(gaps[a:b], t.service1[a:b], t.service2[a:b]))
    np.testing.assert_allclose(np.concatenate(parts), full, rtol=1e-12, atol=1e-9)


def test_sojourn_with_carry():
    d = sojourn_times(np.array([2.0, 1.0]), np.array([1.0, 1.0]), prev=5.0)
    # first packet waits 5 - 2 = 3
    assert d.tolist() == [4.0, 4.0]


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 10), st.integers(0, 2**32 - 1), st.floats(0.0, 5.0))
def test_monotone_in_service_and_tandem_dominates(n, seed, bump):
    rng = np.random.default_rng(seed)
    t = random_trace(rng, n)
    base = delay_tandem(t)
    i = int(rng.integers(n))
    s1 = t.service1.copy()
    s1[i] += bump
    assert np.all(delay_tandem(Trace(t.interarrivals, s1, t.service2)) >= base - 1e-12)
    assert np.all(base >= delay_single(t) - 1e-12)
    assert np.all(base >= delay_single(Trace(t.interarrivals, t.service2)) - 1e-12)
    assert np.all(base >= np.maximum(t.service1, t.service2) - 1e-12)


def test_violation_examples():
    d = np.arange(100.0)
    assert empirical_violation(np.zeros(10), 5.0, warmup=0).p == 0.0
    v = empirical_violation(np.array([1.0, 9.0] * 50), 5.0, warmup=0)
    assert v.p == 0.5 and v.lo < 0.5 < v.hi
    # default warmup drops the first 10%
    v = empirical_violation(d, 50.0)
    assert v.n == 90 and v.count == 50
    # boundary counts as a violation
    assert empirical_violation(np.array([5.0, 5.0]), 5.0, warmup=0).p == 1.0
    with pytest.raises(ValueError):
        empirical_violation(np.ones(3), 1.0, warmup=3)


def test_wilson_interval_reference():
    v = ViolationEstimate.from_counts(10, 100)
    # Wilson 95% interval for 10/100
    assert v.lo == pytest.approx(0.05522914, abs=1e-7)
    assert v.hi == pytest.approx(0.17436566, abs=1e-7)
    assert v.se == pytest.approx(0.03)


def test_violation_counts():
    d = np.array([1.0, 2.0, 2.0, 5.0])
    assert violation_counts(d, [0, 2, 2.5, 6]).tolist() == [4, 3, 1, 0]


def test_csv_round_trip(tmp_path):
    rng = np.random.default_rng(8)
    t = random_trace(rng, 20)
    t.to_csv(tmp_path / "t.csv")
    header = (tmp_path / "t.csv").read_text().splitlines()[0]
    assert header == "tau_ms,delta1_ms,delta2_ms"
    back = Trace.from_csv(tmp_path / "t.csv")
    np.testing.assert_array_equal(back.interarrivals, t.interarrivals)
    np.testing.assert_array_equal(back.service2, t.service2)
    t1 = Trace(t.interarrivals, t.service1)
    t1.to_csv(tmp_path / "s.csv")
    assert Trace.from_csv(tmp_path / "s.csv").service2 is None
