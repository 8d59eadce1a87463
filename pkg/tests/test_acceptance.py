"""Acceptance criteria 1-10, each at its stated tolerance.

Every test prints one ``criterion N: PASS|FAIL`` line and repeats it in the
terminal summary. Criteria 9 and 10 share one set of smoke-config trainings
(5 INRs x UL/DL).
"""

import time
from collections import deque

import heapq
import numpy as np
import pytest
from scipy.optimize import brentq

import gradcheck as gc
from conftest import ACCEPTANCE
from test_allocator import _min_power_oracle
from test_queueing import brute_single, brute_tandem, random_trace
from arqos import experiments as ex
from arqos.allocator import waterfill_at_level, waterfill_for_rate
from arqos.channel import ChannelParams, sample_slots
from arqos.config import load_config
from arqos.learner import PolicyParams, pe_forward
from arqos.learner.evaluation import rate_pool, sequential_service_slots
from arqos.learner.training import TrainConfig, reference_scales
from arqos.queueing import Trace, delay_single, delay_tandem
from arqos.service_model import estimate_stats, service_pmf
from arqos.snc import QosExponent, stieltjes_bound, tandem_bound, tandem_bound_at

pytestmark = pytest.mark.acceptance

SMOKE = "configs/smoke.json"


def report(n, ok, detail, t0):
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'} ({time.perf_counter() - t0:.1f} s) {detail}"
    ACCEPTANCE[n] = line
    print("\n" + line)
    assert ok, line


def fifo_events(tau, s):
    """Event-driven FIFO server with a deque waiting line."""
    arrivals = np.concatenate(([0.0], np.cumsum(tau)))
    events = [(t, 0, i) for i, t in enumerate(arrivals)]
    heapq.heapify(events)
    waiting, busy, out = deque(), False, np.empty(len(s))
    while events:
        t, kind, i = heapq.heappop(events)
        if kind == 1:
            out[i] = t - arrivals[i]
            busy = False
        else:
            waiting.append(i)
        if not busy and waiting:
            j = waiting.popleft()
            busy = True
            heapq.heappush(events, (t + s[j], 1, j))
    return out


def test_criterion_1_queueing_oracles():
    t0 = time.perf_counter()
    rng = np.random.default_rng(101)
    bad = 0
    for _ in range(1000):
        tr = random_trace(rng, int(rng.integers(1, 13)))
        bad += not np.allclose(delay_single(tr), brute_single(tr.interarrivals, tr.service1), rtol=0, atol=1e-12)
        bad += not np.allclose(delay_tandem(tr), brute_tandem(tr.interarrivals, tr.service1, tr.service2), rtol=0, atol=1e-12)
    for _ in range(100):
        # integer-valued times keep every sum exact, so equality is exact
        tau = rng.integers(1, 11, 9999).astype(float)
        s = rng.integers(1, 10, 10_000).astype(float)
        bad += not np.array_equal(delay_single(Trace(tau, s)), fifo_events(tau, s))
    report(1, bad == 0, f"mismatches={bad}", t0)


def test_criterion_2_bound_vs_simulation():
    t0 = time.perf_counter()
    cfg = load_config()
    cfg = cfg.replace(sim=type(cfg.sim)(d_grid_ms=tuple(float(d) for d in range(0, 61, 2))))
    d_star = brentq(lambda d: ex.exponential_service_bound(cfg, d)[0] - 1e-3, 30.0, 300.0, xtol=1e-9)
    grid = cfg.replace(sim=type(cfg.sim)(d_grid_ms=(*cfg.sim.d_grid_ms, d_star)))
    n = 11_200_000  # 10% warmup leaves 1.008e7 counted packets
    rows = ex.bound_vs_sim(grid, ex.rng_for(cfg.seed, "bound-vs-sim"), n_packets=n)
    sweep, last = rows[:-1], rows[-1]
    dominated = bool(np.all(sweep[:, 1] >= sweep[:, 3]))
    ratio = last[1] / last[3]
    ok = dominated and last[3] > 0 and ratio <= 50.0 and last[1] >= last[3]
    report(2, ok, f"{n - n // 10} packets; bound>=MC on 0-60 ms: {dominated}; at d={d_star:.2f} ms bound=1e-3, MC={last[3]:.3g} (ratio {ratio:.2f})", t0)


def test_criterion_3_closed_form_vs_stieltjes():
    t0 = time.perf_counter()
    worst = 0.0
    for theta in np.geomspace(0.05, 3.0, 10):
        for a in np.geomspace(1.0, 1e3, 10):
            q = QosExponent(theta, a)
            for d in np.linspace(0.5, 4 * q.x0 + 20 / theta, 20):
                worst = max(worst, abs(tandem_bound(q, q, d) - stieltjes_bound(q, q, d)))
    report(3, worst < 1e-8, f"max abs diff {worst:.2e} over 2000 points", t0)


def test_criterion_4_theta_solver(arr, target, q_star):
    t0 = time.perf_counter()
    resid = abs(tandem_bound_at(arr, q_star.theta, target.d_max) - target.eps_max)
    # dense 1e-6 grid around the root; the smallest feasible point is the grid answer
    grid = np.round(np.arange(q_star.theta - 0.01, q_star.theta + 0.01, 1e-6), 6)
    vals = np.array([tandem_bound_at(arr, t, target.d_max) for t in grid])
    grid_best = grid[vals <= target.eps_max].min()
    ok = resid <= 1e-9 and abs(grid_best - q_star.theta) <= 1e-6
    report(4, ok, f"theta*={q_star.theta:.7f}/ms residual {resid:.1e}, grid {grid_best:.7f}", t0)


def test_criterion_5_gaussian_approximation(q_star):
    t0 = time.perf_counter()
    cfg = load_config()
    ks = {link: ex.ks_test(cfg, link, ex.rng_for(cfg.seed, "ks-test", i))["p_value"] for i, link in enumerate(ex.LINKS)}
    chan = ChannelParams.from_db(52, 10.0)
    level, _ = reference_scales(chan, TrainConfig(theta_star=q_star, m_bits=1e5),
                                sample_slots(chan, np.random.default_rng(9), 20_000)[0])

    def policy(g):
        return waterfill_at_level(g, np.full(g.shape[0], level))

    pool = rate_pool({"p": policy}, chan, np.random.default_rng(2), 7_000_000)["p"]
    stats = estimate_stats(pool.rates[:100_000], pool.interfered[:100_000])
    dist = service_pmf(stats, chan.p_interf, 1e5, chan.slot_len)
    k = sequential_service_slots(pool.bits, 1e5, 200)[:1_000_000]
    size = max(int(k.max()), dist.k_max)
    pmf = np.zeros(size)
    pmf[: dist.k_max] = dist.pmf
    emp = np.bincount(k, minlength=size + 1)[1: size + 1] / k.size
    tv = 0.5 * np.abs(pmf - emp).sum()
    ok = min(ks.values()) > 0.05 and tv < 0.02 and k.size == 1_000_000
    report(5, ok, f"KS p-values ul={ks['ul']:.3f} dl={ks['dl']:.3f}; TV={tv:.4f} on {k.size} service times", t0)


def test_criterion_6_waterfilling_optimality():
    t0 = time.perf_counter()
    rng = np.random.default_rng(606)
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(8, 134))
        gamma = rng.gamma(8.0, 1.0, n) * rng.uniform(0.3, 3.0)
        target = 180e3 * n * rng.uniform(0.05, 2.0)
        ours = waterfill_for_rate(gamma, target, 180e3).sum()
        worst = max(worst, abs(ours / _min_power_oracle(gamma, target, 180e3) - 1))
    report(6, worst <= 1e-6, f"max relative power gap {worst:.1e} over 100 instances", t0)


def test_criterion_7_gradients(q_star):
    t0 = time.perf_counter()
    fracs, excl = [], 0
    for nrb, m in ((52, 1e5), (133, 1e6)):
        chan = ChannelParams.from_db(nrb, 10.0)
        params, cfg, batch, dual = gc.setup(chan, q_star, m)
        errs, x = gc.check(params, cfg, batch, dual, chan.w0)
        excl += x
        fracs += [float(np.mean(e < 1e-4)) for e in errs]
    report(7, min(fracs) >= 0.95, f"min per-layer fraction within 1e-4: {min(fracs):.3f}; hinge-excluded {excl}", t0)


def test_criterion_8_permutation_equivariance():
    t0 = time.perf_counter()
    rng = np.random.default_rng(808)
    chan = ChannelParams.from_db(52, 10.0)
    params = PolicyParams.init(rng, chan.gamma_ref, 0.02, gc.SMOKE_DIMS)
    params.bias[-1][:] = 5.0
    g = sample_slots(chan, rng, 1)[0][0]
    w, p = pe_forward(params, g)
    worst = 0.0
    for _ in range(100):
        perm = rng.permutation(g.size)
        w2, p2 = pe_forward(params, g[perm])
        worst = max(worst, abs(w2 - w), np.abs(p2 - p[perm]).max())
    report(8, worst <= 1e-12 and p.max() > 0, f"max deviation {worst:.1e}", t0)


@pytest.fixture(scope="module")
def smoke_policies():
    cfg = load_config(SMOKE)
    q = ex.theta_star(cfg)
    t0 = time.perf_counter()
    out = {}
    for inr in cfg.sim.inr_list_db:
        for link in ex.LINKS:
            out[link, inr] = ex.train_link(cfg, link, inr, q).params
    return cfg, out, time.perf_counter() - t0


def test_criterion_9_end_to_end_qos(smoke_policies):
    cfg, pols, train_s = smoke_policies
    t0 = time.perf_counter()
    inr = cfg.channel.inr_db
    rep = ex.evaluate_inr(cfg, inr, (pols["ul", inr], pols["dl", inr]), ex.rng_for(cfg.seed, "evaluate"),
                          n_packets=11_200_000)
    v = rep.violation
    ok = rep.audit_passed and v.n >= 10_000_000 and v.p <= cfg.qos.eps_max + 3 * v.se
    report(9, ok, f"INR {inr:g} dB: audit ul={rep.ul.audit_product:.3f} dl={rep.dl.audit_product:.3f}; "
                  f"violation {v.p:.2e} (se {v.se:.1e}, n={v.n}); trainings took {train_s:.0f} s", t0)


def test_criterion_10_power_saving(smoke_policies):
    cfg, pols, _ = smoke_policies
    t0 = time.perf_counter()
    parts, ok = [], True
    for inr in cfg.sim.inr_list_db:
        rep = ex.evaluate_inr(cfg, inr, (pols["ul", inr], pols["dl", inr]),
                              ex.rng_for(cfg.seed, "compare", int(inr * 100)))
        for link, r in (("ul", rep.ul), ("dl", rep.dl)):
            good = r.mean_power < r.baseline_power and r.audit_product <= 1.01
            ok &= good
            parts.append(f"{link}@{inr:g}dB gain {100 * r.gain:.1f}% audit {r.audit_product:.3f}{'' if good else ' !'}")
    report(10, ok, "; ".join(parts), t0)
