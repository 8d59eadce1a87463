"""
Gaussian model of the service time
==================================

Per-slot rates are close to Gaussian within each interference class, so
the number of slots a packet needs follows from binomial mixtures of
Gaussian sums. Here we check that against slot-by-slot simulation.
"""

import numpy as np

from arqos import ArrivalParams, ChannelParams, QosTarget, solve_theta_star
from arqos.allocator import baseline_rate, water_level_for_rate, waterfill_at_level
from arqos.channel import sample_slots
from arqos.experiments import ks_gaussian
from arqos.learner.evaluation import rate_pool, sequential_service_slots
from arqos.service_model import estimate_stats, service_pmf

chan = ChannelParams.from_db(52, 10.0)
rng = np.random.default_rng(2)

# a fixed level at the baseline's average, so the power scale is realistic
q = solve_theta_star(ArrivalParams.from_fps(120), QosTarget(20.0, 1e-3))
gamma, _ = sample_slots(chan, rng, 20_000)
level = water_level_for_rate(gamma, baseline_rate(1e5, 6, 1.0), chan.w0).mean()
print(f"water level {level * 1e3:.3f} mW")


def fixed_level(gamma):
    return waterfill_at_level(gamma, np.full(gamma.shape[0], level))


pool = rate_pool({"fixed": fixed_level}, chan, rng, 1_000_000)["fixed"]
for name, mask in (("interfered", pool.interfered), ("interference-free", ~pool.interfered)):
    stat, p = ks_gaussian(pool.rates[mask][:5000])
    print(f"{name:18s} KS statistic {stat:.4f}  p-value {p:.3f}")

###############################################################################
# Model PMF from the first 100k slots; empirical PMF from consuming the
# whole pool one packet after another.

stats = estimate_stats(pool.rates[:100_000], pool.interfered[:100_000])
dist = service_pmf(stats, chan.p_interf, 1e5, chan.slot_len)
k = sequential_service_slots(pool.bits, 1e5, cap=200)
emp = np.bincount(k, minlength=dist.k_max + 1)[1:dist.k_max + 1] / k.size
print("\n k   model    simulated")
for kk, (a, b) in enumerate(zip(dist.pmf, emp), start=1):
    if a > 1e-4 or b > 1e-4:
        print(f"{kk:2d}   {a:.4f}   {b:.4f}")
