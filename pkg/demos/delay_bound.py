"""
Delay bounds for a two-node AR tandem
=====================================

Frames arrive every ~8.3 ms (120 fps) with truncated-Gaussian jitter and
cross an uplink node then a downlink node. We want
``P(end-to-end delay >= 20 ms) <= 1e-3``.
"""

from dataclasses import replace

import numpy as np

from arqos import ArrivalParams, QosTarget, solve_theta_star, single_bound, tandem_bound
from arqos import experiments as ex
from arqos.config import load_config

arr = ArrivalParams.from_fps(120)
target = QosTarget(d_max=20.0, eps_max=1e-3)

# The exponent theta* is the smallest one whose tandem bound meets the
# target at d_max. A is the MGF budget each node's service time gets.
q = solve_theta_star(arr, target)
print(f"theta* = {q.theta:.6f} /ms   A = {q.a_const:.2f}   x0 = {q.x0:.3f} ms")

# With the same exponent at both nodes the tandem bound decays like
# e^{-theta x}(1 + theta x), one factor of (1 + theta x) slower than a
# single node.
d = np.arange(12.0, 32.0, 4.0)
for di, s, t in zip(d, single_bound(q, d), tandem_bound(q, q, d)):
    print(f"d = {di:4.0f} ms   single {s:.2e}   tandem {t:.2e}")

###############################################################################
# How loose is the bound? Swap the wireless links for exponential service
# of mean 5 ms and compare with a simulation of the queue itself.

cfg = load_config()
cfg = cfg.replace(sim=replace(cfg.sim, d_grid_ms=(20.0, 40.0, 60.0, 80.0, 100.0)))
rows = ex.bound_vs_sim(cfg, np.random.default_rng(0), n_packets=2_000_000)
print("\n d_max   bound      simulated")
for d_max, bound, _, p, lo, hi, _ in rows:
    print(f"{d_max:5.0f}   {bound:.2e}   {p:.2e}  [{lo:.1e}, {hi:.1e}]")
