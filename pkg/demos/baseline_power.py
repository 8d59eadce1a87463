"""
Fixed-service-time baseline
===========================

The baseline spends exactly ``k`` slots per packet: each slot it
water-fills to the rate ``M / k``. ``k`` is the largest service time whose
MGF still fits the budget ``A``.
"""

import numpy as np

from arqos import ArrivalParams, ChannelParams, QosTarget, solve_theta_star
from arqos.allocator import baseline_average_power, baseline_service_slots, waterfill_at_level

q = solve_theta_star(ArrivalParams.from_fps(120), QosTarget(20.0, 1e-3))
k = baseline_service_slots(q, 1.0)
print(f"baseline service time: {k} slots")

# Water-filling in one picture: RBs below the level 1/gamma get nothing.
gamma = np.array([4.0, 2.0, 1.0, 0.5])
print("powers at level 1.0:", waterfill_at_level(gamma, 1.0))

###############################################################################
# Average power grows with interference. The downlink carries 10x the bits
# over 133 RBs instead of 52.

rng = np.random.default_rng(1)
for inr in (0.0, 10.0, 20.0):
    ul = baseline_average_power(ChannelParams.from_db(52, inr), 1e5, k, rng, 20_000)
    dl = baseline_average_power(ChannelParams.from_db(133, inr), 1e6, k, rng, 20_000)
    print(f"INR {inr:4.0f} dB   UL {ul.mean * 1e3:8.3f} mW   DL {dl.mean:7.3f} W")
