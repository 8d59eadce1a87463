"""Delay-violation bounds and power-minimizing resource allocation for an AR tandem link."""

from .arrival import ArrivalParams, generate_arrivals, neg_mgf, sample_interarrival
from .channel import ChannelParams, SlotChannel, sample_slot, slot_rate, simulate_service_time
from .queueing import Trace, delay_single, delay_tandem, empirical_violation
from .snc import (
    InfeasibleTargetError,
    QosExponent,
    QosTarget,
    feasibility_check,
    fbar,
    single_bound,
    solve_theta_star,
    tandem_bound,
)
from .service_model import RateStats, ServiceTimeDist, estimate_stats, service_cdf, service_mgf, service_pmf
from .allocator import (
    baseline_average_power,
    baseline_service_slots,
    waterfill_at_level,
    waterfill_for_rate,
)

__version__ = "0.1.0"
