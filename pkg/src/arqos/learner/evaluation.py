"""Monte Carlo evaluation of UL/DL power policies on the tandem link.

A policy maps a batch of SINR vectors ``(n, n_rb)`` to per-RB powers. Each
link is evaluated on a fresh pool of slots: mean slot power, the
supermartingale audit from service times simulated by consuming the pool
slot by slot, and service times for the end-to-end run drawn by resampling
slots from the pool (slots are i.i.d., so this is a draw from the same law).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ..allocator import baseline_rate, baseline_service_slots, waterfill_at_level, waterfill_for_rate
from ..arrival import ArrivalParams, neg_mgf, sample_interarrival
from ..channel import ChannelParams, sample_slots, slot_rates
from ..queueing import TandemQueue, ViolationEstimate
from ..service_model import empirical_mgf
from ..snc import QosExponent, QosTarget
from .network import PolicyParams, water_level

__all__ = [
    "Policy",
    "learned_policy",
    "baseline_policy",
    "zero_policy",
    "RatePool",
    "rate_pool",
    "sequential_service_slots",
    "bootstrap_service_slots",
    "LinkReport",
    "EvalReport",
    "evaluate",
    "tandem_violation",
]

Policy = Callable[[np.ndarray], np.ndarray]

# a packet counts as delivered within this relative shortfall, so a rate of
# exactly m/k bits per slot takes k slots despite rounding in the sums
DELIVERY_RTOL = 1e-9


def learned_policy(params: PolicyParams, chunk: int = 4096, dtype=np.float32) -> Policy:
    params = params.astype(dtype)

    def policy(gamma):
        return waterfill_at_level(gamma, water_level(params, gamma, chunk=chunk))

    policy.kind = "learned"
    return policy


def baseline_policy(chan: ChannelParams, m_bits: float, q: QosExponent) -> Policy:
    """Fixed-service-time water-filling at the rate that spreads a packet over ``k`` slots."""
    k = baseline_service_slots(q, chan.slot_len)
    target = baseline_rate(m_bits, k, chan.slot_len)

    def policy(gamma):
        return waterfill_for_rate(gamma, target, chan.w0)

    policy.kind = "baseline"
    policy.k_slots = k
    return policy


def zero_policy(gamma):
    return np.zeros_like(np.asarray(gamma, dtype=float))


@dataclass(frozen=True)
class RatePool:
    """Per-slot delivered bits and total power of one policy on a batch of fresh slots."""

    bits: np.ndarray
    power: np.ndarray
    interfered: np.ndarray
    slot_len: float

    @property
    def rates(self) -> np.ndarray:
        return self.bits * 1000.0 / self.slot_len


def rate_pool(
    policies: dict[str, Policy],
    chan: ChannelParams,
    rng: np.random.Generator,
    n_slots: int,
    chunk: int = 20_000,
) -> dict[str, RatePool]:
    """Run every policy on the same ``n_slots`` fresh slots (common random numbers)."""
    bits = {k: np.empty(n_slots) for k in policies}
    power = {k: np.empty(n_slots) for k in policies}
    interfered = np.empty(n_slots, dtype=bool)
    for s in range(0, n_slots, chunk):
        n = min(chunk, n_slots - s)
        gamma, interf = sample_slots(chan, rng, n)
        interfered[s:s + n] = interf
        for name, pol in policies.items():
            p = pol(gamma)
            power[name][s:s + n] = p.sum(axis=-1)
            bits[name][s:s + n] = slot_rates(p, gamma, chan.w0) * chan.slot_len / 1000.0
    return {k: RatePool(bits[k], power[k], interfered, chan.slot_len) for k in policies}


def sequential_service_slots(slot_bits: np.ndarray, m_bits: float, cap: int) -> np.ndarray:
    """Service times from consuming ``slot_bits`` in order, one packet after another.

    Leftover bits of a packet's last slot are dropped. A packet not delivered
    within ``cap`` slots is recorded as ``cap + 1`` and the next packet starts
    after those ``cap`` slots. Stops when the slots run out.
    """
    csum = np.concatenate(([0.0], np.cumsum(slot_bits)))
    n = slot_bits.size
    need = m_bits * (1.0 - DELIVERY_RTOL)
    out = []
    start = 0
    while start < n:
        end = int(np.searchsorted(csum, csum[start] + need, side="left"))
        k = end - start
        if end > n and n - start < cap:
            break
        if k > cap:
            out.append(cap + 1)
            start += cap
        else:
            out.append(k)
            start = end
    return np.asarray(out, dtype=np.int64)


def bootstrap_service_slots(
    slot_bits: np.ndarray,
    m_bits: float,
    rng: np.random.Generator,
    n: int,
    cap: int,
    chunk: int = 500_000,
) -> np.ndarray:
    """``n`` service times, each built from slots resampled i.i.d. from ``slot_bits``.

    Undelivered packets after ``cap`` slots are recorded as ``cap + 1``.
    """
    slot_bits = np.asarray(slot_bits, dtype=float)
    need = m_bits * (1.0 - DELIVERY_RTOL)
    mean = slot_bits.mean()
    width = cap if mean <= 0 else int(min(cap, np.ceil(2.0 * m_bits / mean) + 8))
    out = np.empty(n, dtype=np.int64)
    for s in range(0, n, chunk):
        m = min(chunk, n - s)
        acc = np.zeros(m)
        k = np.full(m, cap + 1, dtype=np.int64)
        todo = np.arange(m)
        used = 0
        while todo.size and used < cap:
            w = min(width, cap - used)
            c = acc[todo, None] + np.cumsum(slot_bits[rng.integers(0, slot_bits.size, (todo.size, w))], axis=1)
            hit = c >= need
            done = hit[:, -1]
            k[todo[done]] = used + np.argmax(hit[done], axis=1) + 1
            acc[todo] = c[:, -1]
            todo = todo[~done]
            used += w
        out[s:s + m] = k
    return out


def tandem_violation(
    arr: ArrivalParams,
    service_ul_ms: Callable[[np.random.Generator, int], np.ndarray],
    service_dl_ms: Callable[[np.random.Generator, int], np.ndarray],
    d_grid,
    rng: np.random.Generator,
    n_packets: int,
    warmup: int | None = None,
    chunk: int = 1_000_000,
) -> list[ViolationEstimate]:
    """Streaming tandem simulation; violation estimates ``P(D >= d)`` for each ``d`` in ``d_grid``.

    ``service_*_ms(rng, n)`` return ``n`` service times in ms. The first
    ``warmup`` packets (default 10%) are simulated but not counted.
    """
    d_grid = np.atleast_1d(np.asarray(d_grid, dtype=float))
    if warmup is None:
        warmup = n_packets // 10
    if n_packets <= warmup:
        raise ValueError("no packets left after warmup")
    queue = TandemQueue()
    counts = np.zeros(d_grid.size, dtype=np.int64)
    for s in range(0, n_packets, chunk):
        m = min(chunk, n_packets - s)
        gaps = sample_interarrival(arr, rng, m)
        delays = queue.feed(gaps, service_ul_ms(rng, m), service_dl_ms(rng, m))
        kept = np.sort(delays[max(warmup - s, 0):])
        counts += kept.size - np.searchsorted(kept, d_grid, side="left")
    n = n_packets - warmup
    return [ViolationEstimate.from_counts(int(c), n) for c in counts]


@dataclass(frozen=True)
class LinkReport:
    mean_power: float
    power_se: float
    baseline_power: float
    gain: float
    audit_product: float
    audit_packets: int
    service_hist: np.ndarray = field(repr=False)


@dataclass(frozen=True)
class EvalReport:
    ul: LinkReport
    dl: LinkReport
    violation: ViolationEstimate
    d_max: float
    eps_max: float

    @property
    def audit_passed(self) -> bool:
        return self.ul.audit_product <= 1.01 and self.dl.audit_product <= 1.01

    def to_dict(self) -> dict:
        def link(r: LinkReport):
            return {
                "mean_power_w": r.mean_power,
                "power_se_w": r.power_se,
                "baseline_power_w": r.baseline_power,
                "gain": r.gain,
                "audit_product": r.audit_product,
                "audit_packets": r.audit_packets,
            }

        v = self.violation
        return {
            "ul": link(self.ul),
            "dl": link(self.dl),
            "violation": {"p": v.p, "lo": v.lo, "hi": v.hi, "se": v.se, "n": v.n},
            "d_max_ms": self.d_max,
            "eps_max": self.eps_max,
            "audit_passed": self.audit_passed,
        }


def _link_report(pools: dict[str, RatePool], m_bits: float, q: QosExponent, a_neg: float, cap: int) -> LinkReport:
    pool, base = pools["policy"], pools["baseline"]
    k = sequential_service_slots(pool.bits, m_bits, cap)
    product = empirical_mgf(k, q.theta, pool.slot_len) * a_neg if k.size else np.inf
    p_mean = float(pool.power.mean())
    b_mean = float(base.power.mean())
    return LinkReport(
        mean_power=p_mean,
        power_se=float(pool.power.std() / np.sqrt(pool.power.size)),
        baseline_power=b_mean,
        gain=(b_mean - p_mean) / b_mean,
        audit_product=float(product),
        audit_packets=int(k.size),
        service_hist=np.bincount(k, minlength=cap + 2) / max(k.size, 1),
    )


def evaluate(
    policies: tuple[Policy | PolicyParams, Policy | PolicyParams],
    chans: tuple[ChannelParams, ChannelParams],
    m_bits: tuple[float, float],
    arr: ArrivalParams,
    q: QosTarget,
    theta_star: QosExponent,
    rng: np.random.Generator,
    n_packets: int,
    n_pool: int = 1_000_000,
    cap: int | None = None,
) -> EvalReport:
    """Power, audit and end-to-end violation of a (UL, DL) policy pair.

    Each link gets ``n_pool`` fresh slots shared with the baseline policy,
    so evaluating the baseline against itself gives a gain of exactly zero.
    The service cap defaults to ``10 * d_max / T_f`` slots.
    """
    a_neg = float(neg_mgf(arr, theta_star.theta))
    reports, pools = [], []
    for pol, chan, m in zip(policies, chans, m_bits):
        if isinstance(pol, PolicyParams):
            pol = learned_policy(pol)
        link_cap = cap if cap is not None else int(np.ceil(10.0 * q.d_max / chan.slot_len))
        pool = rate_pool({"policy": pol, "baseline": baseline_policy(chan, m, theta_star)}, chan, rng, n_pool)
        reports.append(_link_report(pool, m, theta_star, a_neg, link_cap))
        pools.append((pool["policy"].bits, m, link_cap, chan.slot_len))

    def sampler(bits, m, link_cap, t_f):
        return lambda g, n: bootstrap_service_slots(bits, m, g, n, link_cap) * t_f

    (v,) = tandem_violation(arr, sampler(*pools[0]), sampler(*pools[1]), [q.d_max], rng, n_packets)
    return EvalReport(ul=reports[0], dl=reports[1], violation=v, d_max=q.d_max, eps_max=q.eps_max)
