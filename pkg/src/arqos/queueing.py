"""Exact FIFO packet delays for one node and for a two-node tandem.

The per-node sojourn time obeys the Lindley recursion
``D(n) = delta(n) + max(0, D(n-1) - tau(n-1))``, which equals the max-plus
form ``max_m [sum_{k=m}^{n} delta(k) - sum_{k=m}^{n-1} tau(k)]``. The
recursion is evaluated in closed form over whole arrays with a running
minimum, so long traces never loop in Python.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from statsmodels.stats.proportion import proportion_confint

__all__ = [
    "Trace",
    "ViolationEstimate",
    "sojourn_times",
    "delay_single",
    "delay_tandem",
    "TandemQueue",
    "empirical_violation",
    "violation_counts",
]


@dataclass(frozen=True)
class Trace:
    """Inter-arrival and service times (ms) of ``n`` consecutive packets.

    ``interarrivals[k]`` separates packet ``k`` from packet ``k + 1``.
    """

    interarrivals: np.ndarray
    service1: np.ndarray
    service2: np.ndarray | None = None

    def __post_init__(self):
        tau = np.asarray(self.interarrivals, dtype=float)
        s1 = np.asarray(self.service1, dtype=float)
        object.__setattr__(self, "interarrivals", tau)
        object.__setattr__(self, "service1", s1)
        if self.service2 is not None:
            s2 = np.asarray(self.service2, dtype=float)
            object.__setattr__(self, "service2", s2)
            if s2.shape != s1.shape:
                raise ValueError("service1 and service2 must have equal length")
        if s1.ndim != 1 or s1.size < 1:
            raise ValueError("need at least one packet")
        if tau.shape != (s1.size - 1,):
            raise ValueError(f"expected {s1.size - 1} inter-arrival times, got {tau.size}")
        if np.any(tau < 0) or np.any(s1 < 0) or (self.service2 is not None and np.any(self.service2 < 0)):
            raise ValueError("trace entries must be nonnegative")

    def __len__(self):
        return self.service1.size

    def to_csv(self, path) -> None:
        """Write columns ``tau_ms, delta1_ms, delta2_ms``; the last row has no ``tau_ms``."""
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["tau_ms", "delta1_ms", "delta2_ms"])
            for k in range(len(self)):
                tau = repr(float(self.interarrivals[k])) if k < len(self) - 1 else ""
                d2 = "" if self.service2 is None else repr(float(self.service2[k]))
                writer.writerow([tau, repr(float(self.service1[k])), d2])

    @classmethod
    def from_csv(cls, path) -> "Trace":
        with open(Path(path), newline="") as fh:
            rows = list(csv.DictReader(fh))
        if not rows:
            raise ValueError(f"{path}: no packets")
        tau = [float(r["tau_ms"]) for r in rows[:-1]]
        s1 = [float(r["delta1_ms"]) for r in rows]
        has2 = all(r.get("delta2_ms") not in (None, "") for r in rows)
        s2 = [float(r["delta2_ms"]) for r in rows] if has2 else None
        return cls(np.array(tau), np.array(s1), None if s2 is None else np.array(s2))


def sojourn_times(gaps: np.ndarray, services: np.ndarray, prev: float | None = None) -> np.ndarray:
    """Sojourn times of a FIFO node.

    ``gaps[j]`` is the time between the arrivals of packets ``j - 1`` and
    ``j``; ``gaps[0]`` matters only when ``prev``, the sojourn time of the
    packet preceding this batch, is given.
    """
    gaps = np.asarray(gaps, dtype=float)
    services = np.asarray(services, dtype=float)
    w0 = 0.0 if prev is None else max(0.0, prev - gaps[0])
    s = np.empty(services.size)
    s[0] = 0.0
    np.cumsum(services[:-1] - gaps[1:], out=s[1:])
    wait = s - np.minimum(np.minimum.accumulate(s), -w0)
    return wait + services


def delay_single(trace: Trace) -> np.ndarray:
    """Per-packet delay through node 1 of ``trace``."""
    gaps = np.concatenate(([0.0], trace.interarrivals))
    return sojourn_times(gaps, trace.service1)


def delay_tandem(trace: Trace) -> np.ndarray:
    """End-to-end delay through both nodes; node 2 is fed by node-1 departures."""
    if trace.service2 is None:
        raise ValueError("tandem delay needs service2")
    d1 = delay_single(trace)
    gaps2 = np.concatenate(([0.0], trace.interarrivals + np.diff(d1)))
    return d1 + sojourn_times(gaps2, trace.service2)


class TandemQueue:
    """Streaming two-node tandem; feed packets in chunks of any size."""

    def __init__(self):
        self._d1 = None
        self._d2 = None

    def feed(self, gaps: np.ndarray, service1: np.ndarray, service2: np.ndarray) -> np.ndarray:
        """End-to-end delays of the next ``len(gaps)`` packets.

        ``gaps[0]`` is the inter-arrival time from the last packet of the
        previous chunk (ignored for the very first chunk).
        """
        gaps = np.asarray(gaps, dtype=float)
        d1 = sojourn_times(gaps, service1, self._d1)
        gaps2 = np.empty_like(gaps)
        gaps2[1:] = gaps[1:] + np.diff(d1)
        gaps2[0] = 0.0 if self._d1 is None else gaps[0] + d1[0] - self._d1
        d2 = sojourn_times(gaps2, service2, self._d2)
        self._d1, self._d2 = float(d1[-1]), float(d2[-1])
        return d1 + d2


@dataclass(frozen=True)
class ViolationEstimate:
    """Fraction of packets with delay >= d_max and its Wilson 95% interval."""

    p: float
    lo: float
    hi: float
    n: int
    count: int

    @property
    def se(self) -> float:
        return float(np.sqrt(self.p * (1.0 - self.p) / self.n))

    @classmethod
    def from_counts(cls, count: int, n: int) -> "ViolationEstimate":
        lo, hi = proportion_confint(count, n, alpha=0.05, method="wilson")
        return cls(p=count / n, lo=float(lo), hi=float(hi), n=int(n), count=int(count))


def empirical_violation(delays: np.ndarray, d_max: float, warmup: int | None = None) -> ViolationEstimate:
    """Post-warmup violation frequency; warmup defaults to the first 10%."""
    delays = np.asarray(delays, dtype=float)
    if warmup is None:
        warmup = delays.size // 10
    if delays.size <= warmup:
        raise ValueError("no packets left after warmup")
    kept = delays[warmup:]
    return ViolationEstimate.from_counts(int(np.count_nonzero(kept >= d_max)), kept.size)


def violation_counts(delays: np.ndarray, d_grid) -> np.ndarray:
    """Number of delays >= each threshold in ``d_grid``."""
    srt = np.sort(np.asarray(delays, dtype=float))
    return srt.size - np.searchsorted(srt, np.asarray(d_grid, dtype=float), side="left")
