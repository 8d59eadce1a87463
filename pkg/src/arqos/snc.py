"""Martingale delay-violation bounds for one node and a two-node tandem.

For a node whose service satisfies ``E[e^{theta delta}] E[e^{-theta tau}] <= 1``
the delay tail is bounded by ``A exp(-theta x)`` with ``A = 1/E[e^{-theta tau}]``.
Capping at one gives the sub-distribution ``fbar(x) = 1 - min(1, A e^{-theta x})``,
i.e. a shifted exponential starting at ``x0 = ln(A)/theta``. The tandem bound is
one minus the Stieltjes convolution of the two nodes' ``fbar``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import integrate, optimize

from .arrival import ArrivalParams, log_neg_mgf

__all__ = [
    "QosTarget",
    "QosExponent",
    "InfeasibleTargetError",
    "Feasibility",
    "single_bound",
    "fbar",
    "tandem_bound",
    "stieltjes_bound",
    "tandem_bound_at",
    "solve_theta_star",
    "feasibility_check",
    "max_feasible_theta",
    "min_tandem_bound",
]


class InfeasibleTargetError(ValueError):
    """No QoS exponent in the search range meets the target."""


@dataclass(frozen=True)
class QosTarget:
    d_max: float
    eps_max: float

    def __post_init__(self):
        if not self.d_max > 0:
            raise ValueError("d_max must be positive")
        if not 0.0 < self.eps_max < 1.0:
            raise ValueError("eps_max must lie in (0, 1)")


@dataclass(frozen=True)
class QosExponent:
    """QoS exponent ``theta`` (1/ms) and ``a_const = 1/E[e^{-theta tau}]``.

    ``at_bracket_edge`` marks a solver result pinned to the lower end of
    its search bracket (the target is met by any small exponent).
    """

    theta: float
    a_const: float
    at_bracket_edge: bool = False

    def __post_init__(self):
        if not self.theta > 0:
            raise ValueError("theta must be positive")
        if not self.a_const >= 1.0:
            raise ValueError("a_const must be >= 1")

    @classmethod
    def from_arrival(cls, arr: ArrivalParams, theta: float, **kw) -> "QosExponent":
        return cls(theta=float(theta), a_const=float(np.exp(-log_neg_mgf(arr, theta))), **kw)

    @property
    def x0(self) -> float:
        """Delay below which the single-node bound is capped at one."""
        return float(np.log(self.a_const) / self.theta)


def single_bound(q: QosExponent, d_max):
    """``min(1, A exp(-theta d_max))``."""
    out = np.minimum(1.0, q.a_const * np.exp(-q.theta * np.asarray(d_max, dtype=float)))
    return float(out) if np.ndim(out) == 0 else out


def fbar(q: QosExponent, x):
    """Capped complementary bound ``1 - min(1, A exp(-theta x))``; zero up to ``x0``."""
    x = np.asarray(x, dtype=float)
    out = np.where(x <= q.x0, 0.0, -np.expm1(-q.theta * (x - q.x0)))
    return float(out) if out.ndim == 0 else out


def _gamma2_tail(theta, x):
    """``P(Exp(theta) + Exp(theta) > x)``, equal to one for ``x <= 0``."""
    x = np.asarray(x, dtype=float)
    u = theta * np.maximum(x, 0.0)
    return np.where(x <= 0, 1.0, np.exp(-u) * (1.0 + u))


def tandem_bound(q_u: QosExponent, q_d: QosExponent, d_max):
    """``1 - (fbar_u * fbar_d)(d_max)`` in closed form for a shared ``theta``.

    Each ``fbar`` is ``x0 + Exp(theta)``, so the convolution is a shifted
    Erlang-2 law and the bound is ``e^{-theta x}(1 + theta x)`` with
    ``x = d_max - x0_u - x0_d`` (one for ``x <= 0``).
    """
    if not np.isclose(q_u.theta, q_d.theta, rtol=1e-12, atol=0.0):
        raise ValueError(f"tandem bound needs a shared theta, got {q_u.theta} and {q_d.theta}")
    out = _gamma2_tail(q_u.theta, np.asarray(d_max, dtype=float) - q_u.x0 - q_d.x0)
    return float(out) if np.ndim(out) == 0 else out


def stieltjes_bound(q_u: QosExponent, q_d: QosExponent, d_max: float) -> float:
    """Numerical ``1 - integral fbar_u(d_max - y) dfbar_d(y)`` for arbitrary exponents.

    ``fbar_d`` is split into a possible atom at the start of its support and
    an absolutely continuous part; the integral is broken at the kink of
    ``fbar_u(d_max - y)``.
    """
    start = max(q_d.x0, 0.0)
    if d_max <= start:
        return 1.0
    atom = float(fbar(q_d, start))
    total = atom * float(fbar(q_u, d_max - start))

    def integrand(y):
        return float(fbar(q_u, d_max - y)) * q_d.theta * np.exp(-q_d.theta * (y - q_d.x0))

    kink = d_max - max(q_u.x0, 0.0)
    upper = min(d_max, kink)
    if upper > start:
        val, _ = integrate.quad(integrand, start, upper, epsabs=1e-14, epsrel=1e-12, limit=200)
        total += val
    return float(min(1.0, max(0.0, 1.0 - total)))


def tandem_bound_at(arr: ArrivalParams, theta, d_max: float):
    """Tandem bound as a function of ``theta`` for identical nodes; vectorized."""
    theta = np.asarray(theta, dtype=float)
    log_a = -log_neg_mgf(arr, theta)
    # x = d_max - 2 x0, written as theta * x to stay finite when A overflows
    u = theta * d_max - 2.0 * log_a
    out = np.where(u <= 0, 1.0, np.exp(-np.maximum(u, 0.0)) * (1.0 + np.maximum(u, 0.0)))
    return float(out) if out.ndim == 0 else out


def solve_theta_star(
    arr: ArrivalParams,
    q: QosTarget,
    lo: float = 1e-6,
    cap: float = 1e3,
    tol: float = 1e-10,
) -> QosExponent:
    """Smallest ``theta`` at which the tandem bound equals ``eps_max``.

    The bracket starts at ``[lo, lo]`` and its upper end doubles until the
    bound falls below target; a grid scan then isolates the first crossing
    and plain bisection finishes it.
    """
    def excess(theta):
        return tandem_bound_at(arr, theta, q.d_max) - q.eps_max

    if excess(lo) <= 0:
        return QosExponent.from_arrival(arr, lo, at_bracket_edge=True)
    hi = lo
    while excess(hi) > 0:
        hi *= 2.0
        if hi > cap:
            raise InfeasibleTargetError(
                f"tandem bound stays above {q.eps_max} for theta up to {cap}/ms at d_max={q.d_max} ms"
            )
    a = hi / 2.0
    grid = np.linspace(a, hi, 65)
    below = np.flatnonzero(excess(grid) <= 0)
    a, b = grid[below[0] - 1], grid[below[0]]

    fa = excess(a)
    for _ in range(200):
        mid = 0.5 * (a + b)
        fm = excess(mid)
        if abs(fm) <= tol or b - a <= 4 * np.finfo(float).eps * b:
            break
        if (fm > 0) == (fa > 0):
            a, fa = mid, fm
        else:
            b = mid
    return QosExponent.from_arrival(arr, mid)


@dataclass(frozen=True)
class Feasibility:
    feasible: bool
    slack: float
    product: float


def feasibility_check(service_mgf: float, arr_neg_mgf: float) -> Feasibility:
    """Test ``E[e^{theta delta}] E[e^{-theta tau}] <= 1``; slack is one minus the product."""
    product = float(service_mgf) * float(arr_neg_mgf)
    return Feasibility(feasible=product <= 1.0, slack=1.0 - product, product=product)


def max_feasible_theta(
    arr: ArrivalParams,
    service_log_mgf: Callable[[float], float],
    theta_hi: float,
) -> float:
    """Largest ``theta < theta_hi`` with ``log E[e^{theta delta}] + log E[e^{-theta tau}] <= 0``.

    ``service_log_mgf`` may return ``inf`` beyond its domain.
    """
    def g(theta):
        return service_log_mgf(theta) + log_neg_mgf(arr, theta)

    grid = np.linspace(0.0, theta_hi, 2001)[1:]
    vals = np.array([g(t) for t in grid])
    bad = np.flatnonzero(~(vals <= 0))
    if bad.size == 0:
        return float(theta_hi)
    if bad[0] == 0:
        raise InfeasibleTargetError("service violates the stability condition for every theta > 0")
    lo, hi = grid[bad[0] - 1], grid[bad[0]]
    if not np.isfinite(g(hi)):
        while hi - lo > 1e-14 * hi:
            mid = 0.5 * (lo + hi)
            lo, hi = (mid, hi) if g(mid) <= 0 else (lo, mid)
        return float(lo)
    return float(optimize.brentq(g, lo, hi, xtol=1e-15))


def min_tandem_bound(arr: ArrivalParams, theta_max: float, d_max: float) -> tuple[float, float]:
    """Tightest tandem bound over ``theta`` in ``(0, theta_max]``; returns ``(bound, theta)``."""
    grid = np.linspace(theta_max / 400, theta_max, 400)
    vals = tandem_bound_at(arr, grid, d_max)
    i = int(np.argmin(vals))
    if vals[i] >= 1.0:
        return 1.0, float(theta_max)
    lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, grid.size - 1)]
    res = optimize.minimize_scalar(
        lambda t: tandem_bound_at(arr, t, d_max), bounds=(lo, hi), method="bounded",
        options={"xatol": 1e-12},
    )
    if res.fun < vals[i]:
        return float(res.fun), float(res.x)
    return float(vals[i]), float(grid[i])
