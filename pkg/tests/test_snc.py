import numpy as np
import pytest
from scipy import integrate

from arqos.arrival import ArrivalParams, neg_mgf
from arqos.snc import (
    InfeasibleTargetError,
    QosExponent,
    QosTarget,
    fbar,
    feasibility_check,
    max_feasible_theta,
    min_tandem_bound,
    single_bound,
    solve_theta_star,
    stieltjes_bound,
    tandem_bound,
    tandem_bound_at,
)


def test_types_validate():
    for bad in [dict(d_max=0, eps_max=0.1), dict(d_max=1, eps_max=0), dict(d_max=1, eps_max=1)]:
        with pytest.raises(ValueError):
            QosTarget(**bad)
    with pytest.raises(ValueError):
        QosExponent(0.0, 1.0)
    with pytest.raises(ValueError):
        QosExponent(0.5, 0.9)


def test_single_bound_examples():
    q = QosExponent(0.5, 1.2)
    assert single_bound(q, 0.0) == 1.0
    assert single_bound(q, 20.0) == pytest.approx(1.2 * np.exp(-10.0), rel=1e-14)
    assert single_bound(q, 20.0) == pytest.approx(5.45e-5, rel=1e-3)
    assert single_bound(q, 1e4) == 0.0


def test_fbar_examples():
    q = QosExponent(0.5, 1.2)
    assert fbar(q, q.x0) == 0.0
    assert fbar(q, 10.0) == pytest.approx(1 - 1.2 * np.exp(-5.0), rel=1e-14)
    assert fbar(q, 1e4) == 1.0
    x = np.linspace(-5, 40, 500)
    assert np.all(np.diff(fbar(q, x)) >= 0)


def test_tandem_bound_examples():
    q = QosExponent(0.5, 1.2)
    assert tandem_bound(q, q, 2 * q.x0) == 1.0
    assert tandem_bound(q, q, 1e4) == 0.0
    assert tandem_bound(q, q, 30.0) == pytest.approx(stieltjes_bound(q, q, 30.0), abs=1e-8)


def test_tandem_rejects_mismatched_theta():
    with pytest.raises(ValueError):
        tandem_bound(QosExponent(0.5, 1.2), QosExponent(0.6, 1.2), 10.0)


def test_tandem_closed_form_by_direct_convolution():
    # independent check: 1 - P(U + V <= d) with U, V ~ x0 + Exp(theta)
    q = QosExponent(0.3, 2.5)
    for d in [3.0, 7.0, 15.0, 40.0]:
        cdf, _ = integrate.quad(lambda y: q.theta * np.exp(-q.theta * y) * (1 - np.exp(-q.theta * max(d - 2 * q.x0 - y, 0))),
                                0, max(d - 2 * q.x0, 0), epsabs=1e-14)
        assert tandem_bound(q, q, d) == pytest.approx(1 - cdf, abs=1e-12)


def test_stieltjes_general_path_unequal_parameters():
    qu, qd = QosExponent(0.4, 1.5), QosExponent(0.7, 3.0)
    # exact tail of (x0u + Exp(a)) + (x0d + Exp(b)) with a != b
    a, b = qu.theta, qd.theta
    for d in [2.0, 5.0, 12.0, 30.0]:
        x = d - qu.x0 - qd.x0
        exact = 1.0 if x <= 0 else (b * np.exp(-a * x) - a * np.exp(-b * x)) / (b - a)
        assert stieltjes_bound(qu, qd, d) == pytest.approx(exact, abs=1e-10)


def test_bounds_ordering_and_range():
    for theta, a in [(0.1, 1.0), (0.5, 1.2), (2.0, 50.0)]:
        q = QosExponent(theta, a)
        d = np.linspace(0, 60, 601)
        s, t = single_bound(q, d), tandem_bound(q, q, d)
        assert np.all((0 <= t) & (t <= 1)) and np.all((0 <= s) & (s <= 1))
        assert np.all(np.diff(t) <= 0) and np.all(np.diff(s) <= 0)
        assert np.all(t >= s - 1e-15)


def test_closed_vs_numerical_grid():
    worst = 0.0
    for theta in np.geomspace(0.05, 3.0, 10):
        for a in np.geomspace(1.0, 1e3, 10):
            q = QosExponent(theta, a)
            for d in np.linspace(0.5, 4 * q.x0 + 20 / theta, 20):
                worst = max(worst, abs(tandem_bound(q, q, d) - stieltjes_bound(q, q, d)))
    assert worst < 1e-8


def test_tandem_bound_at_matches_objects(arr):
    for theta in [0.05, 0.5, 1.2675, 3.0]:
        q = QosExponent.from_arrival(arr, theta)
        assert tandem_bound_at(arr, theta, 20.0) == pytest.approx(tandem_bound(q, q, 20.0), rel=1e-12, abs=1e-300)
    assert q.a_const == pytest.approx(1 / neg_mgf(arr, 3.0))


def test_theta_star_table_settings(arr, target, q_star):
    b = tandem_bound(q_star, q_star, target.d_max)
    assert abs(b - target.eps_max) <= 1e-9
    assert not q_star.at_bracket_edge
    # independent dense grid: first theta on a fine grid whose bound is <= eps
    grid = np.arange(1e-6, 5.0, 1e-6)
    vals = tandem_bound_at(arr, grid, target.d_max)
    first = grid[np.argmax(vals <= target.eps_max)]
    assert abs(first - q_star.theta) <= 1e-6
    assert q_star.theta == pytest.approx(1.2675122, abs=1e-6)
    assert q_star.a_const == pytest.approx(3160.28, rel=1e-5)


def test_theta_star_monotone_in_d_max(arr):
    prev = np.inf
    for d in [20.0, 40.0, 80.0, 160.0]:
        q = solve_theta_star(arr, QosTarget(d, 1e-3))
        assert abs(tandem_bound(q, q, d) - 1e-3) <= 1e-9
        assert q.theta < prev
        prev = q.theta
    q20 = solve_theta_star(arr, QosTarget(20.0, 1e-3))
    assert tandem_bound(q20, q20, 40.0) < tandem_bound(q20, q20, 20.0)


def test_theta_star_bracket_edge(arr):
    q = solve_theta_star(arr, QosTarget(20.0, 1 - 1e-13))
    assert q.at_bracket_edge and q.theta == pytest.approx(1e-6)


def test_theta_star_loose_target_small_exponent(arr):
    q = solve_theta_star(arr, QosTarget(20.0, 0.999))
    assert 0 < q.theta < 0.05 and abs(tandem_bound(q, q, 20.0) - 0.999) < 1e-9


def test_theta_star_infeasible(arr):
    with pytest.raises(InfeasibleTargetError):
        solve_theta_star(arr, QosTarget(1.5, 1e-9))


def test_feasibility_examples():
    f = feasibility_check(1.0, 1.0)
    assert f.feasible and f.slack == 0.0
    f = feasibility_check(np.exp(0.5), 0.9 / np.exp(0.5))
    assert f.feasible and f.slack == pytest.approx(0.1)
    assert not feasibility_check(2.0, 0.6).feasible


def test_unstable_service_infeasible_everywhere(arr):
    # deterministic service longer than the mean gap
    delta = arr.mean() + 1.0
    for theta in np.linspace(1e-3, 5, 200):
        assert not feasibility_check(np.exp(theta * delta), neg_mgf(arr, theta)).feasible
    with pytest.raises(InfeasibleTargetError):
        max_feasible_theta(arr, lambda t: t * delta, 5.0)


def test_max_feasible_theta_exponential(arr):
    mean = 5.0
    tmax = max_feasible_theta(arr, lambda t: -np.log1p(-t * mean) if t * mean < 1 else np.inf, 0.2 - 1e-12)
    assert -np.log1p(-tmax * mean) + np.log(neg_mgf(arr, tmax)) == pytest.approx(0.0, abs=1e-10)
    bound, theta = min_tandem_bound(arr, tmax, 60.0)
    assert 0 < bound < 1 and 0 < theta <= tmax
    grid = np.linspace(tmax / 1000, tmax, 1000)
    assert bound <= tandem_bound_at(arr, grid, 60.0).min() + 1e-15
