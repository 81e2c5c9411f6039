"""Companion-eigenvalue certificate and determinant cross-check tests."""

import numpy as np
import pytest

from ratiopid import GpcGains, StateSpace, discretize
from ratiopid.stability import (
    build_companion,
    check_stability,
    determinant_residual,
    factored_determinant,
    simulate_delay_recursion,
)

from test_fopdt import chamber_plant, random_plant, zone_plant
from test_schedule import design_for


def scalar_single_input(feedback):
    """1-state loop with the second input disconnected."""
    ss = StateSpace(F=np.array([[0.0]]), G=np.array([[1.0, 0.0]]),
                    E=np.array([[0.0, 0.0]]), M=np.eye(1), N=np.zeros((1, 2)))
    gains = GpcGains(K_gpc=np.array([[feedback], [0.0]]),
                     K_ref=np.zeros((2, 2)), horizon=1)
    return ss, gains


def test_scalar_companion_roots_by_hand():
    # lifted law x(k+1) = g * gbar * x(k-1) with g = gbar = sqrt(0.5):
    # lambda^2 = 0.5, so the two modes are +/- sqrt(0.5)
    ss, gains = scalar_single_input(np.sqrt(0.5))
    A = build_companion(ss, gains, 1, 1)
    assert A.shape == (2, 2)
    report = check_stability(ss, gains, 1, 1)
    got = np.sort_complex(report.eigenvalues)
    assert np.allclose(got, [-0.7071067811865476, 0.7071067811865476], atol=1e-12)
    assert report.stable
    assert report.spectral_radius == pytest.approx(0.7071067811865476, abs=1e-12)
    assert report.corollary_radius == pytest.approx(0.7071067811865476, abs=1e-12)
    for lam in report.eigenvalues:
        assert abs(determinant_residual(ss, gains, 1, 1, lam)) < 1e-12


def test_delay_free_companion_is_closed_loop():
    rng = np.random.default_rng(71)
    plant = random_plant(rng, max_delay=0)
    dp, ss, gains = design_for(plant, horizon=3)
    A = build_companion(ss, gains, 0, 0)
    assert A.shape == (6, 6)
    assert np.allclose(A, ss.F + ss.G @ gains.K_gpc, atol=1e-14)


def test_companion_dimensions():
    dp, ss, gains = design_for(zone_plant(), horizon=5,
                               q1=[10, 0, 0.007, 50, 0, 0.1],
                               beta=10.0, gamma=0.1, eps=0.6)
    assert build_companion(ss, gains, dp.h1, dp.h2).shape == (486, 486)

    dpc, ssc, gainsc = design_for(chamber_plant(), horizon=5,
                                  q1=[1, 0, 0.001, 1, 0, 0.001],
                                  beta=5.0, gamma=0.15, eps=5.0)
    assert build_companion(ssc, gainsc, dpc.h1, dpc.h2).shape == (366, 366)


def test_zero_gain_integrators_reported_unstable():
    dp = discretize(zone_plant())
    from ratiopid import assemble_state_space
    ss = assemble_state_space(dp)
    gains = GpcGains(K_gpc=np.zeros((2, 6)), K_ref=np.zeros((2, 10)), horizon=5)
    report = check_stability(ss, gains, dp.h1, dp.h2)
    assert not report.stable
    assert report.spectral_radius == pytest.approx(1.0, abs=1e-9)
    assert report.corollary_radius == pytest.approx(1.0, abs=1e-9)


def test_residual_vanishes_on_reference_design():
    dp, ss, gains = design_for(zone_plant(), horizon=5,
                               q1=[10, 0, 0.007, 50, 0, 0.1],
                               beta=10.0, gamma=0.1, eps=0.6)
    report = check_stability(ss, gains, dp.h1, dp.h2)
    assert report.stable
    order = np.argsort(-np.abs(report.eigenvalues))
    for lam in report.eigenvalues[order[:12]]:
        res = determinant_residual(ss, gains, dp.h1, dp.h2, lam, normalized=True)
        assert abs(res) < 1e-6


def test_factorization_identity():
    rng = np.random.default_rng(83)
    for _ in range(4):
        plant = random_plant(rng, max_delay=5)
        dp, ss, gains = design_for(plant, horizon=int(rng.integers(1, 5)),
                                   eps=float(rng.uniform(0.3, 3.0)))
        for _ in range(10):
            lam = complex(rng.uniform(-1.3, 1.3), rng.uniform(-1.3, 1.3))
            if abs(lam) < 0.2:
                lam += 0.5
            direct = determinant_residual(ss, gains, dp.h1, dp.h2, lam)
            factored = factored_determinant(ss, gains, dp.h1, dp.h2, lam)
            scale = max(abs(direct), abs(factored), 1e-300)
            assert abs(direct - factored) / scale < 1e-8


def test_stable_verdict_implies_corollary():
    rng = np.random.default_rng(97)
    seen_stable = 0
    for _ in range(12):
        plant = random_plant(rng, max_delay=4)
        dp, ss, gains = design_for(
            plant, horizon=int(rng.integers(1, 5)),
            q1=[1.0, 0.0, float(rng.uniform(0.001, 0.1)), 1.0, 0.0,
                float(rng.uniform(0.001, 0.1))],
            beta=float(rng.uniform(0.0, 2.0)), gamma=float(rng.uniform(0.0, 0.2)),
            eps=float(rng.uniform(0.5, 10.0)))
        report = check_stability(ss, gains, dp.h1, dp.h2)
        if report.stable:
            seen_stable += 1
            assert report.corollary_radius < 1.0
    assert seen_stable >= 3


def test_verdict_agrees_with_direct_iteration():
    rng = np.random.default_rng(101)
    outcomes = set()
    for trial in range(8):
        plant = random_plant(rng, max_delay=4)
        eps = float(rng.choice([1e-4, 0.5, 5.0]))
        dp, ss, gains = design_for(plant, horizon=int(rng.integers(1, 4)), eps=eps)
        report = check_stability(ss, gains, dp.h1, dp.h2)
        if abs(report.spectral_radius - 1.0) < 1e-3:
            continue
        x0 = rng.normal(size=6)
        steps = min(int(np.ceil(50.0 / (1.0 - report.spectral_radius))), 60000) \
            if report.stable else 4000
        norms = simulate_delay_recursion(ss, gains, dp.h1, dp.h2, x0, steps)
        decayed = norms[-1] < 1e-6 * np.linalg.norm(x0)
        assert decayed == report.stable
        outcomes.add(report.stable)
    assert outcomes == {True, False}
