"""Staged weight selection for the predictive ratio controller.

The pipeline follows the classical loop-shaping order: identify each
diagonal loop's ultimate gain and period, fix the proportional weights
from their squared ratio, shrink the input penalty until the actuator or
overshoot limit binds, grow the integral weights while the step response
keeps improving, then sweep the ratio weights.  Every accepted candidate
is re-checked against the delay-system stability certificate, so an
unstable design can never be emitted.

All searches walk fixed deterministic grids; rerunning a stage with the
same context reproduces the same trace entry for entry.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import NoCrossover, NoFeasibleEpsilon
from .fopdt_model import DiscretePlant, discretize
from .simulator import DesignSpec, PredictivePid, Scenario, run
from .stability import check_stability

_EPS_FLOOR_STEPS = 20      # epsilon grid bottoms out at epsilon0 / 2**20
_INTEGRAL_STEPS = 14       # doublings tried above the integral seed
_INTEGRAL_SEED = 2.5e-4    # first I1 candidate as a fraction of P1


@dataclass(frozen=True)
class UltimateLoopData:
    """Proportional gain and oscillation period at a loop's stability edge."""

    ku: float
    tu: float

    def __post_init__(self):
        object.__setattr__(self, "ku", float(self.ku))
        object.__setattr__(self, "tu", float(self.tu))
        if not self.ku > 0.0:
            raise ValueError("ultimate gain must be positive")
        if not self.tu > 0.0:
            raise ValueError("ultimate period must be positive")


@dataclass(frozen=True)
class TuningResult:
    p1: float
    p2: float
    i1: float
    i2: float
    epsilon: float
    beta: float
    gamma: float
    trace: tuple = ()

    @property
    def q1_diag(self) -> tuple:
        return (self.p1, 0.0, self.i1, self.p2, 0.0, self.i2)


@dataclass(frozen=True)
class TuningContext:
    """Scenario plus search knobs shared by all tuning stages.

    The scenario's input bounds define the actuator set for the epsilon
    search; the simulations themselves run unclamped so a violation is
    observable.  Fractions are relative to the setpoint step size.
    """

    scenario: Scenario
    horizon: int = 5
    epsilon0: float = 10.0
    overshoot_fraction: float = 0.005
    integral_overshoot_fraction: float = 0.02
    settle_fraction: float = 0.05
    ratio_band_fraction: float = 0.02
    beta_grid: tuple = (0.1, 0.3, 1.0, 3.0, 10.0, 30.0, 100.0)
    gamma_grid: tuple = (0.01, 0.03, 0.1, 0.3, 1.0)
    fallback_p_ratio: float = 1.0
    fallback_i_ratio: float = 1.0

    def __post_init__(self):
        if self.epsilon0 <= 0.0:
            raise ValueError("epsilon0 must be positive")


def find_ultimate(dp: DiscretePlant, loop_index: int) -> UltimateLoopData:
    """Stability-boundary gain and period of one diagonal loop.

    The loop is b*z^-h/(z + a) under proportional feedback: the gain is
    bisected until the closed-loop characteristic polynomial
    z^(h+1) + a*z^h + K*b has its dominant root on the unit circle, and
    the period comes from that root's angle.  Raises NoCrossover when the
    boundary crossing sits at zero or Nyquist frequency (a zero-delay
    first-order loop has no -180 degree phase crossing below Nyquist);
    callers fall back to a configured weight ratio in that case.
    """
    if loop_index not in (0, 1):
        raise ValueError("loop_index must be 0 or 1")
    a = float(dp.a[loop_index, loop_index])
    b = float(dp.b[loop_index, loop_index])
    h = (dp.h1, dp.h2)[loop_index]
    if b == 0.0:
        raise ValueError("diagonal path has zero gain")

    def dominant_root(k):
        poly = np.zeros(h + 2)
        poly[0] = 1.0
        poly[1] = a
        poly[-1] += k * b
        roots = np.roots(poly)
        return roots[np.argmax(np.abs(roots))]

    lo, hi = 0.0, 1.0 / abs(b)
    for _ in range(200):
        if abs(dominant_root(hi)) >= 1.0:
            break
        lo, hi = hi, hi * 2.0
    else:
        raise NoCrossover("no destabilizing proportional gain found")
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        if abs(dominant_root(mid)) >= 1.0:
            hi = mid
        else:
            lo = mid
    ku = 0.5 * (lo + hi)
    angle = abs(np.angle(dominant_root(ku)))
    if angle < 1e-9 or angle > np.pi - 1e-9:
        raise NoCrossover(
            "boundary root crosses at zero or Nyquist frequency")
    return UltimateLoopData(ku=ku, tu=2.0 * np.pi * dp.sample_time / angle)


def _evaluate(context, q1_diag, epsilon, beta=0.0, gamma=0.0):
    """One unclamped closed-loop run plus the stability certificate."""
    design = DesignSpec(horizon=context.horizon, q1_diag=tuple(q1_diag),
                        epsilon=epsilon, beta=beta, gamma=gamma)
    scenario = replace(context.scenario, input_bounds=None)
    result = run(scenario, PredictivePid(design=design))
    rt = result.extras["runtime"]
    report = check_stability(rt.ss, rt.gains, rt.dp.h1, rt.dp.h2)
    return result, report


def _step_scale(scenario) -> np.ndarray:
    """Per-channel setpoint excursion from the ambient starting level."""
    r_final = scenario.setpoints_abs(scenario.samples)[-1]
    return np.maximum(np.abs(r_final - scenario.ambient), 1e-12)


def _overshoot_fractions(result, scenario) -> np.ndarray:
    """Largest excursion beyond the final setpoint, as a step fraction."""
    y = np.stack([result.y1, result.y2], axis=1)
    r = np.stack([result.r1, result.r2], axis=1)
    r_final = r[-1]
    sign = np.sign(r_final - scenario.ambient)
    sign[sign == 0.0] = 1.0
    exceed = (y - r_final) * sign / _step_scale(scenario)
    return exceed.max(axis=0)


def _settle_seconds(result, scenario, fraction) -> float:
    """Time after which both outputs stay within the settling band."""
    y = np.stack([result.y1, result.y2], axis=1)
    r_final = np.stack([result.r1, result.r2], axis=1)[-1]
    off_band = np.abs(y - r_final) / _step_scale(scenario) > fraction
    bad = np.nonzero(off_band.any(axis=1))[0]
    if len(bad) == 0:
        return 0.0
    if bad[-1] == len(result.time) - 1:
        return scenario.duration
    return float((bad[-1] + 1) * scenario.sample_time)


def _inside_bounds(result, bounds) -> bool:
    if bounds is None:
        return True
    u = np.stack([result.u1, result.u2], axis=1)
    for j, (lo, hi) in enumerate(bounds):
        if u[:, j].min() < lo or u[:, j].max() > hi:
            return False
    return True


def tune_epsilon(context: TuningContext, p1: float, p2: float,
                 trace=None) -> float:
    """Smallest input penalty keeping the loop in-bounds and overshoot-free.

    Walks a factor-2 grid down from epsilon0, brackets the feasibility
    edge, bisects it to 5 percent, then slides further down if the half
    value unexpectedly stays feasible so the returned epsilon always has
    an infeasible half.  Raises NoFeasibleEpsilon when epsilon0 itself
    violates a constraint.
    """
    bounds = context.scenario.input_bounds
    q1 = (p1, 0.0, 0.0, p2, 0.0, 0.0)
    memo = {}

    def feasible(eps):
        if eps not in memo:
            result, report = _evaluate(context, q1, eps)
            over = float(_overshoot_fractions(result, context.scenario).max())
            # zero integral weight leaves the accumulator modes exactly on
            # the unit circle, so only exponential growth disqualifies here
            ok = (report.spectral_radius <= 1.0 + 1e-6
                  and not result.diverged
                  and over <= context.overshoot_fraction
                  and _inside_bounds(result, bounds))
            memo[eps] = ok
            if trace is not None:
                trace.append({"stage": "epsilon", "epsilon": eps,
                              "feasible": ok,
                              "radius": report.spectral_radius,
                              "overshoot": over})
        return memo[eps]

    if not feasible(context.epsilon0):
        raise NoFeasibleEpsilon(
            f"epsilon0={context.epsilon0} already violates a constraint")
    floor = context.epsilon0 / 2.0 ** _EPS_FLOOR_STEPS
    hi = context.epsilon0
    while hi / 2.0 >= floor and feasible(hi / 2.0):
        hi /= 2.0
    if hi / 2.0 < floor:
        return hi
    lo = hi / 2.0
    while hi - lo > 0.05 * hi:
        mid = 0.5 * (lo + hi)
        if feasible(mid):
            hi = mid
        else:
            lo = mid
    while hi / 2.0 >= floor and feasible(hi / 2.0):
        hi /= 2.0
    return hi


def tune_integral(context: TuningContext, p1: float, p2: float,
                  epsilon: float, ratio: float, trace=None) -> tuple:
    """Grow (I1, I2) at a fixed ratio while settling keeps improving.

    Doubles I1 from a small seed with I2 = I1/ratio.  A candidate is
    accepted when it is stable, keeps overshoot under the configured
    threshold, and settles strictly faster than anything before it; a
    settling-time tie keeps walking (the seed may be too weak to move
    the sentinel yet) and only a strict worsening or a violated
    constraint ends the sweep.  Returns the last accepted pair, (0, 0)
    when nothing qualifies.
    """
    if not ratio > 0.0 or not math.isfinite(ratio):
        raise ValueError("integral ratio must be positive and finite")
    baseline, _ = _evaluate(context, (p1, 0.0, 0.0, p2, 0.0, 0.0), epsilon)
    best = (0.0, 0.0)
    best_settle = _settle_seconds(baseline, context.scenario,
                                  context.settle_fraction)
    i1 = p1 * _INTEGRAL_SEED
    for _ in range(_INTEGRAL_STEPS):
        i2 = i1 / ratio
        result, report = _evaluate(
            context, (p1, 0.0, i1, p2, 0.0, i2), epsilon)
        over = float(_overshoot_fractions(result, context.scenario).max())
        settle = _settle_seconds(result, context.scenario,
                                 context.settle_fraction)
        ok = (report.stable and not result.diverged
              and over <= context.integral_overshoot_fraction
              and settle < best_settle)
        if trace is not None:
            trace.append({"stage": "integral", "i1": i1, "i2": i2,
                          "accepted": ok, "stable": report.stable,
                          "overshoot": over, "settle": settle})
        violated = (not report.stable or result.diverged
                    or over > context.integral_overshoot_fraction
                    or settle > best_settle)
        if ok:
            best = (i1, i2)
            best_settle = settle
        elif violated:
            break
        i1 *= 2.0
    return best


def _ratio_metrics(result, scenario, band):
    peak = float(np.max(np.abs(result.e_m)))
    outside = np.nonzero(np.abs(result.e_m) >= band)[0]
    if len(outside) == 0:
        to_band = 0.0
    elif outside[-1] == len(result.time) - 1:
        to_band = scenario.duration
    else:
        to_band = float((outside[-1] + 1) * scenario.sample_time)
    return peak, to_band


def tune_ratio_weights(context: TuningContext, q1_diag, epsilon: float,
                       trace=None) -> tuple:
    """Sequential beta then gamma sweep against the ratio-error metrics.

    beta minimizes the peak ratio error over its grid; gamma then
    minimizes the time for |e_m| to enter the settling band without
    giving back more than 10 percent of the peak.  Ties go to the
    smaller weight, and (0, 0) is returned when no stable candidate
    improves on the unweighted baseline.
    """
    scenario = context.scenario
    scale = float(_step_scale(scenario).max())
    band = context.ratio_band_fraction * scale
    # improvements below float noise on a ratio-exact plant do not count
    floor = 1e-12 * scale

    def score(beta, gamma, stage):
        result, report = _evaluate(context, q1_diag, epsilon, beta, gamma)
        usable = report.stable and not result.diverged
        peak, to_band = _ratio_metrics(result, scenario, band)
        if trace is not None:
            trace.append({"stage": stage, "beta": beta, "gamma": gamma,
                          "stable": report.stable, "peak_ratio_error": peak,
                          "seconds_to_band": to_band})
        return usable, peak, to_band

    _, peak0, _ = score(0.0, 0.0, "beta")
    beta, best_peak = 0.0, peak0
    for candidate in context.beta_grid:
        usable, peak, _ = score(candidate, 0.0, "beta")
        if usable and peak < best_peak - floor:
            beta, best_peak = candidate, peak

    _, peak_b, band_b = score(beta, 0.0, "gamma")
    gamma, best_band = 0.0, band_b
    for candidate in context.gamma_grid:
        usable, peak, to_band = score(beta, candidate, "gamma")
        if usable and peak <= 1.1 * peak_b and to_band < best_band:
            gamma, best_band = candidate, to_band
    return beta, gamma


def tune(context: TuningContext) -> TuningResult:
    """Run the full staged procedure and assemble the result with its trace.

    Loops without a phase crossover fall back to the context's default
    weight ratios with unit proportional weights; otherwise P_i = Ku_i^2
    and the integral ratio is ((Ku1/Tu1)*(Tu2/Ku2))^2.
    """
    trace = []
    dp = discretize(context.scenario.plant_design)
    order = (1, 0) if dp.swapped else (0, 1)
    ultimate = []
    for loop, canonical in enumerate(order):
        try:
            data = find_ultimate(dp, canonical)
        except NoCrossover:
            data = None
        ultimate.append(data)
        trace.append({"stage": "ultimate", "loop": loop + 1,
                      "ku": data.ku if data else math.inf,
                      "tu": data.tu if data else math.inf})

    if all(ultimate):
        (u1, u2) = ultimate
        p1, p2 = u1.ku ** 2, u2.ku ** 2
        i_ratio = float(((u1.ku / u1.tu) * (u2.tu / u2.ku)) ** 2)
    else:
        p1 = 1.0
        p2 = p1 / context.fallback_p_ratio
        i_ratio = context.fallback_i_ratio

    epsilon = tune_epsilon(context, p1, p2, trace)
    i1, i2 = tune_integral(context, p1, p2, epsilon, i_ratio, trace)
    q1 = (p1, 0.0, i1, p2, 0.0, i2)
    beta, gamma = tune_ratio_weights(context, q1, epsilon, trace)
    return TuningResult(p1=p1, p2=p2, i1=i1, i2=i2, epsilon=epsilon,
                        beta=beta, gamma=gamma, trace=tuple(trace))
