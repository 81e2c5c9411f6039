"""Closed-loop simulation studies for the ratio controllers.

The true plant is stepped through its four first-order difference
equations with per-input delay buffers, in deviation from a configurable
ambient level.  Controllers plug into a fixed loop: read outputs, form
errors, compute the raw input pair, clamp it to the actuator range
(freezing the matching integral state on saturation), then advance the
plant with optional load disturbances.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptySeries
from .fopdt_model import ContinuousPlant, assemble_state_space, discretize
from .gpc_core import CostWeights, assemble_cost, build_prediction, solve_gains
from .pid_schedule import (
    FeedforwardEngine,
    ReferenceProvider,
    build_schedule,
    control_step,
)

# Magnitude treated as numerical blow-up of a deviation variable.
_DIVERGENCE_LIMIT = 1e9


@dataclass(frozen=True)
class StepProfile:
    """Piecewise-constant signal given as (time, value) breakpoints.

    The first breakpoint's value extends backward in time and the last
    one forward, so a profile is defined everywhere.
    """

    breakpoints: tuple

    def __post_init__(self):
        pts = tuple((float(t), float(v)) for t, v in self.breakpoints)
        if not pts:
            raise ValueError("a profile needs at least one breakpoint")
        if any(later[0] <= earlier[0] for later, earlier in zip(pts[1:], pts)):
            raise ValueError("breakpoint times must increase")
        object.__setattr__(self, "breakpoints", pts)

    @classmethod
    def constant(cls, value: float) -> "StepProfile":
        return cls(breakpoints=((0.0, value),))

    def value(self, t: float) -> float:
        out = self.breakpoints[0][1]
        for bt, bv in self.breakpoints:
            if t >= bt:
                out = bv
            else:
                break
        return out

    def sample(self, sample_time: float, count: int) -> np.ndarray:
        return np.array([self.value(k * sample_time) for k in range(count)])

    def scaled(self, factor: float, offset: float = 0.0) -> "StepProfile":
        return StepProfile(tuple((t, factor * v + offset) for t, v in self.breakpoints))


@dataclass(frozen=True)
class Disturbance:
    """Persistent step load entering at `onset` seconds.

    injection "output" adds gains*magnitude to both measured outputs;
    "input" adds it at the plant inlet downstream of the delay buffers.
    """

    onset: float
    magnitude: float
    injection: str = "output"
    gains: tuple[float, float] = (1.0, 1.0)

    def __post_init__(self):
        if self.injection not in ("output", "input"):
            raise ValueError("injection must be 'output' or 'input'")

    def signal(self, t: float) -> np.ndarray:
        if t < self.onset:
            return np.zeros(2)
        return self.magnitude * np.asarray(self.gains, float)


@dataclass(frozen=True)
class Scenario:
    """One simulation study: plants, setpoints, constraints, disturbances.

    Setpoints are absolute; channel 2 defaults to alpha times channel 1.
    plant_true is what the loop runs against, plant_design what the
    predictive controllers were synthesized for.
    """

    plant_true: ContinuousPlant
    plant_design: ContinuousPlant
    r1: StepProfile
    alpha: float
    duration: float
    r2: StepProfile | None = None
    input_bounds: tuple | None = None
    disturbance: Disturbance | None = None
    ambient: float = 0.0
    mismatch_factor: float = 1.0

    @property
    def sample_time(self) -> float:
        return self.plant_true.sample_time

    @property
    def samples(self) -> int:
        return int(round(self.duration / self.sample_time))

    def setpoints_abs(self, count: int) -> np.ndarray:
        """Absolute setpoint pairs for samples 0..count-1."""
        ts = self.sample_time
        r1 = self.r1.sample(ts, count)
        if self.r2 is not None:
            r2 = self.r2.sample(ts, count)
        else:
            r2 = self.alpha * r1
        return np.column_stack([r1, r2])


@dataclass(frozen=True)
class DesignSpec:
    """Weights and horizon of one predictive design."""

    horizon: int = 5
    q1_diag: tuple = (1.0, 0.0, 0.01, 1.0, 0.0, 0.01)
    epsilon: float = 1.0
    beta: float = 0.0
    gamma: float = 0.0


@dataclass(frozen=True)
class PredictivePid:
    """Scheduled predictive PID tracking r2 = alpha * r1."""

    design: DesignSpec = field(default_factory=DesignSpec)
    label: str = "predictive"


@dataclass(frozen=True)
class SetpointVariation:
    """Predictive core plus ratio-triggered correction of the slave channel.

    The scheme watches the controller's own output forecast at the slave
    delay horizon.  Whenever the forecast ratio y2/y1 leaves the band
    alpha +- threshold (and y1 is measurably away from zero), the
    channel-2 feedforward term gets an additive kick of
    gain * (alpha*y1 - y2) * sample_time / delay_gap, so the correction
    lands exactly when the violation would occur.  Kicks in flight are
    folded back into the forecast to keep the extra loop consistent.
    """

    design: DesignSpec = field(default_factory=DesignSpec)
    threshold: float = 0.001
    gain: float = 1.0
    y1_floor: float = 1e-6
    label: str = "setpoint-variation"


@dataclass(frozen=True)
class ParallelRatioPid:
    """Independent PI loops on the diagonal channels with r2 slaved to alpha*r1."""

    pid1: tuple[float, float]
    pid2: tuple[float, float]
    label: str = "parallel-pid"


@dataclass(frozen=True)
class BlendStation:
    """PI loops where channel 2 tracks a blend of r1 and the measured y1.

    r2 = alpha * (blend * r1 + (1 - blend) * y1); blend = 1 recovers the
    parallel structure.
    """

    pid1: tuple[float, float]
    pid2: tuple[float, float]
    blend: float
    label: str = "blend-station"


@dataclass
class SimResult:
    """Recorded closed-loop run in absolute units plus summary metrics."""

    label: str
    time: np.ndarray
    r1: np.ndarray
    r2: np.ndarray
    y1: np.ndarray
    y2: np.ndarray
    u1: np.ndarray
    u2: np.ndarray
    e_m: np.ndarray
    metrics: dict
    diverged: bool = False
    extras: dict = field(default_factory=dict)


def metrics(values: np.ndarray, sample_time: float = 1.0,
            window: tuple | None = None) -> dict:
    """Peak magnitude, signed mean and RMS of a signal, optionally windowed."""
    v = np.asarray(values, float)
    if window is not None:
        lo = int(math.floor(window[0] / sample_time))
        hi = int(math.ceil(window[1] / sample_time))
        v = v[max(lo, 0):hi]
    if v.size == 0:
        raise EmptySeries("empty metrics window")
    return {
        "abs_peak": float(np.max(np.abs(v))),
        "mean": float(np.mean(v)),
        "rms": float(np.sqrt(np.mean(v * v))),
    }


class _TruthPlant:
    """Four first-order paths advanced directly, in deviation variables."""

    def __init__(self, plant: ContinuousPlant):
        decay = np.exp(-plant.sample_time / plant.tau)
        self._a = decay            # y_ij(k+1) = a*y_ij(k) + b*u_j(k-h_j)
        self._b = plant.gain * (1.0 - decay)
        self._h = (int(round(plant.dead_time[0] / plant.sample_time)),
                   int(round(plant.dead_time[1] / plant.sample_time)))
        self._sub = np.zeros((2, 2))

    def outputs(self) -> np.ndarray:
        return self._sub.sum(axis=1)

    def advance(self, u_applied: np.ndarray, k: int):
        """Step with the inlet history u_applied (rows 0..k valid)."""
        u_del = np.array([
            u_applied[k - self._h[0], 0] if k - self._h[0] >= 0 else 0.0,
            u_applied[k - self._h[1], 1] if k - self._h[1] >= 0 else 0.0,
        ])
        self._sub = self._a * self._sub + self._b * u_del[None, :]


def simulate_plant(plant: ContinuousPlant, u_sequence: np.ndarray,
                   ambient: float = 0.0) -> np.ndarray:
    """Open-loop response to an input sequence, returned in absolute units."""
    u = np.asarray(u_sequence, float)
    truth = _TruthPlant(plant)
    y = np.zeros((u.shape[0], 2))
    for k in range(u.shape[0]):
        y[k] = truth.outputs()
        truth.advance(u, k)
    return y + ambient


class _PredictiveRuntime:
    """Scheduled predictive controller, optionally with setpoint variation.

    Internally works in the design plant's canonical channel order (first
    input delay shortest); `perm` maps scenario channels onto that order.
    """

    def __init__(self, scenario: Scenario, spec, samples: int):
        design = spec.design
        dp = discretize(scenario.plant_design)
        self.dp = dp
        self.perm = np.array([1, 0]) if dp.swapped else np.array([0, 1])
        self.alpha_eff = 1.0 / scenario.alpha if dp.swapped else scenario.alpha
        q1 = np.asarray(design.q1_diag, float)
        if dp.swapped:
            q1 = np.concatenate([q1[3:], q1[:3]])

        ss = assemble_state_space(dp)
        weights = CostWeights(q1_diag=q1, beta=design.beta, gamma=design.gamma,
                              alpha=self.alpha_eff, epsilon=design.epsilon)
        pm = build_prediction(ss, design.horizon)
        self.gains = solve_gains(pm, *assemble_cost(weights, design.horizon), ss)
        self.ss = ss

        span = samples + dp.h2 + design.horizon + 3
        r_dev = scenario.setpoints_abs(span)[:, self.perm] - scenario.ambient
        self.refs = ReferenceProvider(dp, r_dev, window=design.horizon)
        self.schedule = build_schedule(self.gains, ss, dp.h1, dp.h2, self.refs)
        self.engine = FeedforwardEngine(ss, self.gains, dp.h1, dp.h2)

        self.sv = spec if isinstance(spec, SetpointVariation) else None
        self.alpha_scenario = scenario.alpha
        self.ambient = scenario.ambient
        self.sample_time = scenario.sample_time
        self.theta = np.zeros(2)
        self.e_prev = None
        self._pending_e = None
        self.trace = {"pid_state": [], "u_delayed": [], "s_terms": [], "u_raw": []}
        if self.sv is not None:
            # slave channel in design coordinates and its delay horizon
            self._sv_idx = int(self.perm[1])
            self._sv_h = dp.h1 if self._sv_idx == 0 else dp.h2
            self._sv_gap = max(dp.h2 - dp.h1, 1)
            self._sv_inflight = [0.0] * self._sv_h
            self._sv_correction = np.zeros(6)
            self._sv_retire = (np.linalg.matrix_power(self.engine.clm.F_bar, self._sv_h)
                               @ ss.G[:, self._sv_idx])

    def compute(self, k: int, y_dev: np.ndarray, u_hist: np.ndarray) -> np.ndarray:
        y = y_dev[self.perm]
        e = self.refs.setpoint(k) - y
        if self.e_prev is None:
            self.e_prev = e.copy()
        h1, h2 = self.dp.h1, self.dp.h2
        u_delayed = np.array([
            u_hist[k - 1 - h1, self.perm[0]] if k - 1 - h1 >= 0 else 0.0,
            u_hist[k - 1 - h2, self.perm[1]] if k - 1 - h2 >= 0 else 0.0,
        ])
        pid_vec = np.array([e[0], self.e_prev[0], self.theta[0],
                            e[1], self.e_prev[1], self.theta[1]])

        s_terms = self.engine.s_terms(k, self.refs)
        if self.sv is not None:
            x_now = self.ss.M @ pid_vec + self.ss.N @ u_delayed
            s_terms = self._with_variation_kick(k, s_terms, x_now)

        u_design = control_step(self.schedule, k, pid_vec, u_delayed,
                                s_override=s_terms)
        self._pending_e = e
        self.trace["pid_state"].append(pid_vec)
        self.trace["u_delayed"].append(u_delayed)
        self.trace["s_terms"].append(np.array(s_terms))
        self.trace["u_raw"].append(u_design.copy())
        return u_design[self.perm]

    def _with_variation_kick(self, k: int, s_terms, x_now) -> tuple[float, float]:
        """Perturb the slave feedforward when the forecast ratio leaves band.

        The forecast horizon is the slave input delay: a kick issued now is
        first felt then, so gate and kick are evaluated where they act.
        """
        coeff = self.engine.coefficients(k, self.refs)
        c_mat, s_vec = coeff[2 * self._sv_idx], coeff[2 * self._sv_idx + 1]
        x_pred = c_mat @ x_now + s_vec + self._sv_correction
        r_pred = self.refs.setpoint(k + self._sv_h)
        y_pred_design = np.array([r_pred[0] - x_pred[0], r_pred[1] - x_pred[3]])
        y1_hat, y2_hat = y_pred_design[self.perm] + self.ambient

        kick = 0.0
        if abs(y1_hat) >= self.sv.y1_floor:
            if abs(y2_hat / y1_hat - self.alpha_scenario) > self.sv.threshold:
                mismatch = self.alpha_scenario * y1_hat - y2_hat
                kick = self.sv.gain * mismatch * self.sample_time / self._sv_gap
        if self._sv_h > 0:
            retired = self._sv_inflight.pop(0)
            self._sv_inflight.append(kick)
            self._sv_correction = (self.engine.clm.F_bar
                                   @ (self._sv_correction + self.ss.G[:, self._sv_idx] * kick)
                                   - self._sv_retire * retired)
        if kick == 0.0:
            return s_terms
        if self._sv_idx == 0:
            return (s_terms[0] + kick, s_terms[1])
        return (s_terms[0], s_terms[1] + kick)

    def advance(self, sat_dir: np.ndarray):
        # freeze an integral state only while it would deepen the saturation
        windup = sat_dir[self.perm] * self._pending_e > 0
        self.theta += np.where(windup, 0.0, self._pending_e)
        self.e_prev = self._pending_e


class _PiRuntime:
    """Positional PI pair with conditional integration on saturation."""

    def __init__(self, scenario: Scenario, spec, samples: int):
        self.kp = np.array([spec.pid1[0], spec.pid2[0]])
        self.ki = np.array([spec.pid1[1], spec.pid2[1]])
        self.blend = spec.blend if isinstance(spec, BlendStation) else None
        self.alpha = scenario.alpha
        self.ambient = scenario.ambient
        self.sample_time = scenario.sample_time
        self.r_abs = scenario.setpoints_abs(samples)
        self.integral = np.zeros(2)
        self._pending = None

    def compute(self, k: int, y_dev: np.ndarray, u_hist: np.ndarray) -> np.ndarray:
        y_abs = y_dev + self.ambient
        r1 = self.r_abs[k, 0]
        if self.blend is None:
            r2 = self.r_abs[k, 1]
        else:
            r2 = self.alpha * (self.blend * r1 + (1.0 - self.blend) * y_abs[0])
        e = np.array([r1 - y_abs[0], r2 - y_abs[1]])
        self._pending = e
        return self.kp * e + self.ki * (self.integral + e * self.sample_time)

    def advance(self, sat_dir: np.ndarray):
        windup = sat_dir * self._pending > 0
        self.integral += np.where(windup, 0.0, self._pending * self.sample_time)


def _make_runtime(scenario: Scenario, spec, samples: int):
    if isinstance(spec, (PredictivePid, SetpointVariation)):
        return _PredictiveRuntime(scenario, spec, samples)
    if isinstance(spec, (ParallelRatioPid, BlendStation)):
        return _PiRuntime(scenario, spec, samples)
    raise TypeError(f"unknown controller spec {type(spec).__name__}")


def run(scenario: Scenario, controller) -> SimResult:
    """Closed-loop simulation of one controller over the scenario."""
    samples = scenario.samples
    if samples < 1:
        raise ValueError("duration must cover at least one sample")
    ts = scenario.sample_time
    runtime = _make_runtime(scenario, controller, samples)
    truth = _TruthPlant(scenario.plant_true)
    dist = scenario.disturbance

    bounds = scenario.input_bounds
    lo = np.array([-np.inf, -np.inf]) if bounds is None else np.array(
        [bounds[0][0], bounds[1][0]], float)
    hi = np.array([np.inf, np.inf]) if bounds is None else np.array(
        [bounds[0][1], bounds[1][1]], float)

    r_abs = scenario.setpoints_abs(samples)
    u_hist = np.zeros((samples, 2))
    u_inlet = np.zeros((samples, 2))
    y_abs = np.zeros((samples, 2))
    diverged = False
    steps_done = samples

    for k in range(samples):
        t = k * ts
        y_dev = truth.outputs()
        if dist is not None and dist.injection == "output":
            y_dev = y_dev + dist.signal(t)
        if np.any(np.abs(y_dev) > _DIVERGENCE_LIMIT) or not np.all(np.isfinite(y_dev)):
            diverged = True
            steps_done = k
            break
        y_abs[k] = y_dev + scenario.ambient

        u_raw = runtime.compute(k, y_dev, u_hist)
        u = np.minimum(np.maximum(u_raw, lo), hi)
        u_hist[k] = u
        u_inlet[k] = u
        if dist is not None and dist.injection == "input":
            u_inlet[k] = u + dist.signal(t)
        runtime.advance(np.sign(u_raw - u))
        truth.advance(u_inlet, k)

    n = steps_done
    e_m = scenario.alpha * y_abs[:n, 0] - y_abs[:n, 1]
    result = SimResult(
        label=getattr(controller, "label", type(controller).__name__),
        time=np.arange(n) * ts,
        r1=r_abs[:n, 0], r2=r_abs[:n, 1],
        y1=y_abs[:n, 0], y2=y_abs[:n, 1],
        u1=u_hist[:n, 0], u2=u_hist[:n, 1],
        e_m=e_m,
        metrics=metrics(e_m, ts) if n else {},
        diverged=diverged,
    )
    if isinstance(runtime, _PredictiveRuntime):
        result.extras = {key: np.array(val[:n]) for key, val in runtime.trace.items()}
        result.extras["runtime"] = runtime
    return result


def run_baseline_parallel(scenario: Scenario, pid1, pid2,
                          label: str = "parallel-pid") -> SimResult:
    return run(scenario, ParallelRatioPid(pid1=tuple(pid1), pid2=tuple(pid2), label=label))


def run_baseline_blend(scenario: Scenario, pid1, pid2, blend: float,
                       label: str = "blend-station") -> SimResult:
    return run(scenario, BlendStation(pid1=tuple(pid1), pid2=tuple(pid2),
                                      blend=blend, label=label))


def run_baseline_setpoint_variation(scenario: Scenario, design: DesignSpec,
                                    threshold: float, gain: float,
                                    label: str = "setpoint-variation") -> SimResult:
    return run(scenario, SetpointVariation(design=design, threshold=threshold,
                                           gain=gain, label=label))
