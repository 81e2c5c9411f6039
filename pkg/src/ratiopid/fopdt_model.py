"""Discrete modeling of 2x2 first-order-plus-dead-time processes.

Each output couples to both inputs through a first-order lag, and each
input carries its own transport delay.  The controller design works in
error coordinates: per channel the tracking error, its one-step history
and its running sum, driven by delayed inputs and an auxiliary reference
signal.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NonIntegerDelay, NonPositiveTimeConstant

# Relative tolerance for deciding whether dead_time / sample_time is an integer.
_DELAY_TOL = 1e-9


def _as_matrix(value, name: str) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.shape != (2, 2):
        raise ValueError(f"{name} must be a 2x2 array, got shape {arr.shape}")
    return arr


def _delay_samples(dead_time: float, sample_time: float) -> int:
    ratio = dead_time / sample_time
    nearest = round(ratio)
    if abs(ratio - nearest) > _DELAY_TOL * max(1.0, abs(ratio)):
        raise NonIntegerDelay(
            f"dead time {dead_time} is not an integer multiple of Ts={sample_time}"
        )
    return int(nearest)


@dataclass(frozen=True)
class ContinuousPlant:
    """2x2 matrix of first-order transfer functions with per-input dead times.

    gain[i, j] and tau[i, j] describe the path from input j to output i;
    dead_time[j] applies to every path fed by input j.
    """

    gain: np.ndarray
    tau: np.ndarray
    dead_time: tuple[float, float]
    sample_time: float

    def __post_init__(self):
        object.__setattr__(self, "gain", _as_matrix(self.gain, "gain"))
        object.__setattr__(self, "tau", _as_matrix(self.tau, "tau"))
        object.__setattr__(self, "dead_time", (float(self.dead_time[0]), float(self.dead_time[1])))
        object.__setattr__(self, "sample_time", float(self.sample_time))
        if self.sample_time <= 0:
            raise ValueError("sample_time must be positive")
        if np.any(self.tau <= 0):
            raise NonPositiveTimeConstant(f"time constants must be positive, got {self.tau}")
        if min(self.dead_time) < 0:
            raise ValueError("dead times must be nonnegative")
        for dt in self.dead_time:
            _delay_samples(dt, self.sample_time)

    def with_mismatch(self, factor: float) -> "ContinuousPlant":
        """Perturbed copy: diagonal paths scaled by factor, off-diagonal by 1/factor.

        Gains and time constants move together; dead times are untouched.
        """
        if factor <= 0:
            raise ValueError("mismatch factor must be positive")
        scale = np.array([[factor, 1.0 / factor], [1.0 / factor, factor]])
        return ContinuousPlant(
            gain=self.gain * scale,
            tau=self.tau * scale,
            dead_time=self.dead_time,
            sample_time=self.sample_time,
        )


@dataclass(frozen=True)
class DiscretePlant:
    """Zero-order-hold discretization in the pole form b*z^-h / (z + a).

    a[i, j] = -exp(-Ts/tau[i, j]) and b[i, j] = gain[i, j]*(1 + a[i, j]),
    which keeps the static gain b/(1+a) of every path exact.  Channels are
    relabeled at construction if needed so that h1 <= h2; `swapped` records
    whether that relabeling happened.
    """

    a: np.ndarray
    b: np.ndarray
    h1: int
    h2: int
    sample_time: float
    swapped: bool = False

    def __post_init__(self):
        object.__setattr__(self, "a", _as_matrix(self.a, "a"))
        object.__setattr__(self, "b", _as_matrix(self.b, "b"))
        if self.h1 < 0 or self.h2 < 0:
            raise ValueError("delays must be nonnegative sample counts")
        if self.sample_time <= 0:
            raise ValueError("sample_time must be positive")
        if np.any(np.abs(self.a) >= 1.0):
            raise ValueError("open-loop poles must lie inside the unit circle")
        if self.h1 > self.h2:
            perm = [1, 0]
            object.__setattr__(self, "a", self.a[np.ix_(perm, perm)])
            object.__setattr__(self, "b", self.b[np.ix_(perm, perm)])
            h1, h2 = self.h2, self.h1
            object.__setattr__(self, "h1", h1)
            object.__setattr__(self, "h2", h2)
            object.__setattr__(self, "swapped", True)

    @property
    def delays(self) -> tuple[int, int]:
        return (self.h1, self.h2)

    def static_gain(self) -> np.ndarray:
        """Per-path DC gain b / (1 + a)."""
        return self.b / (1.0 + self.a)


def discretize(plant: ContinuousPlant) -> DiscretePlant:
    """Zero-order-hold discretization of every first-order path."""
    decay = np.exp(-plant.sample_time / plant.tau)
    a = -decay
    b = plant.gain * (1.0 - decay)
    h1 = _delay_samples(plant.dead_time[0], plant.sample_time)
    h2 = _delay_samples(plant.dead_time[1], plant.sample_time)
    return DiscretePlant(a=a, b=b, h1=h1, h2=h2, sample_time=plant.sample_time)


@dataclass(frozen=True)
class StateSpace:
    """Error-coordinate model X(k+1) = F X(k) + G U(k-h) + E r_tilde(k).

    The 6-state vector stacks, per output channel, the tracking error, the
    previous-step combination and the error sum.  U(k-h) holds the delayed
    inputs [u1(k-h1), u2(k-h2)].  M and N map the measurable PID state and
    the once-more-delayed inputs back onto X, see `reconstruct_state`.
    """

    F: np.ndarray
    G: np.ndarray
    E: np.ndarray
    M: np.ndarray
    N: np.ndarray


def assemble_state_space(dp: DiscretePlant) -> StateSpace:
    """Build the error-model matrices from the discretized coefficients."""
    a, b = dp.a, dp.b
    s = a.sum(axis=1)          # a_i1 + a_i2 per channel
    p = a.prod(axis=1)         # a_i1 * a_i2 per channel

    F = np.zeros((6, 6))
    G = np.zeros((6, 2))
    E = np.zeros((6, 2))
    M = np.zeros((6, 6))
    N = np.zeros((6, 2))
    for i in range(2):
        r = 3 * i
        F[r, r] = -s[i]
        F[r, r + 1] = 1.0
        F[r + 1, r] = -p[i]
        F[r + 2, r] = 1.0
        F[r + 2, r + 2] = 1.0
        # cross terms: b_i1 pairs with the other path's pole and vice versa
        G[r, 0] = -b[i, 0]
        G[r, 1] = -b[i, 1]
        G[r + 1, 0] = -b[i, 0] * a[i, 1]
        G[r + 1, 1] = -b[i, 1] * a[i, 0]
        E[r, i] = 1.0
        M[r, r] = 1.0
        M[r + 1, r + 1] = -p[i]
        M[r + 2, r + 2] = 1.0
        N[r + 1, 0] = -b[i, 0] * a[i, 1]
        N[r + 1, 1] = -b[i, 1] * a[i, 0]
    return StateSpace(F=F, G=G, E=E, M=M, N=N)


@dataclass
class PidState:
    """Measurable controller state: per channel error, last error, error sum."""

    e1: float = 0.0
    e1_prev: float = 0.0
    theta1: float = 0.0
    e2: float = 0.0
    e2_prev: float = 0.0
    theta2: float = 0.0

    def as_vector(self) -> np.ndarray:
        return np.array([self.e1, self.e1_prev, self.theta1,
                         self.e2, self.e2_prev, self.theta2])


def reconstruct_state(ss: StateSpace, pid_state: np.ndarray,
                      u_prev_delayed: np.ndarray) -> np.ndarray:
    """Model state from the measurable one: X = M Xt + N [u1(k-1-h1), u2(k-1-h2)]."""
    return ss.M @ np.asarray(pid_state, float) + ss.N @ np.asarray(u_prev_delayed, float)


def aux_reference(dp: DiscretePlant, setpoints: np.ndarray, k: int) -> np.ndarray:
    """Auxiliary reference pair at sample k.

    r_tilde_i(k) = r_i(k+1) + (a_i1 + a_i2) r_i(k) + a_i1 a_i2 r_i(k-1);
    out-of-range indices clamp to the nearest defined sample, which models
    a setpoint held constant beyond the known profile.
    """
    r = np.asarray(setpoints, dtype=float)
    if r.ndim != 2 or r.shape[1] != 2:
        raise ValueError("setpoints must have shape (T, 2)")
    if r.shape[0] == 0:
        raise ValueError("setpoints must hold at least one sample")
    last = r.shape[0] - 1

    def at(idx: int) -> np.ndarray:
        return r[min(max(idx, 0), last)]

    s = dp.a.sum(axis=1)
    p = dp.a.prod(axis=1)
    return at(k + 1) + s * at(k) + p * at(k - 1)


def step_model(ss: StateSpace, state: np.ndarray, u_equivalent: np.ndarray,
               r_tilde: np.ndarray) -> np.ndarray:
    """One step of the error model under the delayed input pair."""
    return ss.F @ state + ss.G @ u_equivalent + ss.E @ r_tilde
