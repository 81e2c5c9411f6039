"""Delay-compensating gain schedule in measurable PID coordinates.

The optimal input for each channel acts on the state a dead time ahead,
so the controller predicts that state from the current one.  During the
start-up window the prediction coefficients change every step because
early inputs predate the controller; afterwards they settle to fixed
matrix powers of the closed loop.  Rewriting the predicted-state law
through the measurable error/sum vector gives time-varying PID gains
plus a reference feedforward scalar per channel.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass, field

import numpy as np

from .errors import DelayMismatch
from .fopdt_model import DiscretePlant, StateSpace
from .gpc_core import GpcGains


@dataclass(frozen=True)
class ClosedLoopMatrices:
    """Closed-loop transition matrices for the delay regimes.

    F_bar feeds back both inputs, F_bar_1 only the first (the second has
    not reached the plant yet); K_ref_1 is the matching feedforward gain
    with the second row zeroed.
    """

    F_bar: np.ndarray
    F_bar_1: np.ndarray
    K_ref_1: np.ndarray


def closed_loop_matrices(ss: StateSpace, gains: GpcGains) -> ClosedLoopMatrices:
    K1 = np.zeros_like(gains.K_gpc)
    K1[0] = gains.K_gpc[0]
    K_ref_1 = np.zeros_like(gains.K_ref)
    K_ref_1[0] = gains.K_ref[0]
    return ClosedLoopMatrices(
        F_bar=ss.F + ss.G @ gains.K_gpc,
        F_bar_1=ss.F + ss.G @ K1,
        K_ref_1=K_ref_1,
    )


class ReferenceProvider:
    """Auxiliary-reference lookups over a sampled setpoint profile.

    Holds the deviation setpoints as an array indexed by sample; reads
    beyond either end clamp to the nearest stored value, modeling a
    profile held constant outside the known span.  `window` is the
    number of stacked future pairs the gain synthesis consumed.
    """

    def __init__(self, dp: DiscretePlant, setpoints: np.ndarray, window: int,
                 clamp: bool = True, offset: np.ndarray | None = None):
        values = np.asarray(setpoints, dtype=float)
        if values.ndim != 2 or values.shape[1] != 2:
            raise ValueError("setpoints must have shape (T, 2)")
        if values.shape[0] == 0:
            raise ValueError("setpoints must hold at least one sample")
        self.dp = dp
        self.window = int(window)
        self.clamp = clamp
        self.offset = np.zeros(2) if offset is None else np.asarray(offset, float)
        self._values = values
        self._sum = dp.a.sum(axis=1)
        self._prod = dp.a.prod(axis=1)
        changed = np.any(values[1:] != values[:-1], axis=1)
        self._breaks = (np.nonzero(changed)[0] + 1).tolist()

    def with_offset(self, offset: np.ndarray) -> "ReferenceProvider":
        clone = ReferenceProvider.__new__(ReferenceProvider)
        clone.__dict__.update(self.__dict__)
        clone.offset = np.asarray(offset, float)
        return clone

    def setpoint(self, k: int) -> np.ndarray:
        last = self._values.shape[0] - 1
        if not self.clamp and k > last:
            raise DelayMismatch(f"reference lookup at {k} past horizon {last}")
        r = self._values[min(max(k, 0), last)]
        if self.offset.any():
            return r + self.offset
        return r

    def aux(self, k: int) -> np.ndarray:
        """r_tilde(k) built from the clamped profile."""
        return self.setpoint(k + 1) + self._sum * self.setpoint(k) \
            + self._prod * self.setpoint(k - 1)

    def window_vec(self, k: int) -> np.ndarray:
        """Stacked pairs [r_tilde(k); ...; r_tilde(k + window - 1)]."""
        return np.concatenate([self.aux(k + i) for i in range(self.window)])

    def content_key(self, k: int, span: int):
        """Hashable digest of every profile value a prediction from k can read.

        Flat stretches collapse onto the value pair itself so steady-state
        lookups share one cache slot regardless of k.
        """
        lo, hi = k - 1, k + span + 1
        i = bisect.bisect_right(self._breaks, lo)
        if i == len(self._breaks) or self._breaks[i] > hi:
            return ("flat", self.setpoint(k).tobytes())
        return ("at", k, self.offset.tobytes())


def _regime(l: int, h1: int, h2: int, ss: StateSpace, clm: ClosedLoopMatrices,
            gains: GpcGains, refs: ReferenceProvider):
    """Transition matrix and additive drive of the closed loop at step l.

    Before the first dead time elapses no computed input has reached the
    plant; between the two dead times only channel one acts; afterwards
    both do.
    """
    drive = ss.E @ refs.aux(l)
    if l < h1:
        return ss.F, drive
    if l < h2:
        return clm.F_bar_1, drive + ss.G @ (clm.K_ref_1 @ refs.window_vec(l))
    return clm.F_bar, drive + ss.G @ (gains.K_ref @ refs.window_vec(l))


def predict_state_coefficients(ss: StateSpace, clm: ClosedLoopMatrices,
                               gains: GpcGains, k: int, h1: int, h2: int,
                               refs: ReferenceProvider):
    """Coefficients of the dead-time-ahead state predictions from X(k).

    Returns (C1, C2, s1, s2) with X(k + h_i) = C_i X(k) + s_i, accumulated
    by stepping the regime recursion over calendar steps k .. k+h2-1 and
    snapshotting when the first dead time is reached.
    """
    if k < 0:
        raise ValueError("schedule index must be nonnegative")
    n = ss.F.shape[0]
    coeff = np.eye(n)
    s = np.zeros(n)
    c1, s1 = (coeff.copy(), s.copy()) if h1 == 0 else (None, None)
    for idx, l in enumerate(range(k, k + h2)):
        A, c = _regime(l, h1, h2, ss, clm, gains, refs)
        s = A @ s + c
        coeff = A @ coeff
        if idx == h1 - 1:
            c1, s1 = coeff.copy(), s.copy()
    return c1, s1, coeff, s


@dataclass(frozen=True)
class ScheduleEntry:
    """Measurable-coordinate control law of one time step.

    u_i = k_pid_i . pid_state + k_u_i . [u1(k-1-h1), u2(k-1-h2)] + s_i.
    """

    k1_pid: np.ndarray
    k2_pid: np.ndarray
    k1_u: np.ndarray
    k2_u: np.ndarray
    s1: float
    s2: float


@dataclass(frozen=True)
class GainSchedule:
    """Per-step control laws: one entry per start-up step, then a fixed tail."""

    entries: list[ScheduleEntry]
    tail: ScheduleEntry
    h1: int
    h2: int

    def lookup(self, k: int) -> ScheduleEntry:
        if k < 0:
            raise ValueError("schedule index must be nonnegative")
        return self.entries[k] if k <= self.h2 else self.tail


def _entry_from_coefficients(ss, gains, c1, s1_vec, c2, s2_vec,
                             refs, k, h1, h2) -> ScheduleEntry:
    s1 = float(gains.K_gpc[0] @ s1_vec + gains.K_ref[0] @ refs.window_vec(k + h1))
    s2 = float(gains.K_gpc[1] @ s2_vec + gains.K_ref[1] @ refs.window_vec(k + h2))
    row1 = gains.K_gpc[0] @ c1
    row2 = gains.K_gpc[1] @ c2
    return ScheduleEntry(
        k1_pid=row1 @ ss.M, k2_pid=row2 @ ss.M,
        k1_u=row1 @ ss.N, k2_u=row2 @ ss.N,
        s1=s1, s2=s2,
    )


def build_schedule(gains: GpcGains, ss: StateSpace, h1: int, h2: int,
                   refs: ReferenceProvider) -> GainSchedule:
    """Precompute the start-up entries k = 0..h2 and the time-invariant tail.

    Stored feedforward scalars are snapshots of the provider's profile;
    simulations against a different or evolving profile recompute them
    through a FeedforwardEngine.
    """
    clm = closed_loop_matrices(ss, gains)
    entries = []
    for k in range(h2 + 1):
        c1, s1_vec, c2, s2_vec = predict_state_coefficients(
            ss, clm, gains, k, h1, h2, refs)
        entries.append(_entry_from_coefficients(
            ss, gains, c1, s1_vec, c2, s2_vec, refs, k, h1, h2))
    k_tail = h2 + 1
    c1, s1_vec, c2, s2_vec = predict_state_coefficients(
        ss, clm, gains, k_tail, h1, h2, refs)
    tail = _entry_from_coefficients(
        ss, gains, c1, s1_vec, c2, s2_vec, refs, k_tail, h1, h2)
    return GainSchedule(entries=entries, tail=tail, h1=h1, h2=h2)


def control_step(schedule: GainSchedule, k: int, pid_state: np.ndarray,
                 u_prev_delayed: np.ndarray, s_override=None) -> np.ndarray:
    """Evaluate the scheduled law at step k.

    s_override replaces the stored feedforward pair, for callers tracking
    a live reference profile.
    """
    entry = schedule.lookup(k)
    xt = np.asarray(pid_state, float)
    up = np.asarray(u_prev_delayed, float)
    s1, s2 = (entry.s1, entry.s2) if s_override is None else s_override
    return np.array([
        entry.k1_pid @ xt + entry.k1_u @ up + s1,
        entry.k2_pid @ xt + entry.k2_u @ up + s2,
    ])


class FeedforwardEngine:
    """Live feedforward terms with content-addressed caching.

    The pair (S1, S2)(k) depends only on the regime pattern at k and on
    the slice of auxiliary references a prediction from k can read, so
    results are memoized on that content.  Steady stretches of the
    profile collapse onto a single cache slot.
    """

    def __init__(self, ss: StateSpace, gains: GpcGains, h1: int, h2: int):
        self.ss = ss
        self.gains = gains
        self.clm = closed_loop_matrices(ss, gains)
        self.h1 = h1
        self.h2 = h2
        self._cache: dict = {}

    def _lookup(self, k: int, refs: ReferenceProvider):
        span = self.h2 + refs.window
        key = (k if k <= self.h2 else -1, refs.content_key(k, span))
        hit = self._cache.get(key)
        if hit is None:
            c1, s1_vec, c2, s2_vec = predict_state_coefficients(
                self.ss, self.clm, self.gains, k, self.h1, self.h2, refs)
            s1 = float(self.gains.K_gpc[0] @ s1_vec
                       + self.gains.K_ref[0] @ refs.window_vec(k + self.h1))
            s2 = float(self.gains.K_gpc[1] @ s2_vec
                       + self.gains.K_ref[1] @ refs.window_vec(k + self.h2))
            hit = (s1, s2, c1, s1_vec, c2, s2_vec)
            self._cache[key] = hit
        return hit

    def s_terms(self, k: int, refs: ReferenceProvider) -> tuple[float, float]:
        return self._lookup(k, refs)[:2]

    def coefficients(self, k: int, refs: ReferenceProvider):
        """Prediction pairs (C1, s1_vec, C2, s2_vec) behind the S terms."""
        return self._lookup(k, refs)[2:]
