"""Closed-loop stability certificate for the delay-compensated loop.

In steady operation the loop is a linear difference equation in the
model state with two delayed feedback taps, one per input dead time.
Lifting the delayed states into one long vector turns it into a block
companion matrix whose eigenvalues decide stability; a determinant
identity factoring out the undelayed closed loop serves as an
independent numerical cross-check.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EigenvalueFailure
from .fopdt_model import StateSpace
from .gpc_core import GpcGains
from .pid_schedule import closed_loop_matrices


def _delayed_taps(ss: StateSpace, gains: GpcGains, h1: int, h2: int):
    """Feedback taps of the steady loop: X(k+1) = F X + T1 X(k-h1) + T2 X(k-h2)."""
    clm = closed_loop_matrices(ss, gains)
    K1 = np.zeros_like(gains.K_gpc)
    K1[0] = gains.K_gpc[0]
    K2 = np.zeros_like(gains.K_gpc)
    K2[1] = gains.K_gpc[1]
    T1 = ss.G @ K1 @ np.linalg.matrix_power(clm.F_bar, h1)
    T2 = ss.G @ K2 @ np.linalg.matrix_power(clm.F_bar, h2)
    return T1, T2, clm.F_bar


def build_companion(ss: StateSpace, gains: GpcGains, h1: int, h2: int) -> np.ndarray:
    """Lift the two-delay loop onto [X(k-h2); ...; X(k)] coordinates."""
    if not 0 <= h1 <= h2:
        raise ValueError("delays must satisfy 0 <= h1 <= h2")
    n = ss.F.shape[0]
    T1, T2, _ = _delayed_taps(ss, gains, h1, h2)
    dim = n * (h2 + 1)
    A = np.zeros((dim, dim))
    for i in range(h2):
        A[i * n:(i + 1) * n, (i + 1) * n:(i + 2) * n] = np.eye(n)
    bottom = slice(h2 * n, dim)
    A[bottom, 0:n] += T2
    A[bottom, (h2 - h1) * n:(h2 - h1 + 1) * n] += T1
    A[bottom, h2 * n:dim] += ss.F
    return A


@dataclass(frozen=True)
class StabilityReport:
    """Eigenvalue verdict on the lifted loop.

    margin is 1 - spectral_radius (negative when unstable);
    corollary_radius is the spectral radius of the undelayed closed loop,
    a necessary but not sufficient companion to the verdict.
    """

    eigenvalues: np.ndarray
    spectral_radius: float
    stable: bool
    margin: float
    corollary_radius: float


def check_stability(ss: StateSpace, gains: GpcGains, h1: int, h2: int,
                    margin: float = 1e-9) -> StabilityReport:
    """Strict inside-the-unit-circle test of every lifted eigenvalue.

    Marginal modes sit exactly on the circle (for example the error sums
    under zero sum weight) and are reported unstable.
    """
    A = build_companion(ss, gains, h1, h2)
    _, _, F_bar = _delayed_taps(ss, gains, h1, h2)
    try:
        eigs = np.linalg.eigvals(A)
        corollary = float(max(abs(np.linalg.eigvals(F_bar))))
    except np.linalg.LinAlgError as exc:
        raise EigenvalueFailure(f"eigenvalue iteration failed: {exc}") from exc
    radius = float(max(abs(eigs)))
    return StabilityReport(
        eigenvalues=eigs,
        spectral_radius=radius,
        stable=bool(radius < 1.0 - margin),
        margin=1.0 - radius,
        corollary_radius=corollary,
    )


def characteristic_matrix(ss: StateSpace, gains: GpcGains, h1: int, h2: int,
                          lam: complex) -> np.ndarray:
    """6x6 polynomial matrix whose determinant roots are the loop modes."""
    n = ss.F.shape[0]
    T1, T2, _ = _delayed_taps(ss, gains, h1, h2)
    return (lam ** (h2 + 1) * np.eye(n) - ss.F * lam ** h2
            - T1 * lam ** (h2 - h1) - T2).astype(complex)


def determinant_residual(ss: StateSpace, gains: GpcGains, h1: int, h2: int,
                         lam: complex, normalized: bool = False) -> complex:
    """Characteristic determinant at lam; ~0 at every companion eigenvalue.

    With normalized=True the determinant is divided by the product of the
    row norms (its Hadamard bound), giving a scale-free residual in [0, 1].
    """
    mat = characteristic_matrix(ss, gains, h1, h2, lam)
    det = complex(np.linalg.det(mat))
    if not normalized:
        return det
    bound = float(np.prod(np.linalg.norm(mat, axis=1)))
    if bound == 0.0:
        return 0.0
    return det / bound


def factored_determinant(ss: StateSpace, gains: GpcGains, h1: int, h2: int,
                         lam: complex) -> complex:
    """Characteristic determinant via the undelayed-loop factorization.

    The polynomial matrix factors as B(lam) (lam I - F_bar) with
    B(lam) = lam^h2 I + G K1 sum_{j<h1} lam^(h2-1-j) F_bar^j
                      + G K2 sum_{j<h2} lam^(h2-1-j) F_bar^j,
    giving an independent route to the same determinant.
    """
    n = ss.F.shape[0]
    clm = closed_loop_matrices(ss, gains)
    K1 = np.zeros_like(gains.K_gpc)
    K1[0] = gains.K_gpc[0]
    K2 = np.zeros_like(gains.K_gpc)
    K2[1] = gains.K_gpc[1]

    power = np.eye(n).astype(complex)
    sum1 = np.zeros((n, n), complex)
    sum2 = np.zeros((n, n), complex)
    for j in range(h2):
        term = lam ** (h2 - 1 - j) * power
        if j < h1:
            sum1 += term
        sum2 += term
        power = power @ clm.F_bar
    bracket = lam ** h2 * np.eye(n) + ss.G @ K1 @ sum1 + ss.G @ K2 @ sum2
    factor = lam * np.eye(n) - clm.F_bar
    return complex(np.linalg.det(bracket) * np.linalg.det(factor))


def simulate_delay_recursion(ss: StateSpace, gains: GpcGains, h1: int, h2: int,
                             x0: np.ndarray, steps: int) -> np.ndarray:
    """Iterate the two-delay loop directly from a constant prehistory.

    Independent of the eigenvalue route; returns the norm of the state at
    every step, for decay cross-checks.
    """
    T1, T2, _ = _delayed_taps(ss, gains, h1, h2)
    n = ss.F.shape[0]
    hist = np.tile(np.asarray(x0, float), (h2 + 1, 1))
    norms = np.zeros(steps)
    for k in range(steps):
        x = hist[-1]
        nxt = ss.F @ x + T1 @ hist[h2 - h1] + T2 @ hist[0]
        hist[:-1] = hist[1:]
        hist[-1] = nxt
        norms[k] = np.linalg.norm(nxt)
        if not np.isfinite(norms[k]) or norms[k] > 1e12 * max(1.0, np.linalg.norm(x0)):
            norms[k:] = norms[k]
            break
    return norms
