"""Finite-horizon predictive gain synthesis on the error model.

Stacks the model over the horizon, assembles the ratio-aware quadratic
cost and solves the batch least-squares problem for the receding-horizon
feedback and reference-feedforward gains.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .errors import SingularSystem
from .fopdt_model import StateSpace

# Condition-number ceiling for the regularized normal equations.
_COND_LIMIT = 1e14


@dataclass(frozen=True)
class PredictionMatrices:
    """Stacked model: X_future = H F x + P U_future + E_bar R_future.

    H stacks powers of F (row block i is F^i), so H @ F maps the current
    state onto the predicted block column [X(k+1); ...; X(k+N)].  P and
    E_bar are the block-Toeplitz input and reference convolution maps.
    """

    H: np.ndarray
    P: np.ndarray
    E_bar: np.ndarray
    horizon: int


def build_prediction(ss: StateSpace, horizon: int) -> PredictionMatrices:
    """Stack the state equation over `horizon` future steps."""
    if horizon < 1:
        raise ValueError("horizon must be at least 1")
    n = ss.F.shape[0]
    m = ss.G.shape[1]
    d = ss.E.shape[1]

    powers = [np.eye(n)]
    for _ in range(horizon - 1):
        powers.append(ss.F @ powers[-1])

    H = np.vstack(powers)
    P = np.zeros((horizon * n, horizon * m))
    E_bar = np.zeros((horizon * n, horizon * d))
    for i in range(horizon):
        for j in range(i + 1):
            P[i * n:(i + 1) * n, j * m:(j + 1) * m] = powers[i - j] @ ss.G
            E_bar[i * n:(i + 1) * n, j * d:(j + 1) * d] = powers[i - j] @ ss.E
    return PredictionMatrices(H=H, P=P, E_bar=E_bar, horizon=horizon)


@dataclass(frozen=True)
class CostWeights:
    """Per-step weights of the ratio-tracking cost.

    q1_diag weights the six model states directly; beta penalizes the
    scaled error difference e1 - e2/alpha and gamma the matching
    error-sum difference; epsilon scales the control penalty.
    """

    q1_diag: np.ndarray
    beta: float = 0.0
    gamma: float = 0.0
    alpha: float = 1.0
    epsilon: float = 1.0

    def __post_init__(self):
        diag = np.asarray(self.q1_diag, dtype=float)
        if diag.shape != (6,):
            raise ValueError("q1_diag must hold six entries")
        if np.any(diag < 0):
            raise ValueError("state weights must be nonnegative")
        object.__setattr__(self, "q1_diag", diag)
        if self.beta < 0 or self.gamma < 0:
            raise ValueError("ratio weights must be nonnegative")
        if self.alpha == 0:
            raise ValueError("target ratio must be nonzero")
        if self.epsilon <= 0:
            raise ValueError("control weight must be positive")

    def step_matrix(self) -> np.ndarray:
        """Q for a single step: Q1 + beta * m2'm2 + gamma * m3'm3."""
        m2 = np.array([1.0, 0.0, 0.0, -1.0 / self.alpha, 0.0, 0.0])
        m3 = np.array([0.0, 0.0, 1.0, 0.0, 0.0, -1.0 / self.alpha])
        return np.diag(self.q1_diag) + self.beta * np.outer(m2, m2) \
            + self.gamma * np.outer(m3, m3)


def assemble_cost(weights: CostWeights, horizon: int,
                  q_per_step=None) -> tuple[np.ndarray, np.ndarray]:
    """Block-diagonal stacked cost (Q_big, R_big) over the horizon.

    q_per_step optionally overrides the state weight of individual steps
    with explicit 6x6 matrices.
    """
    if q_per_step is None:
        q_steps = [weights.step_matrix()] * horizon
    else:
        q_steps = [np.asarray(q, float) for q in q_per_step]
        if len(q_steps) != horizon:
            raise ValueError("q_per_step must supply one matrix per step")
    n = q_steps[0].shape[0]
    Q_big = np.zeros((horizon * n, horizon * n))
    for i, q in enumerate(q_steps):
        Q_big[i * n:(i + 1) * n, i * n:(i + 1) * n] = q
    R_big = weights.epsilon * np.eye(2 * horizon)
    return Q_big, R_big


@dataclass(frozen=True)
class GpcGains:
    """First-block receding-horizon gains.

    K_gpc (2x6) feeds back the model state; K_ref (2x2N) feeds forward the
    stacked auxiliary-reference window.
    """

    K_gpc: np.ndarray
    K_ref: np.ndarray
    horizon: int


def solve_gains(pm: PredictionMatrices, Q_big: np.ndarray, R_big: np.ndarray,
                ss: StateSpace) -> GpcGains:
    """Solve the batch quadratic program and keep the first input block.

    The optimal stacked input is -(P'QP + R)^-1 P'Q (H F x + E_bar R_w);
    the normal-equation matrix is symmetric positive definite and solved
    through its Cholesky factorization.
    """
    A = pm.P.T @ Q_big @ pm.P + R_big
    A = 0.5 * (A + A.T)
    cond = np.linalg.cond(A)
    if not np.isfinite(cond) or cond > _COND_LIMIT:
        raise SingularSystem(f"normal equations condition {cond:.3e} exceeds {_COND_LIMIT:.0e}")
    try:
        factor = cho_factor(A)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - cond guard fires first
        raise SingularSystem(str(exc)) from exc

    rhs_state = pm.P.T @ Q_big @ (pm.H @ ss.F)
    rhs_ref = pm.P.T @ Q_big @ pm.E_bar
    K_full_state = -cho_solve(factor, rhs_state)
    K_full_ref = -cho_solve(factor, rhs_ref)
    return GpcGains(K_gpc=K_full_state[:2], K_ref=K_full_ref[:2], horizon=pm.horizon)
