"""Independent reference implementations used to pin expected values.

Everything here is written straight from the transfer-function /
optimal-control definitions, on purpose not sharing code with the
package, so the two routes can disagree when one of them is wrong.
"""

from __future__ import annotations

import numpy as np


def simulate_subprocess_outputs(a, b, h, u_sequence):
    """Step the four first-order paths y_ij(k+1) = -a_ij y_ij(k) + b_ij u_j(k - h_j).

    a, b: (2, 2) arrays; h: (h1, h2) integer delays per input; u_sequence: (T, 2).
    Returns outputs y (T, 2) with y_i(k) = y_i1(k) + y_i2(k); inputs before
    time zero are taken as zero.
    """
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    u = np.asarray(u_sequence, float)
    steps = u.shape[0]
    sub = np.zeros((2, 2))
    y = np.zeros((steps, 2))
    for k in range(steps):
        y[k] = sub.sum(axis=1)
        for i in range(2):
            for j in range(2):
                uj = u[k - h[j], j] if k - h[j] >= 0 else 0.0
                sub[i, j] = -a[i, j] * sub[i, j] + b[i, j] * uj
    return y


def riccati_gpc_gain(F, G, Q, R, horizon):
    """First receding-horizon gain by backward dynamic programming.

    Minimizes sum of X(k+i)' Q X(k+i) + U_i' R U_i over i = 1..horizon for
    X(+1) = F X + G U and returns K with U_0* = K X(k).
    """
    F = np.asarray(F, float)
    G = np.asarray(G, float)
    Q = np.asarray(Q, float)
    R = np.asarray(R, float)
    P = np.zeros_like(Q)
    K = None
    for _ in range(horizon):
        W = Q + P
        gain = -np.linalg.solve(G.T @ W @ G + R, G.T @ W @ F)
        closed = F + G @ gain
        P = closed.T @ W @ closed + gain.T @ R @ gain
        K = gain
    return K


def rollout_equivalent_control(F, G, E, K_gpc, K_ref, h1, h2, r_tilde_seq, x0, steps):
    """Closed-loop rollout in state time with pre-start inputs equal to zero.

    The equivalent control at state time k applies the optimal law only once
    the matching physical input exists: component i is K_i X(k) + Kref_i R(k)
    for k >= h_i and zero before.  Returns the state trajectory (steps+1, n)
    and the equivalent-control trajectory (steps, 2).

    r_tilde_seq must cover indices 0 .. steps + max(h) + horizon; R(k) windows
    are read directly from it.
    """
    n = F.shape[0]
    width = K_ref.shape[1]
    per = 2
    depth = width // per
    x = np.asarray(x0, float).copy()
    states = np.zeros((steps + 1, n))
    controls = np.zeros((steps, 2))
    states[0] = x
    for k in range(steps):
        window = np.concatenate([r_tilde_seq[k + j] for j in range(depth)])
        u_eq = np.zeros(2)
        full = K_gpc @ x + K_ref @ window
        if k >= h1:
            u_eq[0] = full[0]
        if k >= h2:
            u_eq[1] = full[1]
        x = F @ x + G @ u_eq + E @ r_tilde_seq[k]
        states[k + 1] = x
        controls[k] = u_eq
    return states, controls

def ultimate_by_phase_sweep(a, b, h, sample_time, grid=400000):
    """Phase-crossover (Ku, Tu) of g(z) = b z^(-h)/(z + a) on the unit circle.

    Sweeps digital frequency theta = omega*Ts over (0, pi) for the first
    -180 degree crossing of the continuous phase
    phi(theta) = -h*theta - atan2(sin theta, cos theta + a), refines it by
    bisection, and returns Ku = 1/|g| there with Tu = 2*pi*Ts/theta.
    Returns None when the phase never reaches -pi strictly inside (0, pi).
    """
    if b <= 0.0 or not -1.0 < a < 1.0:
        raise ValueError("oracle expects b > 0 and a stable pole")

    def phase(theta):
        return -h * theta - np.arctan2(np.sin(theta), np.cos(theta) + a)

    thetas = np.linspace(1e-9, np.pi - 1e-9, grid)
    values = phase(thetas) + np.pi
    crossings = np.nonzero((values[:-1] > 0.0) & (values[1:] <= 0.0))[0]
    if len(crossings) == 0:
        return None
    lo, hi = thetas[crossings[0]], thetas[crossings[0] + 1]
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if phase(mid) + np.pi > 0.0:
            lo = mid
        else:
            hi = mid
    theta = 0.5 * (lo + hi)
    magnitude = b / abs(np.exp(1j * theta) + a)
    return 1.0 / magnitude, 2.0 * np.pi * sample_time / theta
