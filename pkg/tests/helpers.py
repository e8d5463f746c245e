"""Oracles and random-instance generators shared across the test modules."""

import numpy as np


def clip01m(v, m):
    return np.minimum(np.maximum(v, 0.0), m)


def fixed_point(W, m, d, iters=200000, tol=1e-13):
    """Brute-force equilibrium oracle: iterate x <- clip(Wx + d) to a tolerance.

    Only valid when rho(|W|) < 1, which every caller guarantees.
    """
    W = np.asarray(W, dtype=float)
    d = np.asarray(d, dtype=float)
    x = np.zeros(len(d))
    for _ in range(iters):
        x_new = clip01m(W @ x + d, m)
        if np.max(np.abs(x_new - x)) <= tol:
            return x_new
        x = x_new
    raise RuntimeError("fixed-point oracle did not converge")


def joint_fixed_point(W1, W2, W3, cbar, m_out, Win, m_in, cprime,
                      iters=200000, tol=1e-13):
    """Equilibrium oracle for an interconnected pair.

    Outer block: x = clip(W1 x + W2 y + cprime, m_out)
    Inner block: y = clip(Win y + W3 x + cbar, m_in)
    """
    x = np.zeros(np.asarray(W1).shape[0])
    y = np.zeros(np.asarray(Win).shape[0])
    for _ in range(iters):
        y_new = clip01m(np.asarray(Win) @ y + np.asarray(W3) @ x + cbar, m_in)
        x_new = clip01m(np.asarray(W1) @ x + np.asarray(W2) @ y_new + cprime, m_out)
        gap = max(np.max(np.abs(x_new - x)), np.max(np.abs(y_new - y)))
        x, y = x_new, y_new
        if gap <= tol:
            return x, y
    raise RuntimeError("joint fixed-point oracle did not converge")


def random_contractive(rng, n_max=5, rho_lo=0.2, rho_hi=0.85, p_inf=0.5):
    """Random (W, m) with rho(|W|) drawn from [rho_lo, rho_hi], mixed ceilings."""
    n = int(rng.integers(1, n_max + 1))
    W = rng.normal(size=(n, n))
    rho = np.max(np.abs(np.linalg.eigvals(np.abs(W))))
    if rho > 1e-12:
        W *= rng.uniform(rho_lo, rho_hi) / rho
    m = np.where(rng.random(n) < p_inf, np.inf, rng.uniform(0.5, 3.0, size=n))
    return W, m


def rho_oracle(M):
    """Dense-eigensolver spectral radius reference."""
    return float(np.max(np.abs(np.linalg.eigvals(np.asarray(M, dtype=float)))))


def lc_hierarchy(w_bottom=0.01):
    """Three-layer chain whose middle layer carries the composite test."""
    from ltnet import Hierarchy, LTNetwork

    layers = (
        LTNetwork(np.array([[0.0]]), np.array([1.0]), np.array([1.0]), tau=3.36),
        LTNetwork(np.array([[0.83, 0.0], [0.76, 0.0]]), np.array([0.5, 0.5]),
                  np.full(2, np.inf), tau=1.68),
        LTNetwork(np.array([[w_bottom]]), np.array([0.5]), np.array([np.inf]),
                  tau=0.7),
    )
    W_down = (np.array([[0.0, 0.0]]), np.array([[0.04], [0.58]]))
    W_up = (np.array([[0.2], [0.0]]), np.array([[0.01, 0.0]]))
    return Hierarchy(layers, W_down, W_up)


def recruitment_hierarchy():
    """Certifiable three-layer system with one inhibition target per lower layer.

    Layer 1 has finite ceilings; layers 2 and 3 each expose node 0 to a
    single inhibitory input channel.  All recruited blocks are certifiable,
    so the full control synthesis applies.
    """
    from ltnet import Hierarchy, LTNetwork

    layer1 = LTNetwork(
        W=np.array([[0.0, -0.9], [0.8, 0.0]]),
        c=np.array([2.5, 1.5]),
        m=np.array([8.0, 8.0]),
        tau=1.0,
    )
    layer2 = LTNetwork(
        W=np.array([
            [0.2, 0.4, 0.3],
            [0.1, 0.25, -0.2],
            [0.15, 0.1, 0.2],
        ]),
        c=np.array([0.5, 1.2, 0.8]),
        m=np.array([5.0, 6.0, 6.0]),
        tau=0.3,
        B=np.array([[-1.0], [0.0], [0.0]]),
        r=1,
    )
    layer3 = LTNetwork(
        W=np.array([
            [0.1, 0.2, 0.1],
            [0.05, 0.2, 0.15],
            [0.08, 0.1, 0.1],
        ]),
        c=np.array([0.3, 0.9, 0.7]),
        m=np.full(3, np.inf),
        tau=0.09,
        B=np.array([[-1.0], [0.0], [0.0]]),
        r=1,
    )
    W_down = (
        np.array([[0.2, 0.1, 0.15], [0.0, 0.2, 0.1]]),
        np.array([[0.05, 0.0, 0.0], [0.0, 0.3, 0.2], [0.0, 0.1, 0.25]]),
    )
    W_up = (
        np.array([[0.4, 0.2], [0.5, 0.1], [0.2, 0.4]]),
        np.array([[0.3, -0.2, 0.1], [0.0, 0.4, 0.2], [0.0, 0.3, 0.35]]),
    )
    return Hierarchy((layer1, layer2, layer3), W_down, W_up)
