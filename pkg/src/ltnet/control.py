"""Selective inhibition and recruitment control synthesis.

Layer inputs decompose as u(t) = K x(t) + ubar(t).  The feedback gain K
cancels the recurrent drive onto the task-irrelevant (first r) nodes, and
the feedforward term dominates the remaining excitation from the layer
above and the background, so the inhibited nodes see nonpositive total
input and decay as tau x' = -x.  The task-relevant nodes are untouched
(the controlled rows of B vanish there) and get recruited through the
surviving weights.

For a bilayer, exact cancellation needs at least as many independent
input channels as inhibited nodes (p >= r); the gain then solves
B^- K = -[W^-- W^-+] exactly.  In a deeper hierarchy the layers between
top and bottom must also dominate the worst-case drive routed through the
slaved layer below, which the gain inequalities express through the
composed map's gain bound.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Union

import numpy as np
from scipy.optimize import linprog

from .network import LTNetwork

__all__ = [
    "ControlLaw",
    "InfeasibleExact",
    "NegativeControl",
    "feedback_gain_bilayer",
    "feedforward_bilayer",
    "multilayer_controls",
]

_RESIDUAL_TOL = 1e-10


class InfeasibleExact(Exception):
    """Exact row cancellation is not solvable with the given B."""


class NegativeControl(Exception):
    """Synthesis produced a control with negative entries."""


def _clip_plus(a):
    return np.maximum(np.asarray(a, dtype=float), 0.0)


@dataclass(frozen=True)
class ControlLaw:
    """Input law u(t) = K x(t) + ubar for one layer.

    ubar is None, a constant vector, or a callable (t, x_above) -> vector
    evaluated online from the live state of the layer above.  mode is one
    of 'feedback-only', 'feedforward-only', 'combined'.
    """

    layer: int
    K: Optional[np.ndarray]
    ubar: Union[None, np.ndarray, Callable]
    mode: str

    def __post_init__(self):
        if self.mode not in ("feedback-only", "feedforward-only", "combined"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.K is not None:
            K = np.array(self.K, dtype=float)
            K.setflags(write=False)
            object.__setattr__(self, "K", K)
        if self.ubar is not None and not callable(self.ubar):
            ub = np.array(self.ubar, dtype=float)
            ub.setflags(write=False)
            object.__setattr__(self, "ubar", ub)

    def input_at(self, t, x, x_above=None) -> np.ndarray:
        """Evaluate u(t) for layer state x and upper-layer state x_above."""
        parts = []
        if self.K is not None:
            parts.append(self.K @ x)
        if self.ubar is not None:
            parts.append(self.ubar(t, x_above) if callable(self.ubar) else self.ubar)
        if not parts:
            return np.zeros(0)
        return sum(parts)


def feedback_gain_bilayer(net: LTNetwork) -> np.ndarray:
    """Gain K zeroing the inhibited rows of W + B K.

    Requires p >= r and full row rank of the inhibited block of B; the
    minimum-norm least-squares solution is returned and the residual is
    checked against 1e-10.
    """
    r = net.r
    if r == 0:
        return np.zeros((net.p, net.n))
    if net.B is None or net.p < r:
        raise InfeasibleExact(
            f"exact cancellation needs p >= r, got p={net.p}, r={r}"
        )
    B_minus = net.B[:r, :]
    if np.all(B_minus == 0):
        raise InfeasibleExact("inhibited rows of B are zero")
    target = -net.W[:r, :]
    K, *_ = np.linalg.lstsq(B_minus, target, rcond=None)
    resid = float(np.max(np.abs(B_minus @ K - target)))
    if resid > _RESIDUAL_TOL:
        raise InfeasibleExact(f"cancellation residual {resid:.2e} exceeds 1e-10")
    return K


def feedforward_bilayer(net: LTNetwork, xbar1, nu, W21) -> np.ndarray:
    """Constant feedforward dominating worst-case drive onto inhibited nodes.

    Solves

        B^- ubar = -[W^-- W^-+]_+ nu - [W21^-+]_+ xbar1 - [c^-]_+

    where [.]_+ is the elementwise positive part, nu is the monotone
    bound on this layer's state (already evaluated at xbar1) and xbar1
    bounds the task-relevant state of the layer above.  With any
    admissible trajectory below those bounds the inhibited nodes then
    receive nonpositive total input.  Raises NegativeControl if the
    least-squares ubar has negative entries.
    """
    r = net.r
    if r == 0:
        return np.zeros(net.p)
    if net.B is None or np.all(net.B[:r, :] == 0):
        raise InfeasibleExact("inhibited rows of B are zero")
    nu = np.asarray(nu, dtype=float)
    xbar1 = np.asarray(xbar1, dtype=float)
    # with r1 = 0 the whole upper layer is task-relevant, so the relevant
    # inter-layer block is simply the inhibited rows of W21
    if W21 is None:
        inter = np.zeros(r)
    else:
        W21 = np.atleast_2d(np.asarray(W21, dtype=float))
        inter = _clip_plus(W21[:r, :]) @ xbar1
    target = -_clip_plus(net.W[:r, :]) @ nu - inter - _clip_plus(net.c[:r])
    B_minus = net.B[:r, :]
    ubar, *_ = np.linalg.lstsq(B_minus, target, rcond=None)
    resid = float(np.max(np.abs(B_minus @ ubar - target)))
    if resid > _RESIDUAL_TOL:
        raise InfeasibleExact(f"feedforward residual {resid:.2e} exceeds 1e-10")
    if np.any(ubar < -1e-12):
        raise NegativeControl(f"feedforward has negative entries: {ubar}")
    return _clip_plus(ubar)


def _dominating_gain(B_minus, rhs) -> np.ndarray:
    """K (p x n) with B^- K <= rhs elementwise, tight where feasible.

    With p >= r the equality system is solved exactly.  Otherwise each
    column is found by a small linear program minimizing the total
    inhibition surplus subject to elementwise dominance.
    """
    r, p = B_minus.shape
    n = rhs.shape[1]
    if p >= r:
        K, *_ = np.linalg.lstsq(B_minus, rhs, rcond=None)
        resid = float(np.max(np.abs(B_minus @ K - rhs)))
        if resid <= _RESIDUAL_TOL:
            return K
    K = np.empty((p, n))
    for j in range(n):
        # minimize sum of surplus (rhs_j - B^- k), i.e. maximize sum B^- k
        res = linprog(
            c=-np.sum(B_minus, axis=0),
            A_ub=B_minus,
            b_ub=rhs[:, j],
            bounds=[(None, None)] * p,
            method="highs",
        )
        if res.status != 0:
            raise InfeasibleExact(f"no dominating gain for column {j}")
        K[:, j] = res.x
    return K


def _online_feedforward(B_minus, W_up_minus, c_minus):
    """Feedforward callable tracking the layer above.

    Evaluates ubar(t) from the live upper-layer state x_above so that
    B^- ubar <= -W_up^- x_above - c^- elementwise (demands that are
    already nonpositive are met with zero surplus).
    """
    pinv = np.linalg.pinv(B_minus)

    def ubar(t, x_above):
        target = -W_up_minus @ np.asarray(x_above, dtype=float) - c_minus
        return _clip_plus(pinv @ np.minimum(target, 0.0))

    return ubar


def multilayer_controls(hierarchy, certification) -> list:
    """Synthesize per-layer control laws from a certified hierarchy.

    certification is the result of stability.certify_hierarchy; its
    composed-map gain bounds enter the gain inequalities of the layers
    between top and bottom.  Returns one ControlLaw per layer (layer 1 is
    uncontrolled).  Gains satisfy, elementwise,

        B_N^- K_N  = -[W_NN^-- W_NN^-+]                   (bottom layer)
        B_i^- K_i <= -|W_ii^-:| - |W_i,i+1^-+| Fbar_{i+1} |W_i+1,i^+:|

    with equality whenever p_i >= r_i, and the feedforward parts track
    the layer above online:  B_i^- ubar_i(t) <= -W_i,i-1^-: x_{i-1}(t) - c_i^-.
    """
    from .equilibria import max_gain_matrix  # avoid import at module load

    N = hierarchy.N
    laws = [ControlLaw(layer=1, K=None, ubar=None, mode="feedback-only")]
    for i in range(2, N + 1):
        net = hierarchy.layers[i - 1]
        r = net.r
        if r == 0 or net.B is None:
            laws.append(ControlLaw(layer=i, K=None, ubar=None, mode="feedback-only"))
            continue
        B_minus = net.B[:r, :]
        if i == N:
            rhs = -net.W[:r, :]
        else:
            below = hierarchy.layers[i]
            Wdn_mp = hierarchy.W_down[i - 1][:r, below.plus]
            Wup_p = hierarchy.W_up[i - 1][below.plus, :]
            Fbar = max_gain_matrix(certification.maps[i + 1])
            rhs = -np.abs(net.W[:r, :]) - np.abs(Wdn_mp) @ Fbar @ np.abs(Wup_p)
        K = _dominating_gain(B_minus, rhs)
        ubar = _online_feedforward(
            B_minus, hierarchy.W_up[i - 2][:r, :], net.c[:r]
        )
        laws.append(ControlLaw(layer=i, K=K, ubar=ubar, mode="combined"))
    return laws
