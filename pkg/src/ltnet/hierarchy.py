"""Multilayer hierarchies and timescale-separation experiments.

Layers are chained linear-threshold networks with strictly decreasing
time constants; layer i receives W_up x_{i-1} from above, W_down x_{i+1}
from below, its background c_i and the control B_i u_i:

    tau_i x_i' = -x_i + [W_ii x_i + W_i,i-1 x_{i-1} + W_i,i+1 x_{i+1}
                         + B_i u_i + c_i]_0^m_i.

As the timescale ratios eps_i = tau_{i+1}/tau_i shrink, a controlled
lower layer is slaved to the quasi-steady reference
(0, h_i^+(W_up^{++} x_{i-1}(t) + c_i^+)) built from the composed
equilibrium maps, and the top layer approaches the reduced-order model
that replaces the layers below by their equilibrium map.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .equilibria import PiecewiseAffineMap
from .network import LTNetwork, Trajectory, clip_box, rk4_integrate

__all__ = [
    "Hierarchy",
    "TrackingReport",
    "simulate_hierarchy",
    "reference_trajectory",
    "tracking_error",
    "epsilon_sweep",
    "rom_simulate",
]


@dataclass(frozen=True)
class Hierarchy:
    """Chain of layers with inter-layer weights.

    W_down[i-1] is W_{i,i+1} (drive from the layer below), W_up[i-1] is
    W_{i+1,i} (drive from the layer above), for i = 1..N-1.  The top
    layer must have r = 0 and time constants must strictly decrease.
    """

    layers: tuple
    W_down: tuple
    W_up: tuple

    def __post_init__(self):
        layers = tuple(self.layers)
        N = len(layers)
        if N < 1:
            raise ValueError("hierarchy needs at least one layer")
        W_down = tuple(np.asarray(Wd, dtype=float) for Wd in self.W_down)
        W_up = tuple(np.asarray(Wu, dtype=float) for Wu in self.W_up)
        if len(W_down) != N - 1 or len(W_up) != N - 1:
            raise ValueError("need N-1 inter-layer blocks in each direction")
        for i in range(N - 1):
            na, nb = layers[i].n, layers[i + 1].n
            if W_down[i].shape != (na, nb):
                raise ValueError(f"W_down[{i}] must be ({na}, {nb})")
            if W_up[i].shape != (nb, na):
                raise ValueError(f"W_up[{i}] must be ({nb}, {na})")
        if layers[0].r != 0:
            raise ValueError("top layer cannot have inhibited nodes (r1 = 0)")
        taus = [la.tau for la in layers]
        if any(t2 >= t1 for t1, t2 in zip(taus, taus[1:])):
            raise ValueError(f"time constants must strictly decrease, got {taus}")
        object.__setattr__(self, "layers", layers)
        object.__setattr__(self, "W_down", W_down)
        object.__setattr__(self, "W_up", W_up)

    @property
    def N(self) -> int:
        return len(self.layers)

    @property
    def eps(self) -> tuple:
        """Timescale ratios eps_i = tau_{i+1} / tau_i."""
        taus = [la.tau for la in self.layers]
        return tuple(t2 / t1 for t1, t2 in zip(taus, taus[1:]))

    def with_eps(self, eps: float) -> "Hierarchy":
        """Copy with every ratio set to eps, holding tau_1 fixed."""
        if not 0 < eps < 1:
            raise ValueError(f"eps must lie in (0, 1), got {eps}")
        tau = self.layers[0].tau
        new_layers = [self.layers[0]]
        for la in self.layers[1:]:
            tau = tau * eps
            new_layers.append(replace(la, tau=tau))
        return Hierarchy(tuple(new_layers), self.W_down, self.W_up)

    def slices(self):
        """State slices of each layer in the stacked vector."""
        out, start = [], 0
        for la in self.layers:
            out.append(slice(start, start + la.n))
            start += la.n
        return out


def simulate_hierarchy(
    h: Hierarchy,
    controls: Optional[Sequence] = None,
    x0: Optional[Sequence] = None,
    t_span=(0.0, 10.0),
    dt: Optional[float] = None,
    x1_override=None,
) -> list:
    """Integrate all layers jointly with one fixed RK4 step.

    controls, when given, is one ControlLaw per layer (entries may be
    None).  x0 is a list of per-layer initial states (zeros by default).
    x1_override, a callable t -> state, replaces the top layer's dynamics
    by a scripted trajectory (for externally supplied slow inputs; the
    caller is responsible for keeping it bounded).  Returns one
    Trajectory per layer; controlled layers log the applied u(t).
    """
    N = h.N
    taus = np.concatenate([np.full(la.n, la.tau) for la in h.layers])
    ms = np.concatenate([la.m for la in h.layers])
    sl = h.slices()
    if dt is None:
        dt = min(la.tau for la in h.layers) / 50.0
    if dt > min(la.tau for la in h.layers) / 20.0 + 1e-15:
        raise ValueError(f"dt={dt} exceeds tau_min/20")
    t0, t1 = float(t_span[0]), float(t_span[1])
    n_steps = int(round((t1 - t0) / dt))
    if n_steps < 1:
        raise ValueError("t_span shorter than one step")
    if x0 is None:
        x0 = [np.zeros(la.n) for la in h.layers]
    X0 = np.concatenate([clip_box(np.asarray(x, float), la.m) for x, la in zip(x0, h.layers)])
    laws = list(controls) if controls is not None else [None] * N

    # stack the layer and inter-layer blocks into one matrix; feedback
    # gains fold into the diagonal blocks and constant feedforward into
    # the offset, leaving only online feedforward terms per stage
    n_tot = X0.size
    Wtot = np.zeros((n_tot, n_tot))
    ctot = np.concatenate([la.c for la in h.layers])
    online = []
    for i, la in enumerate(h.layers):
        Wtot[sl[i], sl[i]] = la.W
        if i > 0:
            Wtot[sl[i], sl[i - 1]] = h.W_up[i - 1]
        if i < N - 1:
            Wtot[sl[i], sl[i + 1]] = h.W_down[i]
        law = laws[i] if i < len(laws) else None
        if law is None or la.B is None:
            continue
        if law.K is not None:
            Wtot[sl[i], sl[i]] += la.B @ law.K
        if law.ubar is None:
            continue
        if callable(law.ubar):
            online.append((i, la.B, law.ubar))
        else:
            ctot[sl[i]] += la.B @ law.ubar

    def f(t, X):
        if x1_override is not None:
            # scripted top layer: substitute its state at every stage time
            X = X.copy()
            X[sl[0]] = np.asarray(x1_override(t), dtype=float)
        d = Wtot @ X + ctot
        for i, B, ubar in online:
            d[sl[i]] += B @ ubar(t, X[sl[i - 1]] if i > 0 else None)
        dX = (-X + clip_box(d, ms)) / taus
        if x1_override is not None:
            dX[sl[0]] = 0.0
        return dX

    if x1_override is not None:
        X0[sl[0]] = np.asarray(x1_override(t0), dtype=float)

    # integrate the stacked system, projecting onto the box after each step
    X = X0.copy()
    samples = np.empty((n_steps + 1, X.size))
    samples[0] = X
    half, sixth = 0.5 * dt, dt / 6.0
    for k in range(n_steps):
        t = t0 + k * dt
        k1 = f(t, X)
        k2 = f(t + half, X + half * k1)
        k3 = f(t + half, X + half * k2)
        k4 = f(t + dt, X + dt * k3)
        X = clip_box(X + sixth * (k1 + 2.0 * (k2 + k3) + k4), ms)
        if x1_override is not None:
            X[sl[0]] = np.asarray(x1_override(t + dt), dtype=float)
        samples[k + 1] = X

    times = t0 + dt * np.arange(n_steps + 1)
    out = []
    for i, la in enumerate(h.layers):
        log = None
        law = laws[i] if i < len(laws) else None
        if law is not None and la.B is not None:
            log = np.array(
                [
                    law.input_at(
                        t, samples[k, sl[i]], samples[k, sl[i - 1]] if i > 0 else None
                    )
                    for k, t in enumerate(times)
                ]
            )
        out.append(Trajectory(t0=t0, dt=dt, samples=samples[:, sl[i]], input_log=log))
    return out


def reference_trajectory(
    h: Hierarchy,
    upper_traj: Trajectory,
    layer: int,
    pa_map: Optional[PiecewiseAffineMap] = None,
) -> Trajectory:
    """Quasi-steady reference (0, h_i^+(W_up^{++} x_{i-1}(t) + c_i^+)).

    pa_map is the composed task-relevant equilibrium map of the layer
    (from stability.certify_hierarchy); built on the fly for a bottom
    layer when omitted.  Sampled at the upper trajectory's times.
    """
    if not 2 <= layer <= h.N:
        raise ValueError(f"layer must be 2..{h.N}")
    net = h.layers[layer - 1]
    above = h.layers[layer - 2]
    if pa_map is None:
        if layer != h.N:
            raise ValueError("pa_map required for layers above the bottom")
        from .equilibria import equilibrium_map

        pa_map = equilibrium_map(net.W[net.plus, net.plus], net.m[net.plus])
    Wup_pp = h.W_up[layer - 2][net.plus, above.plus]
    drive = upper_traj.samples[:, above.plus] @ Wup_pp.T + net.c[net.plus]
    plus_vals = pa_map.eval_many(drive)
    samples = np.zeros((plus_vals.shape[0], net.n))
    samples[:, net.plus] = plus_vals
    return Trajectory(t0=upper_traj.t0, dt=upper_traj.dt, samples=samples)


def tracking_error(traj: Trajectory, ref: Trajectory, window) -> float:
    """Sup over the window of the euclidean distance to the reference."""
    if abs(traj.dt - ref.dt) > 1e-12 or abs(traj.t0 - ref.t0) > 1e-12:
        raise ValueError("trajectory and reference must share their time grid")
    mask = traj.window(*window)
    if not np.any(mask):
        raise ValueError(f"window {window} contains no samples")
    diff = traj.samples[mask] - ref.samples[mask]
    return float(np.max(np.linalg.norm(diff, axis=1)))


@dataclass(frozen=True)
class TrackingReport:
    """Per-epsilon tracking errors and inhibited residuals of a sweep.

    errors[layer] and inhibited[layer] are lists aligned with eps_list;
    the monotone flags record whether each sequence is nonincreasing.
    """

    eps_list: tuple
    window: tuple
    errors: dict
    inhibited: dict
    errors_monotone: dict
    inhibited_monotone: dict

    def to_dict(self):
        return {
            "eps": list(self.eps_list),
            "window": list(self.window),
            "tracking_errors": {str(k): v for k, v in self.errors.items()},
            "inhibited_norms": {str(k): v for k, v in self.inhibited.items()},
            "tracking_monotone": {str(k): v for k, v in self.errors_monotone.items()},
            "inhibited_monotone": {str(k): v for k, v in self.inhibited_monotone.items()},
        }


def epsilon_sweep(
    h: Hierarchy,
    controls,
    eps_list: Sequence[float],
    x0=None,
    window=None,
    t_end: Optional[float] = None,
    dt_factor: float = 50.0,
    maps: Optional[dict] = None,
) -> TrackingReport:
    """Rescale the hierarchy over eps_list and measure slaving quality.

    For each eps the layer time constants are reset to tau_1 * eps^(i-1),
    the controlled hierarchy is simulated, and every layer below the top
    is compared against its quasi-steady reference over the window
    (default [2 tau_1, 10 tau_1]); inhibited nodes are scored by their
    sup norm over the same window.  maps supplies the per-layer composed
    equilibrium maps keyed by layer index (required when N > 2).
    """
    tau1 = h.layers[0].tau
    if window is None:
        window = (2.0 * tau1, 10.0 * tau1)
    if t_end is None:
        t_end = max(window[1], 10.0 * tau1)
    errors = {i: [] for i in range(2, h.N + 1)}
    inhibited = {i: [] for i in range(2, h.N + 1) if h.layers[i - 1].r > 0}
    for eps in eps_list:
        h_eps = h.with_eps(float(eps))
        dt = min(la.tau for la in h_eps.layers) / dt_factor
        trajs = simulate_hierarchy(h_eps, controls, x0, (0.0, t_end), dt)
        for i in range(2, h.N + 1):
            net = h_eps.layers[i - 1]
            pa_map = None if maps is None else maps.get(i)
            ref = reference_trajectory(h_eps, trajs[i - 2], i, pa_map)
            errors[i].append(tracking_error(trajs[i - 1], ref, window))
            if net.r > 0:
                mask = trajs[i - 1].window(*window)
                resid = np.linalg.norm(trajs[i - 1].samples[mask][:, : net.r], axis=1)
                inhibited[i].append(float(np.max(resid)))
    def monotone(seq):
        return all(b <= a + 1e-12 for a, b in zip(seq, seq[1:]))

    return TrackingReport(
        eps_list=tuple(float(e) for e in eps_list),
        window=tuple(window),
        errors=errors,
        inhibited=inhibited,
        errors_monotone={i: monotone(v) for i, v in errors.items()},
        inhibited_monotone={i: monotone(v) for i, v in inhibited.items()},
    )


def rom_simulate(
    h: Hierarchy,
    pa_map: PiecewiseAffineMap,
    x0=None,
    t_span=(0.0, 10.0),
    dt: Optional[float] = None,
) -> Trajectory:
    """Reduced-order model of the top layer.

    The layers below are replaced by the composed task-relevant map
    h_2^+, so the top layer evolves as

        tau_1 x' = -x + [W_11^{++} x + W_12^{++} h_2^+(W_21^{++} x + c_2^+) + c_1^+]_0^m.

    x0 defaults to zeros; dt to tau_1 / 50.
    """
    if h.N < 2:
        raise ValueError("reduced model needs a layer below the top")
    top = h.layers[0]
    below = h.layers[1]
    W11 = top.W[top.plus, top.plus]
    W12 = h.W_down[0][top.plus, below.plus]
    W21 = h.W_up[0][below.plus, top.plus]
    c2p = below.c[below.plus]
    m = top.m[top.plus]
    if dt is None:
        dt = top.tau / 50.0
    if x0 is None:
        x0 = np.zeros(W11.shape[0])
    x0 = clip_box(np.asarray(x0, float), m)
    t0, t1 = float(t_span[0]), float(t_span[1])
    n_steps = int(round((t1 - t0) / dt))

    def f(t, x):
        slaved = pa_map.eval(W21 @ x + c2p)
        return (-x + clip_box(W11 @ x + W12 @ slaved + top.c[top.plus], m)) / top.tau

    samples = rk4_integrate(f, x0, t0, dt, n_steps, project=lambda x: clip_box(x, m))
    return Trajectory(t0=t0, dt=dt, samples=samples)
