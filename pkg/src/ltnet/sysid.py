"""Identification of layered linear-threshold models from firing rates.

The pipeline covers rate preprocessing (binning and Gaussian smoothing),
autocorrelation timescale estimation, permutation tests, and fitting the
free parameters of a structured hierarchy to trial-averaged rates.

The unknown vector z stacks, in order: the free weights (recurrent and
input-gain entries listed in the structure), the layer time constants,
the background inputs, and the initial state per condition.  Candidate
models are integrated with fixed-step RK4 on the stacked system and
sampled on the data grid; the fit objective is

    f = f_SSE + gamma1 * f_corr + gamma2 * f_var

with f_SSE the summed squared error, f_corr = 1 - mean sample Pearson
correlation over (node, condition) pairs, and f_var the 4-norm of the
standard-deviation mismatches.  Sample statistics use the K-1 convention
throughout.  Multi-start bounded quasi-Newton minimization (L-BFGS-B)
with central finite differences (relative step 1e-5) searches the box;
gradients are evaluated as one batched simulation over all perturbed
parameter vectors.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import minimize
from scipy.special import ndtr

__all__ = [
    "RateSeries",
    "InputSignal",
    "WeightEntry",
    "SysIdProblem",
    "FitReport",
    "NonPositiveCorrelations",
    "SimulationDiverged",
    "AllStartsFailed",
    "bin_rates",
    "gaussian_smooth",
    "fit_exponential_decay",
    "autocorr_timescale",
    "randomization_test",
    "objective_terms",
    "objective",
    "r_squared",
    "fit",
    "predict",
    "two_channel_hierarchy_structure",
]

_FD_REL_STEP = 1e-5
_DIVERGENCE_LIMIT = 1e9
_PENALTY = 1e12


class NonPositiveCorrelations(Exception):
    """No positive average correlations available for the timescale fit."""


class SimulationDiverged(Exception):
    """A candidate model left the admissible state range."""


class AllStartsFailed(Exception):
    """Every optimization start failed to produce a finite objective."""


# ---------------------------------------------------------------------------
# rate preprocessing
# ---------------------------------------------------------------------------


def bin_rates(spike_times, window, bin_width):
    """Bin spike times into firing rates.

    Returns (centers, rates) where rates are counts / bin_width and
    centers are the bin midpoints covering [window[0], window[1]].
    """
    lo, hi = float(window[0]), float(window[1])
    if hi <= lo:
        raise ValueError(f"empty window {window}")
    n_bins = int(round((hi - lo) / bin_width))
    edges = lo + bin_width * np.arange(n_bins + 1)
    counts, _ = np.histogram(np.asarray(spike_times, dtype=float), bins=edges)
    centers = edges[:-1] + 0.5 * bin_width
    return centers, counts / bin_width


def gaussian_smooth(values, sigma, dt=1.0):
    """Smooth a uniformly sampled series with a normalized Gaussian kernel.

    sigma is in time units (samples when dt is 1).  The kernel is
    truncated at +-4 sigma and renormalized; boundaries are handled by
    reflection, so constant signals pass through unchanged.
    """
    values = np.asarray(values, dtype=float)
    s = sigma / dt
    if s <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    radius = int(math.ceil(4.0 * s))
    x = np.arange(-radius, radius + 1)
    kernel = np.exp(-0.5 * (x / s) ** 2)
    kernel /= kernel.sum()
    if values.ndim == 1:
        padded = np.pad(values, radius, mode="reflect")
        return np.convolve(padded, kernel, mode="valid")
    out = np.empty_like(values)
    for i in range(values.shape[0]):
        padded = np.pad(values[i], radius, mode="reflect")
        out[i] = np.convolve(padded, kernel, mode="valid")
    return out


# ---------------------------------------------------------------------------
# intrinsic timescale
# ---------------------------------------------------------------------------


def fit_exponential_decay(rho_bar, lags):
    """Least-squares fit of A * exp(-k / tau) to rho_bar over the lags.

    The fit is linear in log space and uses only lags with positive
    averaged correlation.  Returns (A, tau) in lag units.
    """
    rho_bar = np.asarray(rho_bar, dtype=float)
    lags = np.asarray(list(lags), dtype=float)
    vals = rho_bar[lags.astype(int)]
    keep = vals > 0
    if keep.sum() < 2:
        raise NonPositiveCorrelations(
            "need at least two positive averaged correlations to fit a decay"
        )
    k = lags[keep]
    y = np.log(vals[keep])
    slope, intercept = np.polyfit(k, y, 1)
    if slope >= 0:
        raise NonPositiveCorrelations("averaged correlations do not decay")
    return float(np.exp(intercept)), float(-1.0 / slope)


def autocorr_timescale(trial_rates, bin_width, fit_lags):
    """Intrinsic timescale from across-trial bin correlations.

    trial_rates is (n_trials, n_bins).  The Pearson correlation between
    every pair of bins is computed across trials, averaged over pairs at
    equal lag |k1 - k2| = k, and A * exp(-k / tau) is fitted to the
    averages over fit_lags.  Returns (A, tau) with tau in time units.
    """
    R = np.asarray(trial_rates, dtype=float)
    if R.ndim != 2 or R.shape[0] < 3:
        raise ValueError("trial_rates must be (n_trials >= 3, n_bins)")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)  # constant bins -> nan
        C = np.corrcoef(R, rowvar=False)
    n_bins = C.shape[0]
    rho_bar = np.empty(n_bins)
    for k in range(n_bins):
        diag = np.diagonal(C, offset=k)
        good = np.isfinite(diag)
        rho_bar[k] = diag[good].mean() if good.any() else np.nan
    A, tau_lags = fit_exponential_decay(np.nan_to_num(rho_bar, nan=-1.0), fit_lags)
    return A, tau_lags * bin_width


# ---------------------------------------------------------------------------
# permutation test
# ---------------------------------------------------------------------------


def randomization_test(a, b, n_perm: int = 1999, seed: int = 0) -> float:
    """Two-sided permutation test for a difference in means.

    The pooled sample is sorted before label shuffling, so the p-value is
    invariant to swapping a and b.  Returns
    (1 + #{|perm stat| >= |observed|}) / (1 + n_perm).
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.size == 0 or b.size == 0:
        raise ValueError("both samples must be nonempty")
    observed = abs(a.mean() - b.mean())
    pooled = np.sort(np.concatenate([a, b]))
    na = a.size
    rng = np.random.default_rng(seed)
    count = 0
    for _ in range(n_perm):
        perm = rng.permutation(pooled)
        stat = abs(perm[:na].mean() - perm[na:].mean())
        if stat >= observed - 1e-15:
            count += 1
    return (1 + count) / (1 + n_perm)


# ---------------------------------------------------------------------------
# problem definition
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RateSeries:
    """Rates of one node under one condition, sampled at t0 + k*step."""

    condition: str
    layer: int
    node: int
    t0: float
    step: float
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def times(self):
        return self.t0 + self.step * np.arange(len(self.values))


@dataclass(frozen=True)
class InputSignal:
    """One known exogenous signal.

    kind is one of:
      'rule'       1 under the conditions listed in params['on'], else 0
      'time_cell'  |t0| - t on [t0, 0), 0 afterwards (params['t0'])
      'pulse'      square pulse on params['window'] convolved with a
                   Gaussian of params['sigma'] (difference of CDFs)
      'const'      params['value']
    """

    name: str
    kind: str
    params: dict = field(default_factory=dict)

    def values(self, condition: str, times) -> np.ndarray:
        t = np.asarray(times, dtype=float)
        if self.kind == "rule":
            on = 1.0 if condition in self.params["on"] else 0.0
            return np.full_like(t, on)
        if self.kind == "time_cell":
            t0 = float(self.params["t0"])
            # literal ramp: |t0| - t before the reference time, 0 after
            return np.where(t < 0.0, abs(t0) - t, 0.0)
        if self.kind == "pulse":
            a, b = self.params["window"]
            s = float(self.params.get("sigma", 1.0))
            return ndtr((t - a) / s) - ndtr((t - b) / s)
        if self.kind == "const":
            return np.full_like(t, float(self.params.get("value", 1.0)))
        raise ValueError(f"unknown signal kind {self.kind!r}")


@dataclass(frozen=True)
class WeightEntry:
    """One free weight: block 'Wij' (layer i from layer j) or 'Ui' (input
    gains of layer i); row/col are 0-based within the block; sign is '+',
    '-' or 'free'."""

    block: str
    row: int
    col: int
    sign: str = "free"
    bound: float = 1.5

    def interval(self):
        if self.sign == "+":
            return (0.0, self.bound)
        if self.sign == "-":
            return (-self.bound, 0.0)
        return (-self.bound, self.bound)


class SysIdProblem:
    """Structured identification problem.

    Parameters
    ----------
    layer_sizes : sizes of the stacked layers (top first).
    structure : free WeightEntry list; everything not listed is zero.
    inputs : known exogenous InputSignal list (columns of the gain blocks).
    conditions : experimental condition labels.
    manifest : global state indices with measurements.
    data : condition -> (K, len(manifest)) rate array on the grid
        t0 + k*T; may be None until attached.
    t0, tf, T : data window and sampling step.
    tau_bounds : per-layer (lo, hi) for the time constants.
    c_bounds, x0_max : bounds for backgrounds and initial states.
    gamma1, gamma2 : objective weights (correlation and variance terms).
    sim_substeps : integration steps per data sample (dt = T / substeps).
    """

    def __init__(
        self,
        layer_sizes,
        structure,
        inputs,
        conditions,
        manifest,
        data=None,
        t0=-7.0,
        tf=7.0,
        T=0.1,
        tau_bounds=None,
        c_bounds=(-3.0, 5.0),
        x0_max=None,
        gamma1=250.0,
        gamma2=150.0,
        sim_substeps=2,
    ):
        self.layer_sizes = tuple(int(s) for s in layer_sizes)
        self.N = len(self.layer_sizes)
        self.n = sum(self.layer_sizes)
        self.structure = tuple(structure)
        self.inputs = tuple(inputs)
        self.conditions = tuple(conditions)
        self.manifest = tuple(int(i) for i in manifest)
        self.t0, self.tf, self.T = float(t0), float(tf), float(T)
        self.K = int(round((self.tf - self.t0) / self.T)) + 1
        self.gamma1, self.gamma2 = float(gamma1), float(gamma2)
        self.sim_substeps = int(sim_substeps)
        if tau_bounds is None:
            tau_bounds = [(0.3, 10.0)] * self.N
        self.tau_bounds = [tuple(map(float, tb)) for tb in tau_bounds]
        if len(self.tau_bounds) != self.N:
            raise ValueError("need one tau bound pair per layer")
        self.c_bounds = tuple(map(float, c_bounds))
        self.data = None
        self._x0_max = x0_max
        if data is not None:
            self.attach_data(data)
        self._layer_offsets = np.cumsum([0] + list(self.layer_sizes))
        self._node_layer = np.concatenate(
            [np.full(sz, i) for i, sz in enumerate(self.layer_sizes)]
        )
        self._index_structure()
        self._stage_cache = {}

    # -- data ---------------------------------------------------------------

    def attach_data(self, data):
        data = {c: np.asarray(v, dtype=float) for c, v in data.items()}
        for c in self.conditions:
            if c not in data:
                raise ValueError(f"missing data for condition {c!r}")
            if data[c].shape != (self.K, len(self.manifest)):
                raise ValueError(
                    f"data[{c!r}] must be ({self.K}, {len(self.manifest)}), "
                    f"got {data[c].shape}"
                )
        self.data = data
        if self._x0_max is None:
            peak = max(float(np.max(v)) for v in data.values())
            self._x0_max = 2.0 * max(peak, 1.0)

    @property
    def x0_max(self):
        return 2.0 if self._x0_max is None else self._x0_max

    # -- parameter vector layout -------------------------------------------

    def _index_structure(self):
        n, n_sig = self.n, len(self.inputs)
        w_flat, u_flat = [], []
        for e in self.structure:
            if e.block.startswith("U"):
                i = int(e.block[1:]) - 1
                gr = self._global_row(i, e.row)
                u_flat.append((len(w_flat) + len(u_flat), gr * n_sig + e.col))
            else:
                i, j = int(e.block[1]) - 1, int(e.block[2]) - 1
                if abs(i - j) > 1:
                    raise ValueError(f"block {e.block} skips a layer")
                gr = self._global_row(i, e.row)
                gc = self._global_row(j, e.col)
                w_flat.append((len(w_flat) + len(u_flat), gr * n + gc))
        self._w_slots = w_flat  # (z position, flat index into W)
        self._u_slots = u_flat  # (z position, flat index into U)
        self.n_weights = len(self.structure)
        self.off_tau = self.n_weights
        self.off_c = self.off_tau + self.N
        self.off_x0 = self.off_c + self.n
        self.dim = self.off_x0 + self.n * len(self.conditions)

    def _global_row(self, layer_idx, row):
        if not 0 <= row < self.layer_sizes[layer_idx]:
            raise ValueError(f"row {row} out of range for layer {layer_idx + 1}")
        return int(np.cumsum([0] + list(self.layer_sizes))[layer_idx] + row)

    def bounds(self):
        lo, hi = [], []
        for e in self.structure:
            a, b = e.interval()
            lo.append(a)
            hi.append(b)
        for a, b in self.tau_bounds:
            lo.append(a)
            hi.append(b)
        lo += [self.c_bounds[0]] * self.n
        hi += [self.c_bounds[1]] * self.n
        lo += [0.0] * (self.n * len(self.conditions))
        hi += [self.x0_max] * (self.n * len(self.conditions))
        return np.array(lo), np.array(hi)

    def param_names(self):
        names = [f"{e.block}[{e.row},{e.col}]" for e in self.structure]
        names += [f"tau{i + 1}" for i in range(self.N)]
        names += [f"c[{i}]" for i in range(self.n)]
        for c in self.conditions:
            names += [f"x0:{c}[{i}]" for i in range(self.n)]
        return names

    def unpack(self, Z):
        """Batched unpack: Z (P, dim) -> (W (P,n,n), U (P,n,s), tau (P,n),
        c (P,n), X0 (P,C,n))."""
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        P = Z.shape[0]
        n, n_sig, C = self.n, len(self.inputs), len(self.conditions)
        W = np.zeros((P, n * n))
        U = np.zeros((P, n * n_sig))
        for zpos, flat in self._w_slots:
            W[:, flat] = Z[:, zpos]
        for zpos, flat in self._u_slots:
            U[:, flat] = Z[:, zpos]
        tau_layers = Z[:, self.off_tau : self.off_tau + self.N]
        tau = tau_layers[:, self._node_layer]
        c = Z[:, self.off_c : self.off_c + n]
        X0 = Z[:, self.off_x0 :].reshape(P, C, n)
        return W.reshape(P, n, n), U.reshape(P, n, n_sig), tau, c, X0

    # -- simulation ---------------------------------------------------------

    def _stage_signals(self):
        """Exogenous signals at RK4 stage times: (C, S, n_sig)."""
        key = self.sim_substeps
        if key not in self._stage_cache:
            dt = self.T / self.sim_substeps
            n_steps = (self.K - 1) * self.sim_substeps
            stage_t = self.t0 + 0.5 * dt * np.arange(2 * n_steps + 1)
            sig = np.stack(
                [
                    np.column_stack([s.values(c, stage_t) for s in self.inputs])
                    if self.inputs
                    else np.zeros((stage_t.size, 0))
                    for c in self.conditions
                ]
            )
            self._stage_cache[key] = (dt, n_steps, sig)
        return self._stage_cache[key]

    def simulate_candidates(self, Z):
        """Simulate a batch of parameter vectors under every condition.

        Returns (states (P, C, K, n), diverged (P,) bool).  Diverged rows
        are zeroed beyond the point of failure.
        """
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        P = Z.shape[0]
        C, n = len(self.conditions), self.n
        W, U, tau, c, X0 = self.unpack(Z)
        dt, n_steps, sig = self._stage_signals()
        # drive at every stage time: d = U sig + c, laid out (P, C, S, n)
        drive = np.einsum("csk,pnk->pcsn", sig, U) + c[:, None, None, :]
        B = P * C
        drive = drive.reshape(B, -1, n)
        Wb = np.repeat(W, C, axis=0)
        taub = np.repeat(tau, C, axis=0)
        X = X0.reshape(B, n).copy()
        out = np.empty((B, self.K, n))
        out[:, 0] = X
        alive = np.ones(B, dtype=bool)
        half, sixth = 0.5 * dt, dt / 6.0
        j = 1
        with np.errstate(over="ignore", invalid="ignore"):
            for k in range(n_steps):
                d0 = drive[:, 2 * k]
                dh = drive[:, 2 * k + 1]
                d1 = drive[:, 2 * k + 2]
                WX = np.einsum("bij,bj->bi", Wb, X)
                k1 = (-X + np.maximum(WX + d0, 0.0)) / taub
                X1 = X + half * k1
                k2 = (-X1 + np.maximum(np.einsum("bij,bj->bi", Wb, X1) + dh, 0.0)) / taub
                X2 = X + half * k2
                k3 = (-X2 + np.maximum(np.einsum("bij,bj->bi", Wb, X2) + dh, 0.0)) / taub
                X3 = X + dt * k3
                k4 = (-X3 + np.maximum(np.einsum("bij,bj->bi", Wb, X3) + d1, 0.0)) / taub
                X = np.maximum(X + sixth * (k1 + 2.0 * (k2 + k3) + k4), 0.0)
                if (k & 15) == 0 or k == n_steps - 1:
                    bad = ~np.isfinite(X).all(axis=1) | (
                        np.nan_to_num(np.abs(X), nan=np.inf).max(axis=1)
                        > _DIVERGENCE_LIMIT
                    )
                    if bad.any():
                        alive &= ~bad
                        X[~alive] = 0.0
                if (k + 1) % self.sim_substeps == 0:
                    out[:, j] = X
                    j += 1
        diverged = ~alive.reshape(P, C).all(axis=1)
        return out.reshape(P, C, self.K, n), diverged


# ---------------------------------------------------------------------------
# objective and fit quality
# ---------------------------------------------------------------------------


def _pearson_rows(est, ref):
    """Sample correlation along the last axis; zero-variance pairs map to
    1 when both signals are constant and 0 when only one is."""
    est_c = est - est.mean(axis=-1, keepdims=True)
    ref_c = ref - ref.mean(axis=-1, keepdims=True)
    se = np.sqrt((est_c**2).sum(axis=-1))
    sr = np.sqrt((ref_c**2).sum(axis=-1))
    num = (est_c * ref_c).sum(axis=-1)
    flat_e = se < 1e-12
    flat_r = sr < 1e-12
    denom = np.where(flat_e | flat_r, 1.0, se * sr)
    corr = num / denom
    corr = np.where(flat_e & flat_r, 1.0, corr)
    corr = np.where(flat_e ^ flat_r, 0.0, corr)
    return corr


def objective_terms(est, ref):
    """Raw objective components from aligned rate arrays.

    est, ref : (..., n_signals, K) arrays whose leading axes enumerate
    (condition, node) pairs.  Returns (f_sse, f_corr, f_var).
    """
    est = np.asarray(est, dtype=float)
    ref = np.asarray(ref, dtype=float)
    f_sse = float(((est - ref) ** 2).sum())
    f_corr = float(1.0 - _pearson_rows(est, ref).mean())
    sd_e = est.std(axis=-1, ddof=1)
    sd_r = ref.std(axis=-1, ddof=1)
    f_var = float((((sd_e - sd_r) ** 4).sum()) ** 0.25)
    return f_sse, f_corr, f_var


def objective(z, problem: SysIdProblem):
    """Objective f = f_SSE + gamma1 f_corr + gamma2 f_var for one z.

    Raises SimulationDiverged when the candidate leaves the admissible
    range.  Returns (f, f_sse, f_corr, f_var).
    """
    f, parts, diverged = _objective_batch(np.atleast_2d(z), problem, want_parts=True)
    if diverged[0]:
        raise SimulationDiverged("candidate trajectory diverged")
    return float(f[0]), *parts


def _objective_batch(Z, problem: SysIdProblem, want_parts=False):
    if problem.data is None:
        raise ValueError("problem has no attached data")
    states, diverged = problem.simulate_candidates(Z)
    est = states[:, :, :, problem.manifest]  # (P, C, K, nm)
    ref = np.stack([problem.data[c] for c in problem.conditions])  # (C, K, nm)
    # axes -> (P, C, nm, K) so pairs line up for the statistics
    est_t = np.moveaxis(est, 3, 2)
    ref_t = np.moveaxis(ref, 2, 1)[None]
    err = est_t - ref_t
    f_sse = (err**2).sum(axis=(1, 2, 3))
    corr = _pearson_rows(est_t, np.broadcast_to(ref_t, est_t.shape))
    f_corr = 1.0 - corr.mean(axis=(1, 2))
    sd_e = est_t.std(axis=-1, ddof=1)
    sd_r = ref_t.std(axis=-1, ddof=1)
    f_var = (((sd_e - sd_r) ** 4).sum(axis=(1, 2))) ** 0.25
    f = f_sse + problem.gamma1 * f_corr + problem.gamma2 * f_var
    f = np.where(diverged | ~np.isfinite(f), _PENALTY, f)
    if want_parts:
        return f, (float(f_sse[0]), float(f_corr[0]), float(f_var[0])), diverged
    return f


def r_squared(data, estimates) -> float:
    """Pooled coefficient of determination over nodes and conditions.

    data and estimates are dicts condition -> (K, n_nodes).  The total
    sum of squares is taken around each (node, condition) sample mean.
    """
    ss_res = 0.0
    ss_tot = 0.0
    for c, ref in data.items():
        ref = np.asarray(ref, dtype=float)
        est = np.asarray(estimates[c], dtype=float)
        ss_res += float(((ref - est) ** 2).sum())
        ss_tot += float(((ref - ref.mean(axis=0, keepdims=True)) ** 2).sum())
    if ss_tot == 0.0:
        return 1.0 if ss_res == 0.0 else -np.inf
    return 1.0 - ss_res / ss_tot


# ---------------------------------------------------------------------------
# fitting
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FitReport:
    """Multi-start fit outcome; starts holds (index, f, status) triples."""

    z: np.ndarray
    f: float
    f_sse: float
    f_corr: float
    f_var: float
    r2: float
    n_starts: int
    best_start: int
    starts: tuple
    seed: int

    def __post_init__(self):
        z = np.array(self.z, dtype=float)
        z.setflags(write=False)
        object.__setattr__(self, "z", z)


def _fd_gradient(problem, z, lo, hi):
    """Central-difference gradient via one batched objective evaluation."""
    dim = z.size
    h = _FD_REL_STEP * np.maximum(np.abs(z), 1.0)
    Zp = np.repeat(z[None, :], dim, axis=0)
    Zm = Zp.copy()
    idx = np.arange(dim)
    Zp[idx, idx] = np.minimum(z + h, hi)
    Zm[idx, idx] = np.maximum(z - h, lo)
    F = _objective_batch(np.vstack([Zp, Zm]), problem)
    denom = Zp[idx, idx] - Zm[idx, idx]
    denom[denom == 0.0] = 1.0
    return (F[:dim] - F[dim:]) / denom


def fit(
    problem: SysIdProblem,
    n_starts: int = 32,
    seed: int = 0,
    maxiter: int = 300,
    target_r2: Optional[float] = None,
    verbose: bool = False,
) -> FitReport:
    """Multi-start bounded quasi-Newton fit of the problem's parameters.

    Starts are drawn uniformly inside the bounds from the seeded
    generator, minimized independently with L-BFGS-B, and the best final
    objective wins; the search stops early once target_r2 (when given)
    is reached.  Deterministic for fixed (problem, n_starts, seed).
    """
    lo, hi = problem.bounds()
    rng = np.random.default_rng(seed)
    best = None
    records = []
    for s in range(n_starts):
        z0 = rng.uniform(lo, hi)
        try:
            res = minimize(
                lambda z: float(_objective_batch(z[None, :], problem)[0]),
                z0,
                jac=lambda z: _fd_gradient(problem, z, lo, hi),
                method="L-BFGS-B",
                bounds=list(zip(lo, hi)),
                options={"maxiter": maxiter, "ftol": 1e-12, "gtol": 1e-10},
            )
        except SimulationDiverged:
            records.append((s, float("inf"), "diverged"))
            continue
        records.append((s, float(res.fun), "ok" if res.success else str(res.message)))
        if verbose:
            print(f"start {s}: f = {res.fun:.6g}")
        usable = np.isfinite(res.fun) and res.fun < 0.5 * _PENALTY
        if usable and (best is None or res.fun < best[1]):
            best = (s, float(res.fun), res.x)
            if target_r2 is not None:
                est = predict(res.x, problem)
                if r_squared(problem.data, est) >= target_r2:
                    break
    if best is None:
        raise AllStartsFailed("no start produced a finite objective")
    s_best, f_best, z_best = best
    f, f_sse, f_corr, f_var = objective(z_best, problem)
    r2 = r_squared(problem.data, predict(z_best, problem))
    return FitReport(
        z=z_best,
        f=f,
        f_sse=f_sse,
        f_corr=f_corr,
        f_var=f_var,
        r2=r2,
        n_starts=len(records),
        best_start=s_best,
        starts=tuple(records),
        seed=seed,
    )


def predict(z, problem: SysIdProblem):
    """Manifest-node rate estimates of a parameter vector.

    Returns {condition: (K, n_manifest)} on the data grid.
    """
    states, diverged = problem.simulate_candidates(np.atleast_2d(z))
    if diverged[0]:
        raise SimulationDiverged("candidate trajectory diverged")
    est = states[0][:, :, problem.manifest]
    return {c: est[i] for i, c in enumerate(problem.conditions)}


def simulate_candidate(z, problem: SysIdProblem):
    """Full-state trajectories of one candidate: {condition: (K, n)}."""
    states, diverged = problem.simulate_candidates(np.atleast_2d(z))
    if diverged[0]:
        raise SimulationDiverged("candidate trajectory diverged")
    return {c: states[0][i] for i, c in enumerate(problem.conditions)}


# ---------------------------------------------------------------------------
# reference structure
# ---------------------------------------------------------------------------


def two_channel_hierarchy_structure():
    """Three-layer, two-preference-channel structure with E/I populations.

    The layout mirrors a cortical discrimination hierarchy: a slow
    inhibitory control layer (2 nodes), a middle layer with excitatory
    working-memory and inhibitory sensory-gating populations (4 nodes),
    and a fast excitatory sensory layer (2 nodes).  Within a channel,
    excitatory populations drive the same-preference inhibitory ones and
    themselves; inhibitory populations suppress the opposite channel.
    Rule cues gate the top layers, a ramping time signal feeds the middle
    excitatory nodes, and stimuli feed the bottom layer.

    Returns (layer_sizes, structure, inputs, manifest).
    """
    E = "+"
    I = "-"
    structure = [
        # top-layer lateral inhibition between the two channels
        WeightEntry("W11", 0, 1, I),
        WeightEntry("W11", 1, 0, I),
        # middle excitatory nodes drive the same-channel top inhibition
        WeightEntry("W12", 0, 0, E),
        WeightEntry("W12", 1, 1, E),
        # top inhibition suppresses the opposite-channel middle E node
        WeightEntry("W21", 0, 1, I),
        WeightEntry("W21", 1, 0, I),
        # middle layer: E self-loops, E -> same-channel I, I lateral
        WeightEntry("W22", 0, 0, E),
        WeightEntry("W22", 1, 1, E),
        WeightEntry("W22", 2, 0, E),
        WeightEntry("W22", 3, 1, E),
        WeightEntry("W22", 2, 3, I),
        WeightEntry("W22", 3, 2, I),
        # bottom E nodes feed the middle layer (memory and gating)
        WeightEntry("W23", 0, 0, E),
        WeightEntry("W23", 1, 1, E),
        WeightEntry("W23", 2, 0, E),
        WeightEntry("W23", 3, 1, E),
        # downward: middle E recruits same-channel bottom E, middle I
        # suppresses the opposite-channel bottom E
        WeightEntry("W32", 0, 0, E),
        WeightEntry("W32", 1, 1, E),
        WeightEntry("W32", 0, 3, I),
        WeightEntry("W32", 1, 2, I),
        # bottom self-excitation
        WeightEntry("W33", 0, 0, E),
        WeightEntry("W33", 1, 1, E),
        # input gains
        WeightEntry("U1", 0, 0, E, bound=6.0),
        WeightEntry("U1", 1, 1, E, bound=6.0),
        WeightEntry("U2", 0, 0, E, bound=6.0),
        WeightEntry("U2", 1, 1, E, bound=6.0),
        WeightEntry("U2", 0, 2, E, bound=1.0),
        WeightEntry("U2", 1, 2, E, bound=1.0),
        WeightEntry("U3", 0, 3, E, bound=6.0),
        WeightEntry("U3", 1, 4, E, bound=6.0),
    ]
    inputs = [
        InputSignal("rule-A", "rule", {"on": ("A",)}),
        InputSignal("rule-B", "rule", {"on": ("B",)}),
        InputSignal("elapsed", "time_cell", {"t0": -7.0}),
        InputSignal("stim-A", "pulse", {"window": (0.0, 1.5), "sigma": 1.0}),
        InputSignal("stim-B", "pulse", {"window": (0.5, 2.5), "sigma": 1.0}),
    ]
    layer_sizes = (2, 4, 2)
    manifest = tuple(range(8))
    return layer_sizes, structure, inputs, manifest
