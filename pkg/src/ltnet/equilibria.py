"""Exact piecewise-affine equilibrium maps of linear-threshold networks.

For fixed weights W and ceilings m, the equilibria x = [W x + d]_0^m form
a piecewise-affine map of the external input d.  Each piece corresponds to
a switching pattern sigma assigning every node one of three regimes:

    Zero       x_i = 0          requires z_i <= 0
    Linear     x_i = z_i        requires 0 <= z_i <= m_i
    Saturated  x_i = m_i        requires z_i >= m_i

where z = W x + d is the pre-activation at the candidate equilibrium.  On
the piece generated by sigma the equilibrium is x = F d + f with

    F = (I - S_l W)^-1 S_l,     f = (I - S_l W)^-1 S_s m,

S_l and S_s the indicator diagonals of the Linear and Saturated regimes
(the product S_s m is taken as 0 on rows where S_s vanishes, so unbounded
ceilings never produce inf * 0).  The region of validity is the polyhedron
{d : G d + g >= 0} obtained by writing the semantic regime conditions on
z = W (F d + f) + d; these conditions, not any rearranged closed form, are
what the implementation evaluates.

Saturated is excluded for nodes with unbounded ceilings.  Patterns whose
linear system is singular are skipped (the map simply has no such piece).
For the base map every remaining pattern has a nonempty region: choosing
target pre-activations z strictly inside each regime interval and setting
d = z - W x(z), with x(z) the state pinned by the pattern, produces an
interior witness.  Composed maps (see compose_maps) gain extra region
rows from the inner map, so there emptiness is real and checked.
"""

from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import linprog

from .network import clip_box

__all__ = [
    "ZERO",
    "LINEAR",
    "SATURATED",
    "AffinePiece",
    "PiecewiseAffineMap",
    "NoCoveringPiece",
    "NotCertified",
    "UniquenessNotCertified",
    "piece_for_pattern",
    "equilibrium_map",
    "solve_equilibrium_iterative",
    "compose_maps",
    "lipschitz_constant",
    "max_gain_matrix",
]

# regime codes; the integer order defines the lexicographic tie-break
ZERO, LINEAR, SATURATED = 0, 1, 2

# pinned tolerances
_REGION_TOL = 1e-9  # slack when testing membership d in {G d + g >= 0}
_SINGULAR_RCOND = 1e12  # condition-number cutoff for a usable linear solve
DEFAULT_ENUMERATION_LIMIT = 12


class NoCoveringPiece(Exception):
    """No piece region contains the queried input."""


class NotCertified(Exception):
    """An operation that requires a contraction certificate lacks one."""


class UniquenessNotCertified(NotCertified):
    """Composition requested without a certificate for the composite equation."""


@dataclass(frozen=True)
class AffinePiece:
    """One affine piece x = F d + f valid on {d : G d + g >= 0}.

    label is the generating switching pattern as a tuple of regime codes;
    for composed maps it is the concatenation (inner label, outer pattern).
    """

    F: np.ndarray
    f: np.ndarray
    G: np.ndarray
    g: np.ndarray
    label: tuple

    def __post_init__(self):
        for name in ("F", "f", "G", "g"):
            a = np.array(getattr(self, name), dtype=float)
            a.setflags(write=False)
            object.__setattr__(self, name, a)
        object.__setattr__(self, "label", tuple(self.label))

    def contains(self, d, tol=_REGION_TOL) -> bool:
        return bool(np.all(self.G @ d + self.g >= -tol))


def _sigma_masks(sigma):
    s = np.asarray(sigma)
    return s == LINEAR, s == SATURATED


def _sat_times_m(sat_mask, m):
    # S_s m with the convention that rows without saturation contribute 0,
    # so m_i = inf never meets a zero multiplier
    out = np.zeros(len(sat_mask))
    out[sat_mask] = m[sat_mask]
    return out


def piece_for_pattern(W, m, sigma) -> Optional[AffinePiece]:
    """Build the affine piece generated by the switching pattern sigma.

    Returns None (with a warning) when the pattern's linear system is
    singular, or when sigma saturates a node with an unbounded ceiling.
    """
    W = np.asarray(W, dtype=float)
    m = np.asarray(m, dtype=float)
    n = W.shape[0]
    sigma = tuple(int(s) for s in sigma)
    if len(sigma) != n:
        raise ValueError(f"pattern length {len(sigma)} != n = {n}")
    lin, sat = _sigma_masks(sigma)
    if np.any(sat & np.isinf(m)):
        warnings.warn(f"pattern {sigma} saturates an unbounded node; skipped")
        return None

    A = np.eye(n) - lin[:, None] * W  # I - S_l W
    cond = np.linalg.cond(A)
    if not np.isfinite(cond) or cond > _SINGULAR_RCOND:
        warnings.warn(f"pattern {sigma} has a singular linear system; skipped")
        return None
    F = np.linalg.solve(A, np.diag(lin.astype(float)))
    f = np.linalg.solve(A, _sat_times_m(sat, m))

    # regime conditions on z = W(F d + f) + d, written as G d + g >= 0
    WF_I = W @ F + np.eye(n)
    Wf = W @ f
    G_rows, g_rows = [], []
    for i, s in enumerate(sigma):
        if s == ZERO:
            G_rows.append(-WF_I[i])
            g_rows.append(-Wf[i])
        elif s == LINEAR:
            G_rows.append(WF_I[i])
            g_rows.append(Wf[i])
            if np.isfinite(m[i]):
                G_rows.append(-WF_I[i])
                g_rows.append(m[i] - Wf[i])
        else:  # SATURATED
            G_rows.append(WF_I[i])
            g_rows.append(Wf[i] - m[i])
    return AffinePiece(F=F, f=f, G=np.array(G_rows), g=np.array(g_rows), label=sigma)


@dataclass(frozen=True)
class PiecewiseAffineMap:
    """Piecewise-affine equilibrium map d -> x.

    pieces are sorted by label, so evaluation resolves boundary ties by
    the lexicographically smallest generating pattern.
    """

    pieces: tuple
    domain_dim: int
    output_dim: int

    def __post_init__(self):
        object.__setattr__(
            self, "pieces", tuple(sorted(self.pieces, key=lambda p: p.label))
        )

    def __len__(self):
        return len(self.pieces)

    def pieces_at(self, d, tol=_REGION_TOL):
        """All pieces whose region contains d, in label order."""
        d = np.asarray(d, dtype=float)
        return [p for p in self.pieces if p.contains(d, tol)]

    def eval(self, d, tol=_REGION_TOL) -> np.ndarray:
        """Value at d, using the first covering piece in label order."""
        d = np.asarray(d, dtype=float)
        for p in self.pieces:
            if p.contains(d, tol):
                return p.F @ d + p.f
        raise NoCoveringPiece(
            f"no piece covers d={d!r}; the map may be incomplete or the "
            "underlying equation non-contractive at this input"
        )

    __call__ = eval

    def eval_many(self, D, tol=_REGION_TOL) -> np.ndarray:
        """Vectorized evaluation over the rows of D (shape (k, domain_dim))."""
        D = np.atleast_2d(np.asarray(D, dtype=float))
        k = D.shape[0]
        # stack all region rows once; reduce violation counts per piece
        G_all = np.vstack([p.G for p in self.pieces])
        g_all = np.concatenate([p.g for p in self.pieces])
        ok = (G_all @ D.T + g_all[:, None]) >= -tol  # (rows, k)
        starts = np.cumsum([0] + [p.G.shape[0] for p in self.pieces])[:-1]
        viol = np.add.reduceat(~ok, starts, axis=0)  # (n_pieces, k)
        feasible = viol == 0
        if not np.all(feasible.any(axis=0)):
            bad = int(np.argmin(feasible.any(axis=0)))
            raise NoCoveringPiece(f"no piece covers row {bad}: d={D[bad]!r}")
        first = np.argmax(feasible, axis=0)  # label order = piece order
        out = np.empty((k, self.output_dim))
        for idx in np.unique(first):
            sel = first == idx
            p = self.pieces[idx]
            out[sel] = D[sel] @ p.F.T + p.f
        return out

    def consistency_gap(self, d, tol=_REGION_TOL) -> float:
        """Largest disagreement among covering pieces at d (0 if unique)."""
        vals = [p.F @ np.asarray(d, float) + p.f for p in self.pieces_at(d, tol)]
        if len(vals) <= 1:
            return 0.0
        vals = np.array(vals)
        return float(np.max(np.abs(vals - vals[0])))

    def to_jsonable(self):
        return [
            {
                "sigma": list(p.label),
                "F": p.F.tolist(),
                "f": p.f.tolist(),
                "G": p.G.tolist(),
                "g": p.g.tolist(),
            }
            for p in self.pieces
        ]


def equilibrium_map(W, m, limit: int = DEFAULT_ENUMERATION_LIMIT) -> PiecewiseAffineMap:
    """Enumerate all switching patterns of (W, m) into a piecewise map.

    Raises ValueError beyond the enumeration limit (3^n growth); use
    solve_equilibrium_iterative for pointwise queries on larger networks.
    """
    W = np.asarray(W, dtype=float)
    m = np.broadcast_to(np.asarray(m, dtype=float), (W.shape[0],))
    n = W.shape[0]
    if n > limit:
        raise ValueError(
            f"n={n} exceeds the enumeration limit {limit}; use "
            "solve_equilibrium_iterative for pointwise equilibria"
        )
    regimes = [
        (ZERO, LINEAR) if np.isinf(m[i]) else (ZERO, LINEAR, SATURATED)
        for i in range(n)
    ]
    pieces = []
    n_singular = 0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for sigma in itertools.product(*regimes):
            p = piece_for_pattern(W, m, sigma)
            if p is None:
                n_singular += 1
            else:
                pieces.append(p)
    if n_singular:
        warnings.warn(f"equilibrium_map: skipped {n_singular} singular pattern(s)")
    return PiecewiseAffineMap(pieces=tuple(pieces), domain_dim=n, output_dim=n)


def solve_equilibrium_iterative(W, m, d, tol: float = 1e-10, max_iter: int = 1_000_000):
    """Fixed-point iteration x <- [W x + d]_0^m from x = 0.

    Requires the absolute-weight contraction condition rho(|W|) < 1; the
    iteration then converges geometrically in the Perron-weighted norm and
    stops once the weighted error bound drops below tol.
    """
    from .stability import spectral_radius  # local import avoids a cycle

    W = np.asarray(W, dtype=float)
    m = np.broadcast_to(np.asarray(m, dtype=float), (W.shape[0],))
    d = np.asarray(d, dtype=float)
    rho, alpha = spectral_radius(np.abs(W))
    if rho >= 1.0 - 1e-9:
        raise NotCertified(f"rho(|W|) = {rho:.6f} >= 1; fixed point not certified")
    # weighted change -> error via the geometric tail factor rho/(1 - rho)
    gain = rho / (1.0 - rho) if rho > 0 else 1.0
    x = np.zeros_like(d)
    for _ in range(max_iter):
        x_next = clip_box(W @ x + d, m)
        delta = float(alpha @ np.abs(x_next - x))
        x = x_next
        if delta * max(gain, 1.0) <= tol:
            return x
    raise NotCertified("fixed-point iteration failed to reach tolerance")


def _region_nonempty(G, g) -> bool:
    """Feasibility of {d : G d + g >= 0} via a max-margin linear program."""
    n = G.shape[1]
    # quick rejections: a row with zero coefficients and negative offset
    zero_rows = np.all(np.abs(G) < 1e-14, axis=1)
    if np.any(g[zero_rows] < -1e-12):
        return False
    keep = ~zero_rows
    G, g = G[keep], g[keep]
    if G.shape[0] == 0:
        return True
    # maximize margin s subject to G d + g >= s, s <= 1
    c = np.zeros(n + 1)
    c[-1] = -1.0
    A_ub = np.hstack([-G, np.ones((G.shape[0], 1))])
    b_ub = g.copy()
    bounds = [(None, None)] * n + [(None, 1.0)]
    res = linprog(c, A_ub=A_ub, b_ub=b_ub, bounds=bounds, method="highs")
    if res.status != 0:
        return False
    return res.x[-1] >= -1e-9


def compose_maps(
    inner: PiecewiseAffineMap,
    W1,
    W2,
    W3,
    cbar,
    m,
    certificate=None,
    sample_points: int = 512,
    seed: int = 0,
) -> PiecewiseAffineMap:
    """Equilibrium map of x = [W1 x + W2 h(W3 x + cbar) + c']_0^m over c'.

    h is the inner piecewise map.  The composite is again piecewise
    affine: on the inner piece lam the equation reduces to a
    linear-threshold equilibrium with effective weights W1 + W2 F_lam W3
    and offset W2 (F_lam cbar + f_lam), so every pair (lam, outer pattern)
    yields a candidate piece.  Composite regions combine the outer regime
    conditions with the inner region mapped through x, and pieces whose
    region is empty are dropped (randomized hit test first, exact linear
    feasibility for the remainder).

    certificate must witness uniqueness of the composite solution (object
    with a true ``passed`` attribute, e.g. from stability.ges_certificate);
    otherwise UniquenessNotCertified is raised.
    """
    if certificate is None or not getattr(certificate, "passed", False):
        raise UniquenessNotCertified(
            "compose_maps requires a passing contraction certificate for the "
            "composite equation (see stability.ges_certificate)"
        )
    W1 = np.asarray(W1, dtype=float)
    W2 = np.asarray(W2, dtype=float)
    W3 = np.asarray(W3, dtype=float)
    cbar = np.asarray(cbar, dtype=float)
    n = W1.shape[0]
    m = np.broadcast_to(np.asarray(m, dtype=float), (n,))
    regimes = [
        (ZERO, LINEAR) if np.isinf(m[i]) else (ZERO, LINEAR, SATURATED)
        for i in range(n)
    ]

    candidates = []
    n_singular = 0
    for lam_piece in inner.pieces:
        Weff = W1 + W2 @ lam_piece.F @ W3
        off = W2 @ (lam_piece.F @ cbar + lam_piece.f)  # constant drive term
        for sigma in itertools.product(*regimes):
            lin, sat = _sigma_masks(sigma)
            A = np.eye(n) - lin[:, None] * Weff
            cond = np.linalg.cond(A)
            if not np.isfinite(cond) or cond > _SINGULAR_RCOND:
                n_singular += 1
                continue
            F = np.linalg.solve(A, np.diag(lin.astype(float)))
            f = np.linalg.solve(A, _sat_times_m(sat, m) + lin * off)
            # outer regime rows on z = Weff x + off + c' with x = F c' + f
            WF_I = Weff @ F + np.eye(n)
            Wf = Weff @ f + off
            G_rows, g_rows = [], []
            for i, s in enumerate(sigma):
                if s == ZERO:
                    G_rows.append(-WF_I[i])
                    g_rows.append(-Wf[i])
                elif s == LINEAR:
                    G_rows.append(WF_I[i])
                    g_rows.append(Wf[i])
                    if np.isfinite(m[i]):
                        G_rows.append(-WF_I[i])
                        g_rows.append(m[i] - Wf[i])
                else:
                    G_rows.append(WF_I[i])
                    g_rows.append(Wf[i] - m[i])
            # inner region mapped through x: G_lam (W3 x + cbar) + g_lam >= 0
            Gi = lam_piece.G @ W3
            G_rows.extend(Gi @ F)
            g_rows.extend(Gi @ f + lam_piece.G @ cbar + lam_piece.g)
            candidates.append(
                AffinePiece(
                    F=F,
                    f=f,
                    G=np.array(G_rows),
                    g=np.array(g_rows),
                    label=tuple(lam_piece.label) + tuple(sigma),
                )
            )
    if n_singular:
        warnings.warn(f"compose_maps: skipped {n_singular} singular pattern(s)")

    # nonemptiness: randomized interior hits first, exact LP for the rest
    rng = np.random.default_rng(seed)
    scale = 10.0 * (1.0 + float(np.max(m[np.isfinite(m)], initial=1.0)))
    D = rng.normal(scale=scale, size=(sample_points, n))
    D[0] = 0.0
    hit = np.zeros(len(candidates), dtype=bool)
    for idx, p in enumerate(candidates):
        if np.any(np.all(p.G @ D.T + p.g[:, None] >= -_REGION_TOL, axis=0)):
            hit[idx] = True
    pieces = [
        p
        for idx, p in enumerate(candidates)
        if hit[idx] or _region_nonempty(p.G, p.g)
    ]
    return PiecewiseAffineMap(pieces=tuple(pieces), domain_dim=n, output_dim=n)


def lipschitz_constant(pa_map: PiecewiseAffineMap) -> float:
    """Global Lipschitz constant: the largest spectral norm over pieces."""
    if not pa_map.pieces:
        return 0.0
    return max(float(np.linalg.norm(p.F, 2)) for p in pa_map.pieces)


def max_gain_matrix(pa_map: PiecewiseAffineMap) -> np.ndarray:
    """Elementwise maximum of |F| over pieces (worst-case gain bound)."""
    if not pa_map.pieces:
        return np.zeros((pa_map.output_dim, pa_map.domain_dim))
    out = np.zeros_like(np.asarray(pa_map.pieces[0].F))
    for p in pa_map.pieces:
        np.maximum(out, np.abs(p.F), out=out)
    return out
