"""Linear-threshold network hierarchies.

Tools for networks of rate neurons with clipped-linear activations
arranged in layered hierarchies with separated time constants: fixed-step
simulation, exact piecewise-affine equilibrium maps and their composition
across layers, spectral certificates of global exponential stability,
synthesis of inhibitory feedback and feedforward controls that recruit or
silence task-relevant subpopulations, timescale-separation sweeps, and
identification of structured models from firing-rate data.
"""

from .network import UNBOUNDED, LTNetwork, Trajectory, clip_box, rhs, rk4_integrate, simulate
from .equilibria import (
    LINEAR,
    SATURATED,
    ZERO,
    AffinePiece,
    NoCoveringPiece,
    NotCertified,
    PiecewiseAffineMap,
    UniquenessNotCertified,
    compose_maps,
    equilibrium_map,
    lipschitz_constant,
    max_gain_matrix,
    piece_for_pattern,
    solve_equilibrium_iterative,
)
from .stability import (
    DecayReport,
    GESCertificate,
    HierarchyCertification,
    certify_hierarchy,
    empirical_decay_check,
    ges_certificate,
    spectral_radius,
    weighted_norm,
)
from .control import (
    ControlLaw,
    InfeasibleExact,
    NegativeControl,
    feedback_gain_bilayer,
    feedforward_bilayer,
    multilayer_controls,
)
from .hierarchy import (
    Hierarchy,
    TrackingReport,
    epsilon_sweep,
    reference_trajectory,
    rom_simulate,
    simulate_hierarchy,
    tracking_error,
)
from . import io, sysid

__version__ = "0.1.0"

__all__ = [
    "UNBOUNDED",
    "LTNetwork",
    "Trajectory",
    "clip_box",
    "rhs",
    "rk4_integrate",
    "simulate",
    "ZERO",
    "LINEAR",
    "SATURATED",
    "AffinePiece",
    "PiecewiseAffineMap",
    "NoCoveringPiece",
    "NotCertified",
    "UniquenessNotCertified",
    "equilibrium_map",
    "piece_for_pattern",
    "compose_maps",
    "solve_equilibrium_iterative",
    "lipschitz_constant",
    "max_gain_matrix",
    "GESCertificate",
    "HierarchyCertification",
    "DecayReport",
    "spectral_radius",
    "ges_certificate",
    "certify_hierarchy",
    "weighted_norm",
    "empirical_decay_check",
    "ControlLaw",
    "InfeasibleExact",
    "NegativeControl",
    "feedback_gain_bilayer",
    "feedforward_bilayer",
    "multilayer_controls",
    "Hierarchy",
    "TrackingReport",
    "simulate_hierarchy",
    "reference_trajectory",
    "tracking_error",
    "epsilon_sweep",
    "rom_simulate",
    "io",
    "sysid",
    "__version__",
]
