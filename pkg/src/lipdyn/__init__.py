"""Invariant manifolds, hyperbolicity and Morse-Smale structure of Lipschitz maps."""

from .errors import LipdynError
from .graph_transform import MapModel, SplitSystem, compute_invariant_graph
from .hyperbolicity import certify_hyperbolic
from .perturbation import PerturbationFamily, continue_equilibrium
from .spectral_split import build_adapted_norm, split_spectrum

__all__ = [
    "LipdynError",
    "MapModel",
    "PerturbationFamily",
    "SplitSystem",
    "build_adapted_norm",
    "certify_hyperbolic",
    "compute_invariant_graph",
    "continue_equilibrium",
    "split_spectrum",
]
