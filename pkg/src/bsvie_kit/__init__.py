"""Monte Carlo solvers for coupled backward systems and type-I backward
stochastic Volterra equations, with small-data certification and exact
tree oracles."""

__version__ = "0.1.0"

from .bsde import backward_sweep
from .config import ConfigError, RunConfig, parse_config
from .constants import LipschitzConstants, certify, compute_c_eps, compute_radius_bound
from .lemmas import verify_appendix_lemmas
from .paths import PathEnsemble, TimeGrid, simulate_forward, tree_ensemble
from .presets import build_preset, preset_names
from .regression import BasisSpec, Regressor
from .system import SystemSpec, picard_solve, residual_check
from .tree import controlled_tree_dp, tree_oracle
from .volterra import BsvieSpec, flow_residual, solve_bsvie

__all__ = [
    "BasisSpec",
    "BsvieSpec",
    "ConfigError",
    "LipschitzConstants",
    "PathEnsemble",
    "Regressor",
    "RunConfig",
    "SystemSpec",
    "TimeGrid",
    "backward_sweep",
    "build_preset",
    "certify",
    "compute_c_eps",
    "compute_radius_bound",
    "controlled_tree_dp",
    "flow_residual",
    "parse_config",
    "picard_solve",
    "preset_names",
    "residual_check",
    "simulate_forward",
    "solve_bsvie",
    "tree_ensemble",
    "tree_oracle",
    "verify_appendix_lemmas",
]
