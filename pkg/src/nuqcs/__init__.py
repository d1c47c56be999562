"""Non-uniform quantized compressed sensing with weighted lp fidelity constraints."""

__version__ = "0.1.0"

from .compander import GaussianSource, QuantizerModel, design_quantizer, expand, compress, quantize
from .plevels import INF, PLevelTable, newton_plevel, plevel_table
from .prox import SolverConfig, SolveReport, gbpdn_solve, project_lp_ball
from .wnorm import WeightedConstraint, dpc_constraint, dpc_table, epsilon_p, weighted_lp_norm

__all__ = [
    "INF",
    "GaussianSource",
    "PLevelTable",
    "QuantizerModel",
    "SolveReport",
    "SolverConfig",
    "WeightedConstraint",
    "compress",
    "design_quantizer",
    "dpc_constraint",
    "dpc_table",
    "epsilon_p",
    "expand",
    "gbpdn_solve",
    "newton_plevel",
    "plevel_table",
    "project_lp_ball",
    "quantize",
    "weighted_lp_norm",
]
