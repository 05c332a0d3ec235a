"""Verification of small nonlinear computation graphs.

Bounds ``min over rows of S f(x) + t`` on an input box by backward linear
bound propagation with optimizable relaxations, then closes hard instances
with branch and bound over input and hidden-neuron intervals.
"""

from .bab import Domain, RunConfig, VerdictReport, bab_verify, falsify
from .boundprop import (
    Box,
    LinearForm,
    ShortcutBounds,
    Split,
    backward_bound,
    compute_intermediate_bounds,
    concretize,
)
from .branching import (
    BranchDecision,
    BranchPointTable,
    UnbranchableDomain,
    babsr_score,
    bbps_score,
    build_table,
    load_table,
    optimize_branch_point,
    query_table,
    save_table,
    select_branch,
    signature_of,
    tightness_loss,
)
from .graph import (
    Graph,
    GraphError,
    Node,
    SpecError,
    VerificationSpec,
    evaluate,
    load_graph,
    load_spec,
)
from .oracle import OracleConfig, grid_min_1d, sampled_min, trapezoid_loss
from .paramopt import (
    AlphaStore,
    BetaStore,
    bound_and_gradients,
    optimize_parameters,
)
from .relaxation import RelaxationResult, relax_mul, relax_square, relax_unary

__version__ = "0.1.0"

__all__ = [
    "AlphaStore",
    "BetaStore",
    "Box",
    "BranchDecision",
    "BranchPointTable",
    "Domain",
    "Graph",
    "GraphError",
    "LinearForm",
    "Node",
    "OracleConfig",
    "RelaxationResult",
    "RunConfig",
    "ShortcutBounds",
    "SpecError",
    "Split",
    "UnbranchableDomain",
    "VerdictReport",
    "VerificationSpec",
    "bab_verify",
    "babsr_score",
    "backward_bound",
    "bbps_score",
    "bound_and_gradients",
    "build_table",
    "compute_intermediate_bounds",
    "concretize",
    "evaluate",
    "falsify",
    "grid_min_1d",
    "load_graph",
    "load_spec",
    "load_table",
    "optimize_branch_point",
    "query_table",
    "optimize_parameters",
    "relax_mul",
    "relax_square",
    "relax_unary",
    "sampled_min",
    "save_table",
    "select_branch",
    "signature_of",
    "tightness_loss",
    "trapezoid_loss",
]
