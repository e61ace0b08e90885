"""Fractional perimeters, nonlocal mean curvature, and minimal-graph tools.

Numerical machinery for sets and graphs driven by the kernel |x - y|^(-n-1-alpha):
fractional perimeters of voxel sets, nonlocal mean curvature of sets and of
graphs, a convex-energy gradient-flow solver for the nonlocal minimal graph
equation, and blow-down (large-scale limit) diagnostics.
"""

from .errors import BudgetError, DomainError, ParamError, StepFailure
from .field import (
    Affine,
    AlignedBox,
    Ball,
    Complement,
    ConeFrom,
    ConstantBeyond,
    EmptySet,
    GraphField,
    HalfSpace,
    Homogeneous1,
    QuadratureSpec,
    SubgraphOf,
    VoxelSet,
    load_graph_field,
    load_voxel_set,
    member,
    sample,
    save_graph_field,
    save_voxel_set,
    subgraph_of,
)
from .kernel import FracParams, eval_G, eval_G_antideriv, lambda_const
from .curvature import (
    ConsistencyReport,
    CurvatureField,
    curvature_at,
    curvature_field,
    graph_set_consistency,
    set_curvature_at,
    weak_pairing,
)
from .dynamics import (
    SolveOptions,
    SolveReport,
    cmc_exponent_audit,
    graph_energy,
    solve,
)
from .perimeter import PerimeterResult, frac_perimeter, perimeter_growth
from .blowdown import (BlowdownReport, Verdict, blowdown_analyze, center_gap,
                       cone_defect, cylinder_defect, rescale_graph, rescale_set)

__version__ = "0.1.0"

__all__ = [
    "FracParams",
    "eval_G",
    "eval_G_antideriv",
    "lambda_const",
    "AlignedBox",
    "Ball",
    "Affine",
    "ConstantBeyond",
    "Homogeneous1",
    "HalfSpace",
    "SubgraphOf",
    "ConeFrom",
    "EmptySet",
    "Complement",
    "GraphField",
    "VoxelSet",
    "QuadratureSpec",
    "sample",
    "member",
    "subgraph_of",
    "save_graph_field",
    "load_graph_field",
    "save_voxel_set",
    "load_voxel_set",
    "curvature_at",
    "curvature_field",
    "CurvatureField",
    "set_curvature_at",
    "graph_set_consistency",
    "ConsistencyReport",
    "weak_pairing",
    "graph_energy",
    "solve",
    "SolveOptions",
    "SolveReport",
    "cmc_exponent_audit",
    "PerimeterResult",
    "BlowdownReport",
    "Verdict",
    "blowdown_analyze",
    "center_gap",
    "cone_defect",
    "cylinder_defect",
    "rescale_graph",
    "rescale_set",
    "frac_perimeter",
    "perimeter_growth",
    "ParamError",
    "DomainError",
    "BudgetError",
    "StepFailure",
    "__version__",
]
