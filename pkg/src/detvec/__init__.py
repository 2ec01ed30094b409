"""Verification tools for compact group actions described by vector fields."""

from detvec.autcheck import (
    ResidualReport,
    SamplePlan,
    Verdict,
    check_automorphism,
    compare_invariant_spaces,
    flow_commutation_probe,
    group_preserves,
    invariant_field_space,
    probe_outside,
)
from detvec.constructions import (
    BumpTriple,
    FieldPair,
    complex_structure_field,
    hopf_twist,
    product_field,
    product_field_X1,
    quaternionic_fields,
    radial,
    sp_pair,
    un_pair,
)
from detvec.dsl import (
    Chart,
    DomainError,
    DSLSyntaxError,
    MapExpr,
    VFieldExpr,
    differentiate,
    lie_bracket_fields,
    linear_map,
    parse_field,
    parse_scalar,
    pushforward_residual,
)
from detvec.flows import integrate_flow, commuting_field_nullspace, straighten, trajectory_closure_class
from detvec.lie import GroupSpec, exp_matrix, haar_sample, is_dense_couple

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
