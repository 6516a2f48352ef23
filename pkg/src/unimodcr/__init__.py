"""Numerical toolkit for unimodular CR geometry of real hypersurfaces in C².

Modules:

``grid``         structured grids, fields, fourth-order stencils, forms;
``coframe``      canonical coframe, primary and secondary invariants;
``homogeneous``  invariant ODEs of homogeneous and cohomogeneity-one models;
``flow``         graph-level unimodular normal flow;
``models``       closed-form and synthetic hypersurfaces;
``snapshot``     field files;
``cli``          command-line entry points.
"""

__version__ = "0.1.0"

from .coframe import (CoframeField, GraphHypersurface, InvariantField, Tolerances,
                      canonical_coframe, compute_invariants, compute_L0, cr_flatness,
                      frame_derivative, primary_invariants, secondary_invariants, sub_laplacian)
from .flow import FlowConfig, FlowRun, flow_rhs, run, step
from .grid import Grid3, OneForm, ScalarField, TwoForm, exterior_d, partial, wirtinger
from .homogeneous import (HomogeneousState, classify_group, collapse_time, integrate_ab,
                          integrate_cohom1, integrate_h)
from .models import build, parse_model

__all__ = [
    "CoframeField", "FlowConfig", "FlowRun", "GraphHypersurface", "Grid3", "HomogeneousState",
    "InvariantField", "OneForm", "ScalarField", "Tolerances", "TwoForm", "build",
    "canonical_coframe", "classify_group", "collapse_time", "compute_L0", "compute_invariants",
    "cr_flatness", "exterior_d", "flow_rhs", "frame_derivative", "integrate_ab",
    "integrate_cohom1", "integrate_h", "parse_model", "partial", "primary_invariants", "run",
    "secondary_invariants", "step", "sub_laplacian", "wirtinger",
]
