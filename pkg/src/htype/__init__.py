"""Heat kernel, geodesic geometry and gradient estimates on H-type groups."""

from .algebra import (
    AxiomViolation,
    GrowthCertificate,
    HTypeGroup,
    Point,
    ScalarField,
    build_custom,
    build_heisenberg,
    build_quaternionic,
    load_group,
    parse_group_spec,
)
from .geometry import (
    GeodesicCoords,
    Region,
    cc_distance,
    cc_distance_from_identity,
    jacobian_A,
    phi,
    phi_inverse,
    region_classify,
)
from .kernel import KernelEvaluator, QuadratureConfig, QuadratureFailure
from .polynomial import Polynomial, heat_semigroup_poly, k2_ratio, sublaplacian
from .verification import EstimateReport, TestFunctionFamily, verify_all

__version__ = "0.1.0"

__all__ = [
    "AxiomViolation",
    "GrowthCertificate",
    "HTypeGroup",
    "Point",
    "ScalarField",
    "build_custom",
    "build_heisenberg",
    "build_quaternionic",
    "load_group",
    "parse_group_spec",
    "GeodesicCoords",
    "Region",
    "cc_distance",
    "cc_distance_from_identity",
    "jacobian_A",
    "phi",
    "phi_inverse",
    "region_classify",
    "KernelEvaluator",
    "QuadratureConfig",
    "QuadratureFailure",
    "Polynomial",
    "heat_semigroup_poly",
    "k2_ratio",
    "sublaplacian",
    "EstimateReport",
    "TestFunctionFamily",
    "verify_all",
]
