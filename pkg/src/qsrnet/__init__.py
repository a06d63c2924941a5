"""L2 certificates for switched networks of QSR-dissipative agents."""

from .dissipativity import (
    CommonSupply,
    QsrTriple,
    QuadStorage,
    check_dissipation,
    derive_common_supply,
    l2_gain_report,
)
from .errors import (
    DivergenceDetected,
    InvalidArgument,
    InvalidEpsilon,
    NotApplicable,
    NotStabilizable,
    NumericalFailure,
    QsrNetError,
    SingularMatrix,
)
from .lmi import FEASIBLE, INFEASIBLE, UNDECIDED, LmiProblem, solve_feasibility, verify_assignment
from .network import (
    Certificate,
    CertifyOptions,
    DynamicAgent,
    NetworkSpec,
    NotCertified,
    StaticGainAgent,
    TopologyMode,
    build_uav_network,
    canonical_uav_modes,
    certify,
    coupling_matrices,
)
from .riccati import QuadrotorParams, StateSpace, care_sign, lqr_gain, quadrotor_linearize, randomize_fleet

__all__ = [
    "Certificate",
    "CertifyOptions",
    "CommonSupply",
    "DivergenceDetected",
    "DynamicAgent",
    "FEASIBLE",
    "INFEASIBLE",
    "InvalidArgument",
    "InvalidEpsilon",
    "LmiProblem",
    "NetworkSpec",
    "NotApplicable",
    "NotCertified",
    "NotStabilizable",
    "NumericalFailure",
    "QsrNetError",
    "QsrTriple",
    "QuadStorage",
    "QuadrotorParams",
    "SingularMatrix",
    "StateSpace",
    "StaticGainAgent",
    "TopologyMode",
    "UNDECIDED",
    "build_uav_network",
    "canonical_uav_modes",
    "care_sign",
    "certify",
    "check_dissipation",
    "coupling_matrices",
    "derive_common_supply",
    "l2_gain_report",
    "lqr_gain",
    "quadrotor_linearize",
    "randomize_fleet",
    "solve_feasibility",
    "verify_assignment",
]
