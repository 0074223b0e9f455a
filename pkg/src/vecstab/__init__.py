"""Stability certification and distributed controller synthesis for
networks of polynomial subsystems.

The package certifies each subsystem with a Lyapunov function and a
region-of-attraction estimate, synthesizes bounded polynomial state
feedback per subsystem by solving sum-of-squares programs, and validates
the resulting network-level exponential bound through a linear comparison
system and direct simulation.
"""

from vecstab.comparison_analysis import (
    LevelVector,
    comparison_report,
    comparison_trajectory,
    gershgorin_hurwitz,
    invariance_check,
    is_metzler,
    max_row_sum,
    spectral_abscissa,
)
from vecstab.control_synthesis import (
    SynthesisError,
    SynthesisInput,
    SynthesisOptions,
    SynthesisRefusal,
    SynthesisResult,
    assemble_comparison,
    initial_levels,
    make_inputs,
    run_algorithm,
    synthesize_subsystem,
    verify_synthesis,
)
from vecstab.network_model import (
    NetworkModel,
    NetworkStructureError,
    Subsystem,
    assemble_closed_loop,
    generate_vdp_network,
)
from vecstab.polynomials import (
    Monomial,
    Polynomial,
    PolynomialVector,
    lie_derivative,
    monomial_basis,
    poly_grad,
)
from vecstab.roa_certification import (
    CertificationError,
    ExpandOptions,
    LyapunovCertificate,
    certify_network,
    expanding_interior,
    verify_certificate,
)
from vecstab.sdp_backend import SdpSettings
from vecstab.simulation import (
    CompiledField,
    Trajectory,
    integrate,
    integrate_batch,
    lyapunov_traces,
    verify_exponential_bound,
)
from vecstab.sos_core import SosProgram, check_sos

__version__ = "0.1.0"

__all__ = [
    "CertificationError",
    "CompiledField",
    "ExpandOptions",
    "LevelVector",
    "LyapunovCertificate",
    "Monomial",
    "NetworkModel",
    "NetworkStructureError",
    "Polynomial",
    "PolynomialVector",
    "SdpSettings",
    "SosProgram",
    "Subsystem",
    "SynthesisError",
    "SynthesisInput",
    "SynthesisOptions",
    "SynthesisRefusal",
    "SynthesisResult",
    "Trajectory",
    "assemble_closed_loop",
    "assemble_comparison",
    "certify_network",
    "check_sos",
    "comparison_report",
    "comparison_trajectory",
    "expanding_interior",
    "generate_vdp_network",
    "gershgorin_hurwitz",
    "initial_levels",
    "integrate",
    "integrate_batch",
    "invariance_check",
    "is_metzler",
    "lie_derivative",
    "lyapunov_traces",
    "make_inputs",
    "max_row_sum",
    "monomial_basis",
    "poly_grad",
    "run_algorithm",
    "spectral_abscissa",
    "synthesize_subsystem",
    "verify_certificate",
    "verify_exponential_bound",
    "verify_synthesis",
    "__version__",
]
