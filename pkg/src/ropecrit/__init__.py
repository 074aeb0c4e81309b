"""Thickness, balance and criticality of thick space curves and clasps."""

__version__ = "0.1.0"

from .curves import (Arc, Component, Curve, EndpointConstraint, GehringArc, Helix, Line,  # noqa: E402
                     Mapped, Profile, Sampled, circle, curve_from_json, double_helix)
from .thickness import Kink, Strut, ThicknessReport, compute_thickness  # noqa: E402
from .balance import (BalanceCertificate, FunctionTension, KinkTension, StrutAtom,  # noqa: E402
                      StrutFamily, StrutMeasure, balance_residual, solve_balance, strut_force,
                      virtual_tangent)
from .clasp import (ClaspSolution, Regime, build_clasp, clasp_certificate,  # noqa: E402
                    classify_regime, excess_length, tip_gap)
from .variation import (DeformationField, check_compatible, delta_length,  # noqa: E402
                        delta_radius, delta_thickness)
from .strutfree import (StrutFreeKind, build_strutfree, classify_strutfree,  # noqa: E402
                        reconstruct_supercoil, supercoil_integrate)
