"""Canonical benchmark problems.

Both problems use a vertical high-permeability fracture at x = 1 in the
rectangle (0,2) x (0,1); conductivity 1 in the rock, 1000 tangentially in
the fracture, fracture width 1e-3.  Sources and initial pressures are
zero; the flow is driven entirely by boundary data.

* Non-immersed fracture: the fracture cuts the domain top to bottom with
  pressure 1 at the bottom tip and 0 at the top tip; on the outer
  boundary the lower fifth of both lateral sides holds Dirichlet data
  (1 on the right, 0 on the left), everything else is no-flow.
* Partially immersed fracture: the fracture occupies the upper half of
  the line with pressure 1 at the attached (top) tip and a no-flow tip
  immersed at mid-height; an artificial interface completes the line
  downward.  The upper fifth of both lateral sides holds Dirichlet data
  (1 on the right, 0 on the left).
"""

from __future__ import annotations

from dataclasses import dataclass

from .geometry import BoundarySegment, DomainSpec
from .solvers import PhysicalCoefficients

__all__ = ["CaseSetup", "case_setup", "CASE_NAMES"]

CASE_NAMES = ("case1_nonimmersed", "case2_immersed")


@dataclass(frozen=True)
class CaseSetup:
    """Everything that defines a benchmark problem except discretization."""

    name: str
    spec: DomainSpec
    coeffs: PhysicalCoefficients
    tip_kinds: tuple[str, str]       # (bottom, top)
    tip_values: tuple[float, float]
    T: float
    default_h: float
    default_tol: float


def case_setup(name: str) -> CaseSetup:
    coeffs = PhysicalCoefficients.fast_fracture()
    if name == "case1_nonimmersed":
        spec = DomainSpec(
            x_min=0.0, x_max=2.0, y_min=0.0, y_max=1.0,
            interface_x=1.0,
            fracture_span=(0.0, 1.0),
            artificial_span=None,
            boundary=(
                BoundarySegment("left", 0.0, 0.2, "dirichlet", 0.0),
                BoundarySegment("right", 0.0, 0.2, "dirichlet", 1.0),
            ),
        )
        return CaseSetup(
            name=name, spec=spec, coeffs=coeffs,
            tip_kinds=("dirichlet", "dirichlet"), tip_values=(1.0, 0.0),
            T=0.5, default_h=1.0 / 50.0, default_tol=1e-6,
        )
    if name == "case2_immersed":
        spec = DomainSpec(
            x_min=0.0, x_max=2.0, y_min=0.0, y_max=1.0,
            interface_x=1.0,
            fracture_span=(0.5, 1.0),
            artificial_span=(0.0, 0.5),
            boundary=(
                BoundarySegment("left", 0.8, 1.0, "dirichlet", 0.0),
                BoundarySegment("right", 0.8, 1.0, "dirichlet", 1.0),
            ),
        )
        return CaseSetup(
            name=name, spec=spec, coeffs=coeffs,
            tip_kinds=("no_flow", "dirichlet"), tip_values=(0.0, 1.0),
            T=1.0, default_h=1.0 / 100.0, default_tol=1e-8,
        )
    raise ValueError(f"unknown test case {name!r}; expected one of {CASE_NAMES}")
