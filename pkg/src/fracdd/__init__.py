"""Global-in-time domain decomposition for a reduced fracture model.

Compressible single-phase flow in a porous medium with a high-permeability
fracture collapsed to an interface, discretized by lowest-order mixed
finite elements in space and backward Euler in time.  Three interface
formulations (primal trace, dual flux pair, flux jump) are solved with
matrix-free preconditioned GMRES; the fracture and the rock matrix may
use different time steps, coupled by piecewise-constant L2 projections.
"""

from .cases import CaseSetup, case_setup
from .geometry import (
    BoundarySegment,
    DofMap,
    DomainSpec,
    Mesh,
    build_mesh,
    interface_trace_map,
)
from .interface import (
    InterfaceField,
    InterfaceProblem,
    PartitionOfUnity,
    ProblemData,
    SolveCounters,
)
from .krylov import KrylovConfig, SolveReport, gmres, hegedus_rescale
from .reference import (
    CandidateSolution,
    ErrorReport,
    MonolithicSolution,
    ReferenceData,
    build_reference,
    compute_errors,
    convergence_rates,
    make_weights,
    solve_monolithic,
)
from .solvers import (
    FractureModel,
    PhysicalCoefficients,
    SubdomainModel,
    SubdomainSolution,
    assemble_fracture,
    assemble_subdomain,
    solve_dirichlet,
    solve_fracture,
    solve_neumann,
    solve_ventcel,
)
from .timegrid import TimeField, TimeGrid, integrate, project

__version__ = "0.1.0"
