"""Simulation, optimization and optimality certificates for controlled sweeping processes.

Set ``SWEEPCTL_PYTHON=1`` before import to run the numerical kernels as plain
Python/numpy instead of numba-compiled code.
"""

from ._jit import ENABLED as JIT_ENABLED
from .certificates import (
    OptimalityCertificate,
    ResidualReport,
    fit_certificate,
    maximization_gap,
    residuals,
    zero_certificate,
)
from .dynamics import (
    ControlPath,
    Mesh,
    SweepingProblem,
    SweepTrajectory,
    catch_up,
    cost,
    hitting_time,
)
from .errors import (
    ConeResidual,
    DegenerateActiveSystem,
    EmptyPolyhedron,
    InfeasiblePoint,
    InvalidControl,
    NoCertificate,
    NotInCone,
    SimulationFailed,
    SweepError,
    UnsupportedSet,
)
from .examples import (
    EXAMPLES,
    ExampleSpec,
    analytic_cost_ex1,
    analytic_cost_ex3,
    analytic_eta_ex2,
    converge,
    run_example,
)
from .geometry import MovingPolyhedron, active_set, check_plicq, cone_multipliers, project
from .optimizer import ControlParameterization, SolveOptions, SolveResult, grid_refine, solve
from .transcription import DiscreteProblem, assemble

__version__ = "0.1.0"
