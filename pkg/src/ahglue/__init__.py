"""Gluing of asymptotically hyperbolic metrics and initial data, with numerical
checks of the weighted Poincaré/Korn inequalities, integration-by-parts
identities and KID triviality used by the construction."""

from .errors import (AhglueError, AssemblyError, ClosenessError, ConfigError, DegenerateMetricError, GridError,
                     NonConvergenceError)
from .fields import ReducedSymTensor, ReducedVector
from .geometry import Geometry, MetricSpec, build_metric
from .grid import build_grid
from .inequalities import (IdentityCase, QuadraticFormPair, corner_constants, global_poincare_korn, rayleigh_min,
                           stripe_constants, verify_identity, verify_registry)
from .kids import KidCandidate, exact_static_kids, kernel_test, kid_residual
from .operators import InitialData, adjoint_constraints_matrix, adjoint_scalar_matrix, hyperboloidal, static_ads
from .solver import GluingProblem, SolveReport, glue_constraints, glue_scalar, lambda_exchange, maskit_assemble
from .weights import WeightConfig, defining_x, phi_psi

__version__ = "0.1.0"
