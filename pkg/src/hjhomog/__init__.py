"""Numerical laboratory for effective Hamiltonians of convex Hamilton-Jacobi
equations in random unbounded environments."""

from .env import (BumpProfile, EnvironmentSample, PointCloud,
                  evaluate_potential, make_environment, rasterize_potential,
                  sample_cluster_cloud, sample_poisson_cloud)
from .errors import (BracketError, BudgetError, ConfigError, FieldFormatError,
                     HjhgError, OracleError, ParameterError, RangeError,
                     SolverDivergence)
from .hamiltonian import (HamiltonianSpec, TruncatedSpec, dissipation_bound,
                          eval_H, lf_flux, zero_potential_spec)
from .numerics import (Grid, ScalarField, laplacian, one_sided_gradients,
                       oscillation, read_field, write_field)
from .solvers import (brute_force_delta, dijkstra_metric, feynman_kac_metric,
                      solve_delta, solve_metric, solve_time_dependent)

__version__ = "0.1.0"
