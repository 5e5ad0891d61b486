"""Numerical maximization of Laplace-Beltrami Neumann eigenvalues.

Densities and domains on triangulated surfaces (unit sphere, torus):
density relaxation with projected-gradient ascent, axisymmetric 1D
solvers, and an ersatz-material level-set method.
"""

from .assembly import SparseSymSystem, assemble_system, eigenvalue_gradient
from .audit import audit_product, strichartz_bound
from .axisym import (LatitudeDensity, axisym_mu1, cap_indicator,
                     cap_reference_mu1, dispersion, dispersion_ratio,
                     optimize_density_1d, union_of_balls_mu)
from .density import (DensityOptConfig, OptTrace, cluster_size,
                      optimize_density, optimize_density_refined,
                      project_feasible, smoothed_min, smoothed_min_gradient)
from .eigsolve import ConvergenceError, EigenResult, solve_smallest
from .levelset import (LevelSetConfig, LevelSetField, advect,
                       cost_and_velocity, domain_area, evaluate_domain,
                       init_random_levelset, interface_length,
                       optimize_levelset, redistance, regularize_velocity,
                       smoothed_indicator)
from .medit import (read_medit_mesh, read_medit_sol, write_medit_mesh,
                    write_medit_sol)
from .mesh import (DensityField, SurfaceMesh, cap_radius_from_area,
                   constant_density, geodesic_cap_field, make_icosphere,
                   make_torus, total_area)

__version__ = "0.1.0"
