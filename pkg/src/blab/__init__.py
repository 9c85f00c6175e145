"""Numerical workbench for multidimensional Borg-Levinson inverse spectral problems."""

__version__ = "0.1.0"

from .domain import (BoundaryFunction, Grid, Potential, boundary_inner, build_grid,
                     interior_inner, interior_norm, sample_potential)
from .errors import (AlignmentError, BlabError, BoundViolation, EigensolverError, GridMismatch,
                     InstabilityError, KernelVanishes, ResonanceError, SpectraDiffer,
                     UnderResolvedError, ValidationError)
from .spectral import BoundarySpectralData, assemble, boundary_spectral_data, clusters, eigenpairs
from .bvp import ShiftedProblem, neumann_difference, solve_direct, solve_series
from .isozaki import fourier_estimate, make_probe, reconstruct_difference, s_tau, tau_schedule
from .stability import discrepancy, hoelder_experiment, plancherel_defect
from .parabolic import (BoundaryInput, dn_kernel_samples, exp_sum_extract, match_eigenbases,
                        parabolic_dn, spectral_parabolic_dn)
from .config import ExperimentConfig, validate
