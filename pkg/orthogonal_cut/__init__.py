__version__ = '0.1.0'

from .exceptions import (CapacityError, DomainError, FeasibilityError, InputError, OrthoCutError,
                         ShapeError, UnsupportedError)
from .linalg import RngSeed, gaussian_matrix, is_psd, polar, polar_batch, svd_thin
from .problem import (BlockPsdMatrix, GroupTuple, StiefelTuple, brute_force_opt, build_procrustes,
                      build_random_psd, objective)
from .solver import SolveConfig, SolveReport, local_ascent_group, solve_relaxation
from .rounding import RoundingConfig, round_best_of, round_once
from .alpha import (AlphaEstimate, alpha_chi_1r, alpha_closed_form, alpha_complex_laguerre,
                    alpha_lower_bounds, alpha_mc, alpha_star_probe, mp_limit, phi_rho)
from .gap import GapConfig, GapReport, build_gap_instance, measure_gap
