"""Koopman principal eigenfunctions, global linearization and bilinearization
of polynomial control-affine systems."""

from .bilinearize import BilinearModel, bilinearize, parameter_independence, simulate_bilinear
from .conditions import check_conditions, check_nonresonant, check_spectral_spread, scan_parameter_resonances
from .errors import ConditionError, KoopmanError
from .flow import IntegratorConfig, flow_map, integrate, sample_box, trajectory
from .gedmd import Dictionary, eigenfunctions_from_generator, fit_generator
from .liealg import adjoint_spectrum, check_isomorphism, generate_algebra
from .linearize import (ConjugacyMap, continuity_sweep, evaluate_conjugacy, linearize_parameterized,
                        solve_homological, verify_conjugacy)
from .polyfield import Box, ControlAffineSystem, PolyMap, evaluate, example_system, lie_bracket, materialize
from .spectral import Spectrum, eigen_decompose, eigenprojection_contour, eigenprojection_direct

__version__ = "0.1.0"
