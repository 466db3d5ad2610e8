"""Optimal control of linear systems with multiplicative piecewise-constant noise.

The objective is the probability that the terminal state hits a goal set.
"""

from .controls import Control, ControlSet
from .errors import (
    FactorizationError,
    HitprobError,
    NotABasisError,
    NotRegularError,
    NumericalError,
    ScoreUndefinedError,
    ValidationError,
)
from .functional import (
    ProbEstimate,
    compare_g_G,
    evaluate_G_mc,
    evaluate_g_mc,
    evaluate_gaussian_halfspace_exact,
    gaussian_halfspace_gradient,
)
from .goalset import (
    AnnulusSector,
    Ball,
    Box,
    DiscInHyperplane,
    Halfspace,
    Lens,
    contains,
    oz_contains,
    shifted_contains,
)
from .gradient import (
    DualBasis,
    GradEstimate,
    directional_derivative_mc,
    dual_basis,
    finite_difference_directional,
    gradient_hk,
    nonsmoothness_suite,
)
from .linsys import (
    LinearSystem,
    MatrixFunction,
    TimeGrid,
    compute_z_vectors,
    propagate_y,
    simulate_terminal,
    solve_fundamental,
    terminal_state,
)
from .montecarlo import McConfig
from .noise import GaussianNoise, Normal1D, ProductNoise, Uniform1D, chi_transform, log_density_grad, sample
from .pmp import Degeneracy, adjoint_solve, check_degeneracy, hamiltonian_argmax, optimize, pmp_residual
from .problem import ProblemInstance, compile_problem, load_problem, phi

__version__ = "0.1.0"
