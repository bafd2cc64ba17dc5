"""Conformal and v-conformal divergences, their minimizers and robustness."""
from .conformal import (
    ConformalWeight,
    DivergenceSpec,
    bregman,
    conformal_div,
    constant_weight,
    parse_weight,
    pnorm_weight,
    scaled_conformal_div,
    symmetry_defect,
    total_weight,
)
from .errors import *  # noqa: F401,F403
from .generators import Generator, get_generator, lambert_w, phi_mean
from .minimizers import (
    MinimizerResult,
    Sample,
    left_minimizer,
    mahalanobis_check,
    orthogonality_residual,
    right_minimizer,
    right_minimizer_1d,
    right_minimizer_nd,
    scaled_left_minimizer,
)
from .uv_structure import (
    AlphaBetaStructure,
    GeometricStructure,
    compose_structures,
    identity_structure,
    make_structure,
)

__version__ = "0.1.0"
