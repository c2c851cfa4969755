"""Progressive residual dehazing: a recurrent model-free dehazer cascaded with
a residual-reformulated atmospheric scattering stage."""

from prdehaze.physics import (
    EPS_A,
    T_MIN,
    invert_scattering,
    residual_of,
    synthesize_haze,
    transmission_from_depth,
    transmission_from_residual,
)

__version__ = "0.1.0"

__all__ = [
    "EPS_A",
    "T_MIN",
    "invert_scattering",
    "residual_of",
    "synthesize_haze",
    "transmission_from_depth",
    "transmission_from_residual",
]
