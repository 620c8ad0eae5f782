"""Minimax robust experimental designs for M-estimated regression.

Builds designs on a finite candidate grid that minimize the worst-case
integrated mean squared prediction error when the fitted response is allowed
to be misspecified within a norm-bounded, parameter-orthogonal neighborhood
and the parameters are M-estimated. The package also evaluates the
worst-case loss of arbitrary designs, fits the M-estimates, and checks the
asymptotic theory by simulation.

Submodules
----------
numerics    dense kernels: Gram-Schmidt, Jacobi eigensolver, SPD solves
model       design spaces, regressor bases, designs, moment matrices
loss        worst-case integrated MSE and its bias/variance split
optimizer   sequential weight construction and integer rounding
mestimate   psi families, IRLS fitting, efficiency calculus for nu
simulate    Monte Carlo validation and dependence robustness sweeps
cli         command-line front end
"""

from ._backend import backend_name
from .exceptions import (
    DegenerateDenominator,
    InfeasibleRounding,
    MMDesignError,
    NoConvergence,
    NotPositiveDefinite,
    RankDeficient,
    SingularInformation,
)

__version__ = "0.1.0"

__all__ = [
    "DegenerateDenominator",
    "InfeasibleRounding",
    "MMDesignError",
    "NoConvergence",
    "NotPositiveDefinite",
    "RankDeficient",
    "SingularInformation",
    "backend_name",
    "__version__",
]
