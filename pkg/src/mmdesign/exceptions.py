"""Error types raised across the package.

Conditions that the contracts define as flagged returns (an exhausted
optimizer budget, an exact-fit scale collapse, an empty bias complement) do
not raise; they set flags on the returned objects instead.
"""


class MMDesignError(Exception):
    """Base class for all package errors."""


class RankDeficient(MMDesignError):
    """A matrix that must have full column rank does not."""


class NoConvergence(MMDesignError):
    """An iteration exhausted its sweep budget without meeting tolerance."""


class NotPositiveDefinite(MMDesignError):
    """A Cholesky pivot fell below threshold on a matrix required to be SPD."""


class SingularInformation(MMDesignError):
    """The per-observation information matrix of a design is numerically singular."""


class InfeasibleRounding(MMDesignError):
    """No sequence of single-replicate removals yields a nonsingular n-point design."""


class DegenerateDenominator(MMDesignError):
    """An expectation in a ratio is too close to zero to divide by."""
