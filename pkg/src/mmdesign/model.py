"""Design spaces, regressor bases, designs, and moment matrices.

The design space is a finite set of N candidate points in R^q. A model is a
list of p regressor functions evaluated on those points, giving the N-by-p
matrix F. A design is a probability vector over the points. Everything the
loss needs is collected in a MomentSet: the orthonormal basis Q of the
column space of F, the weighted moment matrices R = Q' D Q and S = Q' D^2 Q,
U = R^{-1} S R^{-1}, and the unweighted A = F'F alongside M0 = F' D F.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from . import numerics
from .exceptions import SingularInformation

__all__ = [
    "Design",
    "DesignSpace",
    "Disturbance",
    "ImplementableDesign",
    "ModelSpec",
    "MomentSet",
    "TargetParameter",
    "build_regressors",
    "moments",
    "target_parameter",
]

SUPPORT_FLOOR = 1e-12
WEIGHT_SUM_TOL = 1e-12
INFORMATION_FLOOR = 1e-10
ORTHOGONALITY_TOL = 1e-8
NORM_BOUND_TOL = 1e-10


def _frozen_array(a, dtype=np.float64) -> np.ndarray:
    arr = np.array(a, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class DesignSpace:
    """Finite candidate set: N pairwise-distinct points in R^q."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=np.float64))
        if pts.ndim != 2:
            raise ValueError("points must form a 2-D array")
        if pts.shape[0] < 1:
            raise ValueError("a design space needs at least one point")
        if not np.all(np.isfinite(pts)):
            raise ValueError("points must be finite")
        if np.unique(pts, axis=0).shape[0] != pts.shape[0]:
            raise ValueError("points must be pairwise distinct")
        object.__setattr__(self, "points", _frozen_array(pts))

    @property
    def n_points(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @staticmethod
    def grid(lo: float, hi: float, num: int) -> "DesignSpace":
        """Equally spaced one-dimensional grid of num points on [lo, hi]."""
        if num < 1:
            raise ValueError("num must be positive")
        if not lo < hi:
            raise ValueError("need lo < hi")
        return DesignSpace(np.linspace(lo, hi, num)[:, None])


def _monomial_powers(degree: int, dim: int) -> tuple[tuple[int, ...], ...]:
    combos = [
        e
        for e in itertools.product(range(degree + 1), repeat=dim)
        if sum(e) <= degree
    ]
    combos.sort(key=lambda e: (sum(e), e[::-1]))
    return tuple(combos)


@dataclass(frozen=True)
class ModelSpec:
    """p regressor functions: monomials up to a degree, or an external table.

    Polynomial models evaluate anywhere; external models are defined only on
    the space whose F table they carry.
    """

    powers: tuple[tuple[int, ...], ...] | None = None
    external_f: np.ndarray | None = None

    def __post_init__(self):
        if (self.powers is None) == (self.external_f is None):
            raise ValueError("specify exactly one of powers or external_f")
        if self.external_f is not None:
            ext = np.asarray(self.external_f, dtype=np.float64)
            if ext.ndim != 2 or not np.all(np.isfinite(ext)):
                raise ValueError("external_f must be a finite 2-D array")
            object.__setattr__(self, "external_f", _frozen_array(ext))

    @staticmethod
    def polynomial(degree: int, dim: int = 1) -> "ModelSpec":
        """All monomials of total degree <= degree in dim coordinates."""
        if degree < 0:
            raise ValueError("degree must be nonnegative")
        return ModelSpec(powers=_monomial_powers(degree, dim))

    @staticmethod
    def external(f) -> "ModelSpec":
        return ModelSpec(external_f=f)

    @property
    def p(self) -> int:
        if self.powers is not None:
            return len(self.powers)
        return self.external_f.shape[1]

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        """Regressor rows f(x)' for each row x of points (polynomial only)."""
        if self.powers is None:
            raise ValueError("external models have no closed-form regressors")
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        cols = [np.prod(pts ** np.asarray(e, dtype=np.float64), axis=1) for e in self.powers]
        return np.column_stack(cols)


def build_regressors(space: DesignSpace, model: ModelSpec) -> np.ndarray:
    """The N-by-p regressor matrix F of the model on the space.

    Raises RankDeficient when the columns are numerically dependent on the
    space (which includes p > N).
    """
    if model.external_f is not None:
        f = np.asarray(model.external_f, dtype=np.float64)
        if f.shape[0] != space.n_points:
            raise ValueError(
                f"external F has {f.shape[0]} rows for a space of {space.n_points} points"
            )
    else:
        if any(len(e) != space.dim for e in model.powers):
            raise ValueError("model dimension does not match space dimension")
        f = model.evaluate(space.points)
    numerics.orthonormal_basis(f)  # full-rank gate
    return f


@dataclass(frozen=True)
class Design:
    """Probability weights over the points of a design space."""

    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64).reshape(-1)
        if w.size < 1 or not np.all(np.isfinite(w)):
            raise ValueError("weights must be a finite nonempty vector")
        if w.min() < -WEIGHT_SUM_TOL:
            raise ValueError(f"negative weight {w.min()!r}")
        w = np.maximum(w, 0.0)
        if abs(w.sum() - 1.0) > WEIGHT_SUM_TOL:
            raise ValueError(f"weights sum to {w.sum()!r}, not 1")
        object.__setattr__(self, "weights", _frozen_array(w))

    @staticmethod
    def uniform(n_points: int) -> "Design":
        return Design(np.full(n_points, 1.0 / n_points))

    def support(self, floor: float = SUPPORT_FLOOR) -> np.ndarray:
        """Indices of points carrying weight above the floor."""
        return np.nonzero(self.weights > floor)[0]


@dataclass(frozen=True)
class ImplementableDesign:
    """Integer replicate counts summing to the run size n."""

    counts: np.ndarray
    n: int

    def __post_init__(self):
        c = np.asarray(self.counts)
        if not np.issubdtype(c.dtype, np.integer):
            if not np.all(c == np.round(c)):
                raise ValueError("counts must be integers")
        c = c.astype(np.int64)
        if c.min(initial=0) < 0:
            raise ValueError("counts must be nonnegative")
        if int(c.sum()) != self.n:
            raise ValueError(f"counts sum to {int(c.sum())}, expected n = {self.n}")
        object.__setattr__(self, "counts", _frozen_array(c, dtype=np.int64))

    def to_design(self) -> Design:
        return Design(self.counts / float(self.n))


@dataclass(frozen=True)
class Disturbance:
    """A response contamination tau on the space points.

    Feasible disturbances are orthogonal to the regressors,
    sum_i f(x_i) tau(x_i) = 0, and norm-bounded, sum_i tau(x_i)^2 <= kappa^2/n.
    """

    tau: np.ndarray
    kappa: float
    n: int

    def __post_init__(self):
        t = np.asarray(self.tau, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(t)):
            raise ValueError("tau must be finite")
        if not self.kappa >= 0.0:
            raise ValueError("kappa must be nonnegative")
        if self.n < 1:
            raise ValueError("n must be positive")
        object.__setattr__(self, "tau", _frozen_array(t))

    def validate(self, f: np.ndarray) -> None:
        """Check orthogonality and the norm bound against the regressors f."""
        f = np.asarray(f, dtype=np.float64)
        ortho = np.linalg.norm(f.T @ self.tau)
        scale = np.linalg.norm(f) * max(np.linalg.norm(self.tau), 1e-300)
        if ortho > ORTHOGONALITY_TOL * scale:
            raise ValueError("tau is not orthogonal to the regressors")
        budget = self.kappa**2 / self.n
        if float(self.tau @ self.tau) > budget + NORM_BOUND_TOL * max(1.0, budget):
            raise ValueError("tau exceeds its norm bound kappa^2/n")


@dataclass(frozen=True)
class TargetParameter:
    """The parameter the M-estimate targets: the projection of the true mean."""

    theta0: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "theta0", _frozen_array(self.theta0))


@dataclass(frozen=True)
class MomentSet:
    """Moment matrices of a design on a model.

    q, t: orthonormal basis and triangular factor with f = q t
    r = q' D q, s = q' D^2 q, u = r^{-1} s r^{-1} for D = diag(weights)
    a = f'f, m0 = f' D f
    """

    f: np.ndarray
    q: np.ndarray
    t: np.ndarray
    r: np.ndarray
    s: np.ndarray
    u: np.ndarray
    a: np.ndarray
    m0: np.ndarray
    weights: np.ndarray
    ch_min_r: float = field(default=np.nan)

    def b0(self, tau) -> np.ndarray:
        """Weighted disturbance moment b0 = sum_i xi_i f(x_i) tau(x_i)."""
        vec = tau.tau if isinstance(tau, Disturbance) else np.asarray(tau, dtype=np.float64)
        return self.f.T @ (self.weights * vec)


def moments(f: np.ndarray, design: Design) -> MomentSet:
    """Moment matrices of a design. Raises SingularInformation when the
    smallest eigenvalue of R falls below 1e-10."""
    f = np.ascontiguousarray(f, dtype=np.float64)
    w = design.weights
    if f.ndim != 2 or f.shape[0] != w.size:
        raise ValueError("f and design have incompatible shapes")
    q, t = numerics.orthonormal_basis(f)
    r = (q * w[:, None]).T @ q
    r = 0.5 * (r + r.T)
    eig = numerics.sym_eigen(r)
    ch_min = float(eig.values[-1])
    if ch_min < INFORMATION_FLOOR:
        raise SingularInformation(f"smallest eigenvalue of R is {ch_min!r}")
    s = (q * (w * w)[:, None]).T @ q
    s = 0.5 * (s + s.T)
    y = numerics.solve_spd(r, s)
    u = numerics.solve_spd(r, np.ascontiguousarray(y.T)).T
    u = 0.5 * (u + u.T)
    a = f.T @ f
    m0 = (f * w[:, None]).T @ f
    m0 = 0.5 * (m0 + m0.T)
    return MomentSet(
        f=_frozen_array(f),
        q=_frozen_array(q),
        t=_frozen_array(t),
        r=_frozen_array(r),
        s=_frozen_array(s),
        u=_frozen_array(u),
        a=_frozen_array(a),
        m0=_frozen_array(m0),
        weights=_frozen_array(w),
        ch_min_r=ch_min,
    )


def target_parameter(f: np.ndarray, true_mean: np.ndarray, n: int = 1):
    """Least-squares projection of the true mean onto the model.

    theta0 minimizes sum_i (mean_i - f(x_i)' eta)^2 over eta; the residual
    tau = mean - F theta0 is the disturbance the model cannot represent.
    Returns (TargetParameter, Disturbance) with the tight budget
    kappa = sqrt(n * sum tau^2); pass the intended run size n to scale it.
    """
    f = np.asarray(f, dtype=np.float64)
    y = np.asarray(true_mean, dtype=np.float64).reshape(-1)
    if y.size != f.shape[0]:
        raise ValueError("true_mean length does not match f")
    a = f.T @ f
    theta0 = numerics.solve_spd(a, f.T @ y)
    tau = y - f @ theta0
    kappa = float(np.sqrt(n * float(tau @ tau)))
    dist = Disturbance(tau=tau, kappa=kappa, n=n)
    dist.validate(f)
    return TargetParameter(theta0=theta0), dist
