"""Worst-case integrated mean squared error of prediction for a design.

Over the feasible disturbance ball the maximum IMSE of the M-estimated fit
splits into a variance part, trace of R^{-1}, and a bias part, the largest
eigenvalue of U = R^{-1} S R^{-1}. With the weight nu = kappa^2 /
(eta0^2 sigma_M^2 + kappa^2) the design criterion is

    I_nu = (1 - nu) trace(R^{-1}) + nu ch_max(U),

and the unnormalized worst case for a run of size n is J / n with
J = sigma_M^2 trace(R^{-1}) + kappa^2 ch_max(U). The worst-case disturbance
itself lies in the orthogonal complement of the regressor column space and
is built from the top eigenvector of U without materializing a complement
basis.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics
from ._backend import kernels
from .exceptions import NotPositiveDefinite, SingularInformation
from .model import SUPPORT_FLOOR, Disturbance, MomentSet

__all__ = [
    "LossParams",
    "LossReport",
    "WorstCaseTau",
    "evaluate",
    "imse_exact",
    "worst_case_tau",
]

NU_CONSISTENCY_TOL = 1e-12
EIGEN_TIE_TOL = 1e-10


def nu_from_triple(kappa: float, sigma_m2: float, eta0_sq: float) -> float:
    """nu = kappa^2 / (eta0_sq * sigma_m2 + kappa^2)."""
    if kappa < 0.0:
        raise ValueError("kappa must be nonnegative")
    if sigma_m2 <= 0.0:
        raise ValueError("sigma_m2 must be positive")
    if eta0_sq < 1.0:
        raise ValueError("eta0_sq must be at least 1")
    return kappa**2 / (eta0_sq * sigma_m2 + kappa**2)


@dataclass(frozen=True)
class LossParams:
    """Loss parameterization: nu alone, or the (kappa, sigma_m2, eta0_sq) triple.

    When the triple is present nu must equal the value it implies, and
    evaluate() can additionally report the unnormalized J.
    """

    nu: float
    kappa: float | None = None
    sigma_m2: float | None = None
    eta0_sq: float | None = None

    def __post_init__(self):
        if not 0.0 <= self.nu <= 1.0:
            raise ValueError(f"nu must lie in [0, 1], got {self.nu!r}")
        given = (self.kappa is not None, self.sigma_m2 is not None, self.eta0_sq is not None)
        if any(given) and not all(given):
            raise ValueError("kappa, sigma_m2, eta0_sq must be given together")
        if all(given):
            implied = nu_from_triple(self.kappa, self.sigma_m2, self.eta0_sq)
            if abs(implied - self.nu) > NU_CONSISTENCY_TOL:
                raise ValueError(
                    f"nu {self.nu!r} conflicts with the value {implied!r} implied by the triple"
                )

    @property
    def has_triple(self) -> bool:
        return self.kappa is not None

    @staticmethod
    def from_nu(nu: float) -> "LossParams":
        return LossParams(nu=float(nu))

    @staticmethod
    def from_triple(kappa: float, sigma_m2: float, eta0_sq: float) -> "LossParams":
        return LossParams(
            nu=nu_from_triple(kappa, sigma_m2, eta0_sq),
            kappa=float(kappa),
            sigma_m2=float(sigma_m2),
            eta0_sq=float(eta0_sq),
        )


@dataclass(frozen=True)
class LossReport:
    """Evaluated loss of one design."""

    trace_term: float
    bias_term: float
    i_nu: float
    j_value: float | None
    support_size: int
    nu: float
    kappa: float | None = None
    sigma_m2: float | None = None
    eta0_sq: float | None = None


@dataclass(frozen=True)
class WorstCaseTau:
    """Worst-case disturbance of a design.

    beta is the unit direction of the disturbance in ambient coordinates (an
    element of the orthogonal complement of the regressor column space);
    multiplicity counts eigenvalues of U tied with the largest, as a
    diagnostic for non-unique maximizers.
    """

    tau: Disturbance
    attained_bias: float
    beta: np.ndarray
    multiplicity: int


def evaluate(ms: MomentSet, params: LossParams) -> LossReport:
    """Loss report for the design underlying a MomentSet."""
    try:
        trace_term, bias_term = kernels.criterion_parts(ms.q, ms.weights)
    except NotPositiveDefinite as exc:
        raise SingularInformation(str(exc)) from exc
    i_nu = (1.0 - params.nu) * trace_term + params.nu * bias_term
    j_value = None
    if params.has_triple:
        j_value = params.sigma_m2 * trace_term + params.kappa**2 * bias_term
    support_size = int(np.count_nonzero(ms.weights > SUPPORT_FLOOR))
    return LossReport(
        trace_term=float(trace_term),
        bias_term=float(bias_term),
        i_nu=float(i_nu),
        j_value=j_value,
        support_size=support_size,
        nu=params.nu,
        kappa=params.kappa,
        sigma_m2=params.sigma_m2,
        eta0_sq=params.eta0_sq,
    )


def worst_case_tau(ms: MomentSet, kappa: float, n: int) -> WorstCaseTau:
    """The disturbance attaining the worst-case bias of a design.

    The maximizing direction solves max v' D Q R^{-2} Q' D v over unit
    vectors v orthogonal to the regressor columns and attains
    ch_max(U) - 1. It is recovered from the top eigenvector w of U as the
    projection of D Q R^{-1} w onto the complement; when that image
    vanishes (U = I, no bias anywhere) any feasible direction is worst and
    one is picked from the projector's columns. With N = p the complement
    is empty and tau = 0 is returned with attained_bias = 1.
    """
    if kappa < 0.0:
        raise ValueError("kappa must be nonnegative")
    if n < 1:
        raise ValueError("n must be positive")
    n_pts, p = ms.q.shape
    eig = numerics.sym_eigen(ms.u)
    attained = float(eig.values[0])
    tie_scale = EIGEN_TIE_TOL * max(1.0, abs(attained))
    multiplicity = int(np.count_nonzero(eig.values >= attained - tie_scale))
    if n_pts == p:
        zero = np.zeros(n_pts)
        dist = Disturbance(tau=zero, kappa=kappa, n=n)
        return WorstCaseTau(tau=dist, attained_bias=attained, beta=zero, multiplicity=multiplicity)

    w_top = eig.vectors[:, 0]
    image = ms.weights * (ms.q @ numerics.solve_spd(ms.r, w_top))
    image = image - ms.q @ (ms.q.T @ image)
    norm = float(np.sqrt(image @ image))
    if norm > 1e-8:
        beta = image / norm
    else:
        # no direction produces bias; take any unit vector in the complement
        proj_diag = 1.0 - (ms.q * ms.q).sum(axis=1)
        j = int(np.argmax(proj_diag))
        cand = np.zeros(n_pts)
        cand[j] = 1.0
        cand = cand - ms.q @ (ms.q.T @ cand)
        beta = cand / np.sqrt(cand @ cand)
    tau_vec = (kappa / np.sqrt(n)) * beta
    dist = Disturbance(tau=tau_vec, kappa=kappa, n=n)
    dist.validate(ms.f)
    return WorstCaseTau(tau=dist, attained_bias=attained, beta=beta, multiplicity=multiplicity)


def imse_exact(ms: MomentSet, tau: Disturbance, sigma_m2: float, n: int | None = None) -> float:
    """Exact integrated MSE of prediction over the space for one disturbance.

    Computes sum tau^2 + b0' M0^{-1} A M0^{-1} b0 + (sigma_m2 / n) tr(A M0^{-1}).
    n defaults to the disturbance's own run size and must match it when given.
    """
    if sigma_m2 < 0.0:
        raise ValueError("sigma_m2 must be nonnegative")
    if n is None:
        n = tau.n
    elif n != tau.n:
        raise ValueError(f"n = {n} conflicts with the disturbance's n = {tau.n}")
    tau.validate(ms.f)
    vec = tau.tau
    b0 = ms.b0(vec)
    try:
        m0_inv_b0 = numerics.solve_spd(ms.m0, b0)
        m0_inv_a = numerics.solve_spd(ms.m0, ms.a)
    except NotPositiveDefinite as exc:
        raise SingularInformation(str(exc)) from exc
    bias_quad = float(m0_inv_b0 @ ms.a @ m0_inv_b0)
    trace_term = float(np.trace(m0_inv_a))
    return float(vec @ vec) + bias_quad + sigma_m2 / n * trace_term
