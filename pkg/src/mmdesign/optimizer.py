"""Sequential construction of minimax designs and integer rounding.

The continuous design is built by repeated one-point additions: at virtual
count k the candidate improvements

    t_{k,i} = k * [ I_nu(xi_k) - I_nu((k xi_k + e_i) / (k + 1)) ]

are evaluated exactly for every point of the space, the best point is mixed
in, and the loop stops once no addition helps.  ``make_implementable`` then
rounds the weights to integer replicate counts for a given run size.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import List, Tuple, Union

import numpy as np

from ._backend import kernels
from .exceptions import InfeasibleRounding, NotPositiveDefinite, SingularInformation
from .loss import LossParams, LossReport, evaluate
from .model import (
    SUPPORT_FLOOR,
    Design,
    DesignSpace,
    ImplementableDesign,
    ModelSpec,
    build_regressors,
    moments,
)

DEFAULT_MAX_ITERS = 5000
DEFAULT_TOL_REL = 1e-7
DEFAULT_WINDOW = 50

# Virtual count used to certify stationarity.  The exact finite difference
# t_{k,i} can be <= 0 for every i at a coarse step 1/(k+1) purely by
# overshoot, far from any optimum, so "no addition helps" is only trusted
# after re-evaluating t at this much finer probe step; otherwise the step is
# refined (k doubles, design unchanged) until additions resume.
PROBE_K = 1_000_000

# Largest virtual count either the step refinement or a probe may use.
# Beyond roughly this scale the finite differences k*(I - I') sink into
# floating-point cancellation noise (measured on a 20-point cubic problem:
# spurious t drift ~6e-4 at k = 1e7, ~1e-2 at 1e8, ~0.5 at 1e9, against
# losses of order 30), so certificates issued there would be meaningless.
# A persistent stall at the cap is reported as a plateau.
STEP_K_CAP = 10**7

# Stop reasons recorded on the trace log.
REASON_STATIONARY = "stationary"      # max_i t <= 0: no addition can help
REASON_GAP = "gap"                    # max_i t <= tol_rel * I_nu
REASON_WINDOW = "window"              # I_nu flat over the sliding window
REASON_BUDGET = "budget"              # max_iters exhausted
REASON_PLATEAU = "plateau"            # gain remains but steps cannot realize it


@dataclass(frozen=True)
class OptimizerConfig:
    """Settings for the sequential design search.

    ``init`` is either the string ``"uniform"`` or an explicit Design whose
    length matches the space.  ``tol_rel`` is the relative I_nu improvement
    below which the search is considered converged, applied both over a
    sliding ``window`` of iterations and to the one-step candidate gain.
    """

    nu: float
    init: Union[str, Design] = "uniform"
    max_iters: int = DEFAULT_MAX_ITERS
    tol_rel: float = DEFAULT_TOL_REL
    window: int = DEFAULT_WINDOW
    support_floor: float = SUPPORT_FLOOR

    def __post_init__(self):
        if not (0.0 <= self.nu <= 1.0):
            raise ValueError(f"nu must lie in [0, 1], got {self.nu!r}")
        if isinstance(self.init, str):
            if self.init != "uniform":
                raise ValueError(f"unknown init {self.init!r}")
        elif not isinstance(self.init, Design):
            raise ValueError("init must be 'uniform' or a Design")
        if self.max_iters < 1:
            raise ValueError("max_iters must be positive")
        if self.tol_rel <= 0.0:
            raise ValueError("tol_rel must be positive")
        if self.window < 1:
            raise ValueError("window must be positive")


@dataclass(frozen=True)
class TraceRecord:
    """One step of the sequential search.

    ``i_nu`` is the loss of the design *before* the addition; a
    ``chosen_index`` of -1 marks a terminal record where no point was added.
    """

    k: int
    chosen_index: int
    t_value: float
    i_nu: float


@dataclass
class TraceLog:
    """Iteration history of ``sequential_minimax``."""

    records: List[TraceRecord] = field(default_factory=list)
    converged: bool = False
    reason: str = REASON_BUDGET

    def i_nu_path(self) -> np.ndarray:
        return np.array([r.i_nu for r in self.records], dtype=np.float64)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["iter", "chosen_index", "t_value", "i_nu"])
            for r in self.records:
                writer.writerow(
                    [r.k, r.chosen_index, "%.12g" % r.t_value, "%.12g" % r.i_nu]
                )


def _basis(space: DesignSpace, model: ModelSpec) -> np.ndarray:
    f = build_regressors(space, model)
    q, _ = kernels.mgs_qr(f)
    return q


def _candidate_gains(q, w, k, nu):
    """t vector plus current I_nu, mapping a singular design to the
    domain-level error."""
    try:
        t, trace_rinv, chmax_u, i_nu = kernels.t_values_exact(q, w, float(k), nu)
    except NotPositiveDefinite as exc:
        raise SingularInformation(
            "design information matrix is singular; the search cannot proceed"
        ) from exc
    return t, i_nu


def t_values(xi_k: Design, k: int, space: DesignSpace, model: ModelSpec, nu: float) -> np.ndarray:
    """Exact one-point-addition gains for every point of the space."""
    q = _basis(space, model)
    if xi_k.weights.size != q.shape[0]:
        raise ValueError("design length does not match the space")
    t, _ = _candidate_gains(q, xi_k.weights, k, nu)
    return t


def sequential_minimax(
    space: DesignSpace, model: ModelSpec, cfg: OptimizerConfig
) -> Tuple[Design, TraceLog]:
    """Minimize I_nu over the simplex by sequential point addition.

    Starts from the uniform design (one virtual observation per space point,
    k0 = N) unless an explicit initial Design is configured, and adds the
    arg-max-t point until stationary.  Ties in the arg max go to the lowest
    index.  On budget exhaustion the best design so far is returned with
    ``converged=False`` on the log.
    """
    q = _basis(space, model)
    n_points = q.shape[0]
    if cfg.max_iters < n_points:
        raise ValueError(f"max_iters must be at least N = {n_points}")
    if isinstance(cfg.init, Design):
        if cfg.init.weights.size != n_points:
            raise ValueError("initial design length does not match the space")
        w = cfg.init.weights.astype(np.float64).copy()
    else:
        w = np.full(n_points, 1.0 / n_points)

    k = n_points
    log = TraceLog()
    history: List[float] = []
    window_blocked_until = 0  # suppress window re-checks after a failed probe

    def certified_stationary(w, i_nu, k):
        """Max gain at a fine probe step, or None if real gain remains."""
        probe_k = min(max(PROBE_K, 10 * k), STEP_K_CAP)
        t_probe, _ = _candidate_gains(q, w, probe_k, cfg.nu)
        probe_max = float(t_probe.max())
        if probe_max <= max(0.0, cfg.tol_rel * i_nu):
            return probe_max
        return None

    for _ in range(cfg.max_iters):
        t, i_nu = _candidate_gains(q, w, k, cfg.nu)
        t_max = float(t.max())
        best = int(np.argmax(t))  # first occurrence: lowest-index tie-break

        if t_max <= max(0.0, cfg.tol_rel * i_nu):
            # No worthwhile addition at the current step size 1/(k+1):
            # either stationary or a coarse-step overshoot.
            probe_max = certified_stationary(w, i_nu, k)
            if probe_max is not None:
                log.records.append(TraceRecord(k, -1, probe_max, i_nu))
                log.converged = True
                log.reason = REASON_STATIONARY if probe_max <= 0.0 else REASON_GAP
                break
            if k >= STEP_K_CAP:
                # Gain persists at the finest trustworthy step, yet no
                # single-point addition can realize it (zig-zag around a
                # kink of the largest-eigenvalue term).  Best so far.
                log.records.append(TraceRecord(k, -1, t_max, i_nu))
                log.reason = REASON_PLATEAU
                break
            k = min(2 * k, STEP_K_CAP)
            continue

        log.records.append(TraceRecord(k, best, t_max, i_nu))
        history.append(i_nu)
        w *= k
        w[best] += 1.0
        w /= k + 1.0
        w /= w.sum()
        k += 1

        if len(history) > cfg.window and len(history) >= window_blocked_until:
            ref = history[-1 - cfg.window]
            if ref - history[-1] <= cfg.tol_rel * ref:
                probe_max = certified_stationary(w, history[-1], k)
                if probe_max is not None:
                    log.records.append(TraceRecord(k, -1, probe_max, history[-1]))
                    log.converged = True
                    log.reason = REASON_WINDOW
                    break
                # I_nu looks flat over the window yet real gain remains
                # (slow O(1/k) tail or zig-zag around a kink): keep adding
                # at the natural schedule and re-check a window later.
                window_blocked_until = len(history) + cfg.window

    return Design(w), log


def _i_nu_of_counts(q, counts, nu):
    """Exact loss of the normalized count vector, None when singular."""
    w = counts / counts.sum()
    try:
        trace_rinv, chmax_u = kernels.criterion_parts(q, w)
    except NotPositiveDefinite:
        return None
    return (1.0 - nu) * trace_rinv + nu * chmax_u


def make_implementable(
    xi: Design,
    n: int,
    nu: float,
    space: DesignSpace,
    model: ModelSpec,
    support_floor: float = SUPPORT_FLOOR,
) -> Tuple[ImplementableDesign, LossReport]:
    """Round a continuous design to integer replicate counts summing to n.

    Weights below ``support_floor`` are zeroed, the rest are rounded up, and
    the excess is removed one replicate at a time, always taking the removal
    whose exactly re-evaluated loss is smallest.  On ties the lowest-indexed
    point wins, i.e. keeps its replicate: the removal falls on the highest
    index among the equal-loss candidates.
    """
    f = build_regressors(space, model)
    q, _ = kernels.mgs_qr(f)
    p = f.shape[1]
    if xi.weights.size != f.shape[0]:
        raise ValueError("design length does not match the space")
    if n < p:
        raise ValueError(f"run size n = {n} is below the number of regressors p = {p}")

    w = np.where(xi.weights >= support_floor, xi.weights, 0.0)
    if not np.any(w > 0.0):
        raise ValueError("design has no support points above the floor")
    counts = np.ceil(n * w).astype(np.int64)
    if counts.sum() < n:
        raise InfeasibleRounding(
            f"rounded counts sum to {int(counts.sum())} < n = {n}; "
            "too much weight lies below the support floor"
        )

    while counts.sum() > n:
        best_idx = -1
        best_loss = np.inf
        for i in np.nonzero(counts > 0)[0]:
            counts[i] -= 1
            loss = _i_nu_of_counts(q, counts, nu) if counts.sum() > 0 else None
            counts[i] += 1
            if loss is not None and loss <= best_loss:
                best_loss = loss
                best_idx = int(i)
        if best_idx < 0:
            raise InfeasibleRounding(
                "every single-replicate removal makes the information matrix "
                f"singular; n = {n} is too small for this design"
            )
        counts[best_idx] -= 1

    impl = ImplementableDesign(counts, n)
    report = evaluate(moments(f, impl.to_design()), LossParams.from_nu(nu))
    return impl, report
