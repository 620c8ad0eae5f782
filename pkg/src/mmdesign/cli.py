"""Command-line front end: design construction, loss evaluation, fitting,
simulation, and the nu tables, driven by a JSON config plus flag overrides.

Subcommands
-----------
design       build the minimax design; writes design_continuous.csv,
             design_implementable.csv, loss_report.json, trace.csv
evaluate     worst-case loss of a design file (weight or count column)
estimate     M-estimate from a data CSV (columns x1..xq then y)
simulate     Monte Carlo report and dependence sweep for the built design
nu-analysis  the nu_LS / nu_M surface over (c, gamma^2) grids

Config keys (JSON object; flags --nu/--n/--seed/--out override the file):
model: "degree" (polynomial) or "f_path" (external N x p table, plain CSV,
no header); space: "lo"/"hi"/"num_points" grid or "points_path"; criterion:
"nu" or the full triple "kappa"/"sigma_m2"/"eta0_sq" (exactly one of the
two forms); "n"; "psi_family"/"psi_tuning"; optimizer "max_iters"/
"tol_rel"/"window"; "seed"; "out"; simulation "reps"/"error_family"/
"error_sigma"/"error_frac"/"error_inflate"/"error_df"/"error_scale"/
"error_rho"/"tau_mode" (zero|worst)/"rho_grid"/"alpha_max_sq"; analysis
"c_grid"/"gamma_sq_grid".

All numeric output is formatted at 12 significant digits and reruns are
byte-identical for the same config and seed.  Exit codes: 0 success,
1 input error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .exceptions import MMDesignError
from .loss import LossParams, LossReport, evaluate, nu_from_triple, worst_case_tau
from .mestimate import PsiSpec, fit, nu_analysis
from .model import (
    Design,
    DesignSpace,
    Disturbance,
    ModelSpec,
    build_regressors,
    moments,
)
from .optimizer import OptimizerConfig, make_implementable, sequential_minimax
from .simulate import ErrorModel, dependence_sweep, run_mc

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_NUMERIC = 2

FLOAT_FMT = "%.12g"

# a weight column whose sum is off by no more than this is renormalized;
# larger discrepancies are input errors (12-digit files land around 1e-13)
RENORMALIZE_TOL = 1e-9

_CONFIG_KEYS = {
    "degree", "f_path", "lo", "hi", "num_points", "points_path",
    "nu", "kappa", "sigma_m2", "eta0_sq", "n",
    "psi_family", "psi_tuning",
    "max_iters", "tol_rel", "window",
    "seed", "out",
    "reps", "error_family", "error_sigma", "error_frac", "error_inflate",
    "error_df", "error_scale", "error_rho",
    "tau_mode", "rho_grid", "alpha_max_sq",
    "c_grid", "gamma_sq_grid",
}


class UsageError(ValueError):
    """Bad flags or config: reported on stderr with exit code 1."""


# --------------------------------------------------------------------------
# configuration


@dataclass
class RunConfig:
    """Merged view of the config file and the command line."""

    raw: dict = field(default_factory=dict)

    def __post_init__(self):
        unknown = set(self.raw) - _CONFIG_KEYS
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")

    def _get(self, key, default=None):
        return self.raw.get(key, default)

    # -- model / space

    def build_model(self) -> ModelSpec:
        if "f_path" in self.raw and "degree" in self.raw:
            raise UsageError("give either a polynomial degree or f_path, not both")
        if "f_path" in self.raw:
            return ModelSpec.external(_load_matrix(self.raw["f_path"]))
        degree = int(self._get("degree", 1))
        dim = self.build_space().dim
        return ModelSpec.polynomial(degree, dim)

    def build_space(self) -> DesignSpace:
        grid_keys = {"lo", "hi", "num_points"} & set(self.raw)
        if "points_path" in self.raw:
            if grid_keys:
                raise UsageError("give either a grid spec or points_path, not both")
            return DesignSpace(_load_matrix(self.raw["points_path"]))
        return DesignSpace.grid(
            float(self._get("lo", -1.0)),
            float(self._get("hi", 1.0)),
            int(self._get("num_points", 20)),
        )

    # -- criterion

    def loss_params(self) -> LossParams:
        has_nu = "nu" in self.raw
        triple_keys = {"kappa", "sigma_m2", "eta0_sq"} & set(self.raw)
        if has_nu and triple_keys:
            raise UsageError(
                "give either nu or the (kappa, sigma_m2, eta0_sq) triple, not both"
            )
        if triple_keys:
            if triple_keys != {"kappa", "sigma_m2", "eta0_sq"}:
                raise UsageError(
                    f"the raw triple needs kappa, sigma_m2 and eta0_sq; got {sorted(triple_keys)}"
                )
            kappa = float(self.raw["kappa"])
            sigma_m2 = float(self.raw["sigma_m2"])
            eta0_sq = float(self.raw["eta0_sq"])
            return LossParams(
                nu=nu_from_triple(kappa, sigma_m2, eta0_sq),
                kappa=kappa, sigma_m2=sigma_m2, eta0_sq=eta0_sq,
            )
        if not has_nu:
            raise UsageError("the criterion needs nu or the raw triple")
        return LossParams(nu=float(self.raw["nu"]))

    # -- scalars

    @property
    def n(self) -> int:
        if "n" not in self.raw:
            raise UsageError("the run size n is required")
        return int(self.raw["n"])

    @property
    def seed(self) -> int:
        return int(self._get("seed", 0))

    @property
    def out(self) -> str:
        return str(self._get("out", "out"))

    def psi(self) -> PsiSpec:
        family = str(self._get("psi_family", "huber"))
        if "psi_tuning" in self.raw:
            return PsiSpec(family, float(self.raw["psi_tuning"]))
        return PsiSpec(family) if family != "huber" else PsiSpec.huber()

    def optimizer_config(self, nu: float) -> OptimizerConfig:
        kwargs = {}
        if "max_iters" in self.raw:
            kwargs["max_iters"] = int(self.raw["max_iters"])
        if "tol_rel" in self.raw:
            kwargs["tol_rel"] = float(self.raw["tol_rel"])
        if "window" in self.raw:
            kwargs["window"] = int(self.raw["window"])
        return OptimizerConfig(nu=nu, **kwargs)

    # -- simulation

    def error_model(self) -> ErrorModel:
        family = str(self._get("error_family", "normal"))
        fields = dict(seed=self.seed)
        for key, name in [
            ("error_sigma", "sigma"), ("error_frac", "frac"),
            ("error_inflate", "inflate"), ("error_df", "df"),
            ("error_scale", "scale"), ("error_rho", "rho"),
        ]:
            if key in self.raw:
                fields[name] = float(self.raw[key])
        return ErrorModel(family, **fields)

    @property
    def reps(self) -> int:
        return int(self._get("reps", 500))

    @property
    def tau_mode(self) -> str:
        mode = str(self._get("tau_mode", "zero"))
        if mode not in ("zero", "worst"):
            raise UsageError(f"tau_mode must be 'zero' or 'worst', got {mode!r}")
        return mode

    @property
    def rho_grid(self) -> List[float]:
        return [float(r) for r in self._get("rho_grid", [0.0, 0.25, 0.5])]

    @property
    def alpha_max_sq(self) -> float:
        return float(self._get("alpha_max_sq", 1.0))

    # -- analysis grids

    @property
    def c_grid(self) -> np.ndarray:
        if "c_grid" in self.raw:
            return np.asarray([float(c) for c in self.raw["c_grid"]])
        return np.linspace(0.0, 3.0, 31)

    @property
    def gamma_sq_grid(self) -> np.ndarray:
        if "gamma_sq_grid" in self.raw:
            return np.asarray([float(g) for g in self.raw["gamma_sq_grid"]])
        return np.logspace(-2.0, 2.0, 41)


def _build_config(args) -> RunConfig:
    raw = {}
    if args.config is not None:
        try:
            with open(args.config) as fh:
                loaded = json.load(fh)
        except OSError as exc:
            raise UsageError(f"cannot read config: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise UsageError(f"config is not valid JSON: {exc}") from exc
        if not isinstance(loaded, dict):
            raise UsageError("config must be a JSON object")
        raw.update(loaded)
    # flags win over the file
    for key in ("nu", "n", "seed", "out"):
        value = getattr(args, key, None)
        if value is not None:
            raw[key] = value
    return RunConfig(raw)


# --------------------------------------------------------------------------
# file helpers


def _load_matrix(path) -> np.ndarray:
    """Plain numeric CSV, no header."""
    try:
        return np.loadtxt(path, delimiter=",", ndmin=2)
    except OSError as exc:
        raise UsageError(str(exc)) from exc
    except ValueError as exc:
        raise UsageError(f"{path}: {exc}") from exc


def _write_csv(path, header: Sequence[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow(row)


def _fmt(x) -> str:
    return FLOAT_FMT % float(x)


def _twelve(obj):
    """Recursively cap floats at 12 significant digits for JSON output."""
    if isinstance(obj, dict):
        return {k: _twelve(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_twelve(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(_fmt(obj))
    return obj


def _write_json(path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(_twelve(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _report_dict(report: LossReport) -> dict:
    return {
        "trace_term": report.trace_term,
        "bias_term": report.bias_term,
        "i_nu": report.i_nu,
        "j_value": report.j_value,
        "support_size": report.support_size,
        "nu": report.nu,
        "kappa": report.kappa,
        "sigma_m2": report.sigma_m2,
        "eta0_sq": report.eta0_sq,
    }


def _point_header(dim: int) -> List[str]:
    return [f"x{i + 1}" for i in range(dim)]


def _load_design_file(path, space: DesignSpace) -> Design:
    """Read a design table (weight or count column) against a space.

    The coordinate columns must match the space's points in order.  A weight
    column may be off from unit sum by up to 1e-9 (12-digit files round);
    within (1e-12, 1e-9] it is renormalized, beyond that it is rejected.
    """
    try:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            try:
                header = next(reader)
            except StopIteration:
                raise UsageError(f"{path}: empty design file") from None
            data_rows = [row for row in reader if row]
    except OSError as exc:
        raise UsageError(str(exc)) from exc
    header = [h.strip() for h in header]
    if header[-1] not in ("weight", "count"):
        raise UsageError(
            f"{path}: last column must be 'weight' or 'count', got {header[-1]!r}"
        )
    kind = header[-1]
    try:
        table = np.array([[float(v) for v in row] for row in data_rows])
    except ValueError as exc:
        raise UsageError(f"{path}: non-numeric entry: {exc}") from exc
    if table.ndim != 2 or table.shape[1] != space.dim + 1:
        raise UsageError(
            f"{path}: expected {space.dim} coordinate column(s) plus {kind}"
        )
    if table.shape[0] != space.n_points:
        raise UsageError(
            f"{path}: {table.shape[0]} rows for a space of {space.n_points} points"
        )
    if not np.allclose(table[:, :-1], space.points, rtol=0.0, atol=1e-9):
        raise UsageError(f"{path}: point coordinates do not match the space")
    col = table[:, -1]
    if kind == "count":
        if not np.all(col == np.round(col)):
            raise UsageError(f"{path}: counts must be integers")
        total = col.sum()
        if total <= 0:
            raise UsageError(f"{path}: counts must sum to a positive run size")
        return Design(col / float(total))
    total = col.sum()
    gap = abs(total - 1.0)
    if gap > RENORMALIZE_TOL:
        raise UsageError(f"{path}: weights sum to {total!r}, too far from 1")
    if gap > 1e-12:
        col = col / total
    return Design(col)


# --------------------------------------------------------------------------
# subcommands


def cmd_design(args) -> int:
    cfg = _build_config(args)
    space = cfg.build_space()
    model = cfg.build_model()
    f = build_regressors(space, model)
    params = cfg.loss_params()
    design, log = sequential_minimax(space, model, cfg.optimizer_config(params.nu))
    impl, _ = make_implementable(design, cfg.n, params.nu, space, model)
    report_cont = evaluate(moments(f, design), params)
    report_impl = evaluate(moments(f, impl.to_design()), params)

    os.makedirs(cfg.out, exist_ok=True)
    head = _point_header(space.dim)
    _write_csv(
        os.path.join(cfg.out, "design_continuous.csv"),
        head + ["weight"],
        ([_fmt(v) for v in pt] + [_fmt(w)]
         for pt, w in zip(space.points, design.weights)),
    )
    _write_csv(
        os.path.join(cfg.out, "design_implementable.csv"),
        head + ["count"],
        ([_fmt(v) for v in pt] + [str(int(c))]
         for pt, c in zip(space.points, impl.counts)),
    )
    log.write_csv(os.path.join(cfg.out, "trace.csv"))
    _write_json(os.path.join(cfg.out, "loss_report.json"), {
        "continuous": _report_dict(report_cont),
        "implementable": _report_dict(report_impl),
        "n": cfg.n,
        "optimizer": {
            "converged": log.converged,
            "reason": log.reason,
            "iterations": len(log.records),
        },
    })
    print(f"design written to {cfg.out}", file=sys.stderr)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    cfg = _build_config(args)
    space = cfg.build_space()
    model = cfg.build_model()
    f = build_regressors(space, model)
    params = cfg.loss_params()
    design = _load_design_file(args.design_file, space)
    ms = moments(f, design)
    report = evaluate(ms, params)
    payload = {"evaluated": _report_dict(report)}
    if args.worst_tau:
        if params.kappa is None:
            raise UsageError("--worst-tau needs the raw (kappa, sigma_m2, eta0_sq) triple")
        wc = worst_case_tau(ms, params.kappa, cfg.n)
        payload["worst_tau"] = {
            "attained_bias": wc.attained_bias,
            "multiplicity": wc.multiplicity,
            "tau": list(wc.tau.tau),
        }
    os.makedirs(cfg.out, exist_ok=True)
    _write_json(os.path.join(cfg.out, "loss_report.json"), payload)
    print(f"loss report written to {cfg.out}", file=sys.stderr)
    return EXIT_OK


def cmd_estimate(args) -> int:
    cfg = _build_config(args)
    model = cfg.build_model()
    try:
        with open(args.data_file, newline="") as fh:
            reader = csv.reader(fh)
            try:
                header = [h.strip() for h in next(reader)]
            except StopIteration:
                raise UsageError(f"{args.data_file}: empty data file") from None
            rows = [row for row in reader if row]
    except OSError as exc:
        raise UsageError(str(exc)) from exc
    if len(header) < 2 or header[-1] != "y":
        raise UsageError(
            f"{args.data_file}: expected columns x1..xq then y, got {header}"
        )
    if not rows:
        raise UsageError(f"{args.data_file}: no observations")
    try:
        table = np.array([[float(v) for v in row] for row in rows])
    except ValueError as exc:
        raise UsageError(f"{args.data_file}: non-numeric entry: {exc}") from exc
    if table.ndim != 2 or table.shape[1] != len(header):
        raise UsageError(f"{args.data_file}: ragged rows")
    points, y = table[:, :-1], table[:, -1]
    psi = cfg.psi()
    try:
        result = fit(points, y, model, psi)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    os.makedirs(cfg.out, exist_ok=True)
    _write_json(os.path.join(cfg.out, "fit.json"), {
        "theta_hat": list(result.theta_hat),
        "sigma_hat": result.sigma_hat,
        "iterations": result.iterations,
        "converged": result.converged,
        "eq_norm": result.eq_norm,
        "scale_collapsed": result.scale_collapsed,
        "n_observations": int(y.size),
        "psi_family": psi.family,
        "psi_tuning": psi.tuning,
    })
    print(f"fit written to {cfg.out}", file=sys.stderr)
    return EXIT_OK


def cmd_simulate(args) -> int:
    cfg = _build_config(args)
    space = cfg.build_space()
    model = cfg.build_model()
    f = build_regressors(space, model)
    params = cfg.loss_params()
    design, _ = sequential_minimax(space, model, cfg.optimizer_config(params.nu))
    impl, _ = make_implementable(design, cfg.n, params.nu, space, model)

    if cfg.tau_mode == "worst":
        if params.kappa is None:
            raise UsageError("tau_mode 'worst' needs the raw (kappa, sigma_m2, eta0_sq) triple")
        tau = worst_case_tau(moments(f, impl.to_design()), params.kappa, cfg.n).tau
    else:
        tau = Disturbance(np.zeros(space.n_points), 0.0, cfg.n)

    psi = cfg.psi()
    err = cfg.error_model()
    report = run_mc(space, impl, model, psi, err, tau, cfg.reps)
    rows = dependence_sweep(
        space, impl, model, psi, cfg.rho_grid, cfg.alpha_max_sq, cfg.reps,
        seed=cfg.seed,
    )
    os.makedirs(cfg.out, exist_ok=True)
    _write_json(os.path.join(cfg.out, "mc_report.json"), report.to_dict())
    _write_csv(
        os.path.join(cfg.out, "sweep.csv"),
        ["rho", "empirical_var", "bound", "std_err"],
        ([_fmt(r.rho), _fmt(r.empirical_var), _fmt(r.bound), _fmt(r.std_err)]
         for r in rows),
    )
    print(f"simulation written to {cfg.out}", file=sys.stderr)
    return EXIT_OK


def cmd_nu_analysis(args) -> int:
    cfg = _build_config(args)
    table = nu_analysis(cfg.c_grid, cfg.gamma_sq_grid)
    os.makedirs(cfg.out, exist_ok=True)
    _write_csv(
        os.path.join(cfg.out, "nu_table.csv"),
        ["c", "gamma_sq", "g", "nu_ls", "nu_m", "diff"],
        ([_fmt(r.c), _fmt(r.gamma_sq), _fmt(r.g), _fmt(r.nu_ls), _fmt(r.nu_m),
          _fmt(r.diff)] for r in table.rows),
    )
    best = table.best
    _write_json(os.path.join(cfg.out, "nu_best.json"), {
        "c": best.c, "gamma_sq": best.gamma_sq, "g": best.g,
        "nu_ls": best.nu_ls, "nu_m": best.nu_m, "diff": best.diff,
    })
    print(f"nu tables written to {cfg.out}", file=sys.stderr)
    return EXIT_OK


# --------------------------------------------------------------------------
# argument parsing


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _add_common(sub):
    sub.add_argument("--config", help="JSON config file")
    sub.add_argument("--nu", type=float, help="bias emphasis in [0, 1]")
    sub.add_argument("--n", type=int, help="run size")
    sub.add_argument("--seed", type=int, help="random seed")
    sub.add_argument("--out", help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mmdesign", description=__doc__.splitlines()[0])
    subs = parser.add_subparsers(dest="command", required=True)

    p_design = subs.add_parser("design", help="construct the minimax design")
    _add_common(p_design)
    p_design.set_defaults(func=cmd_design)

    p_eval = subs.add_parser("evaluate", help="worst-case loss of a design file")
    p_eval.add_argument("design_file", help="CSV with x columns plus weight or count")
    p_eval.add_argument("--worst-tau", action="store_true",
                        help="include the worst-case disturbance (needs the raw triple)")
    _add_common(p_eval)
    p_eval.set_defaults(func=cmd_evaluate)

    p_est = subs.add_parser("estimate", help="M-estimate from a data CSV")
    p_est.add_argument("data_file", help="CSV with columns x1..xq then y")
    _add_common(p_est)
    p_est.set_defaults(func=cmd_estimate)

    p_sim = subs.add_parser("simulate", help="Monte Carlo report and dependence sweep")
    _add_common(p_sim)
    p_sim.set_defaults(func=cmd_simulate)

    p_nu = subs.add_parser("nu-analysis", help="nu_LS / nu_M surface tables")
    _add_common(p_nu)
    p_nu.set_defaults(func=cmd_nu_analysis)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except MMDesignError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
