"""Command-line interface.

Exit codes: 0 success, 1 numerical tolerance failure, 2 usage or configuration error.
"""
from __future__ import annotations

import argparse
import itertools
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__, closed_form, sectors
from .branching import PopulationCapError, Z95, seed_from_env
from .estimators import SOLVERS, BranchingMonteCarlo, NotClosedFormError
from .io import distribution_records, read_csv, write_csv, write_json
from .meanfield import NegativityError, TruncationError
from .model import (
    CouplingTerm,
    ModelSpec,
    ModelValidationError,
    NoDynamicsError,
    classify_phase,
    derive_rates,
    from_r,
    load_model,
    model_from_json,
    model_to_dict,
    scrambling_time_estimate,
)

EXIT_OK, EXIT_NUMERIC, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


class ToleranceFailure(Exception):
    pass


# -- shared helpers -------------------------------------------------------------


def time_grid(start: float, stop: float, points: int, log: bool = False) -> np.ndarray:
    if points < 1:
        raise UsageError("--t-points must be >= 1")
    if log:
        if start <= 0:
            raise UsageError("--t-log needs --t-start > 0")
        grid = np.geomspace(start, stop, points)
    else:
        grid = np.linspace(start, stop, points)
    if np.any(grid < 0) or np.any(np.diff(grid) <= 0):
        raise UsageError("time grid must be non-negative and strictly increasing")
    return grid


def _grid_config(args) -> dict:
    return {"start": args.t_start, "stop": args.t_stop, "points": args.t_points, "log": args.t_log}


def _model_from_args(args) -> ModelSpec:
    if getattr(args, "model", None):
        return load_model(args.model)
    if getattr(args, "r", None) is not None:
        return from_r(args.r, kappa_eff=1.0, N=args.N)
    raise UsageError("give --model FILE or --r VALUE")


def _solver_for(method: str, config: dict):
    if method not in SOLVERS:
        raise UsageError(f"unknown method {method!r}; choose from {', '.join(SOLVERS)}")
    cls = SOLVERS[method]
    if method == "closed":
        return cls(n_max=config["n_report"])
    if method in ("master", "series"):
        kwargs = {"n_max": config["n_max"]}
        if config.get("tol") is not None:
            kwargs["rtol"] = config["tol"]
        return cls(**kwargs)
    if method == "mc":
        return cls(n_traj=config["traj"], seed=config["seed"], n_max=config["n_report"])
    return cls()


# -- simulate -------------------------------------------------------------------


def run_simulation(config: dict) -> tuple[dict, list[str], list[tuple]]:
    """Evaluate one method on one model; returns ``(metadata, header, rows)``."""
    model = model_from_json(config["model"])
    grid = time_grid(**config["t_grid"])
    solver = _solver_for(config["method"], config).fit(model)
    n_report = config["n_report"]
    if config["method"] == "mc":
        header = ["t", "n", "P_hat", "ci_low", "ci_high"]
        rows = []
        n = np.arange(n_report + 1)
        for est in solver.estimate(grid):
            lo, hi = est.interval(n)
            rows.extend(zip(itertools.repeat(est.t), n.tolist(), est.p_hat(n), lo, hi))
    else:
        header = ["t", "n", "P"]
        rows = list(distribution_records(solver.predict_distributions(grid), n_report))
    metadata = {
        "opsize_version": __version__,
        "command": "simulate",
        "model_hash": model.digest(),
        "method": config["method"],
        "solver": {k: v for k, v in solver.get_params().items()},
        "config": config,
    }
    if config["method"] == "mc":
        metadata["seed"] = solver.seed_
    return metadata, header, rows


def _write_table(out, metadata, header, rows):
    if out and str(out).endswith(".json"):
        return write_json(out, {"metadata": metadata, "columns": header, "rows": [list(r) for r in rows]})
    return write_csv(out, header, rows, metadata)


def cmd_simulate(args) -> int:
    model = _model_from_args(args)
    seed = args.seed if args.seed is not None else seed_from_env()
    config = {
        "model": model_to_dict(model),
        "method": args.method,
        "t_grid": _grid_config(args),
        "n_max": args.n_max,
        "n_report": args.n_report,
        "seed": seed,
        "traj": args.traj,
        "tol": args.tol,
    }
    metadata, header, rows = run_simulation(config)
    text = _write_table(args.out, metadata, header, rows)
    if args.out in (None, "-"):
        sys.stdout.write(text)
    return EXIT_OK


def cmd_replay(args) -> int:
    path = Path(args.artifact)
    if not path.exists():
        raise FileNotFoundError(f"artifact not found: {path}")
    if path.suffix == ".json":
        metadata = json.loads(path.read_text())["metadata"]
    else:
        metadata, _, _ = read_csv(path)
    if metadata.get("command") != "simulate":
        raise UsageError("only simulate artifacts can be replayed")
    meta, header, rows = run_simulation(metadata["config"])
    text = _write_table(args.out, meta, header, rows)
    if args.out in (None, "-"):
        sys.stdout.write(text)
    return EXIT_OK


# -- figures ----------------------------------------------------------------------


GNUPLOT_FIG2 = """set datafile separator ','
set logscale y
set xlabel 'n'
set ylabel 'P(n,t)'
plot for [i=0:*] '{data}' every ::1 index i using 2:3 with linespoints title columnhead
"""


def reproduce_fig2(r_values=(0.5, 1.5), t_grid=None, n_max: int = 40):
    """Early-time ``P(n, t)`` tables for the ``J = 0``, ``(U_1, U_3)`` model with ``kappa_eff = 1``."""
    t_grid = np.linspace(0.0, 10.0, 21) if t_grid is None else np.asarray(t_grid, dtype=float)
    n = np.arange(n_max + 1)
    panels = {}
    for r in r_values:
        rows = []
        for t in t_grid:
            params = closed_form.EarlyTimeParams(r, float(t))
            probs = np.asarray(closed_form.p_exact(n, params), dtype=float)
            tails = [closed_form.p_exact_tail(int(k), params) for k in n]
            rows.extend(zip(itertools.repeat(float(t)), n.tolist(), probs, tails))
        panels[r] = rows
    return panels


def cmd_fig2(args) -> int:
    grid = time_grid(args.t_start, args.t_stop, args.t_points, args.t_log)
    panels = reproduce_fig2(args.r_values, grid, args.n_max)
    out_dir = Path(args.out_dir)
    for r, rows in panels.items():
        model = from_r(r)
        meta = {
            "opsize_version": __version__,
            "command": "fig2",
            "r": r,
            "units": "kappa_eff = 1",
            "model_hash": model.digest(),
            "phase": str(classify_phase(derive_rates(model))),
        }
        data = out_dir / f"fig2_r{r:g}.csv"
        write_csv(data, ["t", "n", "P", "tail_beyond_n"], rows, meta)
        if args.gnuplot:
            (out_dir / f"fig2_r{r:g}.gp").write_text(GNUPLOT_FIG2.format(data=data.name))
    return EXIT_OK


def reproduce_fig3(r_values, lambda_values, s_points: int = 201):
    """Late-time ``P_reg(s)`` curves with the rescaled coordinate ``s / (1 - r)``."""
    rows = []
    checks = []
    for r in r_values:
        if not 0 <= r < 1:
            raise UsageError(f"late-time curves need 0 <= r < 1, got r = {r}")
    for lam in lambda_values:
        if lam <= 0:
            raise UsageError(f"lambda must be > 0, got {lam}")
        for r in r_values:
            sd = closed_form.ScaledDistribution(r, lam)
            s = np.linspace(0.0, sd.support_max, s_points)
            p = np.asarray(closed_form.p_reg(s, sd), dtype=float)
            rows.extend(zip(itertools.repeat(r), itertools.repeat(lam), s, s / (1 - r), p, (1 - r) * p))
            checks.append({"r": r, "lambda": lam, "weight": closed_form.reg_weight(sd), "expected": 1 - r,
                           "support_max": sd.support_max})
    return rows, checks


def cmd_fig3(args) -> int:
    rows, checks = reproduce_fig3(args.r_values, args.lambda_values, args.s_points)
    meta = {"opsize_version": __version__, "command": "fig3", "weights": checks}
    header = ["r", "lambda", "s", "s_scaled", "P_reg", "P_reg_times_1_minus_r"]
    text = write_csv(args.out, header, rows, meta)
    if args.out in (None, "-"):
        sys.stdout.write(text)
    if args.gnuplot and args.out not in (None, "-"):
        Path(args.out).with_suffix(".gp").write_text(
            "set datafile separator ','\nset xlabel 's/(1-r)'\nset ylabel 'P_reg'\n"
            f"plot '{Path(args.out).name}' using 4:5 with lines notitle\n"
        )
    return EXIT_OK


# -- phase scan -------------------------------------------------------------------


def scan_phase(gammas, kappa_eff: float = 1.0, u2: float = 0.0, N: int = 100, tie_tol: float = 1e-12):
    """One record per dissipation rate at fixed ``kappa_eff``."""
    records = []
    for gamma in gammas:
        couplings = []
        if kappa_eff > 0:
            couplings.append(CouplingTerm(3, 1, kappa_eff / 4.0))
        if gamma > 0:
            couplings.append(CouplingTerm(1, 1, gamma / 4.0))
        if u2 > 0:
            couplings.append(CouplingTerm(2, 2, u2))
        spec = ModelSpec(q=4, J=0.0, couplings=tuple(couplings), N=N, M=20 * N)
        records.append(_phase_record(spec, tie_tol, gamma=float(gamma)))
    return records


def _phase_record(spec: ModelSpec, tie_tol: float, **extra) -> dict:
    rates = derive_rates(spec)
    record = dict(extra)
    record.update(kappa_eff=rates.kappa_eff, gamma_rate=rates.gamma, r=rates.r, Gamma=rates.Gamma)
    try:
        label = classify_phase(rates, tie_tol)
    except NoDynamicsError:
        record.update(phase="no dynamics", margin=0.0, t_s=math.inf)
    else:
        record.update(phase=str(label), margin=label.margin, t_s=scrambling_time_estimate(rates, spec.N))
    return record


def cmd_scan_phase(args) -> int:
    if args.models:
        records = [_phase_record(load_model(p), args.tie_tol, model=str(p)) for p in args.models]
        header = ["model", "kappa_eff", "gamma_rate", "r", "Gamma", "phase", "margin", "t_s"]
    else:
        gammas = np.linspace(args.gamma_start, args.gamma_stop, args.points)
        records = scan_phase(gammas, args.kappa_eff, args.u2, args.N, args.tie_tol)
        header = ["gamma", "kappa_eff", "gamma_rate", "r", "Gamma", "phase", "margin", "t_s"]
    rows = [[rec[h] if isinstance(rec[h], str) else rec[h] for h in header] for rec in records]
    meta = {"opsize_version": __version__, "command": "scan-phase", "tie_tol": args.tie_tol}
    text = write_csv(args.out, header, rows, meta)
    if args.out in (None, "-"):
        sys.stdout.write(text)
    return EXIT_OK


# -- comparison -------------------------------------------------------------------


def compare_methods(methods, model: ModelSpec, grid, tol: float = 1e-8, n_report: int = 200,
                    traj: int = 100_000, seed: int = 0, mc_n: int = 10, mc_z: float = 3.0,
                    coverage_min: float = 0.95):
    """Pairwise deviations between routes; Monte Carlo is judged by band coverage."""
    if len(methods) < 2:
        raise UsageError("compare needs at least two methods")
    config = {"n_max": None, "n_report": n_report, "traj": traj, "seed": seed, "tol": None}
    tables = {}
    mc_estimates = None
    for method in methods:
        solver = _solver_for(method, config).fit(model)
        if method == "mc":
            mc_estimates = solver.estimate(grid)
        else:
            P = solver.predict(grid)
            width = n_report + 1
            padded = np.zeros((len(grid), width))
            k = min(width, P.shape[1])
            padded[:, :k] = P[:, :k]
            tables[method] = padded
    report = {"model_hash": model.digest(), "tol": tol, "pairs": [], "failures": []}
    deterministic = [m for m in methods if m in tables and m != "sector"]
    for a, b in itertools.combinations(deterministic, 2):
        diff = np.abs(tables[a] - tables[b])
        i, n = np.unravel_index(int(np.argmax(diff)), diff.shape)
        entry = {"pair": [a, b], "max_dev": float(diff[i, n]), "t": float(grid[i]), "n": int(n)}
        report["pairs"].append(entry)
        if diff[i, n] > tol:
            report["failures"].append(entry)
    reference = deterministic[0] if deterministic else None
    if "sector" in tables and reference:
        diff = np.abs(tables["sector"] - tables[reference])
        i, n = np.unravel_index(int(np.argmax(diff)), diff.shape)
        report["pairs"].append({
            "pair": [reference, "sector"], "max_dev": float(diff[i, n]), "t": float(grid[i]), "n": int(n),
            "note": f"finite-size chain at N={model.N}, M={model.M}; O(1/N) deviation expected, informational",
        })
    if mc_estimates is not None and reference:
        n = np.arange(mc_n + 1)
        covered = np.array([est.covers(n, tables[reference][i, : mc_n + 1], z=mc_z)
                            for i, est in enumerate(mc_estimates)])
        coverage = float(covered.mean())
        entry = {"pair": [reference, "mc"], "coverage": coverage, "z": mc_z, "required": coverage_min,
                 "n_traj": traj}
        report["pairs"].append(entry)
        if coverage < coverage_min:
            misses = np.argwhere(~covered)
            i, k = misses[0]
            entry["first_miss"] = {"t": float(grid[i]), "n": int(n[k])}
            report["failures"].append(entry)
    return report


def cmd_compare(args) -> int:
    model = _model_from_args(args)
    grid = time_grid(args.t_start, args.t_stop, args.t_points, args.t_log)
    seed = args.seed if args.seed is not None else seed_from_env()
    report = compare_methods(args.methods, model, grid, tol=args.tol if args.tol is not None else 1e-8,
                             n_report=args.n_report, traj=args.traj, seed=seed)
    text = write_json(args.out, report)
    if args.out in (None, "-"):
        sys.stdout.write(text)
    if report["failures"]:
        first = report["failures"][0]
        where = f"t={first['t']:g}, n={first['n']}" if "t" in first else f"t={first['first_miss']['t']:g}, n={first['first_miss']['n']}"
        raise ToleranceFailure(f"tolerance exceeded for {first['pair'][0]} vs {first['pair'][1]} at {where}")
    return EXIT_OK


def cmd_convergence(args) -> int:
    def spec_for(N):
        return from_r(args.r, kappa_eff=1.0, N=N, M=int(args.m_ratio * N))

    rows = sectors.meanfield_convergence_report(spec_for, args.N_list, t_probe=args.t_probe)
    errors = [row["error"] for row in rows]
    payload = {
        "opsize_version": __version__,
        "r": args.r,
        "m_ratio": args.m_ratio,
        "t_probe": args.t_probe,
        "rows": rows,
        "monotone": all(b <= 1.1 * a for a, b in zip(errors, errors[1:])),
    }
    text = write_json(args.out, payload)
    if args.out in (None, "-"):
        sys.stdout.write(text)
    return EXIT_OK


# -- argument parsing ---------------------------------------------------------------


def _add_time_args(p, stop=10.0, points=21):
    p.add_argument("--t-start", type=float, default=0.0)
    p.add_argument("--t-stop", type=float, default=stop)
    p.add_argument("--t-points", type=int, default=points)
    p.add_argument("--t-log", action="store_true", help="logarithmic spacing (needs --t-start > 0)")


def _add_model_args(p):
    p.add_argument("--model", help="model file (key-value config or .json)")
    p.add_argument("--r", type=float, help="use the (U_1, U_3) model with this gamma/kappa_eff and kappa_eff = 1")
    p.add_argument("--N", type=int, default=100, help="system size for --r models")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="opsize", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="evaluate P(n, t) with one method")
    _add_model_args(p)
    p.add_argument("--method", choices=sorted(SOLVERS), default="closed")
    _add_time_args(p)
    p.add_argument("--n-max", type=int, default=None, help="truncation order for master/series")
    p.add_argument("--n-report", type=int, default=200, help="largest n written out")
    p.add_argument("--seed", type=lambda s: int(s, 0), default=None, help="master seed (falls back to $OPSIZE_SEED)")
    p.add_argument("--traj", type=int, default=100_000, help="Monte Carlo trajectories")
    p.add_argument("--tol", type=float, default=None, help="relative integrator tolerance")
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("replay", help="re-run a simulate artifact from its embedded metadata")
    p.add_argument("artifact")
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("fig2", help="early-time distributions at r = 1/2 and 3/2")
    p.add_argument("--r-values", type=float, nargs="+", default=[0.5, 1.5])
    _add_time_args(p)
    p.add_argument("--n-max", type=int, default=40)
    p.add_argument("--out-dir", default=".")
    p.add_argument("--gnuplot", action="store_true")
    p.set_defaults(func=cmd_fig2)

    p = sub.add_parser("fig3", help="late-time regular distribution and its collapse")
    p.add_argument("--r-values", type=float, nargs="+", default=[0.2, 0.5, 0.8])
    p.add_argument("--lambda-values", type=float, nargs="+", default=[0.5, 1.0, 5.0])
    p.add_argument("--s-points", type=int, default=201)
    p.add_argument("--out", default="-")
    p.add_argument("--gnuplot", action="store_true")
    p.set_defaults(func=cmd_fig3)

    p = sub.add_parser("scan-phase", help="phase labels over a dissipation sweep or a set of model files")
    p.add_argument("--kappa-eff", type=float, default=1.0)
    p.add_argument("--gamma-start", type=float, default=0.0)
    p.add_argument("--gamma-stop", type=float, default=2.0)
    p.add_argument("--points", type=int, default=101)
    p.add_argument("--u2", type=float, default=0.0, help="strength of an added (2, 2) coupling")
    p.add_argument("--N", type=int, default=100)
    p.add_argument("--tie-tol", type=float, default=1e-12)
    p.add_argument("--models", nargs="*", help="scan these model files instead of a sweep")
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_scan_phase)

    p = sub.add_parser("compare", help="cross-check methods on one model")
    _add_model_args(p)
    p.add_argument("--methods", nargs="+", required=True, choices=sorted(SOLVERS))
    _add_time_args(p)
    p.add_argument("--n-report", type=int, default=200)
    p.add_argument("--traj", type=int, default=100_000)
    p.add_argument("--seed", type=lambda s: int(s, 0), default=None)
    p.add_argument("--tol", type=float, default=None, help="max |dP| between deterministic routes (default 1e-8)")
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("convergence", help="finite-size sector chain against the mean-field growth rate")
    p.add_argument("--r", type=float, default=0.5)
    p.add_argument("--N-list", type=int, nargs="+", default=[50, 100, 200])
    p.add_argument("--m-ratio", type=float, default=20.0)
    p.add_argument("--t-probe", type=float, default=1.0)
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_convergence)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, ModelValidationError, FileNotFoundError, NotClosedFormError) as exc:
        print(f"opsize: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ToleranceFailure, TruncationError, NegativityError, PopulationCapError, ArithmeticError,
            sectors.SectorBudgetError) as exc:
        print(f"opsize: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
