"""Command-line entry point.

    sls-synth synthesize    --spec lightdark --out runs/ld [--method full|ce]
    sls-synth rollout       --result runs/ld/result.json --n 50 --mode uniform --out runs/ld
    sls-synth report        --run runs/ld [--baseline runs/ld_ce] [--out DIR]
    sls-synth bench-horizon --horizons 10,20,40,80 --out runs/bench
    sls-synth calibrate     --data residuals.csv --basis "px,py:3" --out envelope.json

Exit codes: 0 success, 1 bad input, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .errors import NumericalError, SpecError, UserError

log = logging.getLogger("sls_synth")

EXIT_OK, EXIT_USER, EXIT_NUMERICAL = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on bad usage; this CLI reserves 2 for numerical failures."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USER, f"{self.prog}: error: {message}\n")


def _globals_parent(suppress: bool) -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    default = argparse.SUPPRESS if suppress else None
    p.add_argument("--seed", type=int, default=default if suppress else 0, help="master seed (default 0)")
    p.add_argument("--threads", type=int, default=default,
                   help="worker threads for rollouts (default: $SLS_SYNTH_THREADS or 1)")
    p.add_argument("-v", "--verbose", action="count", default=default if suppress else 0)
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="sls-synth", description="Output-feedback trajectory synthesis with robust tubes.",
                     parents=[_globals_parent(False)])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    common = [_globals_parent(True)]

    p = sub.add_parser("synthesize", parents=common, help="nominal, controller and tubes for a spec")
    p.add_argument("--spec", required=True, help="spec JSON file or built-in name (lightdark, car, quadrotor)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--method", choices=("full", "ce"), default="full",
                   help="full joint synthesis or the certainty-equivalent baseline")
    p.add_argument("--max-iter", type=int, default=None)

    p = sub.add_parser("rollout", parents=common, help="closed-loop Monte Carlo of a synthesized result")
    p.add_argument("--result", required=True, help="result.json from synthesize")
    p.add_argument("--n", type=int, default=50)
    p.add_argument("--mode", choices=("uniform", "extreme"), default="uniform")
    p.add_argument("--out", default=None, help="output directory (default: next to the result)")
    p.add_argument("--open-loop", action="store_true", help="replay the nominal inputs without feedback")

    p = sub.add_parser("report", parents=common, help="summary tables, report.json and figures for a run")
    p.add_argument("--run", required=True, help="run directory with result.json, tubes.csv, rollouts.csv")
    p.add_argument("--baseline", default=None, help="second run directory to compare against")
    p.add_argument("--out", default=None, help="output directory (default: <run>/report)")

    p = sub.add_parser("bench-horizon", parents=common, help="Riccati vs dense oracle over horizons")
    p.add_argument("--horizons", default="10,20,40,80")
    p.add_argument("--runs", type=int, default=5, help="timed runs per solver (median is reported)")
    p.add_argument("--out", required=True)

    p = sub.add_parser("calibrate", parents=common, help="fit a perception-error envelope to residuals")
    p.add_argument("--data", required=True, help="CSV: state coordinates then a column r")
    p.add_argument("--basis", default=None, help='coordinates and degree, e.g. "px,py:3"')
    p.add_argument("--gamma", type=float, default=None)
    p.add_argument("--mu", type=float, default=None)
    p.add_argument("--held-out", default=None, help="second residual CSV for coverage")
    p.add_argument("--out", required=True, help="envelope JSON path")
    return parser


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------


def _out_dir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_synthesize(args) -> int:
    from . import io, scp
    from .model import load_spec, validate_spec

    spec = load_spec(args.spec)
    problems = validate_spec(spec)
    if problems:
        raise SpecError("; ".join(problems))
    out = _out_dir(args.out)
    manifest = io.RunManifest("synthesize", args.seed, io.sha256_json(spec.to_dict()),
                              extra={"spec": str(args.spec), "method": args.method})
    kw = {} if args.max_iter is None else {"max_iter": args.max_iter}
    result = scp.synthesize(spec, **kw) if args.method == "full" else scp.ce_baseline(spec, **kw)
    for path in (io.write_json(out / "result.json", result.to_json()),
                 io.write_tubes_csv(out / "tubes.csv", result),
                 io.write_iterations_csv(out / "iterations.csv", result.iterations)):
        manifest.add(path)
    manifest.extra.update(converged=result.converged, iterations=result.n_iterations,
                          J_traj=result.J_traj, J_tube=result.J_tube)
    manifest.write(out)
    print(f"{args.method}: {result.n_iterations} iterations, converged={result.converged}, "
          f"J_traj={result.J_traj:.6g}, J_tube={result.J_tube:.6g} -> {out}")
    return EXIT_OK


def _load_result(path):
    from . import io, scp

    path = Path(path)
    if path.is_dir():
        path = path / "result.json"
    if not path.is_file():
        raise SpecError(f"result file not found: {path}")
    try:
        return scp.SynthesisResult.from_json(io.read_json(path)), path
    except (KeyError, TypeError, ValueError) as exc:
        raise SpecError(f"{path}: not a synthesis result ({exc})") from exc


def cmd_rollout(args) -> int:
    from . import io
    from .environments import monte_carlo

    result, path = _load_result(args.result)
    out = _out_dir(args.out or path.parent)
    if args.n < 1:
        raise SpecError("--n must be at least 1")
    rep = monte_carlo(result, n=args.n, mode=args.mode, seed=args.seed, threads=args.threads,
                      feedback=not args.open_loop)
    manifest = io.RunManifest("rollout", args.seed, io.sha256_json(result.spec.to_dict()),
                              extra={"result": str(path), "feedback": not args.open_loop})
    summary = rep.to_json()
    summary["feedback"] = not args.open_loop
    for p in (io.write_rollouts_csv(out / "rollouts.csv", result, rep.rollouts),
              io.write_json(out / "report.json", summary)):
        manifest.add(p)
    manifest.write(out)
    print(f"{rep.n} rollouts ({rep.mode}): SR={rep.success_rate:.1%} CVR={rep.violation_rate:.1%} "
          f"containment={rep.containment_rate:.1%} -> {out}")
    return EXIT_OK


def _read_tubes(path, spec):
    """``(nominal, halfwidth, labels)``; arrays are ``(T+1, nx+nu)`` with inputs ``nan`` at ``k = T``."""
    import csv

    n = spec.nx + spec.nu
    nominal = np.full((spec.T + 1, n), np.nan)
    half = np.zeros((spec.T + 1, n))
    labels = [f"x{i}" for i in range(n)]
    with Path(path).open(newline="") as fh:
        for row in csv.DictReader(fh):
            k, i = int(row["k"]), int(row["state_index"])
            nominal[k, i] = float(row["nominal"])
            half[k, i] = float(row["halfwidth"])
            labels[i] = row.get("coord") or labels[i]
    return nominal, half, labels


def _read_rollouts(path, spec):
    """Trajectories ``(n, T+1, nx+nu)`` (inputs ``nan`` at ``k = T``) and per-rollout flags."""
    from . import io

    header, body = io.read_csv(path)
    if tuple(header) != io.ROLLOUT_HEADER:
        raise SpecError(f"{path}: unexpected columns {header}")
    n_roll = int(body[:, 0].max()) + 1 if body.size else 0
    ids, k, idx = body[:, 0].astype(int), body[:, 1].astype(int), body[:, 2].astype(int)
    traj = np.full((n_roll, spec.T + 1, spec.nx + spec.nu), np.nan)
    traj[ids, k, idx] = body[:, 3]

    def per_rollout(col, reduce):
        out = np.zeros(n_roll, bool)
        flag = body[:, header.index(col)] > 0.5
        for r in range(n_roll):
            out[r] = reduce(flag[ids == r])
        return out

    flags = {"contained": per_rollout("contained", np.all), "violated": per_rollout("violated", np.any),
             "terminal_ok": per_rollout("terminal_ok", np.all), "diverged": per_rollout("diverged", np.any)}
    return traj, flags


def _run_summary(run: Path):

    result, _ = _load_result(run)
    spec = result.spec
    nominal, half, labels = _read_tubes(run / "tubes.csv", spec)
    traj = flags = None
    if (run / "rollouts.csv").is_file():
        traj, flags = _read_rollouts(run / "rollouts.csv", spec)
    summary = {
        "method": result.method,
        "converged": result.converged,
        "iterations": result.n_iterations,
        "J_traj": result.J_traj,
        "J_tube": result.J_tube,
        "terminal_halfwidths": half[-1, :spec.nx].tolist(),
        "mean_envelope": float(np.mean([spec.observation.noise_scale(z) for z in nominal[:, :spec.nx]])),
        "min_tightened_slack": result.report.min_slack,
    }
    if flags is not None:
        diverged = flags["diverged"]
        violated = flags["violated"] | diverged
        success = flags["terminal_ok"] & ~violated
        contained = flags["contained"] & ~diverged
        summary.update(n_rollouts=int(traj.shape[0]), SR=float(success.mean()), CVR=float(violated.mean()),
                       containment=float(contained.mean()))
    return result, nominal, half, labels, traj, summary


def cmd_report(args) -> int:
    from . import io, plotting

    run = Path(args.run)
    if not (run / "result.json").is_file():
        raise SpecError(f"no result.json in {run}")
    out = _out_dir(args.out or run / "report")
    result, nominal, half, labels, traj, summary = _run_summary(run)
    spec = result.spec
    base = None
    if args.baseline:
        bres, bnom, bhalf, _, _, bsum = _run_summary(Path(args.baseline))
        if bres.spec.T != spec.T or bres.spec.nx != spec.nx:
            raise SpecError("baseline run has a different horizon or state dimension")
        base = (bnom, bhalf)
        summary["baseline"] = bsum
        summary["terminal_halfwidths_smaller"] = bool(np.all(half[-1, :spec.nx] < bhalf[-1, :spec.nx]))
        summary["mean_envelope_smaller"] = bool(summary["mean_envelope"] < bsum["mean_envelope"])

    manifest = io.RunManifest("report", args.seed, io.sha256_json(spec.to_dict()),
                              extra={"run": str(run), "baseline": args.baseline})
    k = np.arange(spec.T + 1)
    # per-figure tables: tube bands with rollout extremes, and the envelope along the nominal
    rows = []
    for t in k:
        for i, name in enumerate(labels):
            if np.isnan(nominal[t, i]):
                continue
            lo_r = hi_r = np.nan
            if traj is not None:
                lo_r, hi_r = float(np.nanmin(traj[:, t, i])), float(np.nanmax(traj[:, t, i]))
            row = [t, name, nominal[t, i], nominal[t, i] - half[t, i], nominal[t, i] + half[t, i], lo_r, hi_r]
            if base is not None:
                row += [base[0][t, i] - base[1][t, i], base[0][t, i] + base[1][t, i]]
            rows.append(row)
    header = ["k", "coord", "nominal", "lower", "upper", "rollout_min", "rollout_max"]
    if base is not None:
        header += ["baseline_lower", "baseline_upper"]
    manifest.add(io.write_csv(out / "fig_tubes.csv", header, rows))
    env_rows = [[t, spec.observation.noise_scale(nominal[t, :spec.nx])]
                + ([spec.observation.noise_scale(base[0][t, :spec.nx])] if base is not None else [])
                for t in k]
    manifest.add(io.write_csv(out / "fig_envelope.csv",
                              ["k", "b_nominal"] + (["b_baseline"] if base is not None else []), env_rows))
    manifest.add(io.write_json(out / "report.json", summary))

    states = slice(0, spec.nx)
    manifest.add(plotting.plot_tubes(out / "tubes.png", k, nominal[:, states], half[:, states], labels[:spec.nx],
                                     None if traj is None else traj[:, :, states],
                                     None if base is None else (base[0][:, states], base[1][:, states])))
    if spec.nx >= 2:
        env = spec.observation

        def env_grid(gx, gy):
            pts = np.repeat(spec.x0[None], gx.size, axis=0)
            pts[:, 0], pts[:, 1] = gx.ravel(), gy.ravel()
            return np.array([env.noise_scale(p) for p in pts]).reshape(gx.shape)

        xy = nominal[:, :2]
        pad = 0.5
        bounds = ((xy[:, 0].min() - pad, xy[:, 0].max() + pad), (xy[:, 1].min() - pad, xy[:, 1].max() + pad))
        obstacles = [(o.center[:2], o.radius) for o in spec.constraints.obstacles if list(o.indices[:2]) == [0, 1]]
        manifest.add(plotting.plot_plane(out / "plane.png", nominal[:, :spec.nx], half[:, :spec.nx],
                                         None if traj is None else traj[:, :, :2], env_grid, bounds, obstacles,
                                         None if base is None else base[0][:, :2], labels[:2]))
    its = result.iterations
    if its:
        manifest.add(plotting.plot_iterations(out / "iterations.png", [r.iteration for r in its],
                                              [r.step_norm for r in its], [r.violation for r in its]))
    manifest.write(out)
    line = f"report -> {out / 'report.json'}"
    if "SR" in summary:
        line += f"  SR={summary['SR']:.1%} CVR={summary['CVR']:.1%} containment={summary['containment']:.1%}"
    print(line)
    return EXIT_OK


def cmd_bench_horizon(args) -> int:
    from . import bench, io, plotting

    try:
        horizons = [int(t) for t in args.horizons.split(",") if t.strip()]
    except ValueError:
        raise SpecError(f"--horizons must be a comma-separated list of integers, got {args.horizons!r}") from None
    if not horizons or min(horizons) < 1:
        raise SpecError("horizons must be positive")
    out = _out_dir(args.out)
    records = bench.horizon_sweep(args.seed, horizons, runs=args.runs)
    manifest = io.RunManifest("bench-horizon", args.seed, extra={"horizons": horizons})
    path = out / "scaling.csv"
    bench.write_scaling_csv(path, records)
    manifest.add(path)
    manifest.add(plotting.plot_scaling(out / "scaling.png", [r.T for r in records],
                                       [r.riccati_wall_ms for r in records], [r.oracle_wall_ms for r in records]))
    s_r = bench.loglog_slope(records, "riccati_wall_ms")
    s_o = bench.loglog_slope(records, "oracle_wall_ms")
    manifest.extra.update(riccati_slope=s_r, oracle_slope=s_o)
    manifest.write(out)
    for r in records:
        print(f"T={r.T:4d}  riccati {r.riccati_wall_ms:10.3f} ms  oracle {r.oracle_wall_ms:10.3f} ms  "
              f"rel.err {r.cost_rel_err:.2e} {r.note}")
    print(f"log-log slopes: riccati {s_r if s_r is None else round(s_r, 3)}, "
          f"oracle {s_o if s_o is None else round(s_o, 3)}")
    return EXIT_OK


def cmd_calibrate(args) -> int:
    from . import calibration as cal
    from . import io

    data = cal.read_residuals(args.data)
    text = args.basis or cal.DEFAULT_BASIS["car"]
    basis = cal.parse_basis(text, data.names)
    gamma = cal.DEFAULT_GAMMA if args.gamma is None else args.gamma
    mu = cal.DEFAULT_MU if args.mu is None else args.mu
    fit = cal.fit_envelope(data, basis, gamma, mu)
    doc = fit.to_json()
    doc["basis"] = text
    doc["train_coverage"] = cal.coverage(fit, data)
    if args.held_out:
        doc["held_out_coverage"] = cal.coverage(fit, cal.read_residuals(args.held_out))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    io.write_json(out, doc)
    msg = f"envelope over {', '.join(basis.names)} (degree {basis.degree}): train coverage {doc['train_coverage']:.1%}"
    if "held_out_coverage" in doc:
        msg += f", held-out {doc['held_out_coverage']:.1%}"
    print(f"{msg} -> {out}")
    return EXIT_OK


COMMANDS = {
    "synthesize": cmd_synthesize,
    "rollout": cmd_rollout,
    "report": cmd_report,
    "bench-horizon": cmd_bench_horizon,
    "calibrate": cmd_calibrate,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:          # --help / --version exit 0, usage errors exit 1
        return int(exc.code or 0)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_USER
    if args.threads is not None:
        if args.threads < 1:
            print("sls-synth: error: --threads must be at least 1", file=sys.stderr)
            return EXIT_USER
        os.environ["SLS_SYNTH_THREADS"] = str(args.threads)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UserError as exc:
        print(f"sls-synth: error: {exc}", file=sys.stderr)
        return EXIT_USER
    except NumericalError as exc:
        print(f"sls-synth: numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
