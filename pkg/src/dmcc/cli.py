"""Command-line driver: ``dmcc {topology,run,sweep,stability,predict,report}``."""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import (build_global_model, estimate_kernel_expectation, l1_kernel_expectation,
                       mean_stability_bound, pilot_step_moments, regressor_autocorrelation,
                       transient_msd_model)
from .experiment import (ConfigError, UnknownParameterError, build_topology, load_config,
                         parameter_sweep, run_monte_carlo, steady_state_msd, to_db, true_weights, write_curves_csv,
                         write_manifest, write_steady_csv, write_sweep_csv)
from .network import write_topology_csv
from .plotting import PlotSchemaError, emit_plot, emit_topology_plot
from .signal import MeasurementModel, generate_stream

log = logging.getLogger("dmcc")

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_IO, EXIT_MISSING_CONFIG, EXIT_UNKNOWN_PARAM = 0, 2, 3, 4, 5, 6


class CliFailure(Exception):
    def __init__(self, code, message):
        super().__init__(message)
        self.code = code


def _parser():
    p = argparse.ArgumentParser(prog="dmcc", description="Diffusion MCC simulations and analysis.")
    p.add_argument("--version", action="version", version=f"dmcc {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, needs_config=True):
        sp.add_argument("--config", required=needs_config, help="experiment config (JSON)")
        sp.add_argument("--out", default="out", help="output directory (created if absent)")
        sp.add_argument("--seed", type=int, help="override the master seed")
        sp.add_argument("--algo", action="append", help="only run this algorithm (repeatable)")
        sp.add_argument("--format", choices=("csv", "svg", "both"), default="both")
        sp.add_argument("-v", "--verbose", action="store_true")
        return sp

    common(sub.add_parser("topology", help="generate and export the network topology"))
    common(sub.add_parser("run", help="Monte Carlo run: MSD curves and per-node steady state"))
    sw = common(sub.add_parser("sweep", help="steady-state MSD over a parameter grid"))
    sw.add_argument("--grid", action="append", default=[], metavar="NAME=V1,V2,...",
                    help="grid axis; overrides the config's sweep entry of the same name")
    common(sub.add_parser("stability", help="mean-stability step-size bounds per node"))
    pr = common(sub.add_parser("predict", help="transient MSD model overlaid on a Monte Carlo run"))
    pr.add_argument("--pilot-runs", type=int, help="pilot runs for the step moments (default: run count)")
    pr.add_argument("--estimator", choices=("linearized", "plain"), default="linearized")
    common(sub.add_parser("report", help="re-render SVG plots from CSVs in --out"), needs_config=False)
    return p


def _load(args):
    path = Path(args.config)
    if not path.is_file():
        raise CliFailure(EXIT_MISSING_CONFIG, f"config file not found: {path}")
    try:
        cfg = load_config(path)
    except UnknownParameterError as exc:
        raise CliFailure(EXIT_UNKNOWN_PARAM, str(exc)) from None
    except ConfigError as exc:
        raise CliFailure(EXIT_CONFIG, str(exc)) from None
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    if args.algo:
        try:
            cfg = cfg.select(args.algo)
        except ConfigError as exc:
            raise CliFailure(EXIT_CONFIG, str(exc)) from None
    return cfg


def _outdir(args) -> Path:
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write-test"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise CliFailure(EXIT_IO, f"cannot write to output directory {out}: {exc}") from None
    return out


class _Outputs:
    """Routes CSVs to the output dir or a scratch dir depending on --format."""

    def __init__(self, out: Path, fmt: str):
        self.out, self.fmt = out, fmt
        self._tmp = tempfile.TemporaryDirectory() if fmt == "svg" else None
        self.csv_dir = Path(self._tmp.name) if self._tmp else out

    def csv(self, name):
        return self.csv_dir / name

    def plot(self, name):
        if self.fmt in ("svg", "both"):
            emit_plot(self.csv(name), self.out / Path(name).with_suffix(".svg"))

    def close(self):
        if self._tmp:
            self._tmp.cleanup()


def cmd_topology(args):
    cfg = _load(args)
    out = _outdir(args)
    topo = build_topology(cfg.topology)
    if args.format in ("csv", "both"):
        write_topology_csv(topo, out / "topology.csv")
    if args.format in ("svg", "both"):
        emit_topology_plot(topo, out / "topology.svg")
    deg = topo.degrees
    print(f"topology: {topo.n} nodes, {len(topo.edges())} links, degree {deg.min()}..{deg.max()} "
          f"(mean {deg.mean():.2f}), radius {topo.radius}")
    write_manifest(cfg, out / "manifest.json")
    return EXIT_OK


def cmd_run(args):
    cfg = _load(args)
    out = _outdir(args)
    res = run_monte_carlo(cfg)
    io = _Outputs(out, args.format)
    try:
        write_curves_csv(res, io.csv("curves.csv"))
        write_steady_csv(res, io.csv("steady_state.csv"))
        io.plot("curves.csv")
        io.plot("steady_state.csv")
    finally:
        io.close()
    diverged = {k: [list(x) for x in v] for k, v in res.diverged.items()}
    write_manifest(cfg, out / "manifest.json", res.seeds, {"diverged": diverged})
    for name in res.names:
        print(f"{name}: steady-state MSD {res.steady_db(name):.2f} dB"
              + (f" ({len(res.diverged[name])}/{res.runs} runs diverged)" if res.diverged[name] else ""))
    if res.all_diverged():
        raise CliFailure(EXIT_DIVERGED, "every algorithm diverged in every run")
    return EXIT_OK


def _parse_grid(items):
    grid = {}
    for item in items:
        name, sep, values = item.partition("=")
        if not sep or not values:
            raise CliFailure(EXIT_CONFIG, f"bad --grid entry {item!r}; expected NAME=V1,V2,...")
        try:
            grid[name.strip()] = [json.loads(v) for v in values.split(",")]
        except json.JSONDecodeError:
            raise CliFailure(EXIT_CONFIG, f"bad value in --grid entry {item!r}") from None
    return grid


def cmd_sweep(args):
    cfg = _load(args)
    grid = dict(cfg.sweep)
    grid.update(_parse_grid(args.grid))
    out = _outdir(args)
    try:
        sw = parameter_sweep(cfg, grid)
    except UnknownParameterError as exc:
        raise CliFailure(EXIT_UNKNOWN_PARAM, str(exc)) from None
    except (ValueError, TypeError) as exc:
        raise CliFailure(EXIT_CONFIG, f"invalid sweep value: {exc}") from None
    io = _Outputs(out, args.format)
    try:
        write_sweep_csv(sw, io.csv("sweep.csv"))
        io.plot("sweep.csv")
    finally:
        io.close()
    write_manifest(cfg, out / "manifest.json", extra={"grid": grid})
    for values, algo, db in sw.rows:
        print(", ".join(f"{k}={v}" for k, v in zip(sw.keys, values)) + f"  {algo}: {db:.2f} dB")
    return EXIT_OK


def cmd_stability(args):
    cfg = _load(args)
    out = _outdir(args)
    topo = build_topology(cfg.topology)
    noise = cfg.noise.build()
    w_o = true_weights(cfg.model)
    model = MeasurementModel(w_o, np.asarray(cfg.model.regressor_variance, dtype=float))
    tau = float(np.abs(w_o).sum())
    rows = []
    for spec in cfg.algorithms:
        if spec.criterion not in ("mcc", "lms"):
            log.info("skipping %s: bound defined for mcc and lms only", spec.name)
            continue
        algo = spec.build(topo)
        for k in range(topo.n):
            r_k = model.node_variance(k) * np.eye(model.m)
            lam = float(np.max(np.linalg.eigvalsh(r_k)))
            eta = algo.param("eta", k)
            if spec.criterion == "lms":
                g_est = g_l1 = 1.0
                worst = mean_stability_bound(r_k, 1.0, 1.0)
            else:
                sigma = algo.param("sigma", k)
                g_est = estimate_kernel_expectation(noise, sigma, 100_000, seed=cfg.run.seed)
                g_l1 = l1_kernel_expectation(tau, sigma, model, noise, k, 100_000, seed=cfg.run.seed)
                worst = mean_stability_bound(r_k, sigma)
            bound = mean_stability_bound(r_k, 1.0, g_est)
            rows.append([k, spec.name, lam, g_est, bound, worst, mean_stability_bound(r_k, 1.0, g_l1), eta,
                         int(eta < worst)])
    if not rows:
        raise CliFailure(EXIT_CONFIG, "no mcc or lms algorithm in config")
    if args.format in ("csv", "both"):
        with open(out / "stability.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["node", "algo", "lambda_max", "expected_gamma", "eta_max", "eta_max_worst",
                        "eta_max_l1", "eta", "within_worst_bound"])
            for r in rows:
                w.writerow(r[:2] + [f"{x:.6g}" for x in r[2:8]] + [r[8]])
    for name in dict.fromkeys(r[1] for r in rows):
        sel = [r for r in rows if r[1] == name]
        print(f"{name}: eta={sel[0][7]:g}, eta_max (estimated E[G]) >= {min(r[4] for r in sel):.4g}, "
              f"worst case {min(r[5] for r in sel):.4g}, l1 route {min(r[6] for r in sel):.4g}, "
              f"within worst-case bound at {sum(r[8] for r in sel)}/{len(sel)} nodes")
    write_manifest(cfg, out / "manifest.json")
    return EXIT_OK


def cmd_predict(args):
    cfg = _load(args)
    if cfg.noise.kind != "gaussian":
        raise CliFailure(EXIT_CONFIG, "predict needs Gaussian measurement noise (finite variance)")
    candidates = [a for a in cfg.algorithms if a.mode == "atc" and a.criterion in ("mcc", "lms")]
    if not candidates:
        raise CliFailure(EXIT_CONFIG, "predict needs an ATC algorithm with criterion mcc or lms")
    spec = candidates[0]
    cfg = cfg.select([spec.name])
    out = _outdir(args)
    topo = build_topology(cfg.topology)
    algo = spec.build(topo)
    rs = cfg.run
    w_o = true_weights(cfg.model)
    model = MeasurementModel(w_o, np.asarray(cfg.model.regressor_variance, dtype=float))
    noise = cfg.noise.build()
    pilot_runs = args.pilot_runs or rs.monte_carlo_runs
    # pilot streams use run indices after the evaluation runs so the two never share data
    er, er2 = pilot_step_moments(algo, model, noise, topo.n, rs.iterations, pilot_runs, rs.seed,
                                 estimator=args.estimator, first_run=rs.monte_carlo_runs)
    variances = [model.node_variance(k) for k in range(topo.n)]
    g = build_global_model(algo.post if algo.post is not None else np.eye(topo.n),
                           regressor_autocorrelation(variances, model.m), er[0],
                           [noise.variance] * topo.n)
    pred = transient_msd_model(g, np.tile(w_o, topo.n), er, er2)
    sim = run_monte_carlo(cfg)
    io = _Outputs(out, args.format)
    try:
        with open(io.csv("predict.csv"), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["iteration", "predicted_msd_db", "simulated_msd_db"])
            sim_db = sim.msd_db(spec.name)
            for i in range(rs.iterations):
                w.writerow([i + 1, f"{pred.msd_db[i + 1]:.6f}", f"{sim_db[i]:.6f}"])
        io.plot("predict.csv")
    finally:
        io.close()
    gap = np.abs(pred.msd_db[1:] - to_db(sim.msd[spec.name]))
    write_manifest(cfg, out / "manifest.json", sim.seeds,
                   {"prediction": {"algorithm": spec.name, "method": pred.method, "pilot_runs": pilot_runs,
                                   "estimator": args.estimator,
                                   "final_spectral_radius": round(pred.spectral_radius, 12)}})
    print(f"{spec.name}: predicted steady state {steady_state_msd(pred.msd[1:], rs.steady_window):.2f} dB, simulated "
          f"{sim.steady_db(spec.name):.2f} dB, max gap {gap.max():.2f} dB "
          f"(after iteration 50: {gap[50:].max() if gap.size > 50 else float('nan'):.2f} dB), "
          f"spectral radius of F {pred.spectral_radius:.6f}")
    return EXIT_OK


def cmd_report(args):
    out = Path(args.out)
    if not out.is_dir():
        raise CliFailure(EXIT_IO, f"output directory not found: {out}")
    done = []
    for name in ("curves.csv", "steady_state.csv", "sweep.csv", "predict.csv"):
        if (out / name).is_file():
            try:
                done.append(emit_plot(out / name))
            except PlotSchemaError as exc:
                raise CliFailure(EXIT_CONFIG, str(exc)) from None
    if not done:
        raise CliFailure(EXIT_IO, f"no result CSVs found in {out}")
    for p in done:
        print(f"wrote {p}")
    return EXIT_OK


COMMANDS = {"topology": cmd_topology, "run": cmd_run, "sweep": cmd_sweep, "stability": cmd_stability,
            "predict": cmd_predict, "report": cmd_report}


def dispatch(args) -> int:
    try:
        return COMMANDS[args.command](args)
    except CliFailure as exc:
        print(f"dmcc: error: {exc}", file=sys.stderr)
        return exc.code
    except OSError as exc:
        print(f"dmcc: error: {exc}", file=sys.stderr)
        return EXIT_IO


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return dispatch(args)


if __name__ == "__main__":
    sys.exit(main())
