"""
Command line: ``nmrlearn <command> [--config PATH] [--seed N] [--threads N] [--out DIR]``.

Commands
--------
synth         synthesize correlator signals for a spin system
fit           fit a problem written by ``synth`` to a signal file
clusters      threshold clusters of a geometry and coupling histograms
learnability  multifractal dimension and Hessian spectra over an alpha sweep
resources     closed-form query and step-count estimates
convert-pdb   PDB coordinates to a geometry table

Exit status is 0 on success, 1 on a numerical failure and 2 on bad input;
failures print one JSON object to stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__
from .config import load_config
from .errors import DataError, InputError, NumericalError
from .manifest import OutputWriter, RunManifest, read_csv_rows
from .nmrmodel import (
    bundled_six_spin,
    cluster_report,
    coupling_graph,
    pdb_to_sites,
    read_geometry,
    system_from_config,
    write_geometry,
)

EXIT_OK, EXIT_NUMERICAL, EXIT_INPUT = 0, 1, 2


# helpers --------------------------------------------------------------------
def _sites(system_cfg, manifest: RunManifest):
    if system_cfg.geometry_path is None:
        return bundled_six_spin()
    path = Path(system_cfg.geometry_path)
    if not path.is_file():
        raise DataError(f"geometry file not found: {path}")
    manifest.add_input("geometry", path)
    return read_geometry(path)


def _system(system_cfg, manifest):
    return system_from_config(_sites(system_cfg, manifest), system_cfg.system_kwargs())


def _require_file(path, what: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise DataError(f"{what} not found: {p}")
    return p


def _dump(cfg) -> dict:
    return cfg.model_dump(mode="json")


# commands -------------------------------------------------------------------
def cmd_synth(args, cfg, manifest: RunManifest, out: OutputWriter) -> None:
    from .demo import learning_problem
    from .learner.experiments import synthesize_signal
    from .learner.quadrature import QuadratureRule

    system = _system(cfg.system, manifest)
    prob = learning_problem(system, cfg.times.grid(), cfg.free_pairs, tuple(cfg.axes), cfg.pairs, cfg.sigma)
    noise = (cfg.sigma_inject, args.seed) if cfg.sigma_inject > 0 else None
    signals = synthesize_signal(prob.truth, prob.experiments, noise=noise)
    rows = [
        (ex.id, float(t), float(v), float(sg))
        for ex in prob.experiments
        for t, v, sg in zip(ex.times, signals[ex.id], ex.sigma)
    ]
    out.csv("signals.csv", ("experiment_id", "t_ms", "value", "sigma"), rows)
    out.json(
        "problem.json",
        {
            "model": prob.start.to_dict(),
            "experiments": [ex.to_dict() for ex in prob.experiments],
            "free_pairs": prob.free_pairs,
            "quadrature": QuadratureRule().to_dict(),
            "seed": args.seed,
        },
    )
    out.json("truth.json", {"model": prob.truth.to_dict(), "provenance": signals.provenance})


def _read_signals(path):
    from .learner.experiments import SignalSet

    vals: dict = {}
    for row in read_csv_rows(path):
        try:
            vals.setdefault(row["experiment_id"], []).append(float(row["value"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"{path}: bad signal row {row}") from exc
    return SignalSet(vals, {"source": str(path)})


def cmd_fit(args, cfg, manifest: RunManifest, out: OutputWriter) -> None:
    from .learner.experiments import ExperimentSpec
    from .learner.fit import FitOptions, fit, staged_fit
    from .learner.model import HamiltonianModel
    from .learner.quadrature import QuadratureRule

    if args.problem is None or args.signals is None:
        raise DataError("fit needs --problem and --signals")
    problem_path = _require_file(args.problem, "problem file")
    signals_path = _require_file(args.signals, "signal file")
    manifest.add_input("problem", problem_path)
    manifest.add_input("signals", signals_path)
    try:
        problem = json.loads(problem_path.read_text(encoding="utf-8"))
        model = HamiltonianModel.from_dict(problem["model"])
        experiments = [ExperimentSpec.from_dict(e) for e in problem["experiments"]]
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise DataError(f"{problem_path}: not a problem file ({exc})") from exc
    truth = None
    if args.truth is not None:
        truth_path = _require_file(args.truth, "truth file")
        manifest.add_input("truth", truth_path)
        truth = HamiltonianModel.from_dict(json.loads(truth_path.read_text(encoding="utf-8"))["model"]).params
    signals = _read_signals(signals_path)
    q = cfg.quadrature
    options = FitOptions(
        algorithm=cfg.algorithm,
        g_tol=cfg.g_tol,
        f_tol=cfg.f_tol,
        max_iter=cfg.max_iter,
        quadrature=QuadratureRule(q.scheme, q.L, q.tol, q.L_max),
        query_noise=cfg.query_noise,
        seed=args.seed,
        workers=args.threads,
    )
    if cfg.staged:
        report = staged_fit(model, experiments, signals, cfg.delta_prior_khz, cfg.schedule_c, options)
    else:
        report = fit(model, experiments, signals, options)
    body = report.to_dict()
    if truth is not None:
        err = np.abs(report.params_hat - truth)[model.free_mask]
        body["mean_abs_error_khz"] = float(err.mean()) if err.size else 0.0
    out.json("fit_report.json", body)
    free = model.free_indices
    header = ["iteration", "cost", "grad_norm"]
    if truth is not None:
        header += [f"abs_error[{model.labels[i]}]" for i in free]
        errs = report.errors_trace(truth)[:, free]
    rows = []
    for k, (c, g) in enumerate(zip(report.cost_trace, report.grad_norm_trace)):
        row = [k, float(c), float(g)]
        if truth is not None:
            row += [float(e) for e in errs[k]]
        rows.append(row)
    out.csv("convergence.csv", header, rows)


def cmd_clusters(args, cfg, manifest: RunManifest, out: OutputWriter) -> None:
    system = _system(cfg.system, manifest)
    graph = coupling_graph(system, cfg.weight_mode, cfg.min_weight_khz)
    report = cluster_report(graph, cfg.thresholds_khz, cfg.bins)
    out.json("clusters.json", report)
    rows = []
    for res in report["results"]:
        lc = res.get("largest_cluster")
        if lc is None:
            continue
        edges = lc["bin_edges_khz"]
        for b in range(len(edges) - 1):
            rows.append((res["v_min_khz"], edges[b], edges[b + 1], lc["internal_counts"][b], lc["boundary_counts"][b]))
    out.csv("histogram.csv", ("v_min_khz", "bin_lo_khz", "bin_hi_khz", "internal_count", "boundary_count"), rows)


def cmd_learnability(args, cfg, manifest: RunManifest, out: OutputWriter) -> None:
    from .learnability import ScanSettings, learnability_scan, multifractal_dimension, record_to_dict
    from .synthetic import synthetic_ensemble

    summary: dict = {"seed": args.seed}
    if cfg.entropy:
        ensemble = synthetic_ensemble(cfg.sizes, cfg.per_size, args.seed)
        fits, ent_rows = [], []
        for a in cfg.alphas:
            f, recs = multifractal_dimension(ensemble, a)
            fits.append(f)
            ent_rows += [(r.alpha, r.cluster_id, r.n_spins, r.filling, r.mean_S1, r.n_states_averaged) for r in recs]
        out.csv(
            "multifractal.csv",
            ("alpha", "D1", "slope", "ergodic_slope", "intercept", "n_clusters", "rms_residual"),
            [(f.alpha, f.D1, f.slope, f.ergodic_slope, f.intercept, f.n_clusters, f.residual) for f in fits],
        )
        out.csv("entropies.csv", ("alpha", "cluster_id", "n_spins", "filling", "mean_S1", "n_states"), ent_rows)
        summary["multifractal"] = [record_to_dict(f) for f in fits]
    if cfg.hessian:
        settings = ScanSettings(cfg.n_times, cfg.t_end_ms, tuple(cfg.axes), cfg.sigma, cfg.cap)
        ensemble = synthetic_ensemble(cfg.hessian_sizes, cfg.hessian_per_size, args.seed)
        scan = learnability_scan(ensemble, cfg.hessian_alphas, settings, workers=args.threads)
        typical = scan.typical()
        out.csv(
            "hessian.csv",
            ("alpha", "n_spins", "n_clusters", "typical_lambda_max", "typical_top_participation"),
            [(r["alpha"], r["n_spins"], r["n_clusters"], r["typical_lambda_max"], r["typical_top_participation"]) for r in typical],
        )
        out.csv(
            "hessian_records.csv",
            ("alpha", "cluster_id", "n_spins", "lambda_max", "top_participation"),
            [(r.alpha, r.cluster_id, r.n_spins, r.lambda_max, r.top_participation) for r in scan.records],
        )
        summary["hessian_typical"] = typical
        summary["skipped"] = scan.skipped
    out.json("learnability.json", summary)


def cmd_resources(args, cfg, manifest: RunManifest, out: OutputWriter) -> None:
    from .resources import ExperimentBudget, FourierComponent, FTParameters, estimate_report

    budget = ExperimentBudget(cfg.epsilon, cfg.delta_fail, cfg.sigma, cfg.n_x, tuple(cfg.times_ms), cfg.o_norm, cfg.T_ms)
    ft = None
    eta = None
    if cfg.ft is not None:
        f = cfg.ft
        ft = FTParameters(
            f.n,
            f.n_d,
            f.n_omega,
            f.lambda_ind_khz,
            f.lambda_total_khz,
            f.lambda_int_khz,
            tuple(FourierComponent(*c) for c in f.fourier),
            f.trotter_exponent,
        )
        eta = f.eta
    out.json("resources.json", estimate_report(budget, ft, eta, cfg.sampling, cfg.dt_ms))


def cmd_convert_pdb(args, cfg, manifest: RunManifest, out: OutputWriter) -> None:
    path = _require_file(args.pdb, "PDB file")
    manifest.add_input("pdb", path)
    sites = pdb_to_sites(path.read_text(encoding="utf-8", errors="replace"), tuple(args.elements), args.model)
    out.text("geometry.tsv", write_geometry(sites, f"manifest: {manifest.manifest_id}; from {path.name} model {args.model}"))


COMMANDS = {
    "synth": cmd_synth,
    "fit": cmd_fit,
    "clusters": cmd_clusters,
    "learnability": cmd_learnability,
    "resources": cmd_resources,
    "convert-pdb": cmd_convert_pdb,
}


# parser ---------------------------------------------------------------------
def _u64(text: str) -> int:
    v = int(text)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config for the command")
    common.add_argument("--seed", type=_u64, default=0, help="root seed for all randomness (default 0)")
    common.add_argument("--threads", type=_positive_int, default=1, help="worker threads (default 1)")
    common.add_argument("--out", default=".", help="output directory (default: current)")

    parser = argparse.ArgumentParser(prog="nmrlearn", description="Spin Hamiltonian learning from NMR-style signals.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("synth", parents=[common], help="synthesize signals")
    p = sub.add_parser("fit", parents=[common], help="fit couplings to signals")
    p.add_argument("--problem", help="problem.json from synth")
    p.add_argument("--signals", help="signals CSV")
    p.add_argument("--truth", help="truth.json; adds per-parameter errors to the convergence CSV")
    sub.add_parser("clusters", parents=[common], help="coupling-graph clusters")
    sub.add_parser("learnability", parents=[common], help="alpha sweep of learnability diagnostics")
    sub.add_parser("resources", parents=[common], help="resource estimates")
    p = sub.add_parser("convert-pdb", parents=[common], help="PDB to geometry table")
    p.add_argument("pdb", help="PDB file")
    p.add_argument("--elements", nargs="+", default=["H"], help="elements to keep (default H)")
    p.add_argument("--model", type=int, default=1, help="PDB model number (default 1)")
    return parser


def _fail(code: int, exc: BaseException) -> int:
    print(json.dumps({"error": type(exc).__name__, "message": str(exc), "exit_code": code}), file=sys.stderr)
    return code


def run(args) -> int:
    cfg = None
    if args.command in ("synth", "fit", "clusters", "learnability", "resources"):
        cfg = load_config(args.command, args.config)
    config_dump = _dump(cfg) if cfg is not None else {"elements": list(getattr(args, "elements", [])), "model": getattr(args, "model", None)}
    manifest = RunManifest(args.command, config_dump, args.seed)
    if args.config is not None:
        manifest.add_input("config", args.config)
    out = OutputWriter(args.out, manifest)
    started = time.time()
    # BLAS stays single-threaded so results do not depend on --threads
    with threadpool_limits(limits=1):
        COMMANDS[args.command](args, cfg, manifest, out)
    out.finish()
    log = {"manifest_id": manifest.manifest_id, "started_unix": started, "finished_unix": time.time(), "threads": args.threads}
    (Path(args.out) / "run.log").write_text(json.dumps(log) + "\n", encoding="utf-8")
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return run(args)
    except InputError as exc:
        return _fail(EXIT_INPUT, exc)
    except (FileNotFoundError, PermissionError, IsADirectoryError) as exc:
        return _fail(EXIT_INPUT, exc)
    except (NumericalError, ArithmeticError, np.linalg.LinAlgError) as exc:
        return _fail(EXIT_NUMERICAL, exc)


if __name__ == "__main__":
    sys.exit(main())
