"""Command-line front end: lambda, flow, stability and verify.

Exit codes:
  0  success
  2  invalid input (geometry, config, or a non-soliton base point)
  3  solver failure (eigensolver, Poisson solve, inconsistent data)
  4  flow breakdown (metric positivity lost or step-size underflow); last good state dumped
  5  a checked property failed (lambda monotonicity, verification suite)
"""

import argparse
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, io
from .curvature import soliton_residual
from .errors import ConsistencyError, InputError, PreconditionError, SolverError
from .flow import FlowConfig, integrate
from .spectral import compute_lambda, lambda_identity_residual, rayleigh_quotient
from .stability import stability_verdict

EXIT_OK, EXIT_INPUT, EXIT_SOLVER, EXIT_BREAKDOWN, EXIT_CHECK = 0, 2, 3, 4, 5

log = logging.getLogger("grflab")


def _emit(obj, out_dir, name):
    text = io.dumps(obj)
    if out_dir:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        (Path(out_dir) / name).write_text(text + "\n")
    print(text)


def _golden_entry(path):
    """Stored oracle value for a shipped fixture with identical content, if any."""
    gold_path = io.fixture_path("golden.json")
    if not gold_path.exists():
        return None
    gold = io.read_json(gold_path)
    entry = gold.get(Path(path).name)
    if entry and entry.get("sha256") == io.sha256_file(path):
        return entry
    return None


def cmd_lambda(args):
    state = io.load_geometry(args.geometry)
    res = compute_lambda(state)
    f = np.asarray(res.f, dtype=float)
    report = {"lambda": res.lam,
              "f_stats": {"min": float(np.min(f)), "max": float(np.max(f)), "mean": float(np.mean(f))},
              "residuals": {"eigen": res.solver_info.get("residual", 0.0),
                            "rayleigh": abs(rayleigh_quotient(state, res.omega) - res.lam),
                            "identity": lambda_identity_residual(state, res)},
              "solver": res.solver_info}
    entry = _golden_entry(args.geometry)
    if entry is not None:
        report["golden"] = {"lambda": entry["lambda"], "oracle": entry["oracle"],
                            "abs_diff": abs(res.lam - entry["lambda"])}
    _emit(report, args.out, "lambda.json")
    return EXIT_OK


def _load_config(path):
    if path is None:
        return FlowConfig()
    return FlowConfig.from_dict(io.read_json(path))


def cmd_flow(args):
    state = io.load_geometry(args.geometry)
    cfg = _load_config(args.config)
    t0 = time.perf_counter()
    traj = integrate(state, cfg)
    wall = time.perf_counter() - t0
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    io.write_csv(out / "trajectory.csv", ["t", "lambda", "grad_norm_sq", "min_eig_g", "dt"], traj.rows())
    summary = {"reason": traj.reason, "stationary": traj.stationary,
               "steps": traj.step_stats["accepted"], "rejected": traj.step_stats["rejected"],
               "final_lambda": traj.lambdas[-1], "final_residual": traj.residuals[-1],
               "monotone_violations": traj.monotone_violations,
               "empirical_rate": traj.empirical_rate()}
    man = io.manifest("flow", cfg.to_dict(), [args.geometry, args.config], args.seed, wall)
    man["summary"] = summary
    io.write_json(out / "manifest.json", man)
    print(io.dumps(summary))
    if traj.reason.startswith("breakdown") or traj.reason == "dt_underflow":
        io.write_json(out / "last_good.json", io.geometry_to_dict(traj.last_good))
        print(f"flow breakdown: {traj.reason}; last good state written to {out / 'last_good.json'}",
              file=sys.stderr)
        return EXIT_BREAKDOWN
    if traj.monotone_violations:
        print(f"lambda decreased beyond tolerance at {len(traj.monotone_violations)} snapshot(s)",
              file=sys.stderr)
        return EXIT_CHECK
    return EXIT_OK


def cmd_stability(args):
    state = io.load_geometry(args.geometry)
    res = compute_lambda(state)
    basis = getattr(state.backend, "basis", None)
    rep = stability_verdict(state, res.f, kcut=args.kcut, kmax=basis.kmax if basis else 2)
    d = rep.to_dict()
    d["lambda"] = res.lam
    d["soliton_residual"] = soliton_residual(state, res.f).total
    _emit(d, args.out, "stability.json")
    if args.out and rep.mode_table:
        rows = []
        for r in rep.mode_table:
            (p, q), (_, s) = r["form"]
            rows.append([str(r["k"]), str(r["mu"]), str(r["multiplicity"]), str(p), str(q), str(s),
                         io.fmt(r["eigenvalues"][0]), io.fmt(r["eigenvalues"][1])])
        io.write_csv(Path(args.out) / "modes.csv",
                     ["k", "mu", "multiplicity", "m_aa", "m_ab", "m_bb", "eig_min", "eig_max"], rows)
    return EXIT_OK


def cmd_verify(args):
    from . import verify

    if args.regen_golden:
        verify.regen_golden()
    results = verify.run(args.suite, args.seed if args.seed is not None else 0)
    failures = [{"suite": s, **c} for s, r in results.items() for c in r["checks"] if not c["passed"]]
    summary = {"passed": not failures,
               "suites": {s: {"passed": r["passed"], "checks": len(r["checks"])} for s, r in results.items()},
               "failures": failures}
    _emit(summary, args.out, "verify.json")
    return EXIT_OK if not failures else EXIT_CHECK


def build_parser():
    p = argparse.ArgumentParser(prog="grflab", description=__doc__,
                                formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--version", action="version", version=f"grflab {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--out", metavar="DIR", help="directory for output files")
        sp.add_argument("--seed", type=int, default=None, help="seed for randomized checks")
        sp.add_argument("--config", metavar="PATH", help="JSON configuration file")
        sp.add_argument("--regen-golden", action="store_true",
                        help="recompute stored oracle values beside the fixtures")

    sp = sub.add_parser("lambda", help="compute lambda and its minimizer")
    sp.add_argument("geometry")
    common(sp)
    sp.set_defaults(func=cmd_lambda)

    sp = sub.add_parser("flow", help="integrate the generalized Ricci flow")
    sp.add_argument("geometry")
    common(sp)
    sp.set_defaults(func=cmd_flow)

    sp = sub.add_parser("stability", help="linear stability report at a soliton")
    sp.add_argument("geometry")
    sp.add_argument("--kcut", type=int, default=1, help="Fourier cutoff of the torus variation space")
    common(sp)
    sp.set_defaults(func=cmd_stability)

    sp = sub.add_parser("verify", help="run property suites")
    sp.add_argument("suite", choices=["algebra", "curvature", "spectral", "variation", "flow", "all"])
    common(sp)
    sp.set_defaults(func=cmd_verify)
    return p


def _thread_limit():
    n = os.environ.get("GRFLAB_THREADS")
    if not n:
        return None
    try:
        n = int(n)
    except ValueError:
        raise InputError(f"GRFLAB_THREADS must be an integer, got {n!r}") from None
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=max(1, n))


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command != "verify" and args.regen_golden:
        from . import verify

        verify.regen_golden()
    try:
        limiter = _thread_limit()
        try:
            return args.func(args)
        finally:
            if limiter is not None:
                limiter.unregister()
    except (InputError, PreconditionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (SolverError, ConsistencyError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
