"""Command-line interface: ``epkit {solve,benchmark,adf-curve,gp-box}``.

Outputs are deterministic for a fixed seed; timings go to the terminal
summary only, never into CSV or JSON files.
"""

import argparse
import json
import sys
import time

import numpy as np

from . import experiments as ex
from .bp import bp_run, ising_to_factor_graph
from .ep import ep_run
from .errors import EpkitError
from .exact import enumerate_ising, exact_gaussian_stats
from .meanfield import naive_mf_solve
from .models import IsingModel, load_model, validate_model
from .tap import conventional_tap_free_energy, tap_free_energy, tap_solve

SOLVE_METHODS = ("exact", "nmf", "tap", "adatap", "ep", "lbp")


def _jsonable(x):
    if isinstance(x, np.ndarray):
        return [_jsonable(v) for v in x.tolist()]
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if np.isfinite(x) else repr(x)
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    return x


def dumps(obj):
    return json.dumps(_jsonable(obj), sort_keys=True, indent=2) + "\n"


def _emit(text, out):
    if out in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(out, "w", newline="") as fh:
            fh.write(text)


def _info(args, text):
    # summaries go to stdout only when data goes to a file
    stream = sys.stderr if args.out in (None, "-") else sys.stdout
    print(text, file=stream)


def _common(p):
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None, help="output path (default: stdout)")
    p.add_argument("--format", choices=("csv", "json"), default=None)
    p.add_argument("--tol", type=float, default=None)
    p.add_argument("--max-iter", type=int, default=None)
    p.add_argument("--damping", type=float, default=None)


def _opts(args, tol, max_iter):
    return (args.tol if args.tol is not None else tol, args.max_iter if args.max_iter is not None else max_iter)


def cmd_solve(args):
    model = load_model(args.model)
    problems = validate_model(model)
    if problems:
        raise ValueError("invalid model: " + "; ".join(problems))
    tol, it = _opts(args, 1e-10, 5000)
    method = args.method
    res = {"method": method, "n": model.n}
    ising = isinstance(model, IsingModel)
    if method in ("nmf", "tap", "adatap", "lbp") and not ising:
        raise ValueError(f"method {method} needs an Ising model")
    damp = {} if args.damping is None else {"damping": args.damping}
    if method == "exact":
        st = enumerate_ising(model) if ising else exact_gaussian_stats(model)
        res.update(logZ=st.logZ, means=st.means, converged=True)
    elif method == "nmf":
        s = naive_mf_solve(model, tol=tol, max_iter=it, **damp)
        res.update(logZ=-s.free_energy, means=s.means, converged=s.converged, iterations=s.iterations)
    elif method in ("tap", "adatap"):
        variant = "conventional" if method == "tap" else "adaptive"
        s = tap_solve(model, variant, tol=tol, max_iter=it, **damp)
        if variant == "conventional":
            lz = -conventional_tap_free_energy(model, s.means)
        else:
            lz = -tap_free_energy(model, s.means, s.second_moments, s.Lambda, s.V)
        res.update(logZ=lz, means=s.means, converged=s.converged, iterations=s.iterations,
                   Lambda=s.Lambda, V=s.V, mean_residual=s.mean_residual,
                   consistency_residual=s.consistency_residual)
    elif method == "ep":
        st = ep_run(model, tol=tol, max_sweeps=it, damping=args.damping, seed=args.seed)
        res.update(logZ=st.logZ_ep, means=st.mean, variances=np.diag(st.cov), converged=st.converged,
                   iterations=st.sweep, Lambda=st.Lambda, gamma=st.gamma, max_delta=st.max_delta)
    elif method == "lbp":
        r = bp_run(ising_to_factor_graph(model), tol=tol, max_sweeps=it, seed=args.seed, **damp)
        res.update(logZ=r.logZ_bethe, means=np.array([b[1] - b[0] for b in r.variable_marginals]),
                   converged=r.converged, iterations=r.sweeps)
    _emit(dumps(res), args.out)
    return 0


def _benchmark_config(args):
    base = {}
    if args.config:
        with open(args.config) as fh:
            base = json.load(fh)
    flags = {
        "topology": args.topology,
        "coupling_type": args.coupling,
        "d_coup": args.d_coup,
        "field_halfwidth": args.field_halfwidth,
        "instances": args.instances,
        "methods": tuple(args.methods.split(",")) if args.methods else None,
        "l_max": args.l_max,
        "mode": args.mode,
        "tol": args.tol,
        "max_iter": args.max_iter,
        "damping": args.damping,
    }
    base.update({k: v for k, v in flags.items() if v is not None})
    base["seed"] = args.seed
    return ex.BenchmarkConfig(**base)


def cmd_benchmark(args):
    cfg = _benchmark_config(args)
    t0 = time.perf_counter()
    res = ex.run_logz_benchmark(cfg)
    elapsed = time.perf_counter() - t0
    text = dumps(res.to_json()) if args.format == "json" else res.to_csv()
    _emit(text, args.out)
    _info(args, ex.format_summary(res.rows) + f"\ntotal wall time {elapsed:.2f} s")
    return 0


def cmd_adf_curve(args):
    alphas = None
    if args.alpha_step:
        alphas = np.arange(0.0, args.alpha_max + 1e-9, args.alpha_step)
    curve = ex.adf_classifier_experiment(args.n, args.alpha_max, args.trials, args.seed, alphas, args.test_points)
    if args.format == "json":
        payload = {"alpha": curve.alphas, "eps": curve.eps_mean, "stderr": curve.eps_stderr}
        if curve.eps_test is not None:
            payload["eps_test"] = curve.eps_test
        text = dumps(payload)
    else:
        text = curve.to_csv()
    _emit(text, args.out)
    return 0


def cmd_gp_box(args):
    tol, _ = _opts(args, 1e-10, 2000)
    res = ex.gp_in_box_experiment(args.n_points, args.a, args.length, args.variance, args.seed, args.mc_samples, args.l_max, tol)
    if args.format == "csv":
        keys = sorted(res)
        text = ex.CSV_VERSION + "\n" + ",".join(keys) + "\n" + ",".join(ex._fmt(res[k]) for k in keys) + "\n"
    else:
        text = dumps(res)
    _emit(text, args.out)
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="epkit", description="Approximate inference for Ising and latent Gaussian models.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="run one method on a model file (JSON out)")
    p.add_argument("model", help="model JSON file")
    p.add_argument("--method", choices=SOLVE_METHODS, default="ep")
    _common(p)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("benchmark", help="log Z benchmark on Wainwright-Jordan instances")
    p.add_argument("--config", help="JSON file with BenchmarkConfig fields")
    p.add_argument("--topology", choices=ex.TOPOLOGIES)
    p.add_argument("--coupling", choices=ex.COUPLINGS)
    p.add_argument("--d-coup", type=float)
    p.add_argument("--field-halfwidth", type=float)
    p.add_argument("--instances", type=int)
    p.add_argument("--methods", help="comma separated, e.g. NMF,TAP,EP,EP+cumulant(4)")
    p.add_argument("--l-max", type=int)
    p.add_argument("--mode", choices=("ising", "gaussian"))
    _common(p)
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("adf-curve", help="ADF generalisation error versus alpha")
    p.add_argument("--n", type=int, default=50)
    p.add_argument("--alpha-max", type=float, default=5.0)
    p.add_argument("--alpha-step", type=float, default=0.5)
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--test-points", type=int, default=0)
    _common(p)
    p.set_defaults(func=cmd_adf_curve)

    p = sub.add_parser("gp-box", help="Gaussian process in a box: EP vs Monte Carlo")
    p.add_argument("--n-points", type=int, default=8)
    p.add_argument("--a", type=float, default=1.0)
    p.add_argument("--length", type=float, default=0.3)
    p.add_argument("--variance", type=float, default=1.0)
    p.add_argument("--mc-samples", type=int, default=10**6)
    p.add_argument("--l-max", type=int, default=4)
    _common(p)
    p.set_defaults(func=cmd_gp_box)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (OSError, ValueError, json.JSONDecodeError, EpkitError) as exc:
        print(f"epkit: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
