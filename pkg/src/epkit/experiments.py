"""Seeded instance generators and experiment drivers.

Random streams come from numpy's counter-based Philox generator keyed by
``SeedSequence([seed, instance_index, stream])``; stream 0 draws couplings
(or teachers), stream 1 fields (or inputs), stream 2 Monte Carlo samples.
"""

import csv
import io
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .bp import bp_run, ising_to_factor_graph
from .corrections import cumulant_log_r
from .ep import adf_run, ep_run
from .errors import EpkitError
from .exact import enumerate_ising, exact_gaussian_stats
from .meanfield import naive_mf_solve
from .models import GaussianLatentModel, IsingModel
from .sites import BoxIndicator, GaussianExp, Probit
from .tap import conventional_tap_free_energy, tap_free_energy, tap_solve

CSV_VERSION = "# epkit-csv v1"
TOPOLOGIES = ("grid4x4", "full")
COUPLINGS = ("attractive", "mixed", "repulsive")
BASE_METHODS = ("NMF", "TAP", "AdaTAP", "EP", "LBP")
RECORD_FIELDS = (
    "instance",
    "method",
    "status",
    "logZ_exact",
    "logZ_estimate",
    "abs_logZ_dev",
    "marginal_tv",
    "iterations",
)


def instance_rng(seed, index, stream):
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(index), int(stream)])))


def _fmt(x):
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


# ---------------------------------------------------------------------------
# instances


def topology_edges(topology, n=16):
    """Edge list ``(j, k)`` with ``j < k``; the grid is 4x4 in row-major order."""
    if topology == "grid4x4":
        side = 4
        edges = []
        for r in range(side):
            for c in range(side):
                v = r * side + c
                if c + 1 < side:
                    edges.append((v, v + 1))
                if r + 1 < side:
                    edges.append((v, v + side))
        return edges
    if topology == "full":
        return [(j, k) for j in range(n) for k in range(j + 1, n)]
    raise ValueError(f"unknown topology {topology!r}")


@dataclass(frozen=True)
class BenchmarkConfig:
    topology: str = "grid4x4"
    coupling_type: str = "mixed"
    d_coup: float = 0.1
    field_halfwidth: float = 0.25
    instances: int = 20
    seed: int = 0
    methods: tuple = ("NMF", "TAP", "AdaTAP", "EP", "EP+cumulant(4)", "LBP")
    l_max: int = 4
    mode: str = "ising"
    tol: float = 1e-10
    max_iter: int = 5000
    damping: float = None

    def __post_init__(self):
        object.__setattr__(self, "methods", tuple(self.methods))
        if self.topology not in TOPOLOGIES:
            raise ValueError(f"topology must be one of {TOPOLOGIES}")
        if self.coupling_type not in COUPLINGS:
            raise ValueError(f"coupling_type must be one of {COUPLINGS}")
        if not self.d_coup > 0:
            raise ValueError("d_coup must be positive")
        if self.instances < 1:
            raise ValueError("instances must be >= 1")
        if self.mode not in ("ising", "gaussian"):
            raise ValueError("mode must be 'ising' or 'gaussian'")
        for m in self.methods:
            _parse_method(m)


def _parse_method(name):
    if name in BASE_METHODS:
        return name, None
    if name.startswith("EP+cumulant(") and name.endswith(")"):
        l = int(name[len("EP+cumulant(") : -1])
        if not 3 <= l <= 8:
            raise ValueError("cumulant order must lie in [3, 8]")
        return "EP+cumulant", l
    raise ValueError(f"unknown method {name!r}")


def sample_wj_instance(config, instance_index):
    """Wainwright-Jordan style 16-spin instance.

    Couplings ~ U[a - d, a + d] on the topology's edges with ``a = d``
    (attractive), 0 (mixed) or ``-d`` (repulsive); fields ~ U[-h, h].
    """
    n = 16
    d = config.d_coup
    a = {"attractive": d, "mixed": 0.0, "repulsive": -d}[config.coupling_type]
    edges = topology_edges(config.topology, n)
    w = instance_rng(config.seed, instance_index, 0).uniform(a - d, a + d, len(edges))
    J = np.zeros((n, n))
    for (j, k), v in zip(edges, w):
        J[j, k] = J[k, j] = v
    h = config.field_halfwidth
    B = instance_rng(config.seed, instance_index, 1).uniform(-h, h, n)
    return IsingModel(J, B)


def random_spin_instance(n, beta, seed, instance_index, field_halfwidth=0.25):
    """Fully connected spins with ``J_ij ~ N(0, beta^2)`` and uniform fields."""
    g = instance_rng(seed, instance_index, 0).normal(0.0, beta, (n, n))
    J = np.triu(g, 1)
    J = J + J.T
    B = instance_rng(seed, instance_index, 1).uniform(-field_halfwidth, field_halfwidth, n)
    return IsingModel(J, B)


def random_gaussian_instance(n, seed, instance_index):
    """Positive definite ``K`` with Gaussian sites; exact answers are closed form."""
    r = instance_rng(seed, instance_index, 0)
    A = r.normal(0.0, 1.0 / np.sqrt(n), (n, n))
    K = A @ A.T + 0.5 * np.eye(n)
    r = instance_rng(seed, instance_index, 1)
    sites = tuple(GaussianExp(gamma=float(g), Lambda=float(l)) for g, l in zip(r.normal(0, 1, n), r.uniform(-0.2, 1.0, n)))
    return GaussianLatentModel(K, sites)


# ---------------------------------------------------------------------------
# log Z benchmark


@dataclass(frozen=True)
class BenchmarkRow:
    method: str
    mean_abs_logZ_dev: float
    mean_marginal_TV: float
    convergence_rate: float
    n_ok: int
    n_nonconverged: int
    n_error: int
    wall_time_ms: float = float("nan")


@dataclass
class BenchmarkResult:
    config: BenchmarkConfig
    rows: list
    records: list = field(default_factory=list)

    def to_csv(self):
        return records_to_csv(self.records)

    def to_json(self):
        rows = [{k: v for k, v in asdict(r).items() if k != "wall_time_ms"} for r in self.rows]
        cfg = asdict(self.config)
        cfg["methods"] = list(cfg["methods"])
        return {"config": cfg, "rows": rows, "records": self.records}


def _tv(p_plus, exact_plus):
    return float(np.mean(np.abs(np.asarray(p_plus) - exact_plus)))


def _run_method(name, model, exact, cfg, cache):
    """Returns ``(logZ_est, p_plus or None, converged, iterations)``."""
    base, l = _parse_method(name)
    tol, it = cfg.tol, cfg.max_iter
    if base == "NMF":
        s = naive_mf_solve(model, tol=tol, max_iter=it, damping=0.5 if cfg.damping is None else cfg.damping)
        return -s.free_energy, 0.5 * (1 + s.means), s.converged, s.iterations
    if base == "TAP":
        s = tap_solve(model, "conventional", tol=tol, max_iter=it, **_damp(cfg))
        return -conventional_tap_free_energy(model, s.means), 0.5 * (1 + s.means), s.converged, s.iterations
    if base == "AdaTAP":
        s = tap_solve(model, "adaptive", tol=tol, max_iter=it, **_damp(cfg))
        G = tap_free_energy(model, s.means, s.second_moments, s.Lambda, s.V)
        return -G, 0.5 * (1 + s.means), s.converged, s.iterations
    if base in ("EP", "EP+cumulant"):
        if "ep" not in cache:
            try:
                cache["ep"] = ep_run(model, tol=tol, max_sweeps=it, damping=cfg.damping)
            except EpkitError as exc:
                cache["ep"] = exc
        st = cache["ep"]
        if isinstance(st, Exception):
            raise st
        p = 0.5 * (1 + st.mean) if isinstance(model, IsingModel) else None
        if base == "EP":
            return st.logZ_ep, p, st.converged, st.sweep
        if not st.converged:
            return np.nan, p, False, st.sweep
        return st.logZ_ep + cumulant_log_r(st, model, l), p, True, st.sweep
    if base == "LBP":
        r = bp_run(ising_to_factor_graph(model), tol=tol, max_sweeps=it, **({} if cfg.damping is None else {"damping": cfg.damping}))
        return r.logZ_bethe, np.array([b[1] for b in r.variable_marginals]), r.converged, r.sweeps
    raise ValueError(name)


def _damp(cfg):
    return {} if cfg.damping is None else {"damping": cfg.damping}


def run_logz_benchmark(config, progress=None):
    """Evaluate every method on every instance against exact answers.

    Each (instance, method) cell gets status "ok", "non-converged" or
    "error(<Kind>)"; errors never abort the sweep.  Aggregates use the "ok"
    cells only, and ``convergence_rate = n_ok / instances``.
    """
    methods = config.methods
    if config.mode == "gaussian":
        methods = tuple(m for m in methods if m == "EP") or ("EP",)
    records = []
    wall = {m: 0.0 for m in methods}
    for idx in range(config.instances):
        if config.mode == "gaussian":
            model = random_gaussian_instance(8, config.seed, idx)
            ex = exact_gaussian_stats(model)
            exact_plus = None
        else:
            model = sample_wj_instance(config, idx)
            ex = enumerate_ising(model)
            exact_plus = ex.single_marginals[:, 1]
        cache = {}
        for m in methods:
            t0 = time.perf_counter()
            rec = {"instance": idx, "method": m, "logZ_exact": ex.logZ}
            try:
                est, p, conv, iters = _run_method(m, model, ex, config, cache)
                rec["status"] = "ok" if conv else "non-converged"
                rec["logZ_estimate"] = float(est)
                rec["abs_logZ_dev"] = float(abs(est - ex.logZ))
                rec["marginal_tv"] = _tv(p, exact_plus) if (p is not None and exact_plus is not None) else float("nan")
                rec["iterations"] = int(iters)
            except EpkitError as exc:
                rec.update(status=f"error({type(exc).__name__})", logZ_estimate=float("nan"),
                           abs_logZ_dev=float("nan"), marginal_tv=float("nan"), iterations=0)
            wall[m] += time.perf_counter() - t0
            records.append({k: rec[k] for k in RECORD_FIELDS})
        if progress is not None:
            progress(idx)
    rows = aggregate(records, methods, config.instances)
    rows = [BenchmarkRow(**{**asdict(r), "wall_time_ms": 1e3 * wall[r.method]}) for r in rows]
    return BenchmarkResult(config, rows, records)


def aggregate(records, methods=None, instances=None):
    """Summary rows from per-instance records (also usable on parsed CSV)."""
    if methods is None:
        methods = list(dict.fromkeys(r["method"] for r in records))
    rows = []
    for m in methods:
        mine = [r for r in records if r["method"] == m]
        total = instances if instances is not None else len(mine)
        ok = [r for r in mine if r["status"] == "ok"]
        nonconv = sum(r["status"] == "non-converged" for r in mine)
        err = sum(str(r["status"]).startswith("error") for r in mine)
        dev = float(np.mean([float(r["abs_logZ_dev"]) for r in ok])) if ok else float("nan")
        tvs = [float(r["marginal_tv"]) for r in ok if not math.isnan(float(r["marginal_tv"]))]
        tv = float(np.mean(tvs)) if tvs else float("nan")
        rows.append(BenchmarkRow(m, dev, tv, len(ok) / total, len(ok), nonconv, err))
    return rows


def records_to_csv(records):
    buf = io.StringIO()
    buf.write(CSV_VERSION + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RECORD_FIELDS)
    for r in records:
        w.writerow([_fmt(r[k]) for k in RECORD_FIELDS])
    return buf.getvalue()


def read_records_csv(text):
    lines = [ln for ln in text.splitlines() if not ln.startswith("#")]
    out = []
    for row in csv.DictReader(lines):
        row["instance"] = int(row["instance"])
        row["iterations"] = int(row["iterations"])
        for k in ("logZ_exact", "logZ_estimate", "abs_logZ_dev", "marginal_tv"):
            row[k] = float(row[k])
        out.append(row)
    return out


def format_summary(rows):
    head = f"{'method':<16} {'|dlogZ|':>12} {'TV':>12} {'conv':>6} {'ok':>4} {'nc':>4} {'err':>4} {'ms':>9}"
    lines = [head]
    for r in rows:
        lines.append(
            f"{r.method:<16} {r.mean_abs_logZ_dev:12.4e} {r.mean_marginal_TV:12.4e} "
            f"{r.convergence_rate:6.2f} {r.n_ok:4d} {r.n_nonconverged:4d} {r.n_error:4d} {r.wall_time_ms:9.1f}"
        )
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# ADF learning curve


@dataclass
class ADFCurve:
    alphas: np.ndarray
    eps_mean: np.ndarray
    eps_stderr: np.ndarray
    eps_test: np.ndarray = None

    def to_csv(self):
        buf = io.StringIO()
        buf.write(CSV_VERSION + "\n")
        w = csv.writer(buf, lineterminator="\n")
        cols = ["alpha", "eps", "stderr"] + (["eps_test"] if self.eps_test is not None else [])
        w.writerow(cols)
        for k, a in enumerate(self.alphas):
            row = [a, self.eps_mean[k], self.eps_stderr[k]]
            if self.eps_test is not None:
                row.append(self.eps_test[k])
            w.writerow([_fmt(float(v)) for v in row])
        return buf.getvalue()


def angle_error(w, teacher):
    nw = np.linalg.norm(w)
    if nw == 0.0:
        return 0.5
    rho = float(w @ teacher) / (nw * np.linalg.norm(teacher))
    return float(np.arccos(np.clip(rho, -1.0, 1.0)) / np.pi)


def adf_classifier_experiment(n=50, alpha_max=5.0, trials=100, seed=0, alphas=None, test_points=0):
    """Generalisation error of an ADF-trained Bayesian perceptron versus ``alpha = m/n``.

    Per trial: a teacher uniform on the sphere, standard-normal inputs,
    labels ``sign(teacher . s)``, a ``N(0, I)`` prior and probit sites.  The
    error of the posterior mean is ``arccos(rho)/pi`` with ``rho`` its cosine
    to the teacher; with ``test_points > 0`` a test-set error is reported too.
    """
    if n < 2:
        raise ValueError("n must be >= 2")
    alphas = np.arange(0.0, alpha_max + 1e-9, 0.5) if alphas is None else np.asarray(alphas, dtype=float)
    steps = np.rint(alphas * n).astype(int)
    m_max = int(steps.max()) if len(steps) else 0
    errs = np.zeros((trials, len(alphas)))
    tests = np.zeros((trials, len(alphas))) if test_points else None
    for t in range(trials):
        teacher = instance_rng(seed, t, 0).normal(size=n)
        teacher /= np.linalg.norm(teacher)
        X = instance_rng(seed, t, 1).normal(size=(m_max, n))
        y = np.where(X @ teacher >= 0, 1.0, -1.0)
        res = adf_run(np.zeros(n), np.eye(n), ((X[k], Probit(label=float(y[k]))) for k in range(m_max)))
        for j, st in enumerate(steps):
            w = np.zeros(n) if st == 0 else res.trace[st - 1]
            errs[t, j] = angle_error(w, teacher)
        if test_points:
            Xt = instance_rng(seed, t, 2).normal(size=(test_points, n))
            yt = np.sign(Xt @ teacher)
            for j, st in enumerate(steps):
                w = np.zeros(n) if st == 0 else res.trace[st - 1]
                tests[t, j] = float(np.mean(np.sign(Xt @ w) != yt)) if np.any(w) else 0.5
    mean = errs.mean(axis=0)
    se = errs.std(axis=0, ddof=1) / np.sqrt(trials) if trials > 1 else np.zeros(len(alphas))
    return ADFCurve(alphas, mean, se, tests.mean(axis=0) if test_points else None)


# ---------------------------------------------------------------------------
# Gaussian process in a box


def se_kernel(t, length, variance, jitter=1e-10):
    d = t[:, None] - t[None, :]
    return variance * np.exp(-0.5 * d * d / length**2) + jitter * np.eye(len(t))


def gp_in_box_experiment(n_points=8, a=1.0, length=0.3, variance=1.0, seed=0, mc_samples=10**6, l_max=4, tol=1e-10):
    """Probability that a discretised GP stays inside ``[-a, a]``.

    ``Z = P(|x_n| <= a for all n)`` under ``x ~ N(0, Sigma)`` at
    ``n_points`` equally spaced inputs on [0, 1].  EP uses box sites on the
    precision ``K = Sigma^-1``; the reference is a Monte Carlo acceptance
    fraction with its standard error.

    Raises:
        DegenerateSupport: the box is too small for the kernel scale.
    """
    if n_points > 12:
        raise ValueError("n_points must be <= 12 for the Monte Carlo reference")
    t = np.linspace(0.0, 1.0, n_points)
    Sigma = se_kernel(t, length, variance)
    K = np.linalg.inv(Sigma)
    K = 0.5 * (K + K.T)
    model = GaussianLatentModel(K, tuple(BoxIndicator(a=a) for _ in range(n_points)))
    st = ep_run(model, tol=tol, max_sweeps=2000)
    _, logdet = np.linalg.slogdet(2.0 * np.pi * Sigma)
    logZ_ep = st.logZ_ep - 0.5 * logdet
    corr = cumulant_log_r(st, model, l_max) if st.converged else float("nan")

    L = np.linalg.cholesky(Sigma)
    rng = instance_rng(seed, 0, 2)
    hits, done, chunk = 0, 0, 100_000
    while done < mc_samples:
        k = min(chunk, mc_samples - done)
        x = rng.standard_normal((k, n_points)) @ L.T
        hits += int(np.count_nonzero(np.all(np.abs(x) <= a, axis=1)))
        done += k
    p = hits / mc_samples
    se = math.sqrt(p * (1 - p) / mc_samples)
    return {
        "n_points": n_points,
        "a": a,
        "length": length,
        "variance": variance,
        "mc_samples": mc_samples,
        "mc_acceptance": p,
        "logZ_exact_mc": math.log(p) if p > 0 else float("-inf"),
        "logZ_mc_stderr": se / p if p > 0 else float("inf"),
        "logZ_ep": float(logZ_ep),
        "logZ_corrected": float(logZ_ep + corr),
        "ep_converged": bool(st.converged),
        "ep_sweeps": int(st.sweep),
    }
