"""Corrections to converged EP: evidence ratio and marginal improvements.

Notation: ``q = N(m, S)`` is the EP posterior, ``q_n = q f_n / (g_n C_n)``
the tilted distribution of site ``n`` and ``eps_n = q_n / q - 1``, a function
of ``x_n`` alone for scalar sites.  Sites with ``GaussianExp`` potentials are
matched exactly by EP, so their ``eps_n`` vanishes identically and they are
skipped in every sum.
"""

from dataclasses import dataclass, field
from math import factorial

import numpy as np

from .errors import NonFiniteResult, NotConverged
from .ep import _as_latent
from .quadrature import trapezoid
from .sites import CavityParams, GaussianExp, Spin, tilted_moments

PREFACTORS = ("half", "full")
DEFAULT_PREFACTOR = "half"
GRID_WIDTH = 8.0
GRID_POINTS = 1025
_LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True, eq=False)
class CorrectedMarginal:
    """A corrected one-variable marginal.

    For spin variables ``points`` is ``(-1, 1)`` and the values are
    probabilities; otherwise they are densities on the grid.  ``raw`` may be
    negative (first-order corrections are not positivity preserving);
    ``clipped`` is clipped at zero and renormalised.
    """

    points: np.ndarray
    raw: np.ndarray
    clipped: np.ndarray
    discrete: bool


@dataclass(frozen=True, eq=False)
class CorrectionReport:
    base_logZ_ep: float
    logR_second_order: float
    logR_cumulant: dict
    corrected_marginals: dict = field(default_factory=dict)


def _check(state):
    if not state.converged:
        raise NotConverged("corrections need a converged EP state")


def _active(model):
    return [n for n, s in enumerate(model.sites) if not isinstance(s, GaussianExp)]


def default_grid(state, i, width=GRID_WIDTH, points=GRID_POINTS):
    sd = np.sqrt(state.cov[i, i])
    return np.linspace(state.mean[i] - width * sd, state.mean[i] + width * sd, points)


def _log_normal(x, mean, var):
    return -0.5 * (_LOG_2PI + np.log(var)) - 0.5 * (x - mean) ** 2 / var


# ---------------------------------------------------------------------------
# evidence corrections


def r_second_order(state, model, order=64):
    """``log(1 + sum_{a<b} <eps_a eps_b>_q)``.

    Each pair term equals ``E[N2(x_a, x_b) / (N(x_a) N(x_b))] - 1`` with
    ``x_a ~ q_a`` and ``x_b ~ q_b`` drawn independently from the tilted
    marginals, where ``N2`` and ``N`` are the Gaussian pair and single
    marginals of ``q``.  The expectation uses the tilted quadrature rules
    (exact on {-1, +1} for spins).

    Raises:
        NotConverged: the state did not converge.
        NonFiniteResult: ``1 + sum <= 0``.
    """
    _check(state)
    model = _as_latent(model)
    act = _active(model)
    m, S = state.mean, state.cov
    rules = {}
    for n in act:
        x, w = model.sites[n].quadrature(state.cavities[n], order)
        rules[n] = ((x - m[n]) / np.sqrt(S[n, n]), w)
    total = 0.0
    for ia, a in enumerate(act):
        ua, wa = rules[a]
        for b in act[ia + 1 :]:
            rho = S[a, b] / np.sqrt(S[a, a] * S[b, b])
            if rho == 0.0:
                continue
            ub, wb = rules[b]
            one = 1.0 - rho * rho
            U, W = ua[:, None], ub[None, :]
            log_ratio = -0.5 * np.log(one) - (rho * rho * (U * U + W * W) - 2.0 * rho * U * W) / (2.0 * one)
            total += float(wa @ np.expm1(log_ratio) @ wb)
    if not 1.0 + total > 0:
        raise NonFiniteResult(f"second-order ratio 1 + {total} is not positive")
    return float(np.log1p(total))


def cumulant_terms(state, model, l_max=4):
    """Per-order contributions ``T_l = sum_{m<n} c_lm c_ln / l! * (S_mn/(S_mm S_nn))^l``."""
    _check(state)
    if not 3 <= l_max <= 8:
        raise ValueError("l_max must lie in [3, 8]")
    model = _as_latent(model)
    act = _active(model)
    S = state.cov
    cum = {n: tilted_moments(model.sites[n], state.cavities[n], l_max=l_max) for n in act}
    terms = {}
    for l in range(3, l_max + 1):
        t = 0.0
        for ia, a in enumerate(act):
            ca = cum[a].cumulant(l)
            for b in act[ia + 1 :]:
                t += ca * cum[b].cumulant(l) * (S[a, b] / (S[a, a] * S[b, b])) ** l
        terms[l] = t / factorial(l)
    return terms


def cumulant_log_r(state, model, l_max=4, prefactor=DEFAULT_PREFACTOR):
    """Cumulant-expansion estimate of ``log Z - log Z_EP``, summed over ``l = 3..l_max``.

    ``prefactor="half"`` sums each unordered pair once; ``"full"`` sums over
    ordered pairs ``m != n`` (twice the value).  Only off-diagonal posterior
    covariances enter, so a diagonal ``S`` gives exactly 0.
    """
    if prefactor not in PREFACTORS:
        raise ValueError(f"prefactor must be one of {PREFACTORS}")
    total = sum(cumulant_terms(state, model, l_max).values())
    return float(total if prefactor == "half" else 2.0 * total)


# ---------------------------------------------------------------------------
# marginal corrections


def _tilted_density(site, cavity, logZ, x):
    with np.errstate(divide="ignore"):
        return np.exp(site.log_factor(x) + cavity.a * x + 0.5 * cavity.V * x * x - logZ)


def _spread_from(state, model, i, n, x, order):
    """``q_n(x_i) = int q(x_i | x_n) q_n(x_n) dx_n`` at the points ``x``."""
    m, S = state.mean, state.cov
    nodes, w = model.sites[n].quadrature(state.cavities[n], order)
    slope = S[i, n] / S[n, n]
    var = S[i, i] - slope * S[i, n]
    mu = m[i] + slope * (nodes - m[n])
    return np.exp(_log_normal(x[:, None], mu[None, :], var)) @ w


def _clip(points, raw, discrete):
    c = np.maximum(raw, 0.0)
    z = c.sum() if discrete else trapezoid(c, points)
    return c / z


def epsilon_corrected_marginal(state, model, i, grid=None, order=64):
    """First-order correction ``q_i + sum_{n != i} (q_n - q)`` of variable ``i``'s marginal.

    ``q_n(x_i)`` for ``n != i`` integrates the Gaussian conditional
    ``q(x_i | x_n)`` against the tilted marginal of ``x_n``.  For a spin
    variable ``i`` the exact site ratio ``f_i/g_i`` is kept as a weight:
    ``p(s) ~ (f_i/g_i)(s) [sum_{n != i} q_n(s) - (N-2) q(s)]`` on ``s = +-1``.

    Raises:
        NotConverged: the state did not converge.
    """
    _check(state)
    model = _as_latent(model)
    site = model.sites[i]
    active = [n for n in _active(model) if n != i]
    m, var = state.mean[i], state.cov[i, i]
    if isinstance(site, Spin):
        pts = np.array([-1.0, 1.0])
        q = np.exp(_log_normal(pts, m, var))
        acc = q.copy()
        for n in active:
            acc += _spread_from(state, model, i, n, pts, order) - q
        g = state.sites[i]
        w = np.exp(site.field * pts + 0.5 * g.Lambda * pts**2 - g.gamma * pts)
        raw = w * acc
        raw = raw / raw.sum()
        return CorrectedMarginal(pts, raw, _clip(pts, raw, True), True)
    pts = default_grid(state, i) if grid is None else np.asarray(grid, dtype=float)
    q = np.exp(_log_normal(pts, m, var))
    if isinstance(site, GaussianExp):
        raw = q.copy()
    else:
        t = state.tilted[i]
        raw = _tilted_density(site, state.cavities[i], t.logZ, pts)
    for n in active:
        raw = raw + _spread_from(state, model, i, n, pts, order) - q
    return CorrectedMarginal(pts, raw, _clip(pts, raw, False), False)


def _conditional_site_log_mass(site, g, mu, var):
    """``log int N(x; mu, var) f(x) / g(x) dx`` for a vector of means."""
    out = np.empty_like(mu)
    for k, mk in enumerate(mu):
        cav_a = mk / var - g.gamma
        cav_V = g.Lambda - 1.0 / var
        t = tilted_moments(site, CavityParams(cav_a, cav_V), l_max=2)
        out[k] = t.logZ - 0.5 * (_LOG_2PI + np.log(var)) - 0.5 * mk * mk / var
    return out


def cseke_heskes_marginal(state, model, i, grid=None):
    """Marginal ``p(x_i) ~ q_i(x_i) prod_{j != i} E_{q(x_j|x_i)}[f_j/g_j]``, renormalised.

    Raises:
        NotConverged: the state did not converge.
        DegenerateSupport: propagated from a conditional tilted integral.
    """
    _check(state)
    model = _as_latent(model)
    site = model.sites[i]
    m, S = state.mean, state.cov
    discrete = isinstance(site, Spin)
    if discrete:
        pts = np.array([-1.0, 1.0])
        logp = np.log(site.probabilities(state.cavities[i]))
    else:
        pts = default_grid(state, i) if grid is None else np.asarray(grid, dtype=float)
        if isinstance(site, GaussianExp):
            logp = _log_normal(pts, m[i], S[i, i])
        else:
            with np.errstate(divide="ignore"):
                logp = site.log_factor(pts) + state.cavities[i].a * pts + 0.5 * state.cavities[i].V * pts**2
    for j in _active(model):
        if j == i:
            continue
        slope = S[j, i] / S[i, i]
        var = S[j, j] - slope * S[j, i]
        mu = m[j] + slope * (pts - m[i])
        logp = logp + _conditional_site_log_mass(model.sites[j], state.sites[j], mu, var)
    finite = np.isfinite(logp)
    p = np.zeros_like(pts)
    p[finite] = np.exp(logp[finite] - logp[finite].max())
    p = p / (p.sum() if discrete else trapezoid(p, pts))
    return CorrectedMarginal(pts, p, p.copy(), discrete)


def ep_marginal(state, model, i, grid=None):
    """Plain EP marginal in the same format as the corrected ones."""
    model = _as_latent(model)
    site = model.sites[i]
    if isinstance(site, Spin):
        pts = np.array([-1.0, 1.0])
        p = site.probabilities(state.cavities[i])
        return CorrectedMarginal(pts, p, p.copy(), True)
    pts = default_grid(state, i) if grid is None else np.asarray(grid, dtype=float)
    p = np.exp(_log_normal(pts, state.mean[i], state.cov[i, i]))
    return CorrectedMarginal(pts, p, p.copy(), False)


def correction_report(state, model, l_max=4, marginals=False, prefactor=DEFAULT_PREFACTOR):
    """All evidence corrections, optionally with the corrected marginals of every variable."""
    terms = cumulant_terms(state, model, l_max)
    scale = 1.0 if prefactor == "half" else 2.0
    cum, run = {}, 0.0
    for l in sorted(terms):
        run += scale * terms[l]
        cum[l] = run
    margs = {}
    if marginals:
        latent = _as_latent(model)
        for i in range(latent.n):
            margs[i] = {
                "epsilon": epsilon_corrected_marginal(state, latent, i),
                "cseke_heskes": cseke_heskes_marginal(state, latent, i),
            }
    return CorrectionReport(state.logZ_ep, r_second_order(state, model), cum, margs)


def l1_distance(a, b):
    """L1 distance between the clipped values of two marginals on the same points."""
    diff = np.abs(a.clipped - b.clipped)
    return float(diff.sum()) if a.discrete else float(trapezoid(diff, a.points))
