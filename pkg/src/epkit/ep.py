"""Expectation propagation and assumed-density filtering.

The approximation is ``q(x) ~ exp(-x^T K x / 2) prod_i g_i(x_i)`` with
Gaussian sites ``g_i = exp(-Lambda_i x^2 / 2 + gamma_i x)``, so that
``q = N(m, S)`` with ``S = (K + diag(Lambda))^-1`` and ``m = S gamma``.
One site visit removes ``g_i`` (cavity), multiplies in the exact ``f_i``
(tilted), matches the first two moments and stores the new ``g_i``.

The evidence estimate is ``log Z_EP = log Z_q + sum_i logC_i`` where
``Z_q`` is the normaliser of ``q`` built from unscaled sites and
``logC_i = log int f_i q_cav - log int g_i q_cav``.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import NotPositiveDefinite, OutOfRange
from .linalg import spd_inverse
from .models import IsingModel
from .sites import CavityParams, GaussianSite, tilted_moments

SCHEDULES = ("sequential", "random")
NEG_CAVITY_POLICIES = ("skip", "min-variance")
MIN_VARIANCE_EPS = 1e-6
_LOG_2PI = np.log(2.0 * np.pi)
_MAX_HALVINGS = 20


@dataclass(frozen=True, eq=False)
class EPState:
    """Result of an EP run.

    ``site_logZ[i]`` is ``logC_i``, the log of the ratio of the tilted
    normaliser to the normaliser of ``g_i`` times the same cavity.
    ``skipped`` lists sites whose cavity was improper on the last sweep.
    """

    sites: tuple
    mean: np.ndarray
    cov: np.ndarray
    site_logZ: np.ndarray
    logZ_ep: float
    sweep: int
    converged: bool
    max_delta: float
    cavities: tuple = ()
    tilted: tuple = ()
    skipped: tuple = ()

    @property
    def Lambda(self):
        return np.array([s.Lambda for s in self.sites])

    @property
    def gamma(self):
        return np.array([s.gamma for s in self.sites])

    @property
    def logZ_q(self):
        return float(self.logZ_ep - np.sum(self.site_logZ))


def _as_latent(model):
    return model.to_latent() if isinstance(model, IsingModel) else model


def moment_match_site(tilted, cavity):
    """New site approximation whose product with the cavity has the tilted moments.

    ``Lambda = 1/var_t - 1/var_c``, ``gamma = mean_t/var_t - mean_c/var_c``
    (written with the cavity natural parameters so improper cavities work),
    and ``logC`` makes ``int g q_cav`` equal to the tilted normaliser.

    Raises:
        OutOfRange: ``tilted.variance <= 0``.
    """
    if not tilted.variance > 0:
        raise OutOfRange(f"tilted variance must be positive, got {tilted.variance}")
    prec = 1.0 / tilted.variance
    lin = tilted.mean * prec
    lam = prec + cavity.V
    gam = lin - cavity.a
    log_ztilde = 0.5 * (_LOG_2PI - np.log(prec)) + 0.5 * lin * tilted.mean
    return GaussianSite(gamma=float(gam), Lambda=float(lam), logC=float(tilted.logZ - log_ztilde))


class EPWorkspace:
    """Mutable Gaussian ``q`` with O(n^2) single-site updates.

    Holds ``S = (K + diag(Lambda))^-1`` and ``m = S gamma``; ``refactor``
    recomputes both from scratch by Cholesky.
    """

    def __init__(self, K, Lambda, gamma):
        self.K = np.asarray(K, dtype=float)
        self.Lambda = np.array(Lambda, dtype=float)
        self.gamma = np.array(gamma, dtype=float)
        self.refactor()

    def refactor(self):
        S, logdet = spd_inverse(self.K + np.diag(self.Lambda), "K + diag(Lambda)")
        self.S = S
        self.logdet_P = logdet
        self.m = S @ self.gamma

    def cavity(self, i):
        s = self.S[i, i]
        return CavityParams(a=self.m[i] / s - self.gamma[i], V=self.Lambda[i] - 1.0 / s)

    def update(self, i, d_lambda, d_gamma):
        """Add ``(d_lambda, d_gamma)`` to site ``i``; halve the step if PD would be lost.

        Returns the fraction of the step actually applied.

        Raises:
            NotPositiveDefinite: no step of size >= 2^-20 keeps ``q`` proper.
        """
        t = 1.0
        s_ii = self.S[i, i]
        for _ in range(_MAX_HALVINGS + 1):
            dl, dg = t * d_lambda, t * d_gamma
            denom = 1.0 + dl * s_ii
            if denom > 1e-12:
                break
            t *= 0.5
        else:
            raise NotPositiveDefinite(f"site {i} update destroys positive definiteness")
        col = self.S[:, i].copy()
        self.m += col * ((dg - dl * self.m[i]) / denom)
        self.S -= (dl / denom) * np.outer(col, col)
        self.Lambda[i] += dl
        self.gamma[i] += dg
        return t

    def log_normalizer(self):
        """``log int exp(-x^T K x / 2 - sum Lambda x^2 / 2 + gamma^T x) dx``."""
        n = len(self.gamma)
        return 0.5 * n * _LOG_2PI - 0.5 * self.logdet_P + 0.5 * self.gamma @ self.m


def _initial_sites(K, has_spins):
    n = K.shape[0]
    lam_min = float(np.linalg.eigvalsh(K).min())
    if lam_min > 0:
        return np.zeros(n), np.zeros(n)
    # spin embeddings: start from a positive site precision making K+Lambda PD
    return np.full(n, max(1.0, 1.0 - lam_min)), np.zeros(n)


def _site_cavity(ws, i, site, policy):
    cav = ws.cavity(i)
    if cav.is_proper or not site.requires_proper_cavity:
        return cav, False
    if policy == "skip":
        return None, True
    return CavityParams.from_moments(ws.m[i], MIN_VARIANCE_EPS), True


def ep_run(
    model,
    tol=1e-9,
    max_sweeps=500,
    damping=None,
    schedule="sequential",
    seed=0,
    neg_cavity_policy="skip",
    init=None,
):
    """Run EP on a Gaussian latent model (Ising models are embedded first).

    Args:
        model: GaussianLatentModel or IsingModel.
        tol: stop when the largest (undamped) change of any site's
            ``(Lambda, gamma)`` during a sweep is below ``tol``.
        max_sweeps: sweep budget; exceeding it sets ``converged=False``.
        damping: weight of the old site parameters; defaults to 0.5 when the
            model has spin sites and 0 otherwise.
        schedule: "sequential" or "random" (a fresh permutation per sweep).
        seed: seed of the random schedule.
        neg_cavity_policy: what to do when a site that needs a proper cavity
            sees an improper one: "skip" leaves it unchanged for this visit,
            "min-variance" uses a cavity of variance 1e-6 at the current
            marginal mean.
        init: optional EPState to start from.

    Raises:
        NotPositiveDefinite: ``K + diag(Lambda)`` cannot be kept PD.
        DegenerateSupport: propagated from the tilted-moment computation.
    """
    if schedule not in SCHEDULES:
        raise ValueError(f"schedule must be one of {SCHEDULES}")
    if neg_cavity_policy not in NEG_CAVITY_POLICIES:
        raise ValueError(f"neg_cavity_policy must be one of {NEG_CAVITY_POLICIES}")
    model = _as_latent(model)
    if damping is None:
        damping = 0.5 if model.has_spins else 0.0
    if not 0.0 <= damping < 1.0:
        raise ValueError("damping must lie in [0, 1)")
    n = model.n
    if init is None:
        lam0, gam0 = _initial_sites(model.K, model.has_spins)
    else:
        lam0, gam0 = init.Lambda, init.gamma
    ws = EPWorkspace(model.K, lam0, gam0)
    rng = np.random.default_rng(seed)

    sweep = 0
    max_delta = np.inf
    converged = False
    while sweep < max_sweeps:
        sweep += 1
        order = rng.permutation(n) if schedule == "random" else range(n)
        max_delta = 0.0
        for i in order:
            site = model.sites[i]
            cav, flagged = _site_cavity(ws, i, site, neg_cavity_policy)
            if cav is None:
                continue
            new = moment_match_site(tilted_moments(site, cav, l_max=2), cav)
            d_lam = new.Lambda - ws.Lambda[i]
            d_gam = new.gamma - ws.gamma[i]
            max_delta = max(max_delta, abs(d_lam), abs(d_gam))
            ws.update(i, (1.0 - damping) * d_lam, (1.0 - damping) * d_gam)
        ws.refactor()
        if not np.isfinite(max_delta):
            break
        if max_delta <= tol:
            converged = True
            break
    return _finalise(model, ws, sweep, converged, max_delta, neg_cavity_policy)


def _finalise(model, ws, sweep, converged, max_delta, policy):
    sites, cavities, tilted, skipped = [], [], [], []
    logC = np.zeros(model.n)
    for i, site in enumerate(model.sites):
        cav = ws.cavity(i)
        cavities.append(cav)
        if site.requires_proper_cavity and not cav.is_proper:
            skipped.append(i)
            tilted.append(None)
            logC[i] = np.nan
            sites.append(GaussianSite(float(ws.gamma[i]), float(ws.Lambda[i]), np.nan))
            continue
        t = tilted_moments(site, cav, l_max=2)
        tilted.append(t)
        # normaliser of g_i times the cavity: precision 1/S_ii, linear m_i/S_ii
        s = ws.S[i, i]
        log_ztilde = 0.5 * (_LOG_2PI + np.log(s)) + 0.5 * ws.m[i] ** 2 / s
        logC[i] = t.logZ - log_ztilde
        sites.append(GaussianSite(float(ws.gamma[i]), float(ws.Lambda[i]), float(logC[i])))
    logZ = ws.log_normalizer() + float(np.sum(logC))
    return EPState(
        sites=tuple(sites),
        mean=ws.m.copy(),
        cov=ws.S.copy(),
        site_logZ=logC,
        logZ_ep=float(logZ),
        sweep=sweep,
        converged=bool(converged and not skipped),
        max_delta=float(max_delta),
        cavities=tuple(cavities),
        tilted=tuple(tilted),
        skipped=tuple(skipped),
    )


def moment_mismatch(state):
    """Largest gap between ``q`` marginal moments and the tilted moments."""
    worst = 0.0
    for i, t in enumerate(state.tilted):
        if t is None:
            return np.inf
        m, s = state.mean[i], state.cov[i, i]
        worst = max(worst, abs(m - t.mean), abs(s + m * m - t.second_moment))
    return worst


# ---------------------------------------------------------------------------
# assumed-density filtering


@dataclass(frozen=True, eq=False)
class ADFResult:
    mean: np.ndarray
    cov: np.ndarray
    log_evidence: float
    trace: list = field(default_factory=list)


def adf_run(prior_mean, prior_cov, stream, keep_trace=True):
    """Single pass of assumed-density filtering over projected scalar sites.

    Each stream element is ``(s, site)`` meaning the likelihood
    ``site.log_factor(s @ w)``.  The projected cavity is
    ``N(s^T m, s^T C s)``; after one scalar tilted-moment evaluation the
    posterior is updated by

        m += C s (mu_t - mu) / sigma^2
        C += (C s)(C s)^T (var_t - sigma^2) / sigma^4

    Args:
        prior_mean: length-n prior mean.
        prior_cov: n x n prior covariance.
        stream: iterable of ``(direction, site)`` pairs.
        keep_trace: record the posterior mean after every datum.

    Returns:
        ADFResult with the final posterior, the summed log evidence and the
        list of per-step means (empty when ``keep_trace`` is False).
    """
    m = np.array(prior_mean, dtype=float)
    C = np.array(prior_cov, dtype=float)
    log_ev = 0.0
    trace = []
    for s, site in stream:
        s = np.asarray(s, dtype=float)
        Cs = C @ s
        mu, s2 = float(s @ m), float(s @ Cs)
        if not s2 > 0:
            raise NotPositiveDefinite("projected posterior variance is not positive")
        cav = CavityParams.from_moments(mu, s2)
        t = tilted_moments(site, cav, l_max=2)
        log_ev += t.logZ - cav.log_normalizer
        m = m + Cs * ((t.mean - mu) / s2)
        C = C + np.outer(Cs, Cs) * ((t.variance - s2) / s2**2)
        C = 0.5 * (C + C.T)
        if keep_trace:
            trace.append(m.copy())
    return ADFResult(m, C, float(log_ev), trace)
