"""TAP mean-field equations for Ising models and the TAP free energy.

Two variants share one fixed-point loop:

* ``"conventional"``: the Onsager term uses the i.i.d.-coupling variance
  ``V_i = sum_j J_ij^2 (1 - m_j^2)``;
* ``"adaptive"``: ``V`` is refreshed from the linear-response consistency
  ``1 / (Lambda_i - V_i) = [(Lambda - J)^-1]_ii`` with
  ``Lambda_i = V_i + 1 / (1 - m_i^2)``.

Adaptive fixed points coincide with EP fixed points for the spin embedding
``K = -J``.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateSupport, NotPositiveDefinite, OutOfRange
from .linalg import solve_diagonal_shift, spd_inverse, spd_logdet
from .meanfield import _initial, binary_entropy
from .models import IsingModel
from .sites import CavityParams, GaussianExp, Spin, tilted_moments

VARIANTS = ("conventional", "adaptive")
_LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True, eq=False)
class TAPSolution:
    means: np.ndarray
    second_moments: np.ndarray
    cavity: tuple
    Lambda: np.ndarray
    V: np.ndarray
    converged: bool
    iterations: int
    mean_residual: float
    consistency_residual: float
    variant: str

    @property
    def residuals(self):
        return {"mean_residual": self.mean_residual, "consistency_residual": self.consistency_residual}


def adaptive_v_update(Lambda, J):
    """``V_i = Lambda_i - 1 / [(diag(Lambda) - J)^-1]_ii``.

    Raises:
        NotPositiveDefinite: ``diag(Lambda) - J`` is not positive definite.
    """
    Lambda = np.asarray(Lambda, dtype=float)
    S, _ = spd_inverse(np.diag(Lambda) - J, "Lambda - J")
    return Lambda - 1.0 / np.diag(S)


def susceptibility(Lambda, J):
    """Linear-response susceptibilities ``chi = (diag(Lambda) - J)^-1``."""
    S, _ = spd_inverse(np.diag(np.asarray(Lambda, dtype=float)) - J, "Lambda - J")
    return S


def conventional_v(J, m):
    return (J**2) @ (1.0 - m**2)


def _spin_lambda(V, m):
    return V + 1.0 / (1.0 - m**2)


def _consistency(J, m, V):
    try:
        S, _ = spd_inverse(np.diag(_spin_lambda(V, m)) - J, "Lambda - J")
    except NotPositiveDefinite:
        return np.inf
    return float(np.max(np.abs((1.0 - m**2) - np.diag(S)), initial=0.0))


def tap_solve(model, variant="adaptive", tol=1e-10, max_iter=5000, damping=0.5, init="zero"):
    """Solve the TAP equations of an Ising model by damped sweeps.

    Each sweep updates all means ``m <- tanh(B + J m - V m)`` and then
    refreshes ``V`` once (closed form for "conventional", one
    ``adaptive_v_update`` for "adaptive").  The adaptive iteration starts
    from the ``V`` that satisfies the consistency equation exactly at the
    initial means.

    Args:
        model: IsingModel.
        variant: "conventional" or "adaptive".
        tol: both residuals must drop below ``tol``.
        damping: applied to means and (adaptive) to ``V``.
        init: "zero", "random(<seed>)" or an explicit vector of means.

    Raises:
        NotPositiveDefinite: adaptive only, ``Lambda - J`` lost definiteness.
    """
    if variant not in VARIANTS:
        raise ValueError(f"variant must be one of {VARIANTS}")
    if not 0.0 <= damping < 1.0:
        raise ValueError("damping must lie in [0, 1)")
    J, B = model.J, model.B
    m = _initial(init, model.n)
    adaptive = variant == "adaptive"
    if adaptive:
        v0 = 1.0 - m**2
        V = solve_diagonal_shift(J, v0) - 1.0 / v0
    else:
        V = conventional_v(J, m)

    mean_res = cons_res = np.inf
    it = 0
    converged = False
    while it < max_iter:
        it += 1
        m = (1.0 - damping) * np.tanh(B + J @ m - V * m) + damping * m
        if np.any(np.abs(m) >= 1.0):
            m = np.clip(m, -1.0 + 1e-15, 1.0 - 1e-15)
        if adaptive:
            V = (1.0 - damping) * adaptive_v_update(_spin_lambda(V, m), J) + damping * V
        else:
            V = conventional_v(J, m)
        mean_res = float(np.max(np.abs(m - np.tanh(B + J @ m - V * m)), initial=0.0))
        if adaptive:
            cons_res = _consistency(J, m, V)
            if not np.isfinite(cons_res):
                raise NotPositiveDefinite("Lambda - J lost positive definiteness")
        if mean_res <= tol and (not adaptive or cons_res <= tol):
            converged = True
            break
    if not adaptive:
        cons_res = _consistency(J, m, V)
    a = J @ m - V * m
    cavity = tuple(CavityParams(float(ai), float(vi)) for ai, vi in zip(a, V))
    return TAPSolution(
        means=m,
        second_moments=np.ones(model.n),
        cavity=cavity,
        Lambda=_spin_lambda(V, m),
        V=V,
        converged=converged,
        iterations=it,
        mean_residual=mean_res,
        consistency_residual=cons_res,
        variant=variant,
    )


# ---------------------------------------------------------------------------
# free energies


def _coupling_and_sites(model):
    if isinstance(model, IsingModel):
        return model.J, tuple(Spin(field=float(b)) for b in model.B)
    return -model.K, model.sites


def _generic_legendre(site, m, M, tol=1e-12, max_iter=100):
    """``G0 = sup_{a,V} [a m + V M / 2 - log z(a, V)]`` by damped Newton.

    Returns ``(G0, a*, V*)``; ``a*`` and ``V*/2`` are the derivatives of
    ``G0`` with respect to ``m`` and ``M``.
    """
    v = M - m * m
    theta = np.array([m / v, -1.0 / v])

    def evaluate(th):
        t = tilted_moments(site, CavityParams(*th), l_max=4)
        val = th[0] * m + 0.5 * th[1] * M - t.logZ
        return val, t

    val, t = evaluate(theta)
    for _ in range(max_iter):
        mu, k2, k3, k4 = t.mean, t.variance, t.cumulant(3), t.cumulant(4)
        grad = np.array([m - mu, 0.5 * (M - t.second_moment)])
        if np.max(np.abs(grad)) <= tol * max(1.0, M):
            break
        c12 = 0.5 * (k3 + 2.0 * mu * k2)
        c22 = 0.25 * (k4 + 2.0 * k2 * k2 + 4.0 * mu * k3 + 4.0 * mu * mu * k2)
        H = np.array([[k2, c12], [c12, c22]])
        step = np.linalg.solve(H, grad)
        s = 1.0
        while s > 1e-10:
            cand = theta + s * step
            try:
                if site.requires_proper_cavity and cand[1] >= 0:
                    raise DegenerateSupport("improper trial cavity")
                cval, ct = evaluate(cand)
                if cval >= val - 1e-14 * abs(val):
                    break
            except DegenerateSupport:
                pass
            s *= 0.5
        else:
            break
        theta, val, t = cand, cval, ct
    return val, theta[0], theta[1]


def site_free_energy(site, m, M):
    """Legendre-transformed free energy ``G0`` of one site and its duals.

    Returns ``(G0, dG0/dm, dG0/dM)``.  Spins require ``M == 1`` and have no
    ``M`` derivative (reported as NaN).
    """
    v = M - m * m
    if not v > 0:
        raise OutOfRange(f"M - m^2 must be positive, got {v}")
    if isinstance(site, Spin):
        if abs(M - 1.0) > 1e-12:
            raise OutOfRange("spin sites need M = 1")
        val = -site.field * m - float(binary_entropy(m))
        return val, np.arctanh(m) - site.field, np.nan
    if isinstance(site, GaussianExp):
        val = -0.5 - 0.5 * _LOG_2PI - 0.5 * np.log(v) - site.gamma * m + 0.5 * site.Lambda * M
        return val, m / v - site.gamma, 0.5 * site.Lambda - 0.5 / v
    val, a, V = _generic_legendre(site, m, M)
    return val, a, 0.5 * V


def tap_free_energy(model, m, M, Lambda, V):
    """Adaptive-TAP Gibbs free energy at given moments and TAP parameters.

        G = sum_i G0_i(m_i, M_i) - m^T J m / 2 + logdet(Lambda - J) / 2
            - sum_i V_i (M_i - m_i^2) / 2 + sum_i log(M_i - m_i^2) / 2

    with ``J = -K`` for latent models (diagonal included).  The site terms
    ``G0`` carry all additive constants, so that an all-Gaussian model at
    its exact moments gives ``G = -log Z``; ``-G`` at an adaptive fixed
    point equals the EP evidence.

    Raises:
        OutOfRange: some ``M_i <= m_i^2``.
        NotPositiveDefinite: ``diag(Lambda) - J`` is not positive definite.
    """
    J, sites = _coupling_and_sites(model)
    m = np.asarray(m, dtype=float)
    M = np.asarray(M, dtype=float)
    v = M - m**2
    if np.any(v <= 0):
        raise OutOfRange("M_i - m_i^2 must be positive")
    g0 = sum(site_free_energy(s, mi, Mi)[0] for s, mi, Mi in zip(sites, m, M))
    logdet = spd_logdet(np.diag(Lambda) - J, "Lambda - J")
    return float(g0 - 0.5 * m @ J @ m + 0.5 * logdet - 0.5 * np.dot(V, v) + 0.5 * np.log(v).sum())


def tap_gibbs(model, m, M=None):
    """TAP free energy as a function of the moments alone.

    ``Lambda`` is solved from ``diag((Lambda - J)^-1) = M - m^2`` and
    ``V = Lambda - 1 / (M - m^2)``.

    Returns:
        ``(G, grad_m, grad_M)``; ``grad_M`` is NaN on spin sites.
    """
    J, sites = _coupling_and_sites(model)
    m = np.asarray(m, dtype=float)
    M = np.ones_like(m) if M is None else np.asarray(M, dtype=float)
    v = M - m**2
    if np.any(v <= 0):
        raise OutOfRange("M_i - m_i^2 must be positive")
    Lam = solve_diagonal_shift(J, v)
    V = Lam - 1.0 / v
    duals = [site_free_energy(s, mi, Mi) for s, mi, Mi in zip(sites, m, M)]
    g0 = sum(d[0] for d in duals)
    dm = np.array([d[1] for d in duals])
    dM = np.array([d[2] for d in duals])
    logdet = spd_logdet(np.diag(Lam) - J, "Lambda - J")
    G = g0 - 0.5 * m @ J @ m + 0.5 * logdet - 0.5 * np.dot(V, v) + 0.5 * np.log(v).sum()
    grad_m = dm + (Lam * m - J @ m) - m / v
    grad_M = dM - 0.5 * V
    return float(G), grad_m, grad_M


def conventional_tap_free_energy(model, m):
    """Second-order (Onsager) TAP free energy of an Ising model.

    ``-G = sum H(m) + B m + m^T J m / 2 + sum_{i<j} J_ij^2 (1-m_i^2)(1-m_j^2) / 2``;
    its stationary points are the conventional TAP equations.
    """
    m = np.asarray(m, dtype=float)
    if np.any(np.abs(m) >= 1.0):
        raise OutOfRange("TAP means must satisfy |m_i| < 1")
    J, B = model.J, model.B
    q = 1.0 - m**2
    onsager = 0.25 * q @ (J**2) @ q
    return float(-(binary_entropy(m).sum() + B @ m + 0.5 * m @ J @ m + onsager))
