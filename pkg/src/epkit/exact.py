"""Exact reference statistics: brute-force enumeration and Gaussian algebra.

The enumeration backend is the compiled Gray-code kernel when it was built,
otherwise a chunked numpy implementation.  Set ``EPKIT_PURE_PYTHON=1`` to
force the fallback.
"""

import os
from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from ._enumerate_py import enumerate_ising_numpy
from .errors import NotPositiveDefinite, OutOfRange, TooLarge
from .quadrature import hermite_rule, trapezoid

MAX_SPINS = 24

_kernel = None
if not os.environ.get("EPKIT_PURE_PYTHON"):
    try:
        from ._kernels import enumerate_ising_gray as _kernel
    except ImportError:  # extension not built
        _kernel = None

BACKEND = "cython" if _kernel is not None else "numpy"


@dataclass(frozen=True, eq=False)
class ExactStats:
    """Exact log-partition function and low-order moments.

    ``single_marginals`` is an ``(n, 2)`` array of ``(P(x=-1), P(x=+1))``
    for spin models and of ``(mean, variance)`` for Gaussian models.
    """

    logZ: float
    means: np.ndarray
    second_moments: np.ndarray
    single_marginals: np.ndarray

    @property
    def covariance(self):
        return self.second_moments - np.outer(self.means, self.means)


def enumerate_ising(model, pairs=True, backend=None):
    """Exact statistics of an Ising model by summing all 2^n states.

    Args:
        model: IsingModel with n <= 24.
        pairs: also accumulate the pair moments (O(n^2) per state).
        backend: "cython", "numpy" or None for the default.

    Raises:
        TooLarge: n > 24.
    """
    n = model.n
    if n > MAX_SPINS:
        raise TooLarge(f"enumeration capped at {MAX_SPINS} spins, got {n}")
    backend = backend or BACKEND
    if backend == "cython":
        if _kernel is None:
            raise RuntimeError("compiled kernel not available")
        logZ, means, second = _kernel(model.J, model.B, pairs)
    elif backend == "numpy":
        logZ, means, second = enumerate_ising_numpy(model.J, model.B, pairs)
    else:
        raise ValueError(f"unknown backend {backend!r}")
    if second is None:
        second = np.full((n, n), np.nan)
        np.fill_diagonal(second, 1.0)
    p_plus = 0.5 * (1.0 + means)
    marg = np.column_stack([1.0 - p_plus, p_plus])
    return ExactStats(float(logZ), means, second, marg)


def exact_gaussian_stats(model):
    """Exact moments and log-partition function of an all-Gaussian-site model.

    ``log Z = log integral exp(-x^T (K + diag(Lambda)) x / 2 + gamma^T x) dx``.

    Raises:
        NotPositiveDefinite: ``K + diag(Lambda)`` is not positive definite.
    """
    if not model.all_gaussian:
        raise OutOfRange("exact_gaussian_stats needs GaussianExp sites only")
    lam = np.array([s.Lambda for s in model.sites])
    gam = np.array([s.gamma for s in model.sites])
    P = model.K + np.diag(lam)
    try:
        c = cho_factor(P, lower=True)
    except LinAlgError as exc:
        raise NotPositiveDefinite("K + diag(Lambda) is not positive definite") from exc
    n = model.n
    cov = cho_solve(c, np.eye(n))
    cov = 0.5 * (cov + cov.T)
    mean = cho_solve(c, gam)
    logdet = 2.0 * np.sum(np.log(np.diag(c[0])))
    logZ = 0.5 * n * np.log(2.0 * np.pi) - 0.5 * logdet + 0.5 * gam @ mean
    second = cov + np.outer(mean, mean)
    return ExactStats(float(logZ), mean, second, np.column_stack([mean, np.diag(cov)]))


def _prior_cov(model):
    try:
        c = cho_factor(model.K, lower=True)
    except LinAlgError as exc:
        raise NotPositiveDefinite("quadrature oracle needs a positive definite K") from exc
    n = model.n
    cov = cho_solve(c, np.eye(n))
    return 0.5 * (cov + cov.T), 2.0 * np.sum(np.log(np.diag(c[0])))


def _tensor_rule(dim, order):
    z, w = hermite_rule(order)
    grids = np.meshgrid(*([z] * dim), indexing="ij")
    wts = np.ones_like(grids[0]) if dim else np.ones(())
    for g_w in np.meshgrid(*([w] * dim), indexing="ij"):
        wts = wts * g_w
    return np.stack([g.ravel() for g in grids], axis=1), wts.ravel()


def smooth_site_marginal(model, i, grid, order=24):
    """Marginal density of ``x_i`` for a small model with smooth sites on a grid.

    ``p(x_i) ~ N(x_i; 0, Sigma_ii) f_i(x_i) E[prod_{j != i} f_j(x_j) | x_i]``
    under the prior ``N(0, K^-1)``; the conditional expectation uses a
    tensor Gauss-Hermite rule (cost ``order^(n-1)`` per grid point).
    The density is normalised by the trapezoid rule on ``grid``.
    """
    n = model.n
    if n > 4:
        raise TooLarge("tensor quadrature oracle limited to n <= 4")
    cov, _ = _prior_cov(model)
    grid = np.asarray(grid, dtype=float)
    others = [j for j in range(n) if j != i]
    logp = -0.5 * grid**2 / cov[i, i] + model.sites[i].log_factor(grid)
    if others:
        c_oi = cov[others, i]
        cond = cov[np.ix_(others, others)] - np.outer(c_oi, c_oi) / cov[i, i]
        L = np.linalg.cholesky(cond + 1e-300 * np.eye(len(others)))
        z, w = _tensor_rule(len(others), order)
        offs = z @ L.T
        for k, x in enumerate(grid):
            xs = offs + c_oi / cov[i, i] * x
            lf = sum(model.sites[j].log_factor(xs[:, a]) for a, j in enumerate(others))
            top = np.max(lf)
            logp[k] += top + np.log(w @ np.exp(lf - top)) if np.isfinite(top) else -np.inf
    p = np.exp(logp - np.max(logp))
    return p / trapezoid(p, grid)


def smooth_site_log_z(model, order=40):
    """``log int exp(-x^T K x / 2) prod f_i(x_i) dx`` by tensor Gauss-Hermite (n <= 4)."""
    n = model.n
    if n > 4:
        raise TooLarge("tensor quadrature oracle limited to n <= 4")
    cov, logdet_K = _prior_cov(model)
    z, w = _tensor_rule(n, order)
    xs = z @ np.linalg.cholesky(cov).T
    lf = sum(model.sites[j].log_factor(xs[:, j]) for j in range(n))
    top = np.max(lf)
    return float(0.5 * n * np.log(2.0 * np.pi) - 0.5 * logdet_K + top + np.log(w @ np.exp(lf - top)))
