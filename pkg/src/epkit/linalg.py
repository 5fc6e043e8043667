import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .errors import NotPositiveDefinite


def spd_inverse(P, what="matrix"):
    """Inverse and log-determinant of a symmetric positive definite matrix."""
    try:
        c = cho_factor(P, lower=True)
    except LinAlgError as exc:
        raise NotPositiveDefinite(f"{what} is not positive definite") from exc
    S = cho_solve(c, np.eye(P.shape[0]))
    return 0.5 * (S + S.T), 2.0 * float(np.sum(np.log(np.diag(c[0]))))


def spd_logdet(P, what="matrix"):
    try:
        c = cho_factor(P, lower=True)
    except LinAlgError as exc:
        raise NotPositiveDefinite(f"{what} is not positive definite") from exc
    return 2.0 * float(np.sum(np.log(np.diag(c[0]))))


def solve_diagonal_shift(J, target, tol=1e-13, max_iter=100):
    """Find ``Lambda`` with ``diag((diag(Lambda) - J)^-1) == target``.

    Newton's method on the diagonal of the inverse, started from a point
    where ``diag(Lambda) - J`` is safely positive definite; steps are halved
    until the matrix stays PD and the residual decreases.
    """
    target = np.asarray(target, dtype=float)
    if np.any(target <= 0):
        raise NotPositiveDefinite("target variances must be positive")
    rho = max(0.0, float(np.linalg.eigvalsh(J).max()))
    lam = 1.0 / target + rho

    def resid(l):
        S, _ = spd_inverse(np.diag(l) - J)
        return S, np.diag(S) - target

    S, r = resid(lam)
    for _ in range(max_iter):
        if np.max(np.abs(r)) <= tol * np.max(target):
            return lam
        step = np.linalg.solve(S * S, r)
        t = 1.0
        while True:
            cand = lam + t * step
            try:
                S_new, r_new = resid(cand)
                if np.max(np.abs(r_new)) < np.max(np.abs(r)):
                    break
            except NotPositiveDefinite:
                pass
            t *= 0.5
            if t < 1e-12:
                return lam
        lam, S, r = cand, S_new, r_new
    return lam
