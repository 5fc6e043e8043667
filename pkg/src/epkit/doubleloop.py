"""Double-loop (concave-convex) minimisation of ``G = G_A - G_B``.

The outer loop replaces ``-G_B`` by its tangent at the current point, an
affine upper bound, and the inner loop minimises the convex surrogate
``G_A + L``.  Every outer step therefore cannot increase ``G``.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import InnerSolverFailure
from .meanfield import binary_entropy

ARMIJO_C1 = 1e-4
BACKTRACK = 0.5
MF_BOUND = 1.0 - 1e-9


@dataclass(frozen=True, eq=False)
class ConvexSplit:
    """``G_approx = G_A - G_B`` with both parts convex.

    ``G_A`` and ``G_B`` map a vector to ``(value, gradient)``.  ``bounds``
    optionally gives a box ``(lo, hi)`` for projected steps.
    """

    G_A: object
    G_B: object
    dim: int
    bounds: tuple = None

    def value(self, mu):
        return self.G_A(mu)[0] - self.G_B(mu)[0]

    def gradient(self, mu):
        return self.G_A(mu)[1] - self.G_B(mu)[1]

    def project(self, mu):
        if self.bounds is None:
            return mu
        return np.clip(mu, self.bounds[0], self.bounds[1])


@dataclass
class DoubleLoopTrace:
    G: list = field(default_factory=list)
    inner_iterations: list = field(default_factory=list)
    converged: bool = False

    @property
    def outer_iterations(self):
        return len(self.G) - 1


def concave_bound(G_B, mu_old):
    """Tangent bound ``L(mu) = -G_B(mu_old) - (mu - mu_old) . grad G_B(mu_old)``.

    Returns a callable giving ``(value, gradient)``; ``L >= -G_B`` everywhere
    when ``G_B`` is convex, with equality at ``mu_old``.
    """
    mu_old = np.array(mu_old, dtype=float)
    v0, g0 = G_B(mu_old)
    g0 = np.array(g0, dtype=float)

    def L(mu):
        return -v0 - float(np.dot(np.asarray(mu) - mu_old, g0)), -g0

    return L


def _projected_descent(f, project, x0, tol, max_iter):
    """Projected gradient descent with Armijo backtracking and BB step lengths."""
    x = project(np.array(x0, dtype=float))
    fx, g = f(x)
    step = 1.0
    x_prev = g_prev = None
    for it in range(1, max_iter + 1):
        if x_prev is not None:
            s, y = x - x_prev, g - g_prev
            sy = float(s @ y)
            if sy > 0:
                step = float(s @ s) / sy
        pg = project(x - g) - x
        if np.max(np.abs(pg), initial=0.0) <= tol:
            return x, fx, it - 1
        t = step
        while True:
            x_new = project(x - t * g)
            d = x_new - x
            if not np.any(d):
                break
            f_new, g_new = f(x_new)
            # for a convex surrogate g_new.d <= 0 also certifies f_new <= fx,
            # which matters once decreases drop below floating-point resolution
            if f_new <= fx + ARMIJO_C1 * float(g @ d) or float(g_new @ d) <= 0.0:
                break
            t *= BACKTRACK
            if t < 1e-20:
                x_new = None
                break
        if x_new is None or not np.any(x_new - x):
            if np.max(np.abs(pg)) <= 1e3 * tol:
                return x, fx, it
            raise InnerSolverFailure("line search failed to decrease the convex surrogate")
        x_prev, g_prev = x, g
        x, fx, g = x_new, f_new, g_new
    return x, fx, max_iter


def double_loop_minimize(split, mu0, outer_tol=1e-8, inner_tol=None, max_outer=1000, max_inner=5000):
    """Minimise ``split.G_A - split.G_B`` by repeated convex majorisation.

    Stops when the change of ``G_approx`` in one outer step and the largest
    component of the projected gradient of ``G_approx`` are both below
    ``outer_tol``.

    Args:
        split: ConvexSplit.
        mu0: starting point (projected onto ``split.bounds``).
        inner_tol: projected-gradient tolerance of the inner solver,
            default ``outer_tol / 10``.

    Returns:
        ``(mu_star, trace)`` where ``trace.G`` lists ``G_approx`` at every
        outer iterate, starting with ``mu0``.

    Raises:
        InnerSolverFailure: the inner line search cannot make progress.
    """
    inner_tol = outer_tol / 10.0 if inner_tol is None else inner_tol
    mu = split.project(np.array(mu0, dtype=float))
    trace = DoubleLoopTrace()
    G = split.value(mu)
    trace.G.append(G)
    for _ in range(max_outer):
        L = concave_bound(split.G_B, mu)

        def surrogate(x, L=L):
            a, ga = split.G_A(x)
            b, gb = L(x)
            return a + b, ga + gb

        mu_new, _, n_inner = _projected_descent(surrogate, split.project, mu, inner_tol, max_inner)
        G_new = split.value(mu_new)
        trace.G.append(G_new)
        trace.inner_iterations.append(n_inner)
        grad = split.project(mu_new - split.gradient(mu_new)) - mu_new
        done = abs(G_new - G) <= outer_tol and np.max(np.abs(grad), initial=0.0) <= outer_tol
        mu, G = mu_new, G_new
        if done:
            trace.converged = True
            break
    return mu, trace


def mean_field_split(model, c=None):
    """Convex split of the naive mean-field free energy of an Ising model.

    ``G_A(m) = -S(m) + c |m|^2 - B.m`` and ``G_B(m) = c |m|^2 + m^T J m / 2``
    whose difference is ``mf_free_energy``.  ``G_B`` is convex as soon as
    ``2c >= -lambda_min(J)``; the default
    ``c = max(0, lambda_max(J), -lambda_min(J)) / 2 + 0.1`` covers either sign.
    """
    J, B = model.J, model.B
    if c is None:
        ev = np.linalg.eigvalsh(J) if model.n else np.zeros(1)
        c = max(0.0, float(ev.max()), float(-ev.min())) / 2.0 + 0.1

    def G_A(m):
        m = np.asarray(m, dtype=float)
        return float(-binary_entropy(m).sum() + c * m @ m - B @ m), np.arctanh(m) + 2.0 * c * m - B

    def G_B(m):
        m = np.asarray(m, dtype=float)
        Jm = J @ m
        return float(c * m @ m + 0.5 * m @ Jm), 2.0 * c * m + Jm

    return ConvexSplit(G_A, G_B, model.n, bounds=(-MF_BOUND, MF_BOUND))
