"""Naive mean field for Ising models."""

from dataclasses import dataclass

import numpy as np

from .errors import OutOfRange


@dataclass(frozen=True, eq=False)
class MFSolution:
    means: np.ndarray
    free_energy: float
    iterations: int
    converged: bool
    residual: float


def binary_entropy(m):
    """Entropy in nats of a +-1 spin with mean ``m`` (elementwise)."""
    m = np.asarray(m, dtype=float)
    p, q = 0.5 * (1.0 + m), 0.5 * (1.0 - m)
    with np.errstate(divide="ignore", invalid="ignore"):
        hp = np.where(p > 0, -p * np.log(p), 0.0)
        hq = np.where(q > 0, -q * np.log(q), 0.0)
    return hp + hq


def mf_free_energy(model, means):
    """Variational free energy ``E[q] - S[q]`` of a factorised spin distribution.

    Always an upper bound on ``-log Z``.
    """
    m = np.asarray(means, dtype=float)
    if np.any(np.abs(m) >= 1.0):
        raise OutOfRange("mean-field means must satisfy |m_i| < 1")
    return float(-0.5 * m @ model.J @ m - model.B @ m - binary_entropy(m).sum())


def mf_residual(model, m):
    return float(np.max(np.abs(m - np.tanh(model.B + model.J @ m)), initial=0.0))


def _initial(init, n):
    if init is None or (isinstance(init, str) and init == "zero"):
        return np.zeros(n)
    if isinstance(init, str) and init.startswith("random"):
        seed = int(init[init.index("(") + 1 : init.index(")")]) if "(" in init else 0
        return np.random.default_rng(seed).uniform(-0.5, 0.5, n)
    m0 = np.array(init, dtype=float)
    if m0.shape != (n,):
        raise ValueError(f"init has shape {m0.shape}, expected ({n},)")
    return m0


def naive_mf_solve(model, tol=1e-10, max_iter=10_000, damping=0.0, init="zero"):
    """Damped synchronous iteration of ``m = tanh(B + J m)``.

    ``init`` is "zero", "random(<seed>)" or an explicit vector.  With zero
    fields and zero init the paramagnetic point m = 0 is returned.
    Non-convergence is reported through ``converged``, never raised.
    """
    if not 0.0 <= damping < 1.0:
        raise ValueError("damping must lie in [0, 1)")
    m = _initial(init, model.n)
    residual = np.inf
    it = 0
    while it < max_iter:
        m = (1.0 - damping) * np.tanh(model.B + model.J @ m) + damping * m
        it += 1
        residual = mf_residual(model, m)
        if residual <= tol:
            break
    # keep the entropy finite if a spin saturates numerically
    m_safe = np.clip(m, -1.0 + 1e-15, 1.0 - 1e-15)
    return MFSolution(m, mf_free_energy(model, m_safe), it, residual <= tol, residual)
