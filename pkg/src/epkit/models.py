"""Model containers, validation and JSON serialisation.

Ising convention: the unnormalised log-probability is

    sum_{j<k} J[j, k] x_j x_k + sum_j B[j] x_j  =  x^T J x / 2 + B^T x

with ``J`` symmetric and zero on the diagonal, so the local field on spin
``j`` is ``B[j] + (J @ x)[j]``.

A Gaussian latent model is ``p(x) ~ exp(-x^T K x / 2) prod_i f_i(x_i)``.
An Ising model embeds as ``K = -J`` with ``Spin(field=B_i)`` sites.
"""

import json
from dataclasses import dataclass

import numpy as np

from .sites import GaussianExp, SitePotential, Spin, site_from_json

SYM_TOL = 1e-12


def _frozen(a, ndim):
    a = np.array(a, dtype=float)
    if a.ndim != ndim:
        raise ValueError(f"expected a {ndim}-D array, got shape {a.shape}")
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class IsingModel:
    J: np.ndarray
    B: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "J", _frozen(self.J, 2))
        object.__setattr__(self, "B", _frozen(self.B, 1))

    @property
    def n(self):
        return len(self.B)

    def log_weight(self, x):
        """Unnormalised log-probability of one or many spin configurations."""
        x = np.asarray(x, dtype=float)
        return 0.5 * np.einsum("...i,ij,...j->...", x, self.J, x) + x @ self.B

    def to_latent(self):
        return GaussianLatentModel(K=-self.J, sites=tuple(Spin(field=float(b)) for b in self.B))

    def to_json(self):
        return {"n": self.n, "J": self.J.tolist(), "B": self.B.tolist()}


@dataclass(frozen=True, eq=False)
class GaussianLatentModel:
    K: np.ndarray
    sites: tuple

    def __post_init__(self):
        object.__setattr__(self, "K", _frozen(self.K, 2))
        object.__setattr__(self, "sites", tuple(self.sites))

    @property
    def n(self):
        return self.K.shape[0]

    @property
    def all_gaussian(self):
        return all(isinstance(s, GaussianExp) for s in self.sites)

    @property
    def has_spins(self):
        return any(isinstance(s, Spin) for s in self.sites)

    def to_json(self):
        return {"n": self.n, "K": self.K.tolist(), "sites": [s.to_json() for s in self.sites]}


def validate_model(model):
    """List every violated invariant; an empty list means the model is valid.

    Positive definiteness of ``Lambda + K`` depends on solver state and is
    only noted, never reported as a violation.
    """
    problems = []
    if isinstance(model, IsingModel):
        J, B = model.J, model.B
        n = len(B)
        if n < 1:
            problems.append("n must be >= 1")
        if J.shape != (n, n):
            problems.append(f"J has shape {J.shape}, expected ({n}, {n})")
            return problems
        if not (np.all(np.isfinite(J)) and np.all(np.isfinite(B))):
            problems.append("non-finite entries in J or B")
        if np.max(np.abs(J - J.T), initial=0.0) > SYM_TOL:
            problems.append("J is not symmetric")
        if np.any(np.diag(J) != 0.0):
            problems.append("J has a non-zero diagonal")
    elif isinstance(model, GaussianLatentModel):
        K = model.K
        n = K.shape[0]
        if n < 1:
            problems.append("n must be >= 1")
        if K.shape != (n, n):
            problems.append(f"K has shape {K.shape}, expected square")
            return problems
        if not np.all(np.isfinite(K)):
            problems.append("non-finite entries in K")
        if np.max(np.abs(K - K.T), initial=0.0) > SYM_TOL:
            problems.append("K is not symmetric")
        if len(model.sites) != n:
            problems.append(f"{len(model.sites)} sites for {n} variables")
        for i, s in enumerate(model.sites):
            if not isinstance(s, SitePotential):
                problems.append(f"site {i} is not a SitePotential")
    else:
        problems.append(f"unsupported model type {type(model).__name__}")
    return problems


def pd_note(model):
    """Human-readable note on whether ``K`` alone is positive definite."""
    if not isinstance(model, GaussianLatentModel):
        return ""
    lam_min = float(np.linalg.eigvalsh(model.K).min())
    if lam_min > 0:
        return "K is positive definite"
    return f"K has eigenvalue {lam_min:.3g}; PD of Lambda + K deferred to solver"


def model_from_json(d):
    if isinstance(d, str):
        d = json.loads(d)
    if "J" in d:
        model = IsingModel(J=d["J"], B=d["B"])
    elif "K" in d:
        model = GaussianLatentModel(K=d["K"], sites=tuple(site_from_json(s) for s in d["sites"]))
    else:
        raise ValueError("model JSON needs either 'J' (Ising) or 'K' (Gaussian latent)")
    if "n" in d and int(d["n"]) != model.n:
        raise ValueError(f"declared n={d['n']} does not match data (n={model.n})")
    return model


def load_model(path):
    with open(path) as fh:
        return model_from_json(json.load(fh))


def save_model(model, path):
    with open(path, "w") as fh:
        json.dump(model.to_json(), fh, indent=2)
