"""Loopy belief propagation on discrete factor graphs (log domain).

Messages are factor-to-variable log vectors ``h[mu, i]``; variable-to-factor
messages are sums of the other incoming factor messages.  A sweep visits
factors in turn and recomputes all of a factor's outgoing messages from the
current incoming ones, which is the EP schedule with one factor removed and
re-projected at a time.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .errors import ZeroMessage


@dataclass(frozen=True, eq=False)
class Factor:
    scope: tuple
    log_table: np.ndarray

    @property
    def table(self):
        return np.exp(self.log_table)


@dataclass(frozen=True, eq=False)
class FactorGraph:
    """Variables with finite alphabets and factors given by log tables.

    ``log_table`` has one axis per variable of ``scope``, in order.  Zero
    table entries (``-inf`` logs) are allowed and recorded in ``has_zeros``.
    """

    cards: tuple
    factors: tuple
    has_zeros: bool = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "cards", tuple(int(c) for c in self.cards))
        facs = []
        for f in self.factors:
            if not isinstance(f, Factor):
                f = Factor(tuple(f[0]), f[1])
            lt = np.array(f.log_table, dtype=float)
            scope = tuple(int(v) for v in f.scope)
            if lt.shape != tuple(self.cards[v] for v in scope):
                raise ValueError(f"factor over {scope} has table shape {lt.shape}")
            if len(set(scope)) != len(scope):
                raise ValueError(f"repeated variable in factor scope {scope}")
            lt.setflags(write=False)
            facs.append(Factor(scope, lt))
        object.__setattr__(self, "factors", tuple(facs))
        object.__setattr__(self, "has_zeros", any(np.isneginf(f.log_table).any() for f in facs))

    @classmethod
    def from_tables(cls, cards, factors):
        """Build from nonnegative (not log) tables."""
        with np.errstate(divide="ignore"):
            return cls(cards, tuple(Factor(tuple(s), np.log(np.asarray(t, dtype=float))) for s, t in factors))

    @property
    def n_variables(self):
        return len(self.cards)

    def neighbours(self, i):
        return [mu for mu, f in enumerate(self.factors) if i in f.scope]

    def is_forest(self):
        """True if the bipartite variable-factor graph has no cycles."""
        parent = list(range(self.n_variables + len(self.factors)))

        def find(u):
            while parent[u] != u:
                parent[u] = parent[parent[u]]
                u = parent[u]
            return u

        for mu, f in enumerate(self.factors):
            node = self.n_variables + mu
            for v in f.scope:
                a, b = find(node), find(v)
                if a == b:
                    return False
                parent[a] = b
        return True


@dataclass(frozen=True, eq=False)
class BPResult:
    variable_marginals: list
    factor_marginals: list
    messages: dict
    converged: bool
    sweeps: int
    max_delta: float
    logZ_bethe: float


def _lognorm(v):
    z = logsumexp(v)
    return v - z


def _factor_messages(f, incoming):
    """All outgoing log messages of factor ``f`` given incoming variable messages."""
    return [_exclusive(f, incoming, ax) for ax in range(len(f.scope))]


def _exclusive(f, incoming, ax):
    k = len(f.scope)
    total = np.array(f.log_table)
    for b, msg in enumerate(incoming):
        if b == ax:
            continue
        shape = [1] * k
        shape[b] = -1
        total = total + msg.reshape(shape)
    others = tuple(a for a in range(k) if a != ax)
    return logsumexp(total, axis=others) if others else total


def _entropy(p):
    p = np.ravel(p)
    nz = p > 0
    return float(-np.sum(p[nz] * np.log(p[nz])))


def bp_run(graph, tol=1e-12, max_sweeps=1000, damping=None, schedule="sequential", seed=0, normalize=True):
    """Damped loopy belief propagation.

    Args:
        graph: FactorGraph.
        tol: stop when no normalised message changes by more than ``tol``.
        damping: log-domain mixing weight of the old message; defaults to
            0.5 on graphs with cycles and 0 on forests.
        schedule: "sequential" factor order or "random" per-sweep permutation.
        normalize: keep messages log-normalised after each update.

    Raises:
        ZeroMessage: a message has no support.
    """
    if damping is None:
        damping = 0.0 if graph.is_forest() else 0.5
    if not 0.0 <= damping < 1.0:
        raise ValueError("damping must lie in [0, 1)")
    if schedule not in ("sequential", "random"):
        raise ValueError("schedule must be 'sequential' or 'random'")
    cards = graph.cards
    facs = graph.factors
    msgs = {(mu, i): np.zeros(cards[i]) for mu, f in enumerate(facs) for i in f.scope}
    nbrs = [graph.neighbours(i) for i in range(len(cards))]
    rng = np.random.default_rng(seed)

    def var_to_factor(i, mu):
        out = np.zeros(cards[i])
        for nu in nbrs[i]:
            if nu != mu:
                out = out + msgs[(nu, i)]
        return _lognorm(out) if normalize else out

    sweeps = 0
    max_delta = np.inf
    converged = False
    while sweeps < max_sweeps:
        sweeps += 1
        max_delta = 0.0
        order = rng.permutation(len(facs)) if schedule == "random" else range(len(facs))
        for mu in order:
            f = facs[mu]
            incoming = [var_to_factor(i, mu) for i in f.scope]
            for i, new in zip(f.scope, _factor_messages(f, incoming)):
                if np.all(np.isneginf(new)):
                    raise ZeroMessage(f"message from factor {mu} to variable {i} vanished")
                old = msgs[(mu, i)]
                if damping > 0:
                    with np.errstate(invalid="ignore"):
                        mixed = damping * old + (1.0 - damping) * new
                    new = np.where(np.isneginf(new) | np.isneginf(old), -np.inf, mixed)
                if normalize:
                    new = _lognorm(new)
                delta = np.max(np.abs(np.exp(_lognorm(new)) - np.exp(_lognorm(old))))
                max_delta = max(max_delta, float(delta))
                msgs[(mu, i)] = new
        if max_delta <= tol:
            converged = True
            break

    var_b = []
    for i in range(len(cards)):
        lb = np.zeros(cards[i])
        for mu in nbrs[i]:
            lb = lb + msgs[(mu, i)]
        var_b.append(np.exp(_lognorm(lb)))
    fac_b = []
    for mu, f in enumerate(facs):
        k = len(f.scope)
        lb = np.array(f.log_table)
        for ax, i in enumerate(f.scope):
            shape = [1] * k
            shape[ax] = -1
            lb = lb + var_to_factor(i, mu).reshape(shape)
        fac_b.append(np.exp(lb - logsumexp(lb)))
    logZ = bethe_log_z(graph, var_b, fac_b)
    messages = {key: np.exp(_lognorm(v)) for key, v in msgs.items()}
    return BPResult(var_b, fac_b, messages, converged, sweeps, float(max_delta), logZ)


def bethe_log_z(graph, var_beliefs, factor_beliefs):
    """Negative Bethe free energy at the given beliefs.

    ``sum_mu [<log f_mu>_b + H(b_mu)] - sum_i (d_i - 1) H(b_i)``; exact on trees.
    """
    total = 0.0
    for f, b in zip(graph.factors, factor_beliefs):
        nz = b > 0
        total += float(np.sum(b[nz] * f.log_table[nz])) + _entropy(b)
    for i, b in enumerate(var_beliefs):
        d = len(graph.neighbours(i))
        total -= (d - 1) * _entropy(b)
    return total


def ising_to_factor_graph(model):
    """Factor graph of an Ising model with states ordered (-1, +1).

    One pairwise factor ``exp(J_jk x_j x_k)`` per nonzero ``J_jk`` (j < k)
    and one unary factor ``exp(B_j x_j)`` per nonzero ``B_j``.
    """
    s = np.array([-1.0, 1.0])
    n = model.n
    factors = []
    for j in range(n):
        if model.B[j] != 0.0:
            factors.append(Factor((j,), model.B[j] * s))
    for j in range(n):
        for k in range(j + 1, n):
            if model.J[j, k] != 0.0:
                factors.append(Factor((j, k), model.J[j, k] * np.outer(s, s)))
    return FactorGraph(cards=(2,) * n, factors=tuple(factors))


def enumerate_factor_graph(graph):
    """Exact log-partition function and variable marginals by full enumeration.

    Intended for small graphs (the joint table is materialised).
    """
    cards = graph.cards
    n = len(cards)
    letters = [chr(ord("a") + i) for i in range(n)] if n <= 26 else None
    if letters is None:
        raise ValueError("enumeration oracle limited to 26 variables")
    logp = np.zeros(cards)
    for f in graph.factors:
        shape = [1] * n
        for v, c in zip(f.scope, f.log_table.shape):
            shape[v] = c
        order = np.argsort(f.scope)
        lt = np.transpose(f.log_table, order)
        logp = logp + lt.reshape(shape)
    logZ = float(logsumexp(logp))
    p = np.exp(logp - logZ)
    margs = [p.sum(axis=tuple(a for a in range(n) if a != i)) for i in range(n)]
    return logZ, margs
