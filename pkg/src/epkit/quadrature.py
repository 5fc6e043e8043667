"""Quadrature rules and small numerical helpers."""

from functools import lru_cache
from math import comb

import numpy as np

GH_NODES = 61


@lru_cache(maxsize=None)
def hermite_rule(order=GH_NODES):
    """Probabilists' Gauss-Hermite nodes and weights for N(0, 1).

    The weights sum to one, so ``sum(w * f(x))`` approximates E[f(Z)].
    """
    x, w = np.polynomial.hermite_e.hermegauss(order)
    w = w / w.sum()
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


@lru_cache(maxsize=None)
def legendre_rule(order):
    x, w = np.polynomial.legendre.leggauss(order)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def composite_legendre(lo, hi, panels, order):
    """Nodes and weights of a composite Gauss-Legendre rule on [lo, hi]."""
    x, w = legendre_rule(order)
    edges = np.linspace(lo, hi, panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    nodes = (mid[:, None] + half[:, None] * x[None, :]).ravel()
    weights = (half[:, None] * w[None, :]).ravel()
    return nodes, weights


def cumulants_from_central(central):
    """Cumulants k_1..k_L from central moments.

    Args:
        central: sequence ``[mu_0, mu_1, ..., mu_L]`` of central moments
            (``mu_0 = 1``, ``mu_1 = 0``).

    Returns:
        array ``[k_1, ..., k_L]`` with ``k_1 = 0``; shifting the mean back
        only changes the first cumulant.
    """
    m = np.asarray(central, dtype=float)
    L = len(m) - 1
    k = np.zeros(L + 1)
    for n in range(1, L + 1):
        acc = m[n]
        for j in range(1, n):
            acc -= comb(n - 1, j - 1) * k[j] * m[n - j]
        k[n] = acc
    return k[1:]


def central_from_raw(raw):
    """Central moments from raw moments ``[1, E x, E x^2, ...]``."""
    raw = np.asarray(raw, dtype=float)
    L = len(raw) - 1
    mean = raw[1]
    out = np.zeros(L + 1)
    for n in range(L + 1):
        out[n] = sum(comb(n, j) * raw[j] * (-mean) ** (n - j) for j in range(n + 1))
    out[0] = 1.0
    if L >= 1:
        out[1] = 0.0
    return out


def weighted_central_moments(nodes, weights, l_max):
    """Mean and central moments 0..l_max of a discrete weighted measure."""
    weights = weights / weights.sum()
    mean = float(np.dot(weights, nodes))
    d = nodes - mean
    central = np.empty(l_max + 1)
    p = np.ones_like(d)
    for n in range(l_max + 1):
        central[n] = np.dot(weights, p)
        p = p * d
    central[0] = 1.0
    central[1] = 0.0
    return mean, central


def trapezoid(y, x):
    return float(np.trapezoid(y, x)) if hasattr(np, "trapezoid") else float(np.trapz(y, x))
