"""Scalar site potentials and their tilted moments.

A site ``f(x)`` is combined with a Gaussian cavity written in the
mean-field form ``exp(a*x + V*x**2/2)``.  For a proper Gaussian cavity
``V = -1/variance`` and ``a = mean/variance``; spin sites live on {-1, +1},
where ``x**2 = 1`` and any ``V`` is allowed.

``TiltedSummary.logZ`` is always ``log z`` with

    z = integral f(x) exp(a*x + V*x**2/2) dx

(a sum for spins).  The evidence relative to a normalised cavity is
``logZ - cavity.log_normalizer``.
"""

from dataclasses import dataclass, field
from math import comb

import mpmath
import numpy as np
from scipy.special import log_ndtr

from .errors import DegenerateSupport, NonFiniteResult, OutOfRange
from .quadrature import (
    composite_legendre,
    cumulants_from_central,
    hermite_rule,
    weighted_central_moments,
)

L_MAX = 8
Z_FLOOR = 1e-300
LOG_Z_FLOOR = np.log(Z_FLOOR)
_LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)


@dataclass(frozen=True)
class CavityParams:
    """Gaussian cavity ``exp(a*x + V*x**2/2)``; proper iff ``V < 0``."""

    a: float
    V: float

    @classmethod
    def from_moments(cls, mean, variance):
        if not variance > 0:
            raise OutOfRange(f"cavity variance must be positive, got {variance}")
        return cls(a=mean / variance, V=-1.0 / variance)

    @property
    def precision(self):
        return -self.V

    @property
    def is_proper(self):
        return self.V < 0

    @property
    def mean(self):
        return self.a / self.precision

    @property
    def variance(self):
        return 1.0 / self.precision

    @property
    def log_normalizer(self):
        """``log integral exp(a x + V x^2 / 2) dx`` (proper cavities only)."""
        if not self.is_proper:
            raise OutOfRange("improper cavity has no Gaussian normaliser")
        p = self.precision
        return 0.5 * np.log(2.0 * np.pi / p) + 0.5 * self.a**2 / p


@dataclass(frozen=True)
class TiltedSummary:
    mean: float
    variance: float
    logZ: float
    cumulants: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def l_max(self):
        return 2 + len(self.cumulants)

    def cumulant(self, l):
        if l == 1:
            return self.mean
        if l == 2:
            return self.variance
        return float(self.cumulants[l - 3])

    @property
    def second_moment(self):
        return self.variance + self.mean**2


@dataclass(frozen=True)
class GaussianSite:
    """Site approximation ``exp(logC - Lambda*x**2/2 + gamma*x)``."""

    gamma: float
    Lambda: float
    logC: float = 0.0


def _summary(mean, variance, logZ, cumulants):
    vals = np.concatenate([[mean, variance, logZ], cumulants])
    if not np.all(np.isfinite(vals)):
        raise NonFiniteResult(f"non-finite tilted moments: {vals}")
    if not variance > 0:
        raise DegenerateSupport(f"tilted variance {variance} is not positive")
    cumulants = np.array(cumulants, dtype=float)
    cumulants.setflags(write=False)
    return TiltedSummary(float(mean), float(variance), float(logZ), cumulants)


def _check_l_max(l_max):
    if not 2 <= l_max <= L_MAX:
        raise OutOfRange(f"l_max must be in [2, {L_MAX}], got {l_max}")


def _require_proper(cavity, kind):
    if not cavity.is_proper:
        raise DegenerateSupport(f"{kind} site needs a proper cavity (V < 0), got V={cavity.V}")


class SitePotential:
    """Base class of the scalar likelihood factors ``f_n``."""

    kind = "abstract"
    discrete = False
    requires_proper_cavity = True

    def log_factor(self, x):
        raise NotImplementedError

    def tilted(self, cavity, l_max):
        raise NotImplementedError

    def quadrature(self, cavity, order=64):
        """Nodes and normalised weights representing the tilted distribution."""
        raise NotImplementedError

    def to_json(self):
        raise NotImplementedError


@dataclass(frozen=True)
class GaussianExp(SitePotential):
    """``f(x) = exp(-Lambda*x**2/2 + gamma*x)``."""

    gamma: float = 0.0
    Lambda: float = 0.0

    kind = "gaussian"
    requires_proper_cavity = False

    def log_factor(self, x):
        x = np.asarray(x, dtype=float)
        return -0.5 * self.Lambda * x**2 + self.gamma * x

    def _natural(self, cavity):
        prec = self.Lambda - cavity.V
        if not prec > 0:
            raise DegenerateSupport(f"tilted precision {prec} not positive")
        return self.gamma + cavity.a, prec

    def tilted(self, cavity, l_max):
        h, prec = self._natural(cavity)
        logZ = 0.5 * np.log(2.0 * np.pi / prec) + 0.5 * h * h / prec
        return _summary(h / prec, 1.0 / prec, logZ, np.zeros(l_max - 2))

    def quadrature(self, cavity, order=64):
        h, prec = self._natural(cavity)
        x, w = hermite_rule(order)
        return h / prec + x / np.sqrt(prec), np.array(w)

    def to_json(self):
        return {"kind": self.kind, "gamma": self.gamma, "Lambda": self.Lambda}


@dataclass(frozen=True)
class Spin(SitePotential):
    """Ising spin on {-1, +1} with an external field: ``f(x) = exp(field*x)``."""

    field: float = 0.0

    kind = "spin"
    discrete = True
    requires_proper_cavity = False
    support = (-1.0, 1.0)

    def log_factor(self, x):
        x = np.asarray(x, dtype=float)
        on = np.isclose(np.abs(x), 1.0, rtol=0, atol=1e-12)
        return np.where(on, self.field * x, -np.inf)

    def tilted(self, cavity, l_max):
        h = cavity.a + self.field
        logZ = np.logaddexp(h, -h) + 0.5 * cavity.V
        mean = np.tanh(h)
        e = np.exp(-2.0 * abs(h))
        var = 4.0 * e / (1.0 + e) ** 2
        raw = [1.0 if k % 2 == 0 else mean for k in range(l_max + 1)]
        central = np.array(
            [sum(comb(n, j) * raw[j] * (-mean) ** (n - j) for j in range(n + 1)) for n in range(l_max + 1)]
        )
        central[1] = 0.0
        central[2] = var
        k = cumulants_from_central(central)
        return _summary(mean, var, logZ, k[2:])

    def probabilities(self, cavity):
        """``(P(x=-1), P(x=+1))`` under the tilted distribution."""
        h = cavity.a + self.field
        p_plus = 0.5 * (1.0 + np.tanh(h))
        return np.array([1.0 - p_plus, p_plus])

    def quadrature(self, cavity, order=64):
        return np.array(self.support), self.probabilities(cavity)

    def to_json(self):
        return {"kind": self.kind, "field": self.field}


# d^l/dt^l log Phi(t) as polynomials in (t, r) with r = phi(t)/Phi(t); r' = -r(t + r).
def _log_ndtr_derivative_polys(n):
    polys = [None, {(0, 1): 1.0}]
    for _ in range(2, n + 1):
        new = {}
        for (i, j), c in polys[-1].items():
            if i:
                new[(i - 1, j)] = new.get((i - 1, j), 0.0) + i * c
            if j:
                new[(i + 1, j)] = new.get((i + 1, j), 0.0) - j * c
                new[(i, j + 1)] = new.get((i, j + 1), 0.0) - j * c
        polys.append({k: v for k, v in new.items() if v != 0.0})
    return polys


_ZETA_POLYS = _log_ndtr_derivative_polys(L_MAX)
_TAIL = -6.0


def _log_ndtr_derivatives(t, l_max):
    """``[d^l log Phi(t) for l in 1..l_max]``."""
    if t >= _TAIL:
        r = np.exp(-0.5 * t * t - _LOG_SQRT_2PI - log_ndtr(t))
        return np.array([sum(c * t**i * r**j for (i, j), c in _ZETA_POLYS[l].items()) for l in range(1, l_max + 1)])
    # deep tail: the polynomial terms cancel catastrophically in doubles
    with mpmath.workdps(60):
        tm = mpmath.mpf(t)
        r = mpmath.npdf(tm) / mpmath.ncdf(tm)
        return np.array(
            [float(sum(c * tm**i * r**j for (i, j), c in _ZETA_POLYS[l].items())) for l in range(1, l_max + 1)]
        )


@dataclass(frozen=True)
class Probit(SitePotential):
    """``f(x) = Phi(label * x)``, the noise-free classifier likelihood."""

    label: float = 1.0

    kind = "probit"

    def __post_init__(self):
        if self.label not in (-1, 1, -1.0, 1.0):
            raise OutOfRange(f"probit label must be +-1, got {self.label}")

    def log_factor(self, x):
        return log_ndtr(self.label * np.asarray(x, dtype=float))

    def tilted(self, cavity, l_max):
        _require_proper(cavity, self.kind)
        mu, var = cavity.mean, cavity.variance
        s = np.sqrt(1.0 + var)
        t = self.label * mu / s
        log_norm = log_ndtr(t)
        if log_norm < LOG_Z_FLOOR:
            raise DegenerateSupport(f"probit evidence below floor (t={t})")
        zeta = _log_ndtr_derivatives(t, l_max)
        scale = self.label * var / s
        kappa = scale ** np.arange(1, l_max + 1) * zeta
        mean = mu + kappa[0]
        variance = var + kappa[1]
        return _summary(mean, variance, log_norm + cavity.log_normalizer, kappa[2:])

    def quadrature(self, cavity, order=64):
        t = self.tilted(cavity, 2)
        sd = np.sqrt(t.variance)
        nodes, w = composite_legendre(t.mean - 12.0 * sd, t.mean + 12.0 * sd, 4, max(order // 4, 8))
        logw = np.log(w) + self.log_factor(nodes) + cavity.a * nodes + 0.5 * cavity.V * nodes**2
        w = np.exp(logw - logw.max())
        return nodes, w / w.sum()

    def to_json(self):
        return {"kind": self.kind, "label": self.label}


def _truncnorm_interval(alpha, beta):
    """log of Phi(beta) - Phi(alpha), stable in both tails."""
    if alpha > 0:
        alpha, beta = -beta, -alpha
    lb, la = log_ndtr(beta), log_ndtr(alpha)
    if la >= lb:
        return -np.inf
    return lb + np.log1p(-np.exp(la - lb))


@dataclass(frozen=True)
class BoxIndicator(SitePotential):
    """``f(x) = 1{|x| <= a}``."""

    a: float = 1.0

    kind = "box"

    def __post_init__(self):
        if not self.a > 0:
            raise OutOfRange(f"box half-width must be positive, got {self.a}")

    def log_factor(self, x):
        x = np.asarray(x, dtype=float)
        return np.where(np.abs(x) <= self.a, 0.0, -np.inf)

    def tilted(self, cavity, l_max):
        _require_proper(cavity, self.kind)
        mu, sd = cavity.mean, np.sqrt(cavity.variance)
        alpha, beta = (-self.a - mu) / sd, (self.a - mu) / sd
        logZn = _truncnorm_interval(alpha, beta)
        if not logZn >= LOG_Z_FLOOR:
            raise DegenerateSupport(f"box holds no cavity mass (alpha={alpha}, beta={beta})")
        lpa = -0.5 * alpha * alpha - _LOG_SQRT_2PI - logZn
        lpb = -0.5 * beta * beta - _LOG_SQRT_2PI - logZn
        pa, pb = np.exp(lpa), np.exp(lpb)
        c = pa - pb  # standardised mean
        # moments of w = u - c for the standard normal truncated to [alpha, beta]
        m = np.zeros(l_max + 1)
        m[0] = 1.0
        for k in range(1, l_max + 1):
            prev2 = m[k - 2] if k >= 2 else 0.0
            m[k] = (k - 1) * prev2 - c * m[k - 1] + (alpha - c) ** (k - 1) * pa - (beta - c) ** (k - 1) * pb
        m[1] = 0.0
        central = m * sd ** np.arange(l_max + 1)
        k = cumulants_from_central(central)
        return _summary(mu + sd * c, central[2], logZn + cavity.log_normalizer, k[2:])

    def quadrature(self, cavity, order=64):
        _require_proper(cavity, self.kind)
        mu, sd = cavity.mean, np.sqrt(cavity.variance)
        lo, hi = max(-self.a, mu - 12.0 * sd), min(self.a, mu + 12.0 * sd)
        if not hi > lo:
            raise DegenerateSupport("box holds no cavity mass")
        nodes, w = composite_legendre(lo, hi, 4, max(order // 4, 8))
        logw = np.log(w) - 0.5 * (nodes - mu) ** 2 / sd**2
        w = np.exp(logw - logw.max())
        return nodes, w / w.sum()

    def to_json(self):
        return {"kind": self.kind, "a": self.a}


@dataclass(frozen=True, eq=False)
class TabulatedGrid(SitePotential):
    """Log-linear interpolation of tabulated ``log f`` values; zero outside.

    Integrals use the trapezoid rule on the table refined ``refine`` times
    per cell.  Compact support means improper cavities are fine.
    """

    points: np.ndarray
    log_values: np.ndarray
    refine: int = 16

    kind = "tabulated"
    requires_proper_cavity = False

    def __post_init__(self):
        p = np.array(self.points, dtype=float)
        v = np.array(self.log_values, dtype=float)
        if p.ndim != 1 or p.shape != v.shape or len(p) < 2:
            raise OutOfRange("tabulated site needs matching 1-D points/log_values, length >= 2")
        if not np.all(np.diff(p) > 0):
            raise OutOfRange("tabulated points must be strictly increasing")
        p.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "points", p)
        object.__setattr__(self, "log_values", v)

    def log_factor(self, x):
        x = np.asarray(x, dtype=float)
        inside = (x >= self.points[0]) & (x <= self.points[-1])
        return np.where(inside, np.interp(x, self.points, self.log_values), -np.inf)

    def _rule(self, cavity):
        p = self.points
        t = np.linspace(0.0, 1.0, self.refine + 1)[:-1]
        x = np.concatenate([(p[:-1, None] + np.diff(p)[:, None] * t[None, :]).ravel(), p[-1:]])
        w = np.zeros_like(x)
        dx = np.diff(x)
        w[:-1] += 0.5 * dx
        w[1:] += 0.5 * dx
        logw = np.log(w) + self.log_factor(x) + cavity.a * x + 0.5 * cavity.V * x**2
        return x, logw

    def tilted(self, cavity, l_max):
        x, logw = self._rule(cavity)
        top = logw.max()
        if not np.isfinite(top):
            raise DegenerateSupport("tabulated factor has no mass")
        w = np.exp(logw - top)
        logZ = top + np.log(w.sum())
        mean, central = weighted_central_moments(x, w, l_max)
        k = cumulants_from_central(central)
        return _summary(mean, central[2], logZ, k[2:])

    def quadrature(self, cavity, order=64):
        x, logw = self._rule(cavity)
        w = np.exp(logw - logw.max())
        return x, w / w.sum()

    def to_json(self):
        return {"kind": self.kind, "points": self.points.tolist(), "log_values": self.log_values.tolist()}


def tilted_moments(site, cavity, l_max=4):
    """Mean, variance, log-normaliser and cumulants 3..l_max of a tilted marginal.

    The tilted density is proportional to ``f(x) exp(a x + V x^2 / 2)``.

    Raises:
        DegenerateSupport: the tilted distribution has no usable mass
            (or the site needs a proper cavity and ``V >= 0``).
        NonFiniteResult: overflow in the moment computation.
    """
    _check_l_max(l_max)
    return site.tilted(cavity, l_max)


def site_from_json(d):
    kind = d["kind"]
    if kind == "gaussian":
        return GaussianExp(gamma=float(d.get("gamma", 0.0)), Lambda=float(d.get("Lambda", 0.0)))
    if kind == "spin":
        return Spin(field=float(d.get("field", 0.0)))
    if kind == "probit":
        return Probit(label=float(d["label"]))
    if kind == "box":
        return BoxIndicator(a=float(d["a"]))
    if kind == "tabulated":
        return TabulatedGrid(points=d["points"], log_values=d["log_values"])
    raise ValueError(f"unknown site kind {kind!r}")
