"""Extremal gap statistics, their scaling constants and the Gumbel-k family.

Indices are 1-based: gap ``j`` is ``v[j] - v[j - 1]`` in 0-based array terms,
i.e. the gap between the j-th and (j+1)-th smallest points.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaincc

__all__ = [
    "GapSelector",
    "t_ell",
    "t_hat_ell",
    "gap_indices_in_interval",
    "nu",
    "m_of_interval",
    "tau_star",
    "gumbel_k_cdf",
    "gumbel_k_pdf",
    "fit_gumbel_location",
    "sample_gumbel_k",
]


def _check_ascending(v):
    v = np.asarray(v, dtype=float)
    if v.ndim != 1:
        raise ValueError("expected a one-dimensional vector")
    if np.any(np.diff(v) < 0):
        raise ValueError("vector is not ascending")
    return v


@dataclass(frozen=True)
class GapSelector:
    """Either an index set ``J`` (1-based gap indices) or an energy interval [a, b]."""

    mode: str
    J: tuple = ()
    a: float = 0.0
    b: float = 0.0
    alpha: float = 0.0
    kappa: float = 0.0

    def __post_init__(self):
        if self.mode == "index_set":
            J = tuple(sorted(int(j) for j in self.J))
            if len(set(J)) != len(J):
                raise ValueError("index set has repeated entries")
            object.__setattr__(self, "J", J)
        elif self.mode == "interval":
            if not self.a <= self.b:
                raise ValueError("interval requires a <= b")
            if self.a <= -2 + self.kappa or self.b >= 2 - self.kappa:
                raise ValueError(f"interval [{self.a}, {self.b}] not inside (-2+kappa, 2-kappa)")
        else:
            raise ValueError(f"unknown selector mode {self.mode!r}")

    @classmethod
    def index_set(cls, J, alpha=0.0):
        return cls("index_set", J=tuple(J), alpha=alpha)

    @classmethod
    def bulk(cls, n, alpha):
        """All gap indices ceil(alpha N) .. min(floor((1 - alpha) N), N - 1)."""
        lo = max(int(np.ceil(alpha * n)), 1)
        hi = min(int(np.floor((1 - alpha) * n)), n - 1)
        return cls("index_set", J=tuple(range(lo, hi + 1)), alpha=alpha)

    @classmethod
    def interval(cls, a, b, kappa=0.0):
        return cls("interval", a=float(a), b=float(b), kappa=kappa)

    def validate_for(self, n):
        """Check the index set against dimension ``n`` and the bulk window."""
        if self.mode != "index_set":
            return
        if not self.J:
            return
        if self.J[0] < 1 or self.J[-1] > n - 1:
            raise ValueError(f"gap indices must lie in [1, {n - 1}]")
        lo = int(np.ceil(self.alpha * n))
        hi = int(np.floor((1 - self.alpha) * n))
        if self.J[0] < lo or self.J[-1] > hi:
            raise ValueError(f"gap indices must lie in the bulk [{lo}, {hi}]")

    def to_dict(self):
        if self.mode == "interval":
            d = {"mode": "interval", "a": self.a, "b": self.b}
            if self.kappa:
                d["kappa"] = self.kappa
            return d
        return {"mode": "index_set", "alpha": self.alpha, "J": list(self.J)}

    @classmethod
    def from_dict(cls, d):
        if d.get("mode") == "interval":
            return cls.interval(d["a"], d["b"], d.get("kappa", 0.0))
        if d.get("mode") == "index_set":
            return cls.index_set(d["J"], d.get("alpha", 0.0))
        raise ValueError(f"unknown selector mode {d.get('mode')!r}")

    def to_json(self):
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


def _kth_largest(values, ell):
    if ell < 1:
        raise ValueError("ell must be at least 1")
    if ell > values.size:
        return 0.0
    return float(np.partition(values, values.size - ell)[values.size - ell])


def t_ell(v, sel, ell):
    """The ell-th largest gap among ``sel.J`` (0 when ell exceeds |J|)."""
    v = _check_ascending(v)
    J = np.asarray(sel.J if isinstance(sel, GapSelector) else sel, dtype=int)
    if J.size and (J.min() < 1 or J.max() > v.size - 1):
        raise ValueError("gap index out of range")
    gaps = v[J] - v[J - 1]
    return _kth_largest(gaps, ell)


def gap_indices_in_interval(v, a, b):
    """1-based indices i <= N - 1 with v_i in [a, b]."""
    v = np.asarray(v)
    i = np.nonzero((v[:-1] >= a) & (v[:-1] <= b))[0]
    return i + 1


def t_hat_ell(v, sel, ell):
    """The ell-th largest gap v_{i+1} - v_i over i <= N - 1 with v_i in [a, b]."""
    v = _check_ascending(v)
    a, b = (sel.a, sel.b) if isinstance(sel, GapSelector) else sel
    i = gap_indices_in_interval(v, a, b)
    return _kth_largest(v[i] - v[i - 1], ell)


def nu(n):
    """Gap scale N / sqrt(log N)."""
    if n < 2:
        raise ValueError("n must be at least 2")
    return n / np.sqrt(np.log(n))


def m_of_interval(a, b=None):
    """inf over [a, b] of sqrt(4 - x^2)."""
    if b is None:
        a, b = a
    if not -2 < a <= b < 2:
        raise ValueError("interval must lie inside (-2, 2)")
    return float(min(np.sqrt(4 - a * a), np.sqrt(4 - b * b)))


def tau_star(gap, n, m):
    """Recentred maximal-gap statistic.

    (1/4) sqrt(2 log N) (M N gap - sqrt(32 log N)) + (5/8) log(2 log N).
    """
    if n < 2 or m <= 0:
        raise ValueError("need n >= 2 and M > 0")
    ln = np.log(n)
    return 0.25 * np.sqrt(2 * ln) * (m * n * np.asarray(gap) - np.sqrt(32 * ln)) + 0.625 * np.log(2 * ln)


def gumbel_k_cdf(x, k, c2=0.0):
    """CDF of the density exp(k(c2 - x) - exp(c2 - x)) / (k - 1)!."""
    if k < 1:
        raise ValueError("k must be at least 1")
    return gammaincc(k, np.exp(c2 - np.asarray(x, dtype=float)))


def gumbel_k_pdf(x, k, c2=0.0):
    from scipy.special import gammaln

    y = c2 - np.asarray(x, dtype=float)
    return np.exp(k * y - np.exp(y) - gammaln(k))


def fit_gumbel_location(tau, k):
    """Maximum-likelihood c2 for the Gumbel-k family with unit scale.

    The score equation gives exp(c2) = n k / sum exp(-tau).
    """
    tau = np.asarray(tau, dtype=float)
    if tau.size == 0:
        raise ValueError("no samples")
    shift = tau.min()
    return float(np.log(tau.size * k) - np.log(np.sum(np.exp(-(tau - shift)))) + shift)


def sample_gumbel_k(rng, k, c2, size):
    """Draws from the Gumbel-k family: c2 - log(Gamma(k, 1))."""
    return c2 - np.log(rng.gamma(k, 1.0, size))
