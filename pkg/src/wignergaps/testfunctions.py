"""Smooth test functions S with derivative jets up to order 5.

Kinds
-----
polynomial
    ``coeffs`` in increasing degree; sup norms are taken over ``range``.
smoothed_lp
    |x - center|^p regularized at the origin as (u^2 + w^2)^{p/2} (exact
    |u|^p for even integer p), times a cutoff that is 1 for
    |u| <= 4 N^eps and 0 beyond 8 N^eps.
smoothed_indicator
    Smooth bracket of the indicator of [lo, hi] with transition width
    w = N^{-eps}; ``side`` "outer" dominates the indicator, "inner" is
    dominated by it.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import prod

import numpy as np
from numpy.polynomial import Polynomial

from . import _smooth

__all__ = ["TestFunctionSpec", "TestFunction", "build_test_function", "compose_jet"]

MAX_ORDER = 5
KINDS = ("polynomial", "smoothed_lp", "smoothed_indicator")


@dataclass(frozen=True)
class TestFunctionSpec:
    __test__ = False  # keep pytest from collecting the class

    kind: str
    params: dict = field(default_factory=dict)
    eps: float = 0.1

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown test function kind {self.kind!r}")
        if self.eps < 0:
            raise ValueError("eps must be nonnegative")

    def to_dict(self):
        return {"kind": self.kind, "params": dict(self.params), "eps": self.eps}

    @classmethod
    def from_dict(cls, d):
        return cls(d["kind"], dict(d.get("params", {})), float(d.get("eps", 0.1)))


def compose_jet(outer, inner):
    """Jet of phi(psi(x)) from phi's derivatives at psi(x) and psi's jet.

    ``outer[k]`` is phi^{(k)}(psi(x)); ``inner[k]`` is psi^{(k)}(x).
    """
    order = inner.shape[0] - 1
    out = np.zeros_like(inner)
    out[0] = outer[0]
    xs = [inner[k] for k in range(1, order + 1)]
    for n in range(1, order + 1):
        for k in range(1, n + 1):
            out[n] = out[n] + outer[k] * _smooth._bell(n, k, xs)
    return out


def _power_jet(x, q, order):
    """Derivatives of s -> s^q at s = x."""
    return np.stack([prod(q - m for m in range(k)) * x ** (q - k) for k in range(order + 1)])


class TestFunction:
    """Callable S with ``jet`` and dense-grid derivative sup norms."""

    __test__ = False

    def __init__(self, spec, n):
        self.spec = spec
        self.n = n
        p = spec.params
        if spec.kind == "polynomial":
            self.poly = Polynomial(p.get("coeffs", [0.0, 1.0]))
            self.range = tuple(p.get("range", (-10.0, 10.0)))
        elif spec.kind == "smoothed_lp":
            self.center = float(p.get("center", 0.0))
            self.power = float(p.get("p", 2.0))
            self.width = float(n) ** (-spec.eps)
            self.radius = 4.0 * float(n) ** spec.eps
            self.range = (self.center - 2.2 * self.radius, self.center + 2.2 * self.radius)
        else:
            self.lo = float(p["lo"])
            self.hi = float(p["hi"])
            self.width = float(p.get("width", float(n) ** (-spec.eps)))
            self.side = p.get("side", "outer")
            if self.side not in ("outer", "inner"):
                raise ValueError("side must be 'outer' or 'inner'")
            if self.lo >= self.hi:
                raise ValueError("indicator needs lo < hi")
            self.range = (self.lo - 2 * self.width, self.hi + 2 * self.width)

    def jet(self, x, order=0):
        """Array of shape (order + 1,) + x.shape with S, S', ..., S^{(order)}."""
        if order > MAX_ORDER:
            raise ValueError(f"order must be at most {MAX_ORDER}")
        x = np.asarray(x, dtype=float)
        kind = self.spec.kind
        if kind == "polynomial":
            return np.stack([self.poly.deriv(k)(x) if k else self.poly(x) for k in range(order + 1)])
        if kind == "smoothed_indicator":
            w = self.width
            if self.side == "outer":
                left = _smooth.step_jet(x, self.lo - w, self.lo, order)
                right = _smooth.down_jet(x, self.hi, self.hi + w, order)
            else:
                left = _smooth.step_jet(x, self.lo, self.lo + w, order)
                right = _smooth.down_jet(x, self.hi - w, self.hi, order)
            return _smooth.jet_product(left, right)
        u = x - self.center
        p = self.power
        if p == int(p) and int(p) % 2 == 0:
            core = np.stack([prod(p - m for m in range(k)) * u ** max(p - k, 0) * (k <= p) for k in range(order + 1)])
        else:
            inner = np.zeros((order + 1,) + u.shape)
            inner[0] = u * u + self.width**2
            if order >= 1:
                inner[1] = 2 * u
            if order >= 2:
                inner[2] = 2.0
            core = compose_jet(_power_jet(inner[0], p / 2, order), inner)
        au = np.abs(u)
        cut = _smooth.down_jet(au, self.radius, 2 * self.radius, order)
        sign = np.where(u < 0, -1.0, 1.0)
        for k in range(1, order + 1):
            cut[k] = cut[k] * sign**k
        return _smooth.jet_product(core, cut)

    def __call__(self, x):
        return self.jet(x, 0)[0]

    def supnorms(self, max_order=MAX_ORDER, n_grid=200_001):
        """sup |S^{(d)}| for d = 0..max_order on a dense grid over the support."""
        grid = np.linspace(self.range[0], self.range[1], n_grid)
        jet = self.jet(grid, max_order)
        return {d: float(np.max(np.abs(jet[d]))) for d in range(max_order + 1)}


def build_test_function(spec, n):
    return TestFunction(spec, n)
