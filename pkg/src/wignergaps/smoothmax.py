"""Free-energy (log-sum-exp) regularization of the ell-th largest gap.

For an index set J and weights w_j = exp(beta nu (v_{j+1} - v_j)), the
partition function over increasing ell-tuples factorizes, so

    Z_ell = e_ell(w),      F_ell = (log Z_ell - log Z_{ell-1}) / beta,

with e_ell the elementary symmetric polynomial.  Everything is evaluated in
the log domain with the O(|J| ell) recurrence e_k <- e_k + w e_{k-1}.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _smooth
from .gaps import nu as gap_scale
from .spectral import classical_locations

__all__ = [
    "RegularizationParams",
    "CutoffSpec",
    "CutoffBundle",
    "log_elementary_symmetric",
    "inclusion_probabilities",
    "z_ell",
    "f_ell",
    "grad_f",
    "f_hat",
    "cutoff_functions",
    "interval_window",
    "second_order_constant",
]


@dataclass(frozen=True)
class RegularizationParams:
    """Inverse temperature ``beta = N**gamma`` and gap scale ``nu``.

    ``frak_a`` bounds the rank: ell <= N**frak_a.
    """

    beta: float
    gamma: float
    nu: float
    frak_a: float = 0.0

    def __post_init__(self):
        if self.beta <= 0:
            raise ValueError("beta must be positive")
        if self.frak_a < 0:
            raise ValueError("frak_a must be nonnegative")
        if not self.gamma > self.frak_a:
            raise ValueError("need gamma > frak_a")

    @classmethod
    def for_n(cls, n, gamma, frak_a=0.0):
        return cls(float(n) ** gamma, gamma, gap_scale(n), frak_a)

    @classmethod
    def from_beta(cls, n, beta, frak_a=0.0):
        return cls(float(beta), float(np.log(beta) / np.log(n)), gap_scale(n), frak_a)

    def to_dict(self):
        return {"beta": self.beta, "gamma": self.gamma, "nu": self.nu, "frak_a": self.frak_a}


def log_elementary_symmetric(logw, k_max):
    """log e_k(w) for k = 0..k_max from log weights (``-inf`` allowed)."""
    logw = np.asarray(logw, dtype=float)
    out = np.full(k_max + 1, -np.inf)
    out[0] = 0.0
    with np.errstate(invalid="ignore"):
        for lw in logw:
            out[1:] = np.logaddexp(out[1:], lw + out[:-1])
    return out


def _prefix_tables(logw, k_max):
    n = logw.size
    pre = np.full((n + 1, k_max + 1), -np.inf)
    pre[0, 0] = 0.0
    with np.errstate(invalid="ignore"):
        for m in range(n):
            pre[m + 1] = pre[m]
            pre[m + 1, 1:] = np.logaddexp(pre[m, 1:], logw[m] + pre[m, :-1])
    return pre


def inclusion_probabilities(logw, k):
    """pi_j = w_j e_{k-1}(w without j) / e_k(w), the d log e_k / d log w_j.

    Uses prefix and suffix tables so the cost is O(|J| k^2).
    """
    logw = np.asarray(logw, dtype=float)
    n = logw.size
    if k == 0:
        return np.zeros(n)
    pre = _prefix_tables(logw, k)
    suf = _prefix_tables(logw[::-1], k)[::-1]
    log_ek = pre[n, k]
    # e_{k-1}(w \ j) = sum_{a+b=k-1} pre[j][a] * suf[j+1][b]
    a = np.arange(k)
    terms = pre[:n, a] + suf[1:, k - 1 - a]
    with np.errstate(invalid="ignore"):
        log_without = np.logaddexp.reduce(terms, axis=1)
        return np.exp(logw + log_without - log_ek)


def _gap_log_weights(v, J, p):
    v = np.asarray(v, dtype=float)
    J = np.asarray(J, dtype=int)
    if J.size and (J.min() < 1 or J.max() > v.size - 1):
        raise ValueError("gap index out of range")
    return p.beta * p.nu * (v[J] - v[J - 1])


def z_ell(v, J, ell, p):
    """log Z_ell = log e_ell(exp(beta nu gaps over J))."""
    if ell < 0:
        raise ValueError("ell must be nonnegative")
    return float(log_elementary_symmetric(_gap_log_weights(v, J, p), ell)[ell])


def f_ell(v, J, ell, p):
    """Regularized ell-th gap (log Z_ell - log Z_{ell-1}) / beta.

    Returns 0 when ell exceeds |J|, mirroring the convention for the gap.
    """
    if ell < 1:
        raise ValueError("ell must be at least 1")
    if ell > len(J):
        return 0.0
    lz = log_elementary_symmetric(_gap_log_weights(v, J, p), ell)
    return float((lz[ell] - lz[ell - 1]) / p.beta)


def grad_f(v, J, ell, p):
    """Gradient of :func:`f_ell` with respect to every coordinate of ``v``."""
    v = np.asarray(v, dtype=float)
    J = np.asarray(J, dtype=int)
    out = np.zeros(v.size)
    if ell < 1:
        raise ValueError("ell must be at least 1")
    if ell > J.size:
        return out
    logw = _gap_log_weights(v, J, p)
    dg = p.nu * (inclusion_probabilities(logw, ell) - inclusion_probabilities(logw, ell - 1))
    np.add.at(out, J, dg)
    np.add.at(out, J - 1, -dg)
    return out


def second_order_constant(v, J, ell, p, rel_step=1e-4):
    """Empirical C_2 = sum_{m,n} |d^2 F / dv_m dv_n| / (beta nu^2 ell^2).

    The Hessian is taken by central differences of the analytic gradient.
    """
    v = np.asarray(v, dtype=float)
    J = np.asarray(J, dtype=int)
    coords = np.unique(np.concatenate([J, J - 1]))
    h = rel_step / (p.beta * p.nu)
    total = 0.0
    for m in coords:
        e = np.zeros(v.size)
        e[m] = h
        col = (grad_f(v + e, J, ell, p) - grad_f(v - e, J, ell, p)) / (2 * h)
        total += np.abs(col).sum()
    return float(total / (p.beta * p.nu**2 * ell**2))


@dataclass(frozen=True)
class CutoffSpec:
    """Smooth cutoffs for the interval statistic.

    ``eps_w`` sets the clearance scale N^{-1-eps_w} around interval endpoints;
    ``eps_r`` widens the index window by ceil(N^eps_r) on each side.
    """

    kind: str = "smooth_bump"
    eps_w: float = 0.1
    eps_r: float = 0.2
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind != "smooth_bump":
            raise ValueError(f"unknown cutoff kind {self.kind!r}")
        if self.eps_w <= 0 or self.eps_r <= 0:
            raise ValueError("cutoff exponents must be positive")

    def to_dict(self):
        return {"kind": self.kind, "eps_w": self.eps_w, "eps_r": self.eps_r}


def _bump(x):
    # 1 on |x| <= 1/2, 0 on |x| >= 1
    return _smooth.transition(2.0 * (1.0 - np.abs(x)))


def _plateau(x):
    # 1 for x <= 1/2, 0 for x >= 1
    return _smooth.transition(2.0 * (1.0 - np.asarray(x, dtype=float)))


def _soft_left(x):
    # 1 for x <= -1/2, 0 for x >= 1/2
    return _smooth.transition(0.5 - np.asarray(x, dtype=float))


def interval_window(n, a, b, eps_r):
    """1-based gap indices around the classical indices nearest a and b."""
    gamma = classical_locations(n).gamma
    i0 = int(np.argmin(np.abs(gamma - a))) + 1
    j0 = int(np.argmin(np.abs(gamma - b))) + 1
    pad = int(np.ceil(n**eps_r))
    lo = max(i0 - pad, 1)
    hi = min(j0 + pad, n - 1)
    return np.arange(lo, hi + 1)


@dataclass(frozen=True, eq=False)
class CutoffBundle:
    """Endpoint cutoffs for the interval [a, b] at dimension n."""

    n: int
    a: float
    b: float
    cut: CutoffSpec
    window: np.ndarray

    @property
    def scale(self):
        return self.n ** (1.0 + self.cut.eps_w)

    def g1(self, x):
        return _soft_left(10.0 * self.scale * (self.a - np.asarray(x, dtype=float)))

    def g2(self, x):
        return _soft_left(10.0 * self.scale * (np.asarray(x, dtype=float) - self.b))

    def _clearance(self, v, endpoint):
        pts = np.asarray(v, dtype=float)[self.window - 1]
        return float(_plateau(np.sum(_bump(self.scale * (pts - endpoint)))))

    def f1(self, v):
        return self._clearance(v, self.a)

    def f2(self, v):
        return self._clearance(v, self.b)

    def supnorm_report(self, max_order=3):
        """Sup norms of the unit transition's derivatives and of g1's."""
        base = _smooth.transition_supnorms(max_order)
        g_scale = 10.0 * self.scale
        return {
            "transition": base,
            "g": {k: base[k] * g_scale**k for k in base},
        }


def cutoff_functions(cut, n, a, b):
    """Build f1, f2, g1, g2 for interval [a, b] at dimension ``n``."""
    return CutoffBundle(n, float(a), float(b), cut, interval_window(n, a, b, cut.eps_r))


def f_hat(v, interval, ell, p, cut, bundle=None):
    """Regularized ell-th largest gap with left point in ``interval``.

    f1 f2 (log Zhat_ell - log Zhat_{ell-1}) / beta, where Zhat weights each
    gap in the index window by g1 g2 of its left point.  Returns 0 whenever
    a clearance factor vanishes or fewer than ell gaps carry weight.
    """
    v = np.asarray(v, dtype=float)
    a, b = interval
    if bundle is None:
        bundle = cutoff_functions(cut, v.size, a, b)
    ff = bundle.f1(v) * bundle.f2(v)
    if ff == 0.0:
        return 0.0
    idx = bundle.window
    left = v[idx - 1]
    with np.errstate(divide="ignore"):
        logw = np.log(bundle.g1(left) * bundle.g2(left)) + p.beta * p.nu * (v[idx] - left)
    lz = log_elementary_symmetric(logw, ell)
    if not np.isfinite(lz[ell]):
        return 0.0
    return float(ff * (lz[ell] - lz[ell - 1]) / p.beta)
