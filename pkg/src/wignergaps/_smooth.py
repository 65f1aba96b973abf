"""C-infinity transition functions and derivative jets.

Every cutoff in the package (counting kernels, window functions, test
functions) is built from the single transition

    s(x) = sigma(x) / (sigma(x) + sigma(1 - x)),   sigma(x) = exp(-1/x) for x > 0,

which is 0 for x <= 0, 1 for x >= 1 and satisfies s(1/2) = 1/2.  Writing
s = expit(u) with u(x) = 1/(1-x) - 1/x, derivatives follow from Faa di Bruno
with the logistic derivatives expressed as polynomials in expit(u).
"""

from math import comb, factorial

import numpy as np
from numpy.polynomial import Polynomial
from scipy.special import expit

MAX_ORDER = 6

# logistic derivatives d^k/du^k expit(u) as polynomials in L = expit(u)
_LOGISTIC = [Polynomial([0.0, 1.0])]
for _ in range(MAX_ORDER):
    _LOGISTIC.append(_LOGISTIC[-1].deriv() * Polynomial([0.0, 1.0, -1.0]))

# below this distance from {0, 1} every derivative is smaller than 1e-150
_EDGE = 2e-3


def _bell(n, k, xs):
    """Partial Bell polynomial B_{n,k}(x_1, ..., x_{n-k+1}) on arrays."""
    if n == 0 and k == 0:
        return np.ones_like(xs[0])
    if n == 0 or k == 0:
        return np.zeros_like(xs[0])
    out = np.zeros_like(xs[0])
    for i in range(1, n - k + 2):
        out = out + comb(n - 1, i - 1) * xs[i - 1] * _bell(n - i, k - 1, xs)
    return out


def transition(x, order=0):
    """Evaluate the k-th derivative of the unit transition ``s`` at ``x``."""
    x = np.asarray(x, dtype=float)
    if order > MAX_ORDER:
        raise ValueError(f"derivative order {order} exceeds {MAX_ORDER}")
    out = np.zeros_like(x)
    if order == 0:
        out[x >= 1.0 - _EDGE] = 1.0
    inner = (x > _EDGE) & (x < 1.0 - _EDGE)
    if not inner.any():
        return out
    xi = x[inner]
    if order == 0:
        out[inner] = expit(1.0 / (1.0 - xi) - 1.0 / xi)
        return out
    # s(x) = 1 - s(1 - x): evaluate on x <= 1/2 where expit(u) is small and
    # the logistic polynomials do not cancel
    upper = xi > 0.5
    xi = np.where(upper, 1.0 - xi, xi)
    u = 1.0 / (1.0 - xi) - 1.0 / xi
    L = expit(u)
    # u^{(k)} for k = 1..order
    du = [
        factorial(k) * ((1.0 - xi) ** -(k + 1) - (-1.0) ** k * xi ** -(k + 1))
        for k in range(1, order + 1)
    ]
    val = np.zeros_like(xi)
    for k in range(1, order + 1):
        val = val + _LOGISTIC[k](L) * _bell(order, k, du)
    out[inner] = np.where(upper, (-1.0) ** (order + 1) * val, val)
    return out


def step_jet(x, lo, hi, order=0):
    """Jet of the increasing step from 0 (x <= lo) to 1 (x >= hi).

    Returns an array of shape ``(order + 1,) + x.shape`` holding the value and
    derivatives with respect to ``x``.
    """
    x = np.asarray(x, dtype=float)
    w = hi - lo
    if w <= 0:
        raise ValueError("step requires lo < hi")
    t = (x - lo) / w
    return np.stack([transition(t, k) * w**-k for k in range(order + 1)])


def down_jet(x, lo, hi, order=0):
    """Jet of the decreasing step from 1 (x <= lo) to 0 (x >= hi)."""
    jet = -step_jet(x, lo, hi, order)
    jet[0] += 1.0
    return jet


def jet_product(*jets):
    """Leibniz rule for a product of jets sharing order and grid."""
    out = jets[0]
    for other in jets[1:]:
        order = out.shape[0] - 1
        res = np.zeros_like(out)
        for n in range(order + 1):
            for k in range(n + 1):
                res[n] = res[n] + comb(n, k) * out[k] * other[n - k]
        out = res
    return out


def step(x, lo, hi):
    return step_jet(x, lo, hi, 0)[0]


def down(x, lo, hi):
    return down_jet(x, lo, hi, 0)[0]


def transition_supnorms(max_order=3, n_grid=200_001):
    """Dense-grid sup norms of s', s'', ... on [0, 1]."""
    grid = np.linspace(0.0, 1.0, n_grid)
    return {k: float(np.max(np.abs(transition(grid, k)))) for k in range(1, max_order + 1)}
