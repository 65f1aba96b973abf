"""Regularized eigenvalues from the resolvent via the Helffer-Sjostrand formula.

For a smoothed counting function f_E (1 left of E, 0 right of E + eta1) the
Helffer-Sjostrand representation with the almost-analytic extension
(f + i y f') chi(y) gives, in real form and with m = m_N,

    tr f_E = -(N/pi) Int Int_{y>0} [ y f'' chi Im m + f chi' Im m + y f' chi' Re m ].

The chi' piece lives on 1 <= y <= 2 and is called ``A``.  Splitting the f''
piece at y = eta2 and integrating by parts in x on y > eta2 produces ``B``
(the kept bulk term) plus two small terms, the y < eta2 strip and the
boundary term at y = eta2, which are returned as ``dropped_terms``.

Because every term is linear in m_N = (1/N) sum 1/(lambda - z), each one is
a sum of per-eigenvalue kernels depending only on d0 = lambda - E; the inner
integrals over y are done in closed form where possible.  An independent
route treats m_N as a black box and integrates on a (x, y) grid.

Regularized eigenvalue: with r a smooth step from 0 at count i - 1/2 to 1 at
count i and window [gamma_j, gamma_k] of classical locations,

    tilde_lambda_i = gamma_k - Int_{gamma_j}^{gamma_k} r(A_E + B_E) dE,

which equals lambda_i exactly when A_E + B_E is replaced by the sharp count.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial.chebyshev import Chebyshev
from numpy.polynomial.legendre import leggauss

from . import _smooth
from .errors import NumericalError
from .spectral import Spectrum, classical_locations

__all__ = [
    "HSParams",
    "CountingKernel",
    "HSResult",
    "RegularizedEigenvalue",
    "EnergyGrid",
    "FDEstimate",
    "smoothed_counting_kernel",
    "hs_kernel_terms",
    "hs_functional",
    "counting_function",
    "window_indices",
    "tilde_lambda",
    "tilde_lambdas",
    "TildeLambdaFunctional",
    "RegularizedGapFunctional",
    "fd_entry_derivative",
    "perturb_entry",
    "theta_scaled",
    "dump_regularized_csv",
]


@dataclass(frozen=True)
class HSParams:
    """Regularization exponents and quadrature controls.

    eta1 = eta2 = N^{-1-delta}; the window half width is ceil(1.5 N^{eps/2}).
    """

    delta: float = 0.05
    eps: float = 0.1
    n_e: int = 16
    n_sigma: int = 200
    sigma_max: float = 2.0
    panel_tol: float = 1e-13
    max_refine: int = 8

    def __post_init__(self):
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")
        if not 0 < self.eps < 1:
            raise ValueError("eps must lie in (0, 1)")
        if self.sigma_max != 2.0:
            raise ValueError("the cutoff chi is supported on |y| <= 2")

    @property
    def eps1(self):
        return self.eps / 2

    def eta1(self, n):
        return float(n) ** (-1.0 - self.delta)

    def eta2(self, n):
        return float(n) ** (-self.delta) / n

    def half_width(self, n):
        return int(np.ceil(1.5 * float(n) ** self.eps1))

    def to_dict(self):
        return {
            "delta": self.delta,
            "eps": self.eps,
            "n_e": self.n_e,
            "n_sigma": self.n_sigma,
            "sigma_max": self.sigma_max,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: d[k] for k in ("delta", "eps", "n_e", "n_sigma", "sigma_max") if k in d})


# ---------------------------------------------------------------- quadrature


def _composite(edges, npts):
    x, w = leggauss(npts)
    edges = np.asarray(edges, dtype=float)
    lo, hi = edges[:-1, None], edges[1:, None]
    half = (hi - lo) / 2
    return (half * x + (hi + lo) / 2).ravel(), (half * w).ravel()


def _chi(y):
    return _smooth.transition(2.0 - np.abs(y))


def _dchi(y):
    # derivative of chi for y > 0
    return -_smooth.transition(2.0 - np.asarray(y), 1)


class _Rules:
    """Fixed node sets in the transition variable t in [0, 1] and in y in [1, 2]."""

    def __init__(self):
        self.t, self.tw = _composite(np.linspace(0, 1, 9), 16)
        self.t8, tw8 = _composite(np.linspace(0, 1, 3), 8)
        self.f = 1.0 - _smooth.transition(self.t)
        self.sp = _smooth.transition(self.t, 1)
        self.spp = _smooth.transition(self.t, 2)
        sp8 = _smooth.transition(self.t8, 1)
        # far-field rule: weights for -s'(t) renormalized to integrate to -1
        self.msp8_w = -sp8 * tw8 / np.sum(sp8 * tw8)
        self.y, self.yw = _composite(np.linspace(1, 2, 5), 16)
        self.dchi_w = _dchi(self.y) * self.yw
        self.bchi_w = (_chi(self.y) + self.y * _dchi(self.y)) * self.yw


_RULES = _Rules()
_NEAR = 50.0  # in units of eta1


def _smooth_terms(d0, eta1):
    """Per-eigenvalue pieces that only involve 1 <= y <= 2.

    Returns A and the y in [1, 2] part of B, both shape ``d0.shape``.
    """
    R = _RULES
    d0 = np.asarray(d0, dtype=float).ravel()
    out_a = np.empty_like(d0)
    out_b = np.empty_like(d0)
    chunk = max(1, 2_000_000 // (R.t.size * R.y.size))
    for s in range(0, d0.size, chunk):
        dd0 = d0[s : s + chunk]
        d = dd0[:, None] - eta1 * R.t[None, :]
        dd = d[:, :, None]
        y = R.y[None, None, :]
        q = 1.0 / (dd * dd + y * y)
        inner = np.pi / 2 + np.arctan(-dd0[:, None] / R.y[None, :])
        inner = inner + eta1 * np.einsum("t,nty->ny", R.f * R.tw, y * q)
        inner = inner + R.y[None, :] * np.einsum("t,nty->ny", -R.sp * R.tw, dd * q)
        out_a[s : s + chunk] = -(inner @ R.dchi_w) / np.pi
        k2 = np.einsum("nty,y->nt", dd * q, R.bchi_w)
        out_b[s : s + chunk] = (k2 @ (-R.sp * R.tw)) / np.pi
    return out_a, out_b


def _near_fine(d0, eta1, eta2):
    R = _RULES
    d = d0[:, None] - eta1 * R.t[None, :]
    k1 = np.arctan(d * (1.0 - eta2) / (d * d + eta2))
    return (k1 @ (-R.sp * R.tw)) / np.pi


def _near_terms(d0, eta1, eta2):
    """y in [eta2, 1] part of B per eigenvalue, in closed form in y."""
    R = _RULES
    d0 = np.asarray(d0, dtype=float)
    shape = d0.shape
    d0 = d0.ravel()
    out = np.empty_like(d0)
    chunk = max(1, 4_000_000 // R.t8.size)
    for s in range(0, d0.size, chunk):
        dd0 = d0[s : s + chunk]
        d = dd0[:, None] - eta1 * R.t8[None, :]
        k1 = np.arctan(d * (1.0 - eta2) / (d * d + eta2))
        out[s : s + chunk] = (k1 @ R.msp8_w) / np.pi
    near = np.nonzero(np.abs(d0) < _NEAR * eta1)[0]
    if near.size:
        out[near] = _near_fine(d0[near], eta1, eta2)
    return out.reshape(shape)


def _strip_term(d0, eta1, eta2):
    """y < eta2 strip per eigenvalue; the t-rule is split at the kink d = 0."""
    R = _RULES
    out = np.empty_like(d0)
    u, uw = R.t, R.tw
    for m, x in enumerate(d0):
        tk = x / eta1
        if 0.0 < tk < 1.0:
            t = np.concatenate([tk * u, tk + (1.0 - tk) * u])
            tw = np.concatenate([tk * uw, (1.0 - tk) * uw])
        else:
            t, tw = u, uw
        ad = np.abs(x - eta1 * t)
        with np.errstate(divide="ignore", invalid="ignore"):
            g = np.where(ad > 0, ad * np.arctan(eta2 / ad), 0.0)
        out[m] = np.sum((eta2 - g) * _smooth.transition(t, 2) * tw) / (np.pi * eta1)
    return out


def hs_kernel_terms(d0, eta1, eta2):
    """Per-eigenvalue contributions (A, B, D1, D2) at offsets d0 = lambda - E.

    Their sum equals 1 - s(d0 / eta1), the smoothed count of one eigenvalue.
    """
    R = _RULES
    d0 = np.atleast_1d(np.asarray(d0, dtype=float))
    a, b2 = _smooth_terms(d0, eta1)
    b1 = _near_fine(d0, eta1, eta2)
    d = d0[:, None] - eta1 * R.t[None, :]
    d1 = _strip_term(d0, eta1, eta2)
    d2 = ((eta2 * d / (d * d + eta2 * eta2)) @ (-R.sp * R.tw)) / np.pi
    return a, b1 + b2, d1, d2


# ---------------------------------------------------------------- kernels


@dataclass(frozen=True)
class CountingKernel:
    """f_E(x) = 1 for x <= E, 0 for x >= E + eta1, smooth in between."""

    e_center: float
    eta1: float

    def __call__(self, x, order=0):
        return _smooth.down_jet(x, self.e_center, self.e_center + self.eta1, order)[order]

    def jet(self, x, order):
        return _smooth.down_jet(x, self.e_center, self.e_center + self.eta1, order)

    def trace(self, lam):
        return float(np.sum(self(np.asarray(lam))))


def smoothed_counting_kernel(e_center, eta1):
    if eta1 <= 0:
        raise ValueError("eta1 must be positive")
    return CountingKernel(float(e_center), float(eta1))


@dataclass(frozen=True)
class HSResult:
    A_E: float
    B_E: float
    dropped_terms: float
    trace: float
    quad_error: float = 0.0
    route: str = "analytic"

    @property
    def total(self):
        return self.A_E + self.B_E + self.dropped_terms


def _spectrum_of(source):
    if isinstance(source, Spectrum):
        return source.lam
    h = getattr(source, "h", None)
    if h is not None or (isinstance(source, np.ndarray) and source.ndim == 2):
        from .spectral import eigenvalues

        return eigenvalues(source).lam
    return np.asarray(source, dtype=float)


def _stieltjes(lam, z):
    """N m_N(z) = sum 1/(lambda - z), chunked over z."""
    z = np.asarray(z, dtype=complex)
    flat = z.ravel()
    out = np.empty(flat.size, dtype=complex)
    chunk = max(1, 4_000_000 // max(lam.size, 1))
    for s in range(0, flat.size, chunk):
        out[s : s + chunk] = np.sum(1.0 / (lam[None, :] - flat[s : s + chunk, None]), axis=1)
    return out.reshape(z.shape)


def _hs_quadrature(nm, kernel, eta2, p, e_panels):
    """All four terms with N m_N treated as a black-box function ``nm``."""
    E, eta1 = kernel.e_center, kernel.eta1
    xw, ww = _composite(np.linspace(E, E + eta1, e_panels + 1), 16)
    f0, f1, f2 = kernel.jet(xw, 2)
    R = _RULES
    # f = 1 on (-inf, E]: map x = E - tan(theta)
    th, thw = _composite(np.linspace(0.0, np.pi / 2, 33), 16)
    xt = E - np.tan(th)
    wt = thw / np.cos(th) ** 2
    mt = nm(xt[:, None] + 1j * R.y[None, :])
    mw = nm(xw[:, None] + 1j * R.y[None, :])
    inner = wt @ mt.imag + (ww * f0) @ mw.imag + R.y * ((ww * f1) @ mw.real)
    A = -(inner @ R.dchi_w) / np.pi
    ys, yws = _composite(np.geomspace(eta2, 2.0, p.n_sigma + 1), 8)
    bw = (_chi(ys) + ys * np.where(ys > 1, _dchi(ys), 0.0)) * yws
    mb = nm(xw[:, None] + 1j * ys[None, :])
    B = ((ww * f1) @ mb.real @ bw) / np.pi
    D2 = eta2 * ((ww * f1) @ nm(xw + 1j * eta2).real) / np.pi
    yd, ywd = _composite(np.concatenate([[0.0], np.geomspace(eta2 * 1e-8, eta2, 41)]), 8)
    md = nm(xw[:, None] + 1j * yd[None, :])
    D1 = -((ww * f2) @ md.imag @ (yd * ywd)) / np.pi
    return A, B, D1 + D2


def hs_functional(source, kernel, p, n=None, route="analytic"):
    """Helffer-Sjostrand split of tr f_E into A_E, B_E and the dropped terms.

    Parameters
    ----------
    source : Spectrum, MatrixSample, matrix or eigenvalue array
    kernel : CountingKernel
    p : HSParams
        Supplies eta2 = N^{-delta} / N.
    n : int, optional
        Dimension used for eta2; defaults to the number of eigenvalues.
    route : {"analytic", "quadrature"}
        "analytic" sums closed-form per-eigenvalue kernels; "quadrature"
        integrates N m_N(z) on a grid in (x, y) and also reports the change
        under panel refinement as ``quad_error``.
    """
    lam = _spectrum_of(source)
    n = lam.size if n is None else n
    eta2 = p.eta2(n)
    trace = kernel.trace(lam)
    if route == "analytic":
        a, b, d1, d2 = hs_kernel_terms(lam - kernel.e_center, kernel.eta1, eta2)
        return HSResult(float(a.sum()), float(b.sum()), float(d1.sum() + d2.sum()), trace)
    if route != "quadrature":
        raise ValueError(f"unknown route {route!r}")

    def nm(z):
        return _stieltjes(lam, z)

    coarse = max(p.n_e // 4, 1)
    A, B, D = _hs_quadrature(nm, kernel, eta2, p, coarse * 2)
    A0, B0, D0 = _hs_quadrature(nm, kernel, eta2, p, coarse)
    err = abs((A + B + D) - (A0 + B0 + D0))
    return HSResult(float(A), float(B), float(D), trace, float(err), route)


class CountingEvaluator:
    """A_E + B_E, the regularized eigenvalue count, for energies in [lo, hi].

    The y >= 1 part is smooth on the unit scale and is interpolated by
    Chebyshev polynomials on segments of length at most 1/2, built once; the
    remaining part is summed over all eigenvalues at every energy.
    """

    def __init__(self, lam, lo, hi, eta1, eta2, degree=12):
        self.lam = np.asarray(lam, dtype=float)
        self.eta1, self.eta2 = eta1, eta2
        n_seg = max(1, int(np.ceil((hi - lo) / 0.5)))
        self.edges = np.linspace(lo, hi, n_seg + 1)
        if hi - lo <= 0:
            self.edges = np.array([lo - 1e-3, lo + 1e-3])
        self.pieces = [
            Chebyshev.interpolate(self._smooth_sum, degree, domain=[x0, x1])
            for x0, x1 in zip(self.edges[:-1], self.edges[1:])
        ]

    def _smooth_sum(self, e):
        pa, pb = _smooth_terms(self.lam[None, :] - e[:, None], self.eta1)
        return (pa + pb).reshape(e.size, self.lam.size).sum(axis=1)

    def __call__(self, energies):
        energies = np.asarray(energies, dtype=float)
        seg = np.clip(np.searchsorted(self.edges, energies, side="right") - 1, 0, len(self.pieces) - 1)
        smooth = np.empty_like(energies)
        for s in np.unique(seg):
            sel = seg == s
            smooth[sel] = self.pieces[s](energies[sel])
        near = _near_terms(self.lam[None, :] - energies[:, None], self.eta1, self.eta2).sum(axis=1)
        return smooth + near


def counting_function(lam, energies, eta1, eta2):
    """A_E + B_E at each energy (see :class:`CountingEvaluator`)."""
    energies = np.asarray(energies, dtype=float)
    return CountingEvaluator(lam, energies.min(), energies.max(), eta1, eta2)(energies)


# ---------------------------------------------------------------- tilde lambda


@dataclass(frozen=True)
class RegularizedEigenvalue:
    i: int
    value: float
    window: tuple
    quad_error_estimate: float
    exact_gap_to_lambda: float | None = None


def window_indices(i, n, p, alpha=0.0):
    """Classical-location indices (j, k) = i -/+ ceil(1.5 N^{eps/2})."""
    w = p.half_width(n)
    j, k = i - w, i + w
    lo = max(int(np.ceil(alpha * n)), 1)
    hi = min(int(np.floor((1 - alpha) * n)), n)
    if j < 1 or k > n or i < lo or i > hi:
        raise ValueError(f"index {i} with window [{j}, {k}] leaves the admissible range [{lo}, {hi}]")
    return j, k


_GL16 = leggauss(16)
_GL8 = leggauss(8)


@dataclass(frozen=True, eq=False)
class EnergyGrid:
    """Panel edges in E; each panel carries a 16-point and an 8-point rule."""

    edges: np.ndarray

    @property
    def n_panels(self):
        return self.edges.size - 1


_BREAKS = np.array([-1.0, -0.75, -0.5, -0.25, 0.0, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0])


def _initial_edges(lam, windows, eta1):
    a = min(w[0] for w in windows)
    b = max(w[1] for w in windows)
    inside = lam[(lam > a - 20 * eta1) & (lam < b + 2 * eta1)]
    pts = (inside[:, None] + eta1 * _BREAKS[None, :]).ravel()
    ends = np.array([x for w in windows for x in w])
    edges = np.concatenate([pts[(pts > a) & (pts < b)], ends])
    return np.unique(edges)


def _panel_rules(lo, hi):
    half = (hi - lo)[:, None] / 2
    mid = (hi + lo)[:, None] / 2
    x16 = half * _GL16[0] + mid
    x8 = half * _GL8[0] + mid
    return x16, half * _GL16[1], x8, half * _GL8[1]


def _panel_integrals(count, lo, hi, indices, windows):
    """Per-panel 16- and 8-point integrals of r(count) for each index.

    Returns arrays of shape (n_indices, n_panels); panels outside an index's
    window contribute zero.
    """
    x16, w16, x8, w8 = _panel_rules(lo, hi)
    c16 = count(x16.ravel()).reshape(x16.shape)
    c8 = count(x8.ravel()).reshape(x8.shape)
    mids = (lo + hi) / 2
    q16 = np.zeros((len(indices), lo.size))
    q8 = np.zeros_like(q16)
    for m, (i, (a, b)) in enumerate(zip(indices, windows)):
        inwin = (mids > a) & (mids < b)
        if not inwin.any():
            continue
        r16 = _smooth.transition(2.0 * (c16[inwin] - (i - 0.5)))
        r8 = _smooth.transition(2.0 * (c8[inwin] - (i - 0.5)))
        q16[m, inwin] = np.sum(r16 * w16[inwin], axis=1)
        q8[m, inwin] = np.sum(r8 * w8[inwin], axis=1)
    return q16, q8


def tilde_lambdas(source, indices, p, alpha=0.0, grid=None, n=None):
    """Regularized eigenvalues for several indices sharing one energy grid.

    Parameters
    ----------
    source : Spectrum, MatrixSample, matrix or eigenvalue array
    indices : sequence of int
        1-based eigenvalue indices.
    p : HSParams
    alpha : float
        Bulk fraction; indices and windows must stay inside it.
    grid : EnergyGrid, optional
        Reuse a fixed grid (no refinement).  Used to differentiate in the
        matrix entries with a quadrature rule that does not move.

    Returns
    -------
    list of RegularizedEigenvalue, EnergyGrid
    """
    lam = _spectrum_of(source)
    n = lam.size if n is None else n
    gamma = classical_locations(n).gamma
    eta1, eta2 = p.eta1(n), p.eta2(n)
    indices = [int(i) for i in indices]
    wins = []
    for i in indices:
        j, k = window_indices(i, n, p, alpha)
        wins.append((float(gamma[j - 1]), float(gamma[k - 1])))
    lo_all = min(w[0] for w in wins)
    hi_all = max(w[1] for w in wins)
    count = CountingEvaluator(lam, lo_all, hi_all, eta1, eta2)

    edges = _initial_edges(lam, wins, eta1) if grid is None else grid.edges
    lo, hi = edges[:-1], edges[1:]
    q16, q8 = _panel_integrals(count, lo, hi, indices, wins)
    if grid is None:
        for _ in range(p.max_refine):
            perr = np.max(np.abs(q16 - q8), axis=0)
            bad = perr > p.panel_tol
            if not bad.any():
                break
            mid = (lo[bad] + hi[bad]) / 2
            new_lo = np.concatenate([lo[bad], mid])
            new_hi = np.concatenate([mid, hi[bad]])
            n16, n8 = _panel_integrals(count, new_lo, new_hi, indices, wins)
            keep = ~bad
            lo = np.concatenate([lo[keep], new_lo])
            hi = np.concatenate([hi[keep], new_hi])
            q16 = np.concatenate([q16[:, keep], n16], axis=1)
            q8 = np.concatenate([q8[:, keep], n8], axis=1)
        order = np.argsort(lo)
        lo, hi, q16, q8 = lo[order], hi[order], q16[:, order], q8[:, order]
        perr = np.max(np.abs(q16 - q8), axis=0)
        if np.any(perr > 1e3 * p.panel_tol):
            raise NumericalError(f"energy quadrature did not converge (panel error {perr.max():.2e})")
        grid = EnergyGrid(np.append(lo, hi[-1]))
    out = []
    for m, (i, w) in enumerate(zip(indices, wins)):
        value = w[1] - float(np.sum(q16[m]))
        err = float(np.sum(np.abs(q16[m] - q8[m])))
        exact = abs(value - lam[i - 1]) if lam.size == n else None
        out.append(RegularizedEigenvalue(i, value, w, err, exact))
    return out, grid


def tilde_lambda(source, i, p, alpha=0.0):
    """Regularized eigenvalue of index ``i`` (1-based)."""
    res, _ = tilde_lambdas(source, [i], p, alpha)
    return res[0]


def dump_regularized_csv(results, lam):
    """CSV rows (i, lambda_i, tilde_lambda_i, abs_error, quad_error_estimate)."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["i", "lambda_i", "tilde_lambda_i", "abs_error", "quad_error_estimate"])
    for r in results:
        li = float(lam[r.i - 1])
        w.writerow([r.i, repr(li), repr(r.value), repr(abs(r.value - li)), repr(r.quad_error_estimate)])
    return buf.getvalue()


# ---------------------------------------------------------------- entry derivatives


def theta_scaled(h, a, b, theta):
    """Copy of ``h`` with entries (a, b) and (b, a) multiplied by theta (0-based)."""
    out = np.array(h, copy=True)
    out[a, b] *= theta
    if a != b:
        out[b, a] *= theta
    return out


def perturb_entry(h, a, b, x, part="re"):
    """Add x to entry (a, b) along a real or imaginary direction, mirrored."""
    out = np.array(h, dtype=complex if (part == "im" or np.iscomplexobj(h)) else float, copy=True)
    if a == b:
        if part == "im":
            raise ValueError("diagonal entries are real")
        out[a, a] += x
        return out
    if part == "re":
        out[a, b] += x
        out[b, a] += x
    elif part == "im":
        out[a, b] += 1j * x
        out[b, a] -= 1j * x
    else:
        raise ValueError(f"unknown direction {part!r}")
    return out


@dataclass(frozen=True)
class FDEstimate:
    value: float
    error_gauge: float
    noisy: bool
    step: float
    order: int
    entry: tuple
    part: str = "re"
    raw: dict = field(default_factory=dict)


def fd_entry_derivative(fun, m, entry, order=1, theta=1.0, part="re", step=None):
    """Central finite difference of ``fun`` in one matrix entry.

    Parameters
    ----------
    fun : callable
        Scalar functional of a self-adjoint matrix.
    m : MatrixSample or ndarray
    entry : (int, int)
        1-based entry (a, b); the mirrored entry moves with it.
    order : {1, 2}
    theta : float
        The entry pair is first scaled by theta.
    part : {"re", "im"}
        Direction of the perturbation for complex Hermitian matrices.
    step : float, optional
        Defaults to 1e-4 / sqrt(N).

    Returns
    -------
    FDEstimate
        Richardson extrapolation over steps h and h/2; ``noisy`` when the two
        raw estimates differ by more than 10% of the extrapolated value.
    """
    if order not in (1, 2):
        raise ValueError("only first and second derivatives are supported")
    h0 = np.asarray(getattr(m, "h", m))
    n = h0.shape[0]
    a, b = entry[0] - 1, entry[1] - 1
    base = theta_scaled(h0, a, b, theta)
    h = 1e-4 / np.sqrt(n) if step is None else step
    f0 = fun(base) if order == 2 else 0.0

    def diff(hh):
        fp = fun(perturb_entry(base, a, b, hh, part))
        fm = fun(perturb_entry(base, a, b, -hh, part))
        if order == 1:
            return (fp - fm) / (2 * hh)
        return (fp - 2 * f0 + fm) / hh**2

    d1 = diff(h)
    d2 = diff(h / 2)
    p = 2  # both central schemes have error O(h^2)
    rich = (2**p * d2 - d1) / (2**p - 1)
    gauge = abs(d2 - d1)
    noisy = bool(gauge > 0.1 * abs(rich))
    return FDEstimate(float(rich), float(gauge), noisy, float(h), order, tuple(entry), part, {"h": d1, "h/2": d2})


class TildeLambdaFunctional:
    """Matrix -> tilde_lambda_i with the energy grid frozen at a base matrix.

    Freezing the grid keeps the functional smooth in the matrix entries, so
    finite differences see the regularized eigenvalue and not panel moves.
    """

    def __init__(self, base, i, p, alpha=0.0):
        self.i = int(i)
        self.p = p
        self.alpha = alpha
        self.n = np.asarray(getattr(base, "h", base)).shape[0]
        _, self.grid = tilde_lambdas(base, [self.i], p, alpha)

    def __call__(self, h):
        res, _ = tilde_lambdas(h, [self.i], self.p, self.alpha, grid=self.grid, n=self.n)
        return res[0].value


class RegularizedGapFunctional:
    """Matrix -> F_{ell,beta,J}(tilde lambda), with tilde lambda on J and J + 1.

    Coordinates outside J and J + 1 do not enter F and keep the exact value.
    """

    def __init__(self, base, J, ell, reg, p, alpha=0.0):
        from .smoothmax import f_ell

        self._f = f_ell
        self.J = np.asarray(J, dtype=int)
        self.ell = ell
        self.reg = reg
        self.p = p
        self.alpha = alpha
        self.idx = np.unique(np.concatenate([self.J, self.J + 1]))
        self.n = np.asarray(getattr(base, "h", base)).shape[0]
        _, self.grid = tilde_lambdas(base, self.idx, p, alpha)

    def values(self, h):
        lam = _spectrum_of(h)
        res, _ = tilde_lambdas(lam, self.idx, self.p, self.alpha, grid=self.grid, n=self.n)
        v = lam.copy()
        v[self.idx - 1] = [r.value for r in res]
        return v

    def __call__(self, h):
        return self._f(self.values(h), self.J, self.ell, self.reg)
