"""Spectra, semicircle reference quantities and resolvent diagnostics.

The eigendecomposition of a sample is the single source for eigenvalues,
Green function entries and the empirical Stieltjes transform.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .errors import NumericalError

__all__ = [
    "Spectrum",
    "ClassicalLocations",
    "SpectralDomainGrid",
    "Eigensystem",
    "eigensystem",
    "eigenvalues",
    "rho_sc",
    "semicircle_cdf",
    "m_sc",
    "classical_locations",
    "empirical_stieltjes",
    "green_entry",
    "rigidity_report",
    "delocalization_report",
    "local_law_deviation",
    "entrywise_local_law_deviation",
    "bulk_indices",
]


@dataclass(frozen=True, eq=False)
class Spectrum:
    """Ascending eigenvalues with optional eigenvector sup norms."""

    lam: np.ndarray
    evec_supnorms: np.ndarray | None = None
    source_seed: int | None = None

    def __post_init__(self):
        lam = np.asarray(self.lam, dtype=float)
        if lam.ndim != 1:
            raise ValueError("eigenvalues must be one-dimensional")
        if np.any(np.diff(lam) < 0):
            raise ValueError("eigenvalues must be nondecreasing")
        object.__setattr__(self, "lam", lam)
        if self.evec_supnorms is not None:
            sn = np.asarray(self.evec_supnorms, dtype=float)
            if sn.shape != lam.shape:
                raise ValueError("one sup norm per eigenvalue required")
            object.__setattr__(self, "evec_supnorms", sn)

    @property
    def n(self):
        return self.lam.size

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        has_vec = self.evec_supnorms is not None
        w.writerow(["index", "lambda"] + (["evec_supnorm"] if has_vec else []))
        for i, x in enumerate(self.lam):
            row = [i + 1, repr(float(x))]
            if has_vec:
                row.append(repr(float(self.evec_supnorms[i])))
            w.writerow(row)
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text, source_seed=None):
        rows = list(csv.DictReader(io.StringIO(text)))
        lam = np.array([float(r["lambda"]) for r in rows])
        sn = None
        if rows and "evec_supnorm" in rows[0]:
            sn = np.array([float(r["evec_supnorm"]) for r in rows])
        return cls(lam, sn, source_seed)

    def to_json(self):
        d = {"lambda": self.lam.tolist(), "source_seed": self.source_seed}
        if self.evec_supnorms is not None:
            d["evec_supnorms"] = self.evec_supnorms.tolist()
        return json.dumps(d)

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        sn = d.get("evec_supnorms")
        return cls(np.array(d["lambda"]), None if sn is None else np.array(sn), d.get("source_seed"))


@dataclass(frozen=True, eq=False)
class Eigensystem:
    """Eigenvalues and orthonormal eigenvectors (columns) of a sample."""

    lam: np.ndarray
    vecs: np.ndarray

    def green(self, z):
        """Full resolvent matrix (H - z)^{-1}."""
        return (self.vecs / (self.lam - z)) @ self.vecs.conj().T


def _diagonalize(h, want_vectors, seed):
    try:
        if want_vectors:
            return linalg.eigh(h, check_finite=True)
        return linalg.eigvalsh(h, check_finite=True), None
    except (linalg.LinAlgError, ValueError) as exc:
        raise NumericalError(f"eigensolver failed: {exc}", seed=seed) from exc


def eigensystem(m):
    """Eigendecomposition of a :class:`MatrixSample` or raw array."""
    h = getattr(m, "h", m)
    lam, vecs = _diagonalize(h, True, getattr(m, "seed", None))
    return Eigensystem(lam, vecs)


def eigenvalues(m, want_vectors=False):
    """Exact spectrum of a self-adjoint sample.

    Parameters
    ----------
    m : MatrixSample or ndarray
    want_vectors : bool
        Also record the sup norm of every normalized eigenvector.
    """
    h = getattr(m, "h", m)
    seed = getattr(m, "seed", None)
    lam, vecs = _diagonalize(h, want_vectors, seed)
    sn = None if vecs is None else np.max(np.abs(vecs), axis=0)
    return Spectrum(lam, sn, seed)


def rho_sc(e):
    """Semicircle density sqrt((4 - e^2)_+) / (2 pi)."""
    e = np.asarray(e, dtype=float)
    return np.sqrt(np.clip(4.0 - e * e, 0.0, None)) / (2 * np.pi)


def semicircle_cdf(x):
    """Mass of the semicircle law to the left of ``x``."""
    x = np.clip(np.asarray(x, dtype=float), -2.0, 2.0)
    return 0.5 + x * np.sqrt(4.0 - x * x) / (4 * np.pi) + np.arcsin(x / 2) / np.pi


def m_sc(z):
    """Stieltjes transform of the semicircle law for Im z > 0."""
    z = np.asarray(z, dtype=complex)
    if np.any(z.imag <= 0):
        raise ValueError("m_sc requires Im z > 0")
    root = np.sqrt(z * z - 4.0)
    # the two roots multiply to 1; take the cancellation-free one and invert
    root = np.where((z.conj() * root).real >= 0, root, -root)
    big = (-z - root) / 2
    small = 1.0 / big
    out = np.where(small.imag > 0, small, big)
    return out[()] if out.ndim == 0 else out


@dataclass(frozen=True, eq=False)
class ClassicalLocations:
    n: int
    gamma: np.ndarray


def classical_locations(n):
    """Quantiles gamma_i, i = 1..n, with mass i/n of the semicircle below gamma_i."""
    if n < 1:
        raise ValueError("n must be positive")
    target = np.arange(1, n + 1) / n
    lo = np.full(n, -2.0)
    hi = np.full(n, 2.0)
    # bisection to machine resolution on the monotone closed-form CDF
    for _ in range(64):
        mid = 0.5 * (lo + hi)
        below = semicircle_cdf(mid) < target
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    gamma = 0.5 * (lo + hi)
    gamma[-1] = 2.0
    if n % 2 == 0:
        gamma[n // 2 - 1] = 0.0
    return ClassicalLocations(n, gamma)


def empirical_stieltjes(s, z):
    """(1/N) sum_i 1/(lambda_i - z); vectorized over ``z``."""
    z = np.asarray(z, dtype=complex)
    if np.any(z.imag == 0):
        raise ValueError("empirical Stieltjes transform requires Im z != 0")
    lam = s.lam if isinstance(s, Spectrum) else np.asarray(s)
    out = np.mean(1.0 / (lam[:, None] - z.ravel()[None, :]), axis=0).reshape(z.shape)
    return out[()] if out.ndim == 0 else out


def green_entry(m, i, j, z, eig=None):
    """Resolvent entry G_ij(z) for 1-based indices.

    ``eig`` may carry a precomputed :class:`Eigensystem` of ``m``.
    """
    z = complex(z)
    if z.imag == 0:
        raise ValueError("Green function requires Im z != 0")
    if eig is None:
        eig = eigensystem(m)
    u = eig.vecs
    return complex(np.sum(u[i - 1] * u[j - 1].conj() / (eig.lam - z)))


def bulk_indices(n, alpha):
    """1-based indices ceil(alpha N) .. floor((1 - alpha) N)."""
    lo = int(np.ceil(alpha * n))
    hi = int(np.floor((1 - alpha) * n))
    return np.arange(max(lo, 1), min(hi, n) + 1)


def rigidity_report(s, alpha):
    """Bulk-scaled maximal deviation of eigenvalues from classical locations.

    Returns a dict with ``max_scaled_dev`` (max over bulk i of N|lambda_i -
    gamma_i|), ``worst_index`` (1-based) and ``edge_adaptive_max``, the max over
    all i of N^{2/3} min(i, N - i + 1)^{1/3} |lambda_i - gamma_i|.
    """
    if not 0 < alpha < 0.5:
        raise ValueError("alpha must lie in (0, 1/2)")
    n = s.n
    gamma = classical_locations(n).gamma
    dev = np.abs(s.lam - gamma)
    idx = bulk_indices(n, alpha)
    scaled = n * dev[idx - 1]
    k = int(np.argmax(scaled))
    i = np.arange(1, n + 1)
    edge = n ** (2 / 3) * np.minimum(i, n - i + 1) ** (1 / 3) * dev
    return {
        "max_scaled_dev": float(scaled[k]),
        "worst_index": int(idx[k]),
        "edge_adaptive_max": float(edge.max()),
    }


def delocalization_report(s):
    """max_i sqrt(N) ||u_i||_inf, flagging fully localized eigenvectors."""
    if s.evec_supnorms is None:
        raise ValueError("spectrum carries no eigenvector sup norms")
    val = float(np.sqrt(s.n) * s.evec_supnorms.max())
    return {"max_scaled_supnorm": val, "localized": bool(np.isclose(s.evec_supnorms.max(), 1.0))}


@dataclass(frozen=True, eq=False)
class SpectralDomainGrid:
    """Grid inside {|E| <= 10, N^delta / N <= eta <= 10}."""

    energies: np.ndarray
    etas: np.ndarray
    delta: float
    n: int

    def __post_init__(self):
        e = np.asarray(self.energies, dtype=float)
        eta = np.asarray(self.etas, dtype=float)
        lo = self.n ** (self.delta - 1.0)
        if np.any(np.abs(e) > 10) or np.any(eta < lo * (1 - 1e-12)) or np.any(eta > 10):
            raise ValueError("grid point outside the spectral domain")
        object.__setattr__(self, "energies", e)
        object.__setattr__(self, "etas", eta)

    @classmethod
    def default(cls, n, delta=0.1, n_energies=201, n_etas=20, e_max=10.0):
        energies = np.linspace(-e_max, e_max, n_energies)
        etas = np.geomspace(n ** (delta - 1.0), 10.0, n_etas)
        return cls(energies, etas, delta, n)

    def points(self):
        return (self.energies[:, None] + 1j * self.etas[None, :]).ravel()


def local_law_deviation(s, grid):
    """sup over the grid of N eta |m_N(z) - m_sc(z)|."""
    z = grid.points()
    dev = np.abs(empirical_stieltjes(s, z) - m_sc(z)) * s.n * z.imag
    k = int(np.argmax(dev))
    return {"max_scaled_dev": float(dev[k]), "worst_z": complex(z[k])}


def entrywise_local_law_deviation(eig, z, exponent=0.2):
    """max_ij |G_ij - delta_ij m_sc| divided by N^exponent (sqrt(Im m/(N eta)) + 1/(N eta))."""
    n = eig.lam.size
    g = eig.green(z)
    msc = m_sc(z)
    g[np.diag_indices(n)] -= msc
    eta = z.imag
    bound = n**exponent * (np.sqrt(msc.imag / (n * eta)) + 1.0 / (n * eta))
    return float(np.abs(g).max() / bound)
