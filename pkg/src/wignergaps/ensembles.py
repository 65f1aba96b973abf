"""Generalized Wigner ensembles: variance profiles, entry laws and sampling.

A sample is a self-adjoint matrix whose upper-triangular entries are
independent, centred, with variances ``sigma2[i, j]`` whose columns sum to one
(or the GOE-style reference profile).  Entry laws are symmetric unit-variance
laws, either Gaussian or a finite list of atoms; their moments are exact
rationals so that four-moment matching can be checked without sampling error.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from fractions import Fraction
from math import comb, sqrt

import numpy as np

__all__ = [
    "VarianceProfile",
    "EntryLaw",
    "EnsembleSpec",
    "MatrixSample",
    "build_variance_profile",
    "gaussian_law",
    "three_point_law",
    "rademacher_law",
    "uniform_law",
    "sample_matrix",
    "entry_moment",
    "moment_mismatch",
    "empirical_moments",
    "goe_spec",
    "gue_spec",
]

ROW_SUM_TOL = 1e-12
PROFILE_KINDS = ("flat_gue", "flat_goe", "banded", "doubly_stochastic_random")
LAW_KINDS = ("gaussian", "three_point", "two_point_rademacher", "uniform")


@dataclass(frozen=True, eq=False)
class VarianceProfile:
    """Symmetric matrix of entry variances ``sigma2[i, j]``.

    ``reference`` marks the GOE-style profile whose row sums are (N+1)/N.
    """

    n: int
    sigma2: np.ndarray
    c_lo: float
    c_hi: float
    kind: str = "custom"
    params: dict = field(default_factory=dict)
    reference: bool = False

    def __post_init__(self):
        s = np.asarray(self.sigma2, dtype=float)
        if s.shape != (self.n, self.n):
            raise ValueError(f"sigma2 must be {self.n}x{self.n}, got {s.shape}")
        if not np.array_equal(s, s.T):
            raise ValueError("variance profile is not symmetric")
        if not self.reference:
            dev = np.max(np.abs(s.sum(axis=0) - 1.0))
            if dev > ROW_SUM_TOL:
                raise ValueError(f"column sums deviate from 1 by {dev:.3e}")
        scaled = s * self.n
        if scaled.min() < self.c_lo * (1 - 1e-12) or scaled.max() > self.c_hi * (1 + 1e-12):
            raise ValueError(
                f"profile entries outside [{self.c_lo}/N, {self.c_hi}/N]: "
                f"range [{scaled.min():.4g}, {scaled.max():.4g}]/N"
            )
        s.setflags(write=False)
        object.__setattr__(self, "sigma2", s)

    def column_sums(self):
        return self.sigma2.sum(axis=0)

    def to_dict(self):
        return {"kind": self.kind, "n": self.n, "params": dict(self.params)}


def build_variance_profile(kind, n, params=None):
    """Construct one of the standard variance profiles.

    Parameters
    ----------
    kind : {"flat_gue", "flat_goe", "banded", "doubly_stochastic_random"}
    n : int
        Matrix dimension, at least 2.
    params : dict, optional
        ``banded``: ``width`` (half band width, default ``n // 5``) and
        ``contrast`` (in-band / out-of-band variance ratio, default 4).
        ``doubly_stochastic_random``: ``seed`` and ``spread`` (ratio between
        largest and smallest raw weight, default 3).  All kinds accept
        ``c_lo`` and ``c_hi`` (defaults 0.2 and 5).
    """
    params = dict(params or {})
    if n < 2:
        raise ValueError("n must be at least 2")
    if kind not in PROFILE_KINDS:
        raise ValueError(f"unknown profile kind {kind!r}")
    c_lo = float(params.get("c_lo", 0.2))
    c_hi = float(params.get("c_hi", 5.0))

    if kind == "flat_gue":
        s = np.full((n, n), 1.0 / n)
        return VarianceProfile(n, s, c_lo, c_hi, kind, params)
    if kind == "flat_goe":
        s = np.full((n, n), 1.0 / n)
        np.fill_diagonal(s, 2.0 / n)
        return VarianceProfile(n, s, c_lo, c_hi, kind, params, reference=True)
    if kind == "banded":
        width = int(params.get("width", n // 5))
        contrast = float(params.get("contrast", 4.0))
        if width <= 0 or contrast <= 0:
            raise ValueError("band width and contrast must be positive")
        if 2 * width + 1 > n:
            raise ValueError("band wider than the matrix")
        idx = np.arange(n)
        dist = np.abs(idx[:, None] - idx[None, :])
        dist = np.minimum(dist, n - dist)  # circulant band: all rows alike
        base = 1.0 / (n + (contrast - 1.0) * (2 * width + 1))
        s = np.where(dist <= width, contrast * base, base)
        # exact circulant structure; fix roundoff in the sums
        s = s / s.sum(axis=0)[0]
        return VarianceProfile(n, s, c_lo, c_hi, kind, params)

    # doubly_stochastic_random: symmetric Sinkhorn scaling of a random matrix
    spread = float(params.get("spread", 3.0))
    if spread < 1:
        raise ValueError("spread must be >= 1")
    rng = np.random.default_rng(params.get("seed", 0))
    a = rng.uniform(1.0, spread, size=(n, n))
    a = (a + a.T) / 2
    x = np.ones(n)
    for _ in range(10_000):
        x_new = np.sqrt(x / (a @ x))
        if np.max(np.abs(x_new - x)) < 1e-16:
            break
        x = x_new
    s = x[:, None] * a * x[None, :]
    s = (s + s.T) / 2
    for _ in range(100):
        dev = np.max(np.abs(s.sum(axis=0) - 1.0))
        if dev <= ROW_SUM_TOL / 4:
            break
        r = 1.0 / np.sqrt(s.sum(axis=0))
        s = r[:, None] * s * r[None, :]
        s = (s + s.T) / 2
    return VarianceProfile(n, s, c_lo, c_hi, kind, params)


@dataclass(frozen=True)
class EntryLaw:
    """Symmetric law of a normalized entry ``h_ij / sigma_ij``.

    Discrete laws are stored as pairs ``(value**2, probability)`` of exact
    fractions for each of the two mirrored atoms (``value**2 == 0`` is a single
    atom at the origin).  ``scale`` multiplies the law; ``re_im_ratio`` is
    Var(Im)/Var(Re) for complex off-diagonal entries.
    """

    kind: str
    scale: float = 1.0
    re_im_ratio: float = 1.0

    def __post_init__(self):
        if self.kind not in LAW_KINDS:
            raise ValueError(f"unknown entry law {self.kind!r}")
        if self.scale <= 0:
            raise ValueError("scale must be positive")
        if self.re_im_ratio <= 0:
            raise ValueError("re_im_ratio must be positive")

    @property
    def atoms(self):
        """``[(value_squared, prob), ...]`` for discrete laws, None otherwise."""
        if self.kind == "three_point":
            return [(Fraction(3), Fraction(1, 6)), (Fraction(0), Fraction(2, 3)), (Fraction(3), Fraction(1, 6))]
        if self.kind == "two_point_rademacher":
            return [(Fraction(1), Fraction(1, 2)), (Fraction(1), Fraction(1, 2))]
        return None

    def unit_moment(self, p):
        """Exact E[X^p] of the unit-variance law (before ``scale``)."""
        if p < 0:
            raise ValueError("moment order must be nonnegative")
        if p % 2 == 1:
            return Fraction(0)
        k = p // 2
        if self.kind == "gaussian":
            out = Fraction(1)
            for m in range(1, p, 2):
                out *= m
            return out
        if self.kind == "uniform":
            # uniform on [-sqrt 3, sqrt 3]
            return Fraction(3**k, 2 * k + 1)
        return sum((v2**k * w for v2, w in self.atoms), Fraction(0))

    def moment(self, p):
        return float(self.unit_moment(p)) * self.scale**p

    def absolute_moment(self, p):
        """E|X|^p for the scaled law; exact for even p and discrete laws."""
        if p % 2 == 0 or self.kind in ("three_point", "two_point_rademacher"):
            if self.kind in ("three_point", "two_point_rademacher"):
                val = sum(float(w) * float(v2) ** (p / 2) for v2, w in self.atoms)
            else:
                val = float(self.unit_moment(p))
            return val * self.scale**p
        if self.kind == "gaussian":
            from scipy.special import gamma

            val = 2 ** (p / 2) * gamma((p + 1) / 2) / np.sqrt(np.pi)
        else:
            val = 3 ** (p / 2) / (p + 1)
        return float(val) * self.scale**p

    def sample(self, rng, size):
        """Draw unit-variance (times ``scale``) real samples."""
        if self.kind == "gaussian":
            x = rng.standard_normal(size)
        elif self.kind == "uniform":
            x = rng.uniform(-sqrt(3.0), sqrt(3.0), size)
        elif self.kind == "two_point_rademacher":
            x = rng.integers(0, 2, size=size) * 2.0 - 1.0
        else:
            u = rng.random(size)
            x = np.where(u < 1 / 6, -sqrt(3.0), np.where(u < 5 / 6, 0.0, sqrt(3.0)))
        return self.scale * x

    def to_dict(self):
        return {"kind": self.kind, "scale": self.scale, "re_im_ratio": self.re_im_ratio}

    @classmethod
    def from_dict(cls, d):
        return cls(d["kind"], float(d.get("scale", 1.0)), float(d.get("re_im_ratio", 1.0)))


def gaussian_law(sigma=1.0):
    return EntryLaw("gaussian", sigma)


def three_point_law(sigma):
    """Law on {-sqrt(3) sigma, 0, sqrt(3) sigma} with weights 1/6, 2/3, 1/6.

    Matches the Gaussian of standard deviation ``sigma`` to four moments.
    """
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    return EntryLaw("three_point", float(sigma))


def rademacher_law(sigma=1.0):
    return EntryLaw("two_point_rademacher", sigma)


def uniform_law(sigma=1.0):
    return EntryLaw("uniform", sigma)


@dataclass(frozen=True, eq=False)
class EnsembleSpec:
    symmetry: str
    profile: VarianceProfile
    offdiag_law: EntryLaw
    diag_law: EntryLaw

    def __post_init__(self):
        if self.symmetry not in ("real_symmetric", "complex_hermitian"):
            raise ValueError(f"unknown symmetry {self.symmetry!r}")
        for law in (self.offdiag_law, self.diag_law):
            if abs(law.scale - 1.0) > 1e-15:
                raise ValueError("ensemble entry laws must have unit variance")

    @property
    def n(self):
        return self.profile.n

    @property
    def is_complex(self):
        return self.symmetry == "complex_hermitian"

    def to_dict(self):
        return {
            "symmetry": self.symmetry,
            "profile": self.profile.to_dict(),
            "offdiag_law": self.offdiag_law.to_dict(),
            "diag_law": self.diag_law.to_dict(),
        }

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d, n=None):
        prof = d["profile"]
        size = int(n if n is not None else prof["n"])
        profile = build_variance_profile(prof["kind"], size, prof.get("params", {}))
        return cls(
            d["symmetry"],
            profile,
            EntryLaw.from_dict(d["offdiag_law"]),
            EntryLaw.from_dict(d["diag_law"]),
        )

    @classmethod
    def from_json(cls, text, n=None):
        return cls.from_dict(json.loads(text), n=n)

    def with_n(self, n):
        """Same ensemble family at a different dimension."""
        return EnsembleSpec.from_dict(self.to_dict(), n=n)

    @property
    def spec_id(self):
        return hashlib.sha256(self.to_json().encode()).hexdigest()[:16]

    def re_im_variances(self):
        """Per-entry variances of Re and Im parts (off-diagonal) as arrays."""
        s = self.profile.sigma2
        if not self.is_complex:
            return s, np.zeros_like(s)
        r = self.offdiag_law.re_im_ratio
        s_re = s / (1.0 + r)
        s_im = s * r / (1.0 + r)
        s_re = s_re.copy()
        s_im = s_im.copy()
        np.fill_diagonal(s_re, np.diag(s))
        np.fill_diagonal(s_im, 0.0)
        return s_re, s_im


def goe_spec(n):
    """GOE reference: off-diagonal variance 1/N, diagonal 2/N."""
    law = gaussian_law()
    return EnsembleSpec("real_symmetric", build_variance_profile("flat_goe", n), law, law)


def gue_spec(n, offdiag="gaussian"):
    """GUE-normalized Hermitian ensemble with exact unit row sums."""
    return EnsembleSpec(
        "complex_hermitian",
        build_variance_profile("flat_gue", n),
        EntryLaw(offdiag),
        gaussian_law(),
    )


@dataclass(frozen=True, eq=False)
class MatrixSample:
    h: np.ndarray
    seed: int | None = None
    spec_id: str | None = None

    @property
    def n(self):
        return self.h.shape[0]


def sample_matrix(spec, rng, seed=None):
    """Draw one matrix from ``spec``.

    The upper triangle (diagonal included) is drawn row-major from ``rng`` and
    mirrored, so the result is exactly self-adjoint and a deterministic
    function of the generator state.
    """
    n = spec.n
    iu = np.triu_indices(n, k=1)
    m = iu[0].size
    sig = np.sqrt(spec.profile.sigma2)
    diag = spec.diag_law.sample(rng, n) * np.sqrt(np.diag(spec.profile.sigma2))
    if spec.is_complex:
        r = spec.offdiag_law.re_im_ratio
        re = spec.offdiag_law.sample(rng, m) * sqrt(1.0 / (1.0 + r))
        im = spec.offdiag_law.sample(rng, m) * sqrt(r / (1.0 + r))
        h = np.zeros((n, n), dtype=complex)
        h[iu] = (re + 1j * im) * sig[iu]
        h = h + h.conj().T
    else:
        off = spec.offdiag_law.sample(rng, m)
        h = np.zeros((n, n))
        h[iu] = off * sig[iu]
        h = h + h.T
    h[np.diag_indices(n)] = diag
    return MatrixSample(h, seed=seed, spec_id=spec.spec_id)


def _complex_moment(law, r, a, b):
    """E[z^a conj(z)^b] for z = p X + i q Y with X, Y iid ``law`` (exact)."""
    p2 = Fraction(1) / (1 + Fraction(r).limit_denominator(10**12))
    q2 = 1 - p2
    total = 0.0
    # (pX + iqY)^a (pX - iqY)^b expanded; odd powers vanish by symmetry
    for k1 in range(a + 1):
        for k2 in range(b + 1):
            px = (a - k1) + (b - k2)
            qy = k1 + k2
            if px % 2 or qy % 2:
                continue
            coef = comb(a, k1) * comb(b, k2) * (1j) ** k1 * (-1j) ** k2
            mx = law.unit_moment(px)
            my = law.unit_moment(qy)
            total += coef * float(mx * my * p2 ** (px // 2) * q2 ** (qy // 2))
    return total


def entry_moment(spec, i, j, a, b):
    """Exact E[h_ij^a conj(h_ij)^b] for 1-based matrix indices ``i, j``.

    Real for real-symmetric ensembles and for diagonal entries.
    """
    if a < 0 or b < 0:
        raise ValueError("moment exponents must be nonnegative")
    if a + b > 4:
        raise ValueError("only moments with a + b <= 4 are supported")
    s2 = spec.profile.sigma2[i - 1, j - 1]
    scale = s2 ** ((a + b) / 2)
    if i == j or not spec.is_complex:
        law = spec.diag_law if i == j else spec.offdiag_law
        return float(law.unit_moment(a + b)) * scale
    val = _complex_moment(spec.offdiag_law, spec.offdiag_law.re_im_ratio, a, b)
    if abs(val.imag) < 1e-300:
        val = val.real
    return val * scale


def moment_mismatch(spec_a, spec_b):
    """Largest |E v^a conj(v)^b - E w^a conj(w)^b| over entries and a+b <= 4."""
    if spec_a.n != spec_b.n:
        raise ValueError("specs have different dimensions")
    worst = 0.0
    s_a, s_b = spec_a.profile.sigma2, spec_b.profile.sigma2
    for a in range(5):
        for b in range(5 - a):
            k = a + b
            da = float(spec_a.diag_law.unit_moment(k)) * np.diag(s_a) ** (k / 2)
            db = float(spec_b.diag_law.unit_moment(k)) * np.diag(s_b) ** (k / 2)
            worst = max(worst, float(np.max(np.abs(da - db))))
            if spec_a.is_complex:
                ca = _complex_moment(spec_a.offdiag_law, spec_a.offdiag_law.re_im_ratio, a, b)
            else:
                ca = float(spec_a.offdiag_law.unit_moment(k))
            if spec_b.is_complex:
                cb = _complex_moment(spec_b.offdiag_law, spec_b.offdiag_law.re_im_ratio, a, b)
            else:
                cb = float(spec_b.offdiag_law.unit_moment(k))
            off = ~np.eye(spec_a.n, dtype=bool)
            diff = np.abs(ca * s_a[off] ** (k / 2) - cb * s_b[off] ** (k / 2))
            worst = max(worst, float(np.max(diff)))
    return worst


def empirical_moments(sample, spec, p_max=8):
    """Empirical normalized absolute moments E|h_ij/sigma_ij|^p, p = 1..p_max."""
    iu = np.triu_indices(spec.n, k=1)
    z = np.abs(sample.h[iu]) / np.sqrt(spec.profile.sigma2[iu])
    return {p: float(np.mean(z**p)) for p in range(1, p_max + 1)}
