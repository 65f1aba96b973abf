"""Matrix Ornstein-Uhlenbeck flow and coupled Dyson Brownian motions.

The matrix flow dx = dB / sqrt(N) - x / (2 N s) dt is linear entry by entry,
so it is advanced with its exact Gaussian transition.  The coupled particle
systems share one Brownian motion and are integrated by Euler-Maruyama with
step halving through Brownian bridges whenever a step would break ordering.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import NumericalError

__all__ = [
    "FlowState",
    "CoupledParticles",
    "flow_state",
    "ou_evolve",
    "dbm_coupled_evolve",
    "default_dbm_steps",
    "gap_coupling_report",
    "trajectory_csv",
    "CollisionError",
]

MAX_HALVINGS = 20
MAX_DEPTH = 64
_CHUNK = 512


class CollisionError(NumericalError):
    """Ordering could not be preserved after the maximal number of halvings."""


@dataclass(frozen=True, eq=False)
class FlowState:
    """Matrix under the OU flow with its stationary per-entry variances.

    ``s_re`` and ``s_im`` hold the stationary variances of the real and
    imaginary parts (``s_im`` is zero for real symmetric matrices).
    """

    h: np.ndarray
    t: float
    s_re: np.ndarray
    s_im: np.ndarray
    noise_seed: int | None = None

    @property
    def is_complex(self):
        return bool(np.any(self.s_im > 0))


def flow_state(sample, spec, t=0.0):
    """Start a flow from a :class:`MatrixSample` of ``spec``."""
    s_re, s_im = spec.re_im_variances()
    return FlowState(np.array(sample.h, copy=True), float(t), s_re, s_im, getattr(sample, "seed", None))


def ou_evolve(state, t_target, rng):
    """Advance every entry by the exact OU transition over t_target - t.

    The upper triangle (diagonal included) is drawn row-major and mirrored.
    """
    dt = float(t_target) - state.t
    if dt < 0:
        raise ValueError("cannot evolve backwards in time")
    if dt == 0:
        return state
    n = state.h.shape[0]
    iu = np.triu_indices(n)
    s_re = state.s_re[iu]
    decay = np.exp(-dt / (2 * n * s_re))
    sd = np.sqrt(s_re * (1.0 - np.exp(-dt / (n * s_re))))
    old = state.h[iu]
    new_re = decay * old.real + sd * rng.standard_normal(s_re.size)
    if state.is_complex:
        s_im = state.s_im[iu]
        off = s_im > 0
        new_im = np.zeros_like(new_re)
        dec_i = np.exp(-dt / (2 * n * s_im[off]))
        sd_i = np.sqrt(s_im[off] * (1.0 - np.exp(-dt / (n * s_im[off]))))
        new_im[off] = dec_i * old.imag[off] + sd_i * rng.standard_normal(int(off.sum()))
        h = np.zeros((n, n), dtype=complex)
        h[iu] = new_re + 1j * new_im
        h = h + np.triu(h, 1).conj().T
    else:
        h = np.zeros((n, n))
        h[iu] = new_re
        h = h + np.triu(h, 1).T
    return FlowState(h, float(t_target), state.s_re, state.s_im, state.noise_seed)


@dataclass(frozen=True, eq=False)
class CoupledParticles:
    """Two ascending particle systems driven by the same Brownian motion."""

    x: np.ndarray
    y: np.ndarray
    beta_dyn: int
    t: float = 0.0
    shared_noise_seed: int | None = None
    n_halvings: int = 0

    def __post_init__(self):
        if self.beta_dyn not in (1, 2):
            raise ValueError("beta_dyn must be 1 or 2")
        for v in (self.x, self.y):
            if np.any(np.diff(v) <= 0):
                raise ValueError("particles must be strictly ordered")
        if self.x.shape != self.y.shape:
            raise ValueError("systems must have equal size")


@njit(cache=True)
def _drift(x, out):
    n = x.size
    for i in range(n):
        out[i] = 0.0
    for i in range(n):
        xi = x[i]
        for j in range(i + 1, n):
            d = 1.0 / (xi - x[j])
            out[i] += d
            out[j] -= d
    for i in range(n):
        out[i] /= n


@njit(cache=True)
def _try_step(x, y, db, h, c, xn, yn, buf):
    """One Euler-Maruyama step into (xn, yn); False if ordering breaks."""
    n = x.size
    _drift(x, buf)
    for i in range(n):
        xn[i] = x[i] + h * buf[i] + c * db[i]
    _drift(y, buf)
    for i in range(n):
        yn[i] = y[i] + h * buf[i] + c * db[i]
    for i in range(n - 1):
        if not (xn[i] < xn[i + 1]) or not (yn[i] < yn[i + 1]):
            return False
    return True


@njit(cache=True)
def _run_chunk(x, y, z, h, c):
    """Advance in place through the rows of z; index of the first failed step or -1."""
    n = x.size
    sh = np.sqrt(h)
    xn = np.empty(n)
    yn = np.empty(n)
    buf = np.empty(n)
    db = np.empty(n)
    for k in range(z.shape[0]):
        for i in range(n):
            db[i] = sh * z[k, i]
        if not _try_step(x, y, db, h, c, xn, yn, buf):
            return k
        x[:] = xn
        y[:] = yn
    return -1


def default_dbm_steps(t, n):
    """Base step count ceil(t N^2 4)."""
    return max(1, int(np.ceil(t * n * n * 4)))


def _bridge_step(x, y, db, h, c, rng, fails, depth, stats):
    """Try a step; on failure split it through a Brownian bridge.

    ``fails`` counts consecutive failed attempts since the last accepted
    sub-step; more than MAX_HALVINGS of them abort the trajectory.
    """
    n = x.size
    xn, yn, buf = np.empty(n), np.empty(n), np.empty(n)
    if _try_step(x, y, db, h, c, xn, yn, buf):
        x[:] = xn
        y[:] = yn
        return
    if fails >= MAX_HALVINGS or depth >= MAX_DEPTH:
        gaps_x = np.diff(x)
        gaps_y = np.diff(y)
        raise CollisionError(
            f"ordering lost after {fails} consecutive halvings at step size {h:.3e}; "
            f"min gaps x {gaps_x.min():.3e} (i={int(gaps_x.argmin()) + 1}), "
            f"y {gaps_y.min():.3e} (i={int(gaps_y.argmin()) + 1})"
        )
    stats[0] += 1
    half = 0.5 * db + np.sqrt(h / 4) * rng.standard_normal(n)
    _bridge_step(x, y, half, h / 2, c, rng, fails + 1, depth + 1, stats)
    _bridge_step(x, y, db - half, h / 2, c, rng, 0, depth + 1, stats)


def dbm_coupled_evolve(p, t_target, rng, n_steps=None, noise=True):
    """Advance both systems to ``t_target`` with identical Gaussian increments.

    dx_i = sqrt(2 / (N beta)) dB_i + (1/N) sum_{j != i} dt / (x_i - x_j),
    and the same for y with the same B.  A step that would reorder either
    system is redone as two half steps conditioned on the same endpoint
    increment; an attempt may be halved 20 times in a row before the
    trajectory is abandoned.

    Parameters
    ----------
    p : CoupledParticles
    t_target : float
    rng : numpy.random.Generator
        Source of the shared increments.
    n_steps : int, optional
        Base steps; defaults to ceil((t_target - t) N^2 4).
    noise : bool
        Set False for the deterministic repulsion flow.
    """
    dt = float(t_target) - p.t
    if dt < 0:
        raise ValueError("cannot evolve backwards in time")
    n = p.x.size
    if dt == 0:
        return p
    if n_steps is None:
        n_steps = default_dbm_steps(dt, n)
    h = dt / n_steps
    c = np.sqrt(2.0 / (n * p.beta_dyn)) if noise else 0.0
    x = np.array(p.x, dtype=float, copy=True)
    y = np.array(p.y, dtype=float, copy=True)
    stats = [p.n_halvings]
    done = 0
    while done < n_steps:
        m = min(_CHUNK, n_steps - done)
        z = rng.standard_normal((m, n)) if noise else np.zeros((m, n))
        k0 = 0
        while k0 < m:
            k = _run_chunk(x, y, z[k0:], h, c)
            if k < 0:
                break
            _bridge_step(x, y, np.sqrt(h) * z[k0 + k], h, c, rng, 0, 0, stats)
            k0 += k + 1
        done += m
    if np.any(np.diff(x) <= 0) or np.any(np.diff(y) <= 0):
        raise CollisionError("final configuration is not ordered")
    return CoupledParticles(x, y, p.beta_dyn, float(t_target), p.shared_noise_seed, stats[0])


def gap_coupling_report(p, alpha):
    """N |(x_{i+1} - x_i) - (y_{i+1} - y_i)| over bulk gap indices.

    Returns ``max_scaled_gap_diff``, the 1-based ``indices`` and ``profile``.
    """
    n = p.x.size
    lo = max(int(np.ceil(alpha * n)), 1)
    hi = min(int(np.floor((1 - alpha) * n)), n - 1)
    idx = np.arange(lo, hi + 1)
    diff = n * np.abs((p.x[idx] - p.x[idx - 1]) - (p.y[idx] - p.y[idx - 1]))
    return {
        "max_scaled_gap_diff": float(diff.max()) if diff.size else 0.0,
        "indices": idx,
        "profile": diff,
    }


def trajectory_csv(snapshots):
    """CSV rows (t, i, x_i, y_i) for a sequence of CoupledParticles."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t", "i", "x_i", "y_i"])
    for snap in snapshots:
        for i, (a, b) in enumerate(zip(snap.x, snap.y)):
            w.writerow([repr(snap.t), i + 1, repr(float(a)), repr(float(b))])
    return buf.getvalue()
