"""Regularized gap F_{ell,beta} against nu * T_ell as beta grows.

Run: python3 demos/smooth_max_convergence.py
"""

import math

import numpy as np

from wignergaps.ensembles import gue_spec, sample_matrix
from wignergaps.gaps import GapSelector, nu, t_ell
from wignergaps.smoothmax import RegularizationParams, f_ell
from wignergaps.spectral import eigenvalues


def main():
    n = 400
    lam = eigenvalues(sample_matrix(gue_spec(n), np.random.default_rng(1))).lam
    sel = GapSelector.bulk(n, 0.1)
    print(f"N={n}, |J|={len(sel.J)}")
    print(f"{'ell':>3} {'beta':>8} {'nu*T':>10} {'F':>10} {'F - nu*T':>10} {'2 ell log N / beta':>19}")
    for ell in (1, 2, 3):
        exact = nu(n) * t_ell(lam, sel, ell)
        for beta in (10.0, 100.0, 1000.0, 10000.0):
            f = f_ell(lam, sel.J, ell, RegularizationParams.from_beta(n, beta))
            print(f"{ell:3d} {beta:8.0f} {exact:10.5f} {f:10.5f} {f - exact:10.2e} {2 * ell * math.log(n) / beta:19.2e}")


if __name__ == "__main__":
    main()
