"""Smooth surrogates of bulk eigenvalues from the counting function.

Run: python3 demos/regularized_eigenvalues.py
"""

import numpy as np

from wignergaps.ensembles import goe_spec, sample_matrix
from wignergaps.hsreg import HSParams, tilde_lambdas
from wignergaps.spectral import eigenvalues


def main():
    n = 200
    lam = eigenvalues(sample_matrix(goe_spec(n), np.random.default_rng(3))).lam
    results, _ = tilde_lambdas(lam, range(90, 111), HSParams())
    print(f"{'i':>4} {'lambda_i':>12} {'tilde':>12} {'N |diff|':>9}")
    for r in results:
        li = lam[r.i - 1]
        print(f"{r.i:4d} {li:12.6f} {r.value:12.6f} {n * abs(r.value - li):9.4f}")


if __name__ == "__main__":
    main()
