"""End-to-end acceptance criteria C1-C13.

Monte Carlo records are persisted under ``$WIGNER_ACCEPTANCE_DIR`` (default
``acceptance_runs/`` at the repository root) and resumed on reruns; delete
the directory to recompute from scratch.  Each criterion records one
PASS/FAIL line that is printed in the terminal summary.
"""

import itertools
import json
import math
import os
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from oracles import brute_force_log_z
from wignergaps import cli
from wignergaps import experiments as ex
from wignergaps.ensembles import goe_spec, gue_spec, sample_matrix
from wignergaps.gaps import GapSelector, nu, t_ell
from wignergaps.hsreg import HSParams, hs_functional, smoothed_counting_kernel
from wignergaps.smoothmax import RegularizationParams, f_ell, grad_f, z_ell
from wignergaps.spectral import classical_locations, eigenvalues

pytestmark = pytest.mark.acceptance

SEED = 12345
ROOT = os.environ.get(
    "WIGNER_ACCEPTANCE_DIR", os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "acceptance_runs")
)


def report(key, ok, detail, started):
    line = f"{key} {'PASS' if ok else 'FAIL'} ({time.perf_counter() - started:.0f}s): {detail}"
    ACCEPTANCE_LINES[key] = line
    print(line)
    assert ok, line


def records(name):
    return {"records_path": os.path.join(ROOT, name, "records.ndjson"), "artifact_dir": os.path.join(ROOT, name)}


def config(**kw):
    d = {"base_seed": SEED, "n_trials": 1}
    d.update(kw)
    return ex.ExperimentConfig.from_dict(d)


# ---------------------------------------------------------------- deterministic


def _random_case(rng, n_max=200, ell_max=4, j_max=None):
    n = int(rng.integers(10, n_max + 1))
    v = np.sort(rng.normal(size=n))
    size = int(rng.integers(1, (j_max or n - 1) + 1))
    J = np.sort(rng.choice(np.arange(1, n), size=min(size, n - 1), replace=False))
    ell = int(rng.integers(1, min(ell_max, J.size) + 1))
    return v, J, ell


def test_c01_entropy_bound():
    t0 = time.perf_counter()
    rng = np.random.default_rng(SEED)
    violations, worst = 0, 0.0
    for _ in range(1000):
        v, J, ell = _random_case(rng)
        n = v.size
        beta = float(rng.choice([10.0, 100.0, 1000.0]))
        p = RegularizationParams.from_beta(n, beta)
        diff = abs(nu(n) * t_ell(v, GapSelector.index_set(J), ell) - f_ell(v, J, ell, p))
        bound = 2 * ell * math.log(n) / beta
        violations += diff >= bound
        worst = max(worst, diff / bound)
    report("C1", violations == 0, f"{violations} violations in 1000 cases, worst diff/bound {worst:.3f}", t0)


def test_c02_symmetric_polynomial_oracle():
    t0 = time.perf_counter()
    rng = np.random.default_rng(SEED + 1)
    worst = 0.0
    for _ in range(200):
        v, J, _ = _random_case(rng, n_max=40, j_max=12)
        beta = float(rng.choice([2.0, 10.0, 100.0]))
        p = RegularizationParams.from_beta(v.size, beta)
        for ell in range(1, min(4, J.size) + 1):
            ref = brute_force_log_z(v, J, ell, p.beta, p.nu)
            # relative error of Z itself
            worst = max(worst, abs(math.expm1(z_ell(v, J, ell, p) - ref)))
    report("C2", worst <= 1e-10, f"max relative error of Z {worst:.2e} (limit 1e-10)", t0)


def test_c03_gradient_correctness():
    t0 = time.perf_counter()
    rng = np.random.default_rng(SEED + 2)
    worst_rel, worst_l1 = 0.0, 0.0
    h = 1e-7
    for _ in range(100):
        v, J, ell = _random_case(rng, n_max=40)
        v = v * 0.1
        p = RegularizationParams.from_beta(v.size, float(rng.choice([10.0, 100.0])))
        g = grad_f(v, J, ell, p)
        fd = np.empty_like(v)
        for j in range(v.size):
            e = np.zeros_like(v)
            e[j] = h
            fd[j] = (f_ell(v + e, J, ell, p) - f_ell(v - e, J, ell, p)) / (2 * h)
        worst_rel = max(worst_rel, np.linalg.norm(fd - g) / np.linalg.norm(g))
        worst_l1 = max(worst_l1, np.abs(g).sum() / (2 * p.nu * ell))
    ok = worst_rel <= 1e-6 and worst_l1 <= 1.0 + 1e-12  # equality is attained when one gap dominates
    report("C3", ok, f"max relative FD error {worst_rel:.2e} (limit 1e-6), max sum|dF|/(2 nu ell) {worst_l1:.3f}", t0)


def test_c04_hs_identity():
    t0 = time.perf_counter()
    n = 200
    p = HSParams()
    rng = np.random.default_rng(SEED + 3)
    sources = {
        "goe": eigenvalues(sample_matrix(goe_spec(n), rng)).lam,
        "classical_diagonal": np.diag(classical_locations(n).gamma),
        "random_diagonal": np.diag(np.sort(rng.uniform(-2, 2, n))),
    }
    energies = rng.uniform(-1.6, 1.6, 50)
    worst = 0.0
    for src in sources.values():
        for e in energies:
            res = hs_functional(src, smoothed_counting_kernel(e, p.eta1(n)), p)
            worst = max(worst, abs(res.A_E + res.B_E + res.dropped_terms - res.trace))
    report("C4", worst <= 1e-3, f"max |A+B+dropped - tr f_E| {worst:.2e} over 150 cases (limit 1e-3)", t0)


# ---------------------------------------------------------------- regularized eigenvalues


def test_c05_tilde_lambda_accuracy():
    t0 = time.perf_counter()
    n = 200
    cfg = config(kind="regularize", ensemble="goe", n_values=[n], n_trials=50, hs={"delta": 0.05})
    res = ex.regularization_accuracy(goe_spec(n), cfg, **records("c05_regularize"))
    p95 = res["p95_scaled"]
    report("C5", p95 < 1.0, f"95th percentile of N max|tilde - lambda| = {p95:.3f} (limit 1), median {res['median_scaled']:.3f}", t0)


def test_c06_entry_derivative_scale():
    t0 = time.perf_counter()
    n = 200
    cfg = config(kind="fd_probe", ensemble="goe", n_values=[n], n_trials=100)
    res = ex.entry_derivative_scale(goe_spec(n), cfg, **records("c06_fd_probe"))
    bound = 10 * n**0.1 / n
    ok = res["max_abs"] < bound
    report("C6", ok, f"max |d tilde_lambda / d h_ab| {res['max_abs']:.3e} (limit {bound:.3e}), {res['noisy']} noisy probes", t0)


# ---------------------------------------------------------------- spectral diagnostics


def test_c07_local_law_rigidity_delocalization():
    t0 = time.perf_counter()
    n = 1000
    cfg = config(
        kind="spectrum", ensemble="goe", n_values=[n], n_trials=100,
        params={"alpha": 0.1, "grid_delta": 0.1, "write_spectra": False},
    )
    res = ex.spectral_diagnostics(goe_spec(n), cfg, **records("c07_spectrum"))
    ll = int((res["local_law_max"] <= n**0.2).sum())
    rig = int((res["rigidity_max"] <= n**0.25).sum())
    de = int((res["deloc_max"] <= n**0.2).sum())
    ok = min(ll, rig, de) >= 99
    detail = (
        f"trials within bounds: local law {ll}/100 (max {res['local_law_max'].max():.2f} vs {n**0.2:.2f}), "
        f"rigidity {rig}/100 (max {res['rigidity_max'].max():.2f} vs {n**0.25:.2f}), "
        f"delocalization {de}/100 (max {res['deloc_max'].max():.2f} vs {n**0.2:.2f})"
    )
    report("C7", ok, detail, t0)


# ---------------------------------------------------------------- comparisons


def test_c08_four_moment_comparison():
    t0 = time.perf_counter()
    n = 500
    cfg = config(
        kind="four_moment", ensemble="gue", ensemble_b="gue_three_point", n_values=[n], n_trials=500,
        selector={"mode": "interval", "a": -1.0, "b": 1.0},
        test_function={"kind": "smoothed_lp", "params": {"center": 1.0, "p": 2.0}},
    )
    res = ex.four_moment_compare(gue_spec(n), gue_spec(n, "three_point"), cfg, **records("c08_four_moment"))
    ok = res["ks_two_sample"] <= 0.1 and abs(res["mean_diff"]) <= 3 * res["stderr"] + 0.05
    report("C8", ok, f"KS {res['ks_two_sample']:.3f} (limit 0.1), |mean diff| {abs(res['mean_diff']):.4f} vs 3 SE + 0.05 = {3 * res['stderr'] + 0.05:.4f}", t0)


FLOW_CFG = {
    "kind": "flow", "ensemble": "goe", "n_values": [500], "n_trials": 300, "base_seed": SEED,
    "params": {"t": 500**-0.75},
}


def test_c09_flow_comparison():
    t0 = time.perf_counter()
    cfg = ex.ExperimentConfig.from_dict(FLOW_CFG)
    res = ex.flow_compare(goe_spec(500), 500**-0.75, cfg, **records("c09_flow"))
    zero = ex.flow_compare(goe_spec(500), 0.0, cfg, **records("c09_flow_t0"))
    ok = res["ks"] <= 0.1 and zero["max_abs_paired_diff"] == 0.0
    report("C9", ok, f"KS at t=N^-0.75 {res['ks']:.3f} (limit 0.1), max paired diff at t=0 {zero['max_abs_paired_diff']}", t0)


# ---------------------------------------------------------------- universality


@pytest.fixture(scope="module")
def universality_run():
    cfg = config(
        kind="universality", ensemble="gue", n_values=[250, 1000, 2000], n_trials=200,
        n_trials_per_n={"2000": 500}, selector={"mode": "interval", "a": -1.0, "b": 1.0}, params={"k_max": 1},
    )
    return ex.mc_run(cfg, **records("c10_c11_universality"))


def test_c10_maximal_gap_limit(universality_run):
    t0 = time.perf_counter()
    res = ex.universality_maxgap(gue_spec(2000), (-1, 1), universality_run, max_trials=200)
    means = {row["n"]: row["scaled_mean"] for row in res["per_N"]}
    in_range = all(0.75 <= m <= 1.05 for m in means.values())
    approach = abs(means[2000] - 1) < abs(means[250] - 1)
    shown = ", ".join(f"N={n}: {m:.3f}" for n, m in means.items())
    report("C10", in_range and approach, f"scaled means {shown}; in [0.75, 1.05]: {in_range}; closer to 1 at 2000: {approach}", t0)


def test_c11_fluctuation_shape(universality_run):
    t0 = time.perf_counter()
    res = ex.universality_fluctuations(gue_spec(2000), (-1, 1), 1, universality_run, n=2000)
    synth = ex.gumbel_self_check(1, 0.0, 10_000, seed=SEED)
    ok = res["ks_to_gumbel_k"] <= 0.15 and synth["ks_to_gumbel_k"] <= 0.03 and abs(synth["fitted_c2"]) <= 0.05
    report(
        "C11", ok,
        f"KS of tau*_1 to fitted Gumbel-1 {res['ks_to_gumbel_k']:.3f} (limit 0.15, c2 = {res['fitted_c2']:.3f}); "
        f"synthetic KS {synth['ks_to_gumbel_k']:.4f}, fitted c2 {synth['fitted_c2']:+.4f}",
        t0,
    )


# ---------------------------------------------------------------- coupling


def test_c12_coupling_decay():
    t0 = time.perf_counter()
    n = 500
    cfg = config(
        kind="coupling", ensemble="goe", ensemble_b="goe", n_values=[n], n_trials=50,
        params={"time_exponents": [-0.9, -0.5], "alpha": 0.1},
    )
    res = ex.coupling_decay(goe_spec(n), cfg, spec_y=goe_spec(n), **records("c12_coupling"))
    early, late = res["median_max_gapdiff"][1], res["median_max_gapdiff"][2]
    ratio = late / early
    report("C12", ratio < 0.5, f"median max N|gap diff|: {early:.3f} at N^-0.9, {late:.3f} at N^-0.5, ratio {ratio:.3f} (limit 0.5)", t0)


# ---------------------------------------------------------------- determinism


def _tree(out):
    files = {}
    for root, _, names in os.walk(out):
        for name in names:
            path = os.path.join(root, name)
            data = open(path, "rb").read()
            if name == "manifest.json":
                m = json.loads(data)
                m.pop("started"), m.pop("finished")
                data = json.dumps(m, sort_keys=True).encode()
            files[os.path.relpath(path, out)] = data
    return files


def test_c13_determinism(tmp_path, monkeypatch):
    t0 = time.perf_counter()
    monkeypatch.delenv("WIGNER_GAPS_OUT", raising=False)
    path = tmp_path / "flow.json"
    path.write_text(json.dumps(FLOW_CFG))
    outs = []
    for workers in (1, 8):
        out = tmp_path / f"workers{workers}"
        code = cli.main(["flow", "--config", str(path), "--out-dir", str(out), "--workers", str(workers)])
        assert code == 0
        outs.append(_tree(out))
    same = outs[0] == outs[1]
    report("C13", same, f"flow acceptance config rerun with workers 1 and 8: {len(outs[0])} files, byte-identical: {same}", t0)
