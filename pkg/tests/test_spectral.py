import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import char_poly_roots, semicircle_quantile, stieltjes_by_quadrature
from wignergaps.ensembles import goe_spec, sample_matrix
from wignergaps.errors import NumericalError
from wignergaps.spectral import (
    SpectralDomainGrid,
    Spectrum,
    classical_locations,
    delocalization_report,
    eigensystem,
    eigenvalues,
    empirical_stieltjes,
    entrywise_local_law_deviation,
    green_entry,
    local_law_deviation,
    m_sc,
    rho_sc,
    rigidity_report,
    semicircle_cdf,
)


def test_diagonal_and_swap_spectra():
    np.testing.assert_allclose(eigenvalues(np.diag([3.0, 1.0, 2.0])).lam, [1, 2, 3])
    np.testing.assert_allclose(eigenvalues(np.array([[0.0, 1.0], [1.0, 0.0]])).lam, [-1, 1])


def test_goe_spectrum_matches_characteristic_polynomial():
    h = sample_matrix(goe_spec(8), np.random.default_rng(21)).h
    assert np.abs(eigenvalues(h).lam - char_poly_roots(h)).max() <= 1e-10


def test_trace_consistency_and_order():
    h = sample_matrix(goe_spec(60), np.random.default_rng(4)).h
    s = eigenvalues(h)
    assert np.all(np.diff(s.lam) >= 0)
    assert abs(s.lam.sum() - np.trace(h)) <= 60 * 1e-10 * (1 + np.linalg.norm(h))


def test_eigensolver_failure_carries_seed():
    h = np.full((3, 3), np.nan)
    with pytest.raises(NumericalError, match="seed 99"):
        eigenvalues(type("M", (), {"h": h, "seed": 99})())


def test_rho_sc_values():
    assert rho_sc(0.0) == pytest.approx(1 / np.pi)
    assert rho_sc(2.0) == 0.0 and rho_sc(-2.0) == 0.0
    assert rho_sc(1.0) == pytest.approx(0.2756645, abs=1e-7)


def test_m_sc_values():
    assert m_sc(1j) == pytest.approx(1j * (np.sqrt(5) - 1) / 2, abs=1e-14)
    z = 1e6j
    assert m_sc(z) == pytest.approx(-1 / z, rel=1e-6)
    z = 0.5 + 0.1j
    assert abs(m_sc(z) - stieltjes_by_quadrature(z)) <= 1e-8
    with pytest.raises(ValueError):
        m_sc(0.3 - 0.1j)


@given(st.floats(-9, 9), st.floats(1e-6, 9))
def test_m_sc_solves_quadratic(e, eta):
    z = complex(e, eta)
    m = m_sc(z)
    assert abs(m * m + z * m + 1) <= 1e-12 * max(1.0, abs(z)) ** 2
    assert m.imag > 0


def test_classical_locations():
    g = classical_locations(4).gamma
    assert g[1] == 0.0 and g[3] == 2.0
    assert g[0] == pytest.approx(semicircle_quantile(0.25), abs=1e-12)
    assert g[0] == pytest.approx(-0.8079455065990346, abs=1e-12)


@given(st.integers(1, 400))
def test_classical_locations_solve_cumulative_equation(n):
    g = classical_locations(n).gamma
    assert np.all(np.diff(g) > 0)
    assert g[-1] == 2.0 and np.all(g > -2)
    assert np.abs(semicircle_cdf(g) - np.arange(1, n + 1) / n).max() <= 1e-10


def test_empirical_stieltjes():
    s = Spectrum(np.array([-1.0, 1.0]))
    assert empirical_stieltjes(s, 1j) == pytest.approx(0.5j)
    z = 1e7j
    assert empirical_stieltjes(s, z) == pytest.approx(-1 / z, rel=1e-6)
    with pytest.raises(ValueError):
        empirical_stieltjes(s, 0.5)


def test_green_entry_diagonal_case():
    assert green_entry(np.diag([1.0, 2.0]), 1, 1, 1j) == pytest.approx(0.5 + 0.5j)
    with pytest.raises(ValueError):
        green_entry(np.eye(2), 1, 1, 0.3)


def test_resolvent_symmetry_ward_identity_and_trace():
    h = sample_matrix(goe_spec(40), np.random.default_rng(9)).h
    eig = eigensystem(h)
    z = 0.2 + 0.03j
    g = eig.green(z)
    gbar = eig.green(np.conj(z))
    np.testing.assert_allclose(g, gbar.conj().T, atol=1e-12)
    ward = np.sum(np.abs(g) ** 2, axis=1)
    np.testing.assert_allclose(ward, g.diagonal().imag / z.imag, rtol=1e-8)
    assert empirical_stieltjes(Spectrum(eig.lam), z) == pytest.approx(np.trace(g) / 40, rel=1e-10)
    assert green_entry(h, 3, 7, z, eig=eig) == pytest.approx(g[2, 6])


def test_goe_entrywise_local_law():
    n, z = 200, 0.3 + 0.05j
    msc = m_sc(z)
    bound = n**0.2 * (np.sqrt(msc.imag / (n * z.imag)) + 1 / (n * z.imag))
    ok = []
    for seed in range(20):
        h = sample_matrix(goe_spec(n), np.random.default_rng(seed)).h
        eig = eigensystem(h)
        ok.append(abs(green_entry(h, 1, 1, z, eig) - msc) <= bound)
        ok.append(abs(green_entry(h, 1, 2, z, eig)) <= bound)
        # the scaled deviation is O(1) over the whole matrix
        assert entrywise_local_law_deviation(eig, z) < 2.0
    assert all(ok)


def test_goe_averaged_local_law_at_fixed_point():
    n = 1000
    s = eigenvalues(sample_matrix(goe_spec(n), np.random.default_rng(17)).h)
    z = 0.1j
    assert abs(empirical_stieltjes(s, z) - m_sc(z)) <= n**0.2 / (n * 0.1)


def test_rigidity_report_constructed_inputs():
    n = 50
    g = classical_locations(n).gamma
    assert rigidity_report(Spectrum(g), 0.1)["max_scaled_dev"] == 0.0
    r = rigidity_report(Spectrum(g + 1.0 / n), 0.1)
    assert r["max_scaled_dev"] == pytest.approx(1.0)
    with pytest.raises(ValueError):
        rigidity_report(Spectrum(g), 0.5)


def test_delocalization_report():
    s = eigenvalues(np.eye(5) * np.arange(5), want_vectors=True)
    rep = delocalization_report(s)
    assert rep["max_scaled_supnorm"] == pytest.approx(np.sqrt(5)) and rep["localized"]
    s2 = eigenvalues(np.array([[0.0, 1.0], [1.0, 0.0]]), want_vectors=True)
    assert delocalization_report(s2)["max_scaled_supnorm"] == pytest.approx(1.0)
    with pytest.raises(ValueError):
        delocalization_report(eigenvalues(np.eye(2)))


def test_spectral_grid_domain():
    grid = SpectralDomainGrid.default(1000, delta=0.1)
    z = grid.points()
    assert np.all(np.abs(z.real) <= 10) and z.imag.min() >= 1000**-0.9 * (1 - 1e-12)
    with pytest.raises(ValueError):
        SpectralDomainGrid(np.array([11.0]), np.array([1.0]), 0.1, 100)


def test_local_law_deviation_shape():
    s = eigenvalues(sample_matrix(goe_spec(200), np.random.default_rng(1)).h)
    out = local_law_deviation(s, SpectralDomainGrid.default(200, n_energies=21, n_etas=5))
    assert out["max_scaled_dev"] > 0


def test_spectrum_csv_and_json_round_trip():
    s = eigenvalues(sample_matrix(goe_spec(12), np.random.default_rng(3)).h, want_vectors=True)
    back = Spectrum.from_csv(s.to_csv())
    assert back.lam.tobytes() == s.lam.tobytes()
    assert back.evec_supnorms.tobytes() == s.evec_supnorms.tobytes()
    assert Spectrum.from_json(s.to_json()).lam.tobytes() == s.lam.tobytes()
