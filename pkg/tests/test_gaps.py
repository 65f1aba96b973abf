import math

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from oracles import brute_force_t_ell, gumbel_k_cdf_by_integration
from wignergaps.gaps import (
    GapSelector,
    fit_gumbel_location,
    gumbel_k_cdf,
    gumbel_k_pdf,
    m_of_interval,
    nu,
    sample_gumbel_k,
    t_ell,
    t_hat_ell,
    tau_star,
)

V = np.array([0.0, 0.1, 0.5, 0.6, 1.0])


def ascending(min_size=3, max_size=14):
    return st.lists(st.floats(-5, 5, allow_nan=False), min_size=min_size, max_size=max_size).map(
        lambda xs: np.sort(np.array(xs))
    )


def test_t_ell_enumeration_examples():
    sel = GapSelector.index_set([1, 2, 3, 4])
    assert t_ell(V, sel, 1) == pytest.approx(0.4)
    assert t_ell(V, sel, 2) == pytest.approx(0.4)
    assert t_ell(V, sel, 3) == pytest.approx(0.1)
    assert t_ell(V, GapSelector.index_set([1, 3]), 1) == pytest.approx(0.1)
    assert t_ell(V, sel, 5) == 0.0


def test_t_ell_rejects_unsorted_and_out_of_range():
    with pytest.raises(ValueError):
        t_ell(V[::-1], GapSelector.index_set([1]), 1)
    with pytest.raises(ValueError):
        t_ell(V, GapSelector.index_set([5]), 1)


def test_t_hat_examples():
    sel = GapSelector.interval(0.05, 0.55)
    assert t_hat_ell(V, sel, 1) == pytest.approx(0.4)
    assert t_hat_ell(V, GapSelector.interval(0.2, 0.3), 1) == 0.0
    # v_N = 1.0 in the interval contributes no gap
    assert t_hat_ell(V, GapSelector.interval(0.9, 1.1), 1) == 0.0


def test_nu_values():
    assert nu(100) == pytest.approx(100 / math.sqrt(math.log(100)), rel=1e-15)
    assert nu(100) == pytest.approx(46.599, abs=1e-3)
    assert nu(1000) == pytest.approx(380.48, abs=1e-2)
    n = math.exp(2)
    assert nu(n) == pytest.approx(n / math.sqrt(2))
    with pytest.raises(ValueError):
        nu(1)


def test_m_of_interval():
    assert m_of_interval(-1, 1) == pytest.approx(math.sqrt(3))
    assert m_of_interval(0, 0) == 2.0
    assert m_of_interval(1.5, 1.6) == pytest.approx(1.2)
    with pytest.raises(ValueError):
        m_of_interval(-2.5, 0)


def test_tau_star_formula():
    n, m = 1000, math.sqrt(3)
    ln = math.log(n)
    gap = math.sqrt(32 * ln) / (m * n)
    assert tau_star(gap, n, m) == pytest.approx(0.625 * math.log(2 * ln))


def test_gumbel_k_cdf_values():
    assert gumbel_k_cdf(0.3, 1, 0.3) == pytest.approx(math.exp(-1))
    assert gumbel_k_cdf(1e3, 1) == pytest.approx(1.0)
    assert gumbel_k_cdf(0.0, 2, 0.0) == pytest.approx(2 * math.exp(-1))
    for x, k, c2 in [(-0.7, 1, 0.2), (1.3, 2, -0.4), (2.0, 3, 0.5)]:
        assert gumbel_k_cdf(x, k, c2) == pytest.approx(gumbel_k_cdf_by_integration(x, k, c2), abs=1e-12)


def test_gumbel_cdf_derivative_matches_density():
    x = np.linspace(-3, 8, 201)
    for k in (1, 2, 3):
        h = 1e-5
        num = (gumbel_k_cdf(x + h, k, 0.4) - gumbel_k_cdf(x - h, k, 0.4)) / (2 * h)
        assert np.abs(num - gumbel_k_pdf(x, k, 0.4)).max() <= 1e-6
        cdf = gumbel_k_cdf(x, k, 0.4)
        assert np.all(np.diff(cdf) >= 0) and np.all((cdf >= 0) & (cdf <= 1))


def test_gumbel_fit_recovers_location():
    rng = np.random.default_rng(0)
    for k, c2 in [(1, 0.0), (2, 1.5)]:
        tau = sample_gumbel_k(rng, k, c2, 10_000)
        assert fit_gumbel_location(tau, k) == pytest.approx(c2, abs=0.05)


def test_selector_validation_and_json():
    sel = GapSelector.index_set([30, 10, 20], alpha=0.1)
    assert sel.J == (10, 20, 30)
    sel.validate_for(100)
    with pytest.raises(ValueError):
        GapSelector.index_set([5, 20], alpha=0.1).validate_for(100)
    with pytest.raises(ValueError):
        GapSelector.interval(-2.0, 1.0)
    with pytest.raises(ValueError):
        GapSelector.interval(-1.9, 1.0, kappa=0.2)
    for s in (sel, GapSelector.interval(-1.0, 1.0)):
        assert GapSelector.from_json(s.to_json()) == s


@given(ascending(), st.data())
def test_difference_of_sums_identity(v, data):
    J = data.draw(st.lists(st.integers(1, v.size - 1), min_size=1, max_size=12, unique=True))
    ell = data.draw(st.integers(1, 4))
    assert abs(t_ell(v, GapSelector.index_set(J), ell) - brute_force_t_ell(v, sorted(J), ell)) <= 1e-12


@given(ascending(), st.floats(-3, 3), st.floats(0.1, 10))
def test_monotone_translation_and_scaling(v, c, s):
    sel = GapSelector.index_set(range(1, v.size))
    ts = [t_ell(v, sel, ell) for ell in range(1, v.size + 1)]
    assert all(a >= b for a, b in zip(ts, ts[1:])) and ts[-1] >= 0
    assert t_ell(v + c, sel, 1) == pytest.approx(ts[0], abs=1e-9)
    assert t_ell(s * v, sel, 1) == pytest.approx(s * ts[0], rel=1e-12, abs=1e-12)


@given(ascending(min_size=4), st.floats(-4, 0), st.floats(0, 4))
def test_t_hat_is_bounded_by_all_gaps(v, a, b):
    assume(-2 < a and b < 2)
    sel = GapSelector.interval(a, b)
    assert 0 <= t_hat_ell(v, sel, 1) <= t_ell(v, GapSelector.index_set(range(1, v.size)), 1)
