import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad
from scipy.optimize import brentq

from todalab.ensembles import EnsembleSpec, sample_wigner, spectral_from_matrix, trial_stream
from todalab.halting import SpectralData
from todalab.stats import (check_gap_condition, check_rigidity, ecdf, edge_fit_c_v, histogram, ks_distance,
                           normalized, quantile_gamma, semicircle, summarize, write_ecdf_csv, write_histogram_csv)

# brentq on the closed-form r=2 cdf, cross-checked by quadrature in test_quarter_quantile
QUARTER_QUANTILE_R2 = -0.8079455065990


def test_density_integrates_to_one():
    for r in (1.0, 2.0, 2 * math.sqrt(2), 4.0):
        m = semicircle(r)
        assert quad(m.density, -r, r, epsabs=1e-13, limit=200)[0] == pytest.approx(1.0, abs=1e-10)
        assert np.all(m.density(np.linspace(-r, r, 101)) >= 0)


def test_c_v_values():
    assert semicircle(2 * math.sqrt(2)).c_V == pytest.approx(2 ** -1.5, rel=1e-14)
    assert semicircle(2.0).c_V == pytest.approx(2 ** -0.75, rel=1e-14)
    assert semicircle(2.0).cdf(0.0) == 0.5


@pytest.mark.parametrize("r", [2.0, 2 * math.sqrt(2), 4.0])
def test_edge_fit_matches_analytic_c_v(r):
    m = semicircle(r)
    assert edge_fit_c_v(m) == pytest.approx(m.c_V, rel=0.01)


def test_edge_fit_r2_window():
    m = semicircle(2.0)
    assert edge_fit_c_v(m, width=0.01) == pytest.approx(2 ** -0.75, rel=0.01)


def test_quarter_quantile():
    m = semicircle(2.0)
    g = quantile_gamma(m, 1, 4)
    assert g == pytest.approx(QUARTER_QUANTILE_R2, abs=1e-11)
    assert brentq(lambda x: m.cdf(x) - 0.25, -2, 2, xtol=1e-15) == pytest.approx(g, abs=1e-11)
    assert quad(m.density, -2, g, epsabs=1e-14)[0] == pytest.approx(0.25, abs=1e-10)


def test_quantile_endpoints():
    m = semicircle(3.0)
    assert quantile_gamma(m, 10, 10) == 3.0
    assert quantile_gamma(m, 5, 10) == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(ValueError):
        quantile_gamma(m, 11, 10)


@pytest.mark.parametrize("r", [1.0, 2.0, 2 * math.sqrt(2)])
def test_quantile_cdf_round_trip(r):
    m = semicircle(r)
    x = np.linspace(-r, r, 102)[1:-1]
    q = m.cdf(x)
    back = quantile_gamma(m, q * 1000, 1000)
    assert np.max(np.abs(back - x)) <= 1e-10


def test_gap_condition_examples():
    sd = SpectralData(np.array([0.0, 1.0, 2.0]), np.ones(3) / math.sqrt(3))
    assert check_gap_condition(sd, 0.3)
    sd = SpectralData(np.array([0.0, 0.0, 1.0]), np.ones(3) / math.sqrt(3))
    assert not check_gap_condition(sd, 0.05)
    with pytest.raises(ValueError):
        check_gap_condition(SpectralData(np.array([0.0, 1.0]), np.array([0.6, 0.8])), 0.1)


def goe_sd(n, seed):
    return spectral_from_matrix(sample_wigner(EnsembleSpec("GOE", n), trial_stream(seed, 0)))


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10**9), p1=st.floats(0.01, 0.33), p2=st.floats(0.01, 0.33))
def test_gap_condition_antitone(seed, p1, p2):
    sd = goe_sd(12, seed)
    lo, hi = sorted((p1, p2))
    assert check_gap_condition(sd, hi) <= check_gap_condition(sd, lo)


def test_gap_condition_frequency_monotone():
    sds = [goe_sd(100, s) for s in range(300)]
    f = [np.mean([check_gap_condition(sd, p) for sd in sds]) for p in (0.05, 0.3)]
    assert f[0] >= f[1]


def test_rigidity_examples():
    N = 100
    m = semicircle(2 * math.sqrt(2))
    loc = SpectralData(np.linspace(-1, 1, N), np.eye(N)[0])
    assert check_rigidity(loc, 0.2, m).failed_clause == 1
    # eigenvalues exactly at their quantiles, delocalized vector, top gaps inside the window
    gam = quantile_gamma(m, np.arange(1, N + 1), N)
    lam = gam.copy()
    gaps = N ** (-2 / 3)
    lam[-2], lam[-3] = lam[-1] - gaps, lam[-1] - 1.5 * gaps
    lam = np.sort(lam)
    sd = SpectralData(lam, np.ones(N) / math.sqrt(N))
    rep = check_rigidity(sd, 0.5, m)
    assert rep.failed_clause != 4
    exact = SpectralData(gam, np.ones(N) / math.sqrt(N))
    rep = check_rigidity(exact, 0.9, m)
    assert rep.failed_clause in (None, 3)


def test_rigidity_clause_order_and_monotone_in_s():
    m = semicircle(2 * math.sqrt(2))
    for seed in range(30):
        sd = goe_sd(40, seed)
        oks = [check_rigidity(sd, s, m).ok for s in (0.2, 0.5, 0.8, 1.2, 2.0)]
        assert all(a <= b for a, b in zip(oks, oks[1:]))
    assert check_rigidity(goe_sd(40, 0), 5.0, m).ok


def test_rigidity_frequency_trend():
    m = semicircle(2 * math.sqrt(2))
    f = {n: np.mean([check_rigidity(goe_sd(n, s), 0.3, m).ok for s in range(100)]) for n in (50, 200)}
    assert f[200] >= f[50]


def test_ks_examples():
    e = ecdf([3.0, 1.0, 2.0])
    assert ks_distance(e, e) == 0
    assert ks_distance(e, ecdf([11.0, 12.0, 13.0])) == 1
    assert ks_distance(ecdf([1.0, 2.0]), ecdf([1.5])) == 0.5
    with pytest.raises(ValueError):
        ecdf([])


def test_ecdf_is_right_continuous():
    e = ecdf([1.0, 2.0, 2.0, 3.0])
    assert e(0.5) == 0 and e(1.0) == 0.25 and e(2.0) == 0.75 and e(3.0) == 1.0


@settings(max_examples=40, deadline=None)
@given(a=st.lists(st.floats(-5, 5), min_size=1, max_size=30), b=st.lists(st.floats(-5, 5), min_size=1, max_size=30),
       c=st.lists(st.floats(-5, 5), min_size=1, max_size=30))
def test_ks_is_a_metric(a, b, c):
    A, B, C = ecdf(a), ecdf(b), ecdf(c)
    assert ks_distance(A, B) == ks_distance(B, A)
    assert ks_distance(A, C) <= ks_distance(A, B) + ks_distance(B, C) + 1e-15
    assert 0 <= ks_distance(A, B) <= 1


def test_histogram_masses_and_densities():
    x = np.random.default_rng(0).standard_normal(5000)
    h = histogram(x)
    assert h.masses.sum() == pytest.approx(1.0)
    assert np.sum(h.densities * np.diff(h.edges)) == pytest.approx(1.0)
    assert histogram(x, bins=7).masses.size == 7


def test_summarize_and_normalized():
    s = summarize([0.0, 2.0])
    assert s.mean == 1 and s.std == pytest.approx(math.sqrt(2)) and s.ratio == pytest.approx(1 / math.sqrt(2))
    assert np.allclose(normalized([0.0, 2.0]), [-1 / math.sqrt(2), 1 / math.sqrt(2)])
    s = summarize([1.0, 1.0, 1.0])
    assert s.std == 0 and s.ratio is None
    with pytest.raises(ValueError):
        normalized([1.0, 1.0, 1.0])
    z = normalized(np.random.default_rng(1).exponential(size=1000))
    assert abs(z.mean()) <= 1e-12 and abs(z.std(ddof=1) - 1) <= 1e-12


def test_csv_writers(tmp_path):
    write_ecdf_csv(tmp_path / "e.csv", ecdf([2.0, 1.0]), ["x=1"])
    assert (tmp_path / "e.csv").read_text().splitlines() == ["# x=1", "value,probability", "1.0,0.5", "2.0,1.0"]
    write_histogram_csv(tmp_path / "h.csv", histogram([0.0, 1.0], bins=2))
    assert (tmp_path / "h.csv").read_text().splitlines()[0] == "left_edge,mass,density"
