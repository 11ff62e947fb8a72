"""The thirteen acceptance criteria at their stated tolerances.

Each test records its outcome through the ``acceptance`` fixture; a summary with
one PASS/FAIL line per criterion is printed at the end of the session. Seeds were
fixed before any of these runs. Parts known to be unreachable at this sample
size are marked xfail (non-strict) with the reason; their assertions are
unchanged and their summary line reads FAIL.
"""
import math
import time

import numpy as np
import pytest

from todalab.ensembles import EnsembleSpec, sample_wigner, spectral_from_matrix, trial_stream
from todalab.experiments import (ExperimentConfig, condition_frequencies, run_gapdist, run_halt, run_khat,
                                 run_prop_error, run_table1, trial_spectral)
from todalab.flow import energy_from_matrix, flow_at, rk4_flow
from todalab.halting import (C_V_DEFAULT, SpectralData, energy, gamma_constant, halting_time, rescale_tilde,
                             t1_minus_tstar, x11)
from todalab.linalg import eigh
from todalab.stats import edge_fit_c_v, ks_distance, quantile_gamma, semicircle

SWAP = SpectralData(np.array([-1.0, 1.0]), np.full(2, math.sqrt(0.5)))
GRID = (0.0, 0.5, 1.0, 2.0, 5.0)


def swap_t1_oracle(eps):
    # E(t) = 4x/(1+x)^2 with x = exp(-4t); E = eps^2 is a quadratic in x
    c = 4.0 / eps ** 2 - 2.0
    return -math.log((c - math.sqrt(c * c - 4.0)) / 2.0) / 4.0


def goe(seed, n):
    return sample_wigner(EnsembleSpec("GOE", n), trial_stream(seed, 0))


# --- 1 ---------------------------------------------------------------------------------------

def test_c1_closed_form(acceptance):
    t0 = time.perf_counter()
    t1 = halting_time(SWAP, 0.1)
    x = x11(SWAP, 1.0)
    dt = time.perf_counter() - t0
    oracle = swap_t1_oracle(0.1)
    ok = abs(t1 - oracle) <= 1e-6 and abs(x - math.tanh(2.0)) <= 1e-12 and dt < 1.0
    acceptance(1, "oracle", ok, f"T1={t1:.9f} oracle={oracle:.9f} x11(1)-tanh2={x - math.tanh(2.0):.1e} {dt:.3f}s")
    assert ok


@pytest.mark.xfail(strict=False, reason="the printed 1.4966097 is off by 1.7e-6 from the root of its own defining "
                                        "equation, 1.49661142; see notes/decisions.md")
def test_c1_printed_value(acceptance):
    t1 = halting_time(SWAP, 0.1)
    ok = abs(t1 - 1.4966097) <= 1e-6
    acceptance(1, "printed value", ok, f"|T1-1.4966097|={abs(t1 - 1.4966097):.2e}")
    assert ok


# --- 2 to 5 ------------------------------------------------------------------------------------

def test_c2_propagator_vs_rk4(acceptance):
    t0 = time.perf_counter()
    worst = 0.0
    for d in range(20):
        H = goe(2000 + d, 8)
        es = eigh(H)
        for t in (0.5, 1.0, 2.0):
            worst = max(worst, float(np.max(np.abs(flow_at(es, H, t) - rk4_flow(H, t, 1e-3)))))
    dt = time.perf_counter() - t0
    ok = worst <= 1e-6 and dt < 60
    acceptance(2, "flow vs rk4", ok, f"max entry diff {worst:.2e}, {dt:.1f}s")
    assert ok


@pytest.fixture(scope="module")
def flows20():
    out = []
    for d in range(20):
        H = goe(2100 + d, 20)
        es = eigh(H)
        out.append((H, es, spectral_from_matrix(H), [flow_at(es, H, t) for t in GRID]))
    return out


def test_c3_energy_cross_representation(acceptance, flows20):
    t0 = time.perf_counter()
    worst = 0.0
    for H, es, sd, Xs in flows20:
        for t, X in zip(GRID, Xs):
            e_spec = float(energy(sd, t))
            worst = max(worst, abs(e_spec - energy_from_matrix(X)) / e_spec)
    dt = time.perf_counter() - t0
    ok = worst <= 1e-8 and dt < 60
    acceptance(3, "energy", ok, f"max rel diff {worst:.2e}")
    assert ok


def test_c4_isospectral_trace(acceptance, flows20):
    drift = tr = 0.0
    for H, es, sd, Xs in flows20:
        for X in Xs:
            drift = max(drift, float(np.max(np.abs(np.linalg.eigvalsh(X) - sd.lambdas))))
            tr = max(tr, abs(float(np.trace(X) - np.trace(H))))
    ok = drift <= 1e-8 and tr <= 1e-10
    acceptance(4, "invariants", ok, f"spectrum drift {drift:.1e}, trace drift {tr:.1e}")
    assert ok


def test_c5_scaling_and_shift(acceptance):
    worst_e = worst_t = worst_g = 0.0
    for d in range(20):
        sd = spectral_from_matrix(goe(2200 + d, 20))
        for a in (0.5, 2.0):
            sa = SpectralData(a * sd.lambdas, sd.betas)
            for t in GRID:
                lhs, rhs = float(energy(sa, t)), a * a * float(energy(sd, a * t))
                worst_e = max(worst_e, abs(lhs - rhs) / abs(rhs))
        t1 = halting_time(sd, 1e-6)
        for c in (-3.0, 0.7, 10.0):
            worst_t = max(worst_t, abs(halting_time(SpectralData(sd.lambdas + c, sd.betas), 1e-6) - t1) / t1)
    for n, eps in ((100, 1e-14), (1000, 1e-20)):
        L = math.log(1 / eps) - 2.0 / 3.0 * math.log(n)
        for g in (-0.5, 0.883, 2.0):
            ratio = rescale_tilde(5.0, n, eps, g) / rescale_tilde(5.0, n, eps, 0.0)
            worst_g = max(worst_g, abs(ratio - L / (L + g)))
    ok = worst_e <= 1e-10 and worst_t <= 1e-9 and worst_g <= 1e-12
    acceptance(5, "identities", ok, f"energy {worst_e:.1e}, shift {worst_t:.1e}, tilde ratio {worst_g:.1e}")
    assert ok


# --- 6 --------------------------------------------------------------------------------------------

@pytest.mark.xfail(strict=False, reason="GOE T1 has heavy tails, so mean/std at 2000 trials is noisy and biased high: "
                                        "at N=200 the GOE ratio exceeds 0.95 in 8 of 12 replicate runs; see "
                                        "notes/decisions.md")
def test_c6_table1(acceptance):
    rows = run_table1(ExperimentConfig(experiment="table1", ensembles=["GUE", "GOE"], ns=[50, 100, 200],
                                       eps=1e-5, trials=2000, seed=6000, workers=4))
    ok = all(1.35 <= r.ratios["GUE"] <= 1.85 and 0.35 <= r.ratios["GOE"] <= 0.95 for r in rows)
    acceptance(6, "ratios", ok, ", ".join(f"N={r.n} GUE {r.ratios['GUE']:.3f} GOE {r.ratios['GOE']:.3f}"
                                          for r in rows))
    assert ok


# --- 7 and 11 ---------------------------------------------------------------------------------------

@pytest.fixture(scope="module")
def universality():
    ref = run_gapdist(ExperimentConfig(experiment="gapdist", ensemble="FactorizedGaussianBeta", beta=2, n=1000,
                                       trials=20000, seed=7000))
    tilde = {}
    for seed, kind in ((7001, "GUE"), (7002, "BUE"), (7003, "GOE")):
        run = run_halt(ExperimentConfig(ensemble=kind, n=150, eps=1e-14, gamma=0.883, trials=3000, seed=seed,
                                        workers=4))
        x = run.column("t_tilde")
        tilde[kind] = x[~np.isnan(x)]
    return ref, tilde


def _ks(a, b):
    from todalab.stats import ecdf
    return ks_distance(ecdf(a), ecdf(b))


def test_c7_gue_vs_reference(acceptance, universality):
    ref, tilde = universality
    ks = _ks(tilde["GUE"], ref.stats)
    acceptance(7, "GUE vs F2 reference", ks <= 0.08, f"KS {ks:.4f} <= 0.08")
    assert ks <= 0.08


def test_c7_ensemble_independence(acceptance, universality):
    _, tilde = universality
    ks = _ks(tilde["GUE"], tilde["BUE"])
    acceptance(7, "GUE vs BUE", ks <= 0.05, f"KS {ks:.4f} <= 0.05")
    assert ks <= 0.05


@pytest.mark.xfail(strict=False, reason="the beta=1 and beta=2 limit laws are only about 0.092-0.096 apart in KS "
                                        "(checked on 1e5-sample factorized runs), below the 0.1 bound; see "
                                        "notes/decisions.md")
def test_c7_beta_separation(acceptance, universality):
    _, tilde = universality
    ks = _ks(tilde["GOE"], tilde["GUE"])
    acceptance(7, "GOE vs GUE", ks >= 0.1, f"KS {ks:.4f} >= 0.1")
    assert ks >= 0.1


def test_c11_gamma_constants(acceptance, universality):
    ref, _ = universality
    b1 = run_gapdist(ExperimentConfig(experiment="gapdist", ensemble="FactorizedGaussianBeta", beta=1, n=1000,
                                      trials=20000, seed=11001))
    zeta = trial_stream(11002, 0).standard_cauchy(200000)
    g2 = gamma_constant(2, C_V_DEFAULT, ref.stats, zeta).value
    g1 = gamma_constant(1, C_V_DEFAULT, b1.stats, zeta).value
    cauchy = float(np.mean(0.5 * np.log(np.abs(zeta))))
    ok = abs(g2 - 0.883) <= 0.05 and abs(g1 - 0.89) <= 0.05 and abs(cauchy) <= 0.02
    acceptance(11, "gamma", ok, f"beta2 {g2:.4f}, beta1 {g1:.4f}, Cauchy term {cauchy:+.4f}")
    assert ok


# --- 8 ---------------------------------------------------------------------------------------------

# combined-mass threshold frozen from the pilot run (seed 20260917, 2000 trials: P1+P29 = 0.4425, se 0.011)
KHAT_PAIR_MASS = 0.40


def test_c8_khat_structure(acceptance):
    run = run_khat(ExperimentConfig(experiment="khat", ensemble="GOE", n=30, eps=1e-8, trials=2000, seed=8000,
                                    workers=4))
    p1, p29 = run.freq.get(1, 0.0), run.freq.get(29, 0.0)
    top = run.top_two()
    ok = abs(p1 - p29) <= 0.1 and set(top) == {1, 29} and p1 + p29 >= KHAT_PAIR_MASS
    acceptance(8, "k_hat", ok, f"P1 {p1:.4f}, P29 {p29:.4f}, top two {top}, pair mass {p1 + p29:.4f}")
    assert ok


# --- 9 ---------------------------------------------------------------------------------------------

def test_c9_top_eigenvalue_error(acceptance):
    rep = run_prop_error(ExperimentConfig(experiment="prop-error", ensemble="GUE", n=100, ns=[50, 100, 200],
                                          eps=1e-8, trials=2000, seed=9000, workers=4))
    med = [rep.second_median[n] for n in (50, 100, 200)]
    ok = rep.frac_scaled_err_le >= 0.95 and med[0] < med[1] < med[2]
    acceptance(9, "error", ok, f"frac {rep.frac_scaled_err_le:.4f}, second medians "
                               + ", ".join(f"{m:.3f}" for m in med))
    assert ok


# --- 10 --------------------------------------------------------------------------------------------

@pytest.fixture(scope="module")
def chain():
    out = {}
    for i, n in enumerate((50, 100, 200)):
        cfg = ExperimentConfig(ensemble="GUE", n=n, eps=1e-14, trials=1000, seed=10000 + 1000 * i)
        run = run_halt(cfg.override(workers=4))
        d1 = []
        for t, rec in enumerate(run.records):
            d = t1_minus_tstar(trial_spectral(cfg, t), 1e-14, rec.t1)
            if d is not None:
                d1.append(abs(d))
        d2 = np.abs(run.column("t_star") - run.column("t_hat"))
        out[n] = (float(np.median(d1)) / n ** (2 / 3), float(np.nanmedian(d2)) / (n ** (2 / 3) * math.log(n)))
    return out


@pytest.mark.xfail(strict=False, reason="at fixed eps, T1 - T* is set by the top-gap ratio whose law does not "
                                        "shrink with N; medians sit near 1e-21 with no trend; see notes/decisions.md")
def test_c10_t1_vs_tstar(acceptance, chain):
    m = [chain[n][0] for n in (50, 100, 200)]
    ok = m[0] > m[1] > m[2]
    acceptance(10, "|T1-T*|", ok, "medians " + ", ".join(f"{v:.3e}" for v in m))
    assert ok


def test_c10_tstar_vs_that(acceptance, chain):
    m = [chain[n][1] for n in (50, 100, 200)]
    ok = m[0] > m[1] > m[2]
    acceptance(10, "|T*-T_hat|", ok, "medians " + ", ".join(f"{v:.4f}" for v in m))
    assert ok


# --- 12 --------------------------------------------------------------------------------------------

def test_c12_equilibrium_edge(acceptance):
    m = semicircle(2 * math.sqrt(2))
    c = edge_fit_c_v(m)
    N = 1000
    idx = np.arange(1, N + 1)
    trip = float(np.max(np.abs(m.cdf(quantile_gamma(m, idx, N)) - idx / N)))
    ok = abs(c / 2 ** -1.5 - 1) <= 0.01 and trip <= 1e-10
    acceptance(12, "edge", ok, f"fit c_V/2^-1.5 - 1 = {c / 2 ** -1.5 - 1:+.2e}, round trip {trip:.1e}")
    assert ok


# --- 13 --------------------------------------------------------------------------------------------

def test_c13_condition_frequencies(acceptance):
    rig = [condition_frequencies(ExperimentConfig(ensemble="GOE", n=n, trials=1000, s=0.3, seed=13000 + i))
           for i, n in enumerate((50, 100, 200))]
    gap = [condition_frequencies(ExperimentConfig(ensemble="GOE", n=100, trials=1000, p=p, seed=13100))["gap"]
           for p in (0.3, 0.1, 0.05)]
    r = [f["rigidity"] for f in rig]
    ok = r[0] <= r[1] <= r[2] and gap[0] < gap[1] < gap[2]
    acceptance(13, "frequencies", ok, f"P(R) {r} (clause-1 failures {[f['failed_clause'][1] for f in rig]}), "
                                      f"P(G) {gap}")
    assert ok
