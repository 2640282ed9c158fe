import math

import numpy as np
import pytest
from scipy.stats import chi2_contingency

from dlczsim.errors import (
    EmptyStreamError,
    InsufficientStatisticsError,
    InvalidParameterError,
    RegionError,
)
from dlczsim.fitting import fit_alpha_proportionality
from dlczsim.photon_stats import (
    CoincidenceStats,
    DetectionChain,
    EmissionModel,
    NoiseModel,
    TrialOutcome,
    accumulate,
    alpha_model_curve,
    antibunching_alpha,
    detect_trial,
    excitation_for_write_probability,
    g2_cross,
    herald_tables,
    read_detection,
    sample_pair_numbers,
    snr_at_rephasing,
    thinned_click,
)
from dlczsim.rng import stream

from oracles import fock_click_stats

NOISELESS = DetectionChain(dark_rate=0.0)
NO_NOISE = NoiseModel()


# ---------------------------------------------------------------------------
# sample_pair_numbers
# ---------------------------------------------------------------------------

def test_vacuum_source_only_emits_zeros():
    model = EmissionModel(0.0)
    nw, ns = sample_pair_numbers(model, stream(0, "t"), size=1000)
    assert not nw.any() and not ns.any()


def test_geometric_ratio_p1_over_p0():
    model = EmissionModel(0.02)
    nw, _ = sample_pair_numbers(model, stream(1, "t"), size=1_000_000)
    c0, c1 = np.sum(nw == 0), np.sum(nw == 1)
    ratio = c1 / c0
    err = ratio * math.sqrt(1 / c0 + 1 / c1)
    assert abs(ratio - 0.02) < 3 * err


def test_pair_numbers_are_perfectly_correlated():
    model = EmissionModel(0.1, fock_cutoff=8)
    nw, ns = sample_pair_numbers(model, stream(2, "t"), size=100_000)
    assert np.array_equal(nw, ns)


def test_marginal_mean_matches_geometric():
    p = 0.08
    model = EmissionModel(p)
    nw, _ = sample_pair_numbers(model, stream(3, "t"), size=500_000)
    expected = p / (1 - p)
    err = nw.std() / math.sqrt(len(nw))
    assert abs(nw.mean() - expected) < 3 * err


def test_emission_model_validation():
    with pytest.raises(InvalidParameterError):
        EmissionModel(1.0)
    with pytest.raises(InvalidParameterError):
        EmissionModel(0.1, fock_cutoff=1)
    with pytest.raises(InvalidParameterError):
        EmissionModel(0.3, fock_cutoff=8)  # norm deficit too large
    EmissionModel(0.3, fock_cutoff=12)  # fine with a higher cutoff


# ---------------------------------------------------------------------------
# detect_trial / read_detection
# ---------------------------------------------------------------------------

def test_perfect_chain_single_pair_gives_one_read_click():
    chain = DetectionChain(filter_transmission=1.0, spd_efficiency=1.0,
                           dark_rate=0.0)
    rng = stream(4, "t")
    for _ in range(50):
        out = detect_trial((1, 1), chain, 1.0, NO_NOISE, rng)
        assert out.write_click
        assert out.read1 ^ out.read2  # a single photon cannot split


def test_write_click_probability_is_chain_product():
    # 0.20 * 0.43 = 0.086 through the write arm
    rng = stream(5, "t")
    clicks = thinned_click(np.ones(1_000_000, dtype=np.int64), NOISELESS.arm_efficiency,
                           0.0, rng)
    phat = clicks.mean()
    assert abs(phat - 0.086) < 3 * math.sqrt(0.086 * 0.914 / 1_000_000)


def test_vacuum_trial_with_no_noise_gives_no_clicks():
    rng = stream(6, "t")
    out = detect_trial((0, 0), NOISELESS, 1.0, NO_NOISE, rng)
    assert not out.write_click and not out.read_click


def test_detect_trial_rejects_bad_efficiency():
    with pytest.raises(InvalidParameterError):
        detect_trial((1, 1), NOISELESS, 1.5, NO_NOISE, stream(7, "t"))


def test_thinning_two_stages_equals_product_stage():
    # Detection through eta1 then eta2 is distributionally identical to a
    # single stage with eta1*eta2 (chi-square on click counts, 1e6 trials).
    model = EmissionModel(0.3, fock_cutoff=12)
    n, _ = sample_pair_numbers(model, stream(8, "t"), size=1_000_000)
    rng = stream(9, "t")
    stage1 = rng.binomial(n, 0.6)
    two_step = rng.binomial(stage1, 0.5) > 0
    one_step = rng.binomial(n, 0.3) > 0
    table = [[two_step.sum(), len(n) - two_step.sum()],
             [one_step.sum(), len(n) - one_step.sum()]]
    _, pvalue, _, _ = chi2_contingency(table)
    assert pvalue > 1e-3


def test_raising_efficiency_never_decreases_coincidences():
    # couple the runs through a shared excitation-number draw
    model = EmissionModel(0.1)
    n, _ = sample_pair_numbers(model, stream(10, "t"), size=200_000)
    rates = []
    for i, eta in enumerate((0.3, 0.5, 0.8)):
        r1, r2 = read_detection(n, eta, NOISELESS, 0.0, stream(11, "t", index=i))
        rates.append((r1 | r2).sum())
    assert rates[0] < rates[1] < rates[2]


def test_read_noise_prob_follows_background_law():
    noise = NoiseModel(kappa=0.06, floor=1e-5, cavity_suppression=2.0)
    assert noise.read_noise_prob(0.01) == pytest.approx(0.06 / 2 * 0.01 + 1e-5)


# ---------------------------------------------------------------------------
# accumulate / CoincidenceStats
# ---------------------------------------------------------------------------

def _outcome(w, r1=False, r2=False):
    return TrialOutcome(write_clicks=(w,), read1=r1, read2=r2)


def test_accumulate_arithmetic():
    outcomes = ([_outcome(True, True)] * 5 + [_outcome(True)] * 5
                + [_outcome(False)] * 90)
    stats = accumulate(outcomes)
    assert stats.trials == 100
    assert stats.n_w == 10
    assert stats.n_wr == 5
    assert stats.eta_ret == 0.5


def test_all_vacuum_stream_flags_eta_undefined():
    stats = accumulate([_outcome(False)] * 10)
    assert stats.p_w == 0.0
    assert not stats.eta_ret_defined
    assert stats.eta_ret is None


def test_empty_stream_raises():
    with pytest.raises(EmptyStreamError):
        accumulate([])


def test_merge_is_associative_and_commutative():
    a = CoincidenceStats(trials=10, n_w=3, n_r=2, n_wr=1, n_wr1=1)
    b = CoincidenceStats(trials=20, n_w=5, n_r=4, n_wr=2, n_wr1=1, n_wr2=1)
    c = CoincidenceStats(trials=5, n_w=1, n_r=1, n_wr=1, n_wr1=1)
    assert a.merge(b) == b.merge(a)
    assert a.merge(b).merge(c) == a.merge(b.merge(c))


def test_counts_invariants_enforced():
    with pytest.raises(InvalidParameterError):
        CoincidenceStats(trials=10, n_w=1, n_r=1, n_wr=2)


def test_kv_and_csv_serialisation_roundtrip_values():
    stats = CoincidenceStats(trials=100, n_w=10, n_r=7, n_wr=5, n_wr1=3,
                             n_wr2=2, n_wr1r2=1)
    row = stats.to_csv_row()
    assert row[:7] == [100, 10, 7, 5, 3, 2, 1]
    text = stats.to_kv_text()
    assert "eta_ret = 0.5" in text


# ---------------------------------------------------------------------------
# antibunching alpha
# ---------------------------------------------------------------------------

def test_single_photons_give_alpha_zero():
    # one retrieved photon per herald, split 50/50: triples are impossible
    n = np.ones(20_000, dtype=np.int64)
    chain = DetectionChain(filter_transmission=1.0, spd_efficiency=1.0, dark_rate=0.0)
    r1, r2 = read_detection(n, 1.0, chain, 0.0, stream(12, "t"))
    stats = CoincidenceStats.from_arrays(len(n), np.ones(len(n), bool), r1, r2)
    alpha, _ = antibunching_alpha(stats)
    assert alpha == 0.0


def test_alpha_requires_pairwise_counts():
    stats = CoincidenceStats(trials=10, n_w=2, n_r=0)
    with pytest.raises(InsufficientStatisticsError):
        antibunching_alpha(stats)


def test_poissonian_uncorrelated_reads_give_alpha_one():
    # coherent-state stand-in: Poisson photons on the read arm,
    # independent of the write clicks -> Eq-style ratio factorises to 1
    rng = stream(13, "t")
    n_trials = 2_000_000
    w = rng.random(n_trials) < 0.2
    k1 = rng.poisson(0.05, n_trials)
    k2 = rng.poisson(0.05, n_trials)
    stats = CoincidenceStats.from_arrays(n_trials, w, k1 > 0, k2 > 0)
    alpha, err = antibunching_alpha(stats)
    assert abs(alpha - 1.0) < 3 * err


def test_alpha_model_curve_values():
    assert alpha_model_curve(0.01, 1.0) == pytest.approx(0.0394, abs=1e-4)
    # small-p slope is 4/c
    assert alpha_model_curve(1e-6, 0.7) / 1e-6 == pytest.approx(4 / 0.7, rel=1e-3)
    with pytest.raises(InvalidParameterError):
        alpha_model_curve(0.0, 1.0)
    with pytest.raises(InvalidParameterError):
        alpha_model_curve(0.1, 1.5)


def test_alpha_fit_recovers_injected_c():
    rng = np.random.default_rng(14)
    c_true = 0.45
    p = np.array([0.002, 0.005, 0.01, 0.02, 0.05, 0.1])
    alphas = np.array([alpha_model_curve(pi, c_true) for pi in p])
    errs = 0.05 * alphas
    noisy = alphas * (1 + 0.03 * rng.standard_normal(len(p)))
    c_fit, _ = fit_alpha_proportionality(p, noisy, errs)
    assert abs(c_fit - c_true) / c_true < 0.10


# ---------------------------------------------------------------------------
# g2 cross-correlation
# ---------------------------------------------------------------------------

def test_independent_streams_give_g2_one():
    rng = stream(15, "t")
    n_trials = 1_000_000
    w = rng.random(n_trials) < 0.05
    r = rng.random(n_trials) < 0.05
    stats = CoincidenceStats.from_arrays(n_trials, w, r, np.zeros(n_trials, bool))
    g2, err = g2_cross(stats)
    assert abs(g2 - 1.0) < 3 * err


def test_noiseless_twin_beam_g2_matches_fock_oracle():
    # Brute-force Fock enumeration vs Monte Carlo at p = 0.02.
    p = 0.02
    model = EmissionModel(p)
    oracle = fock_click_stats(p, eta_write=NOISELESS.arm_efficiency,
                              eta_read=NOISELESS.arm_efficiency)
    assert oracle["g2"] == pytest.approx(1 + 1 / p, rel=0.05)

    rng = stream(16, "t")
    n_trials = 2_000_000
    n, ns = sample_pair_numbers(model, rng, size=n_trials)
    w = thinned_click(n, NOISELESS.arm_efficiency, 0.0, rng)
    r1, r2 = read_detection(ns, 1.0, NOISELESS, 0.0, rng)
    stats = CoincidenceStats.from_arrays(n_trials, w, r1, r2)
    g2, err = g2_cross(stats)
    assert abs(g2 - oracle["g2"]) < 3 * err


def test_g2_requires_clicks():
    with pytest.raises(InsufficientStatisticsError):
        g2_cross(CoincidenceStats(trials=10, n_w=0, n_r=5))


# ---------------------------------------------------------------------------
# herald tables and p_w inversion
# ---------------------------------------------------------------------------

def test_herald_tables_match_closed_form():
    model = EmissionModel(0.105)
    chain = DetectionChain()
    tables = herald_tables(model, chain)
    p, eta = 0.105, chain.arm_efficiency
    pd = chain.dark_click_prob
    expected = 1 - (1 - pd) * (1 - p) / (1 - p * (1 - eta))
    assert tables.p_click == pytest.approx(expected, rel=1e-6)
    assert tables.p_n_given_click.sum() == pytest.approx(1.0, abs=1e-12)
    assert tables.p_n_given_noclick.sum() == pytest.approx(1.0, abs=1e-12)


def test_excitation_inversion_hits_target_pw():
    chain = DetectionChain()
    for target in (0.0017, 0.0028, 0.005, 0.01):
        p = excitation_for_write_probability(target, chain)
        tables = herald_tables(EmissionModel(p), chain)
        assert tables.p_click == pytest.approx(target, rel=1e-6)


def test_conditional_sampling_reproduces_table():
    model = EmissionModel(0.105)
    tables = herald_tables(model, DetectionChain())
    draws = tables.sample_given_click(stream(17, "t"), 500_000)
    freq1 = np.mean(draws == 1)
    expected = tables.p_n_given_click[1]
    assert abs(freq1 - expected) < 3 * math.sqrt(expected * (1 - expected) / 500_000)


# ---------------------------------------------------------------------------
# SNR
# ---------------------------------------------------------------------------

def test_snr_flat_curve_with_single_peak_point():
    b = 4.2e-4
    times = np.linspace(0, 20e-6, 21)
    etas = np.full(21, b)
    etas[15] = 13.3 * b
    res = snr_at_rephasing(times, etas, background_region=(0, 10e-6),
                           peak_region=(14.5e-6, 15.5e-6))
    assert res.snr == pytest.approx(13.3, rel=1e-9)


def test_snr_background_only_is_one():
    rng = np.random.default_rng(18)
    times = np.linspace(0, 20e-6, 50)
    etas = 4e-4 * (1 + 0.02 * rng.standard_normal(50))
    res = snr_at_rephasing(times, etas, background_region=(0, 10e-6),
                           peak_region=(10e-6, 20e-6))
    assert res.snr == pytest.approx(1.0, abs=0.1)


def test_snr_empty_region_raises():
    with pytest.raises(RegionError):
        snr_at_rephasing([1e-6], [1.0], background_region=(2e-6, 3e-6),
                         peak_region=(0, 2e-6))


# ---------------------------------------------------------------------------
# determinism
# ---------------------------------------------------------------------------

def test_identical_seeds_give_identical_stats():
    def run(seed):
        model = EmissionModel(0.05)
        rng = stream(seed, "trials")
        n, ns = sample_pair_numbers(model, rng, size=100_000)
        w = thinned_click(n, 0.086, 1e-5, rng)
        r1, r2 = read_detection(ns, 0.3, DetectionChain(), 6e-4, rng)
        return CoincidenceStats.from_arrays(len(n), w, r1, r2)

    assert run(123) == run(123)
    assert run(123) != run(124)
