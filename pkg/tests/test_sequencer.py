import math

import numpy as np
import pytest

from dlczsim.analysis_io import Channel, start_stop_histogram
from dlczsim.config import build_experiment, default_config
from dlczsim.errors import InvalidParameterError, SimulationBudgetError
from dlczsim.fitting import gaussian_peak_fit, standard_decay_fit
from dlczsim.sequencer import MultiplexPlan, SequenceConfig, selectivity

US = 1e-6
NS = 1e-9


# ---------------------------------------------------------------------------
# selectivity (pure arithmetic)
# ---------------------------------------------------------------------------

def test_selectivity_arithmetic():
    assert selectivity([0.03, 0.01]) == [0.75, 0.25]


def test_selectivity_equal_bins():
    s = selectivity([0.2, 0.2, 0.2, 0.2])
    assert np.allclose(s, 0.25)


def test_selectivity_sums_to_one_exactly():
    rng = np.random.default_rng(30)
    for _ in range(20):
        s = selectivity(rng.random(rng.integers(1, 6)))
        assert abs(sum(s) - 1.0) < 1e-12


def test_selectivity_rejects_bad_input():
    with pytest.raises(InvalidParameterError):
        selectivity([])
    with pytest.raises(InvalidParameterError):
        selectivity([0.0, 0.0])
    with pytest.raises(InvalidParameterError):
        selectivity([-0.1, 0.5])


# ---------------------------------------------------------------------------
# sequence config invariants
# ---------------------------------------------------------------------------

def test_write_train_must_fit_interrogation():
    with pytest.raises(InvalidParameterError):
        SequenceConfig(max_trials=500, trial_period=2 * US,
                       interrogation_max=660 * US)


def test_multiplex_plan_validation():
    with pytest.raises(InvalidParameterError):
        MultiplexPlan(write_offsets=())
    with pytest.raises(InvalidParameterError):
        MultiplexPlan(write_offsets=(600 * NS, 0.0))


# ---------------------------------------------------------------------------
# standard DLCZ runs
# ---------------------------------------------------------------------------

def _cold_quiet_cfg(cfg):
    """Near-zero temperature, single class, no read noise."""
    return cfg.replace(
        run_scenario="standard",
        ensemble_temperature=1e-12,
        classes_weights=(1.0,),
        classes_zeeman_scales=(1.0,),
        classes_beat_frequencies=(0.0,),
        noise_kappa=0.0,
        detection_dark_rate=0.0,
    )


def test_standard_flat_curve_without_motion(paper_cfg):
    from dlczsim.calibration import expected_read_probability
    from dlczsim.photon_stats import herald_tables

    exp = build_experiment(_cold_quiet_cfg(paper_cfg))
    times = np.linspace(1 * US, 100 * US, 8)
    curve = exp.run_standard_dlcz(times, target_heralds=4000)
    assert np.all(np.abs(curve.eta - curve.eta.mean()) < 4 * curve.err)
    # write-arm factors cancel in eta_ret; the read chain and the heralded
    # excitation-number distribution remain
    tables = herald_tables(exp.emission, exp.chain)
    level = expected_read_probability(
        paper_cfg.retrieval_eta0 * paper_cfg.arm_efficiency,
        tables.p_n_given_click, 0.0, 0.0)
    combined_se = curve.err.mean() / math.sqrt(len(times))
    assert abs(curve.eta.mean() - level) < 4 * combined_se


def test_standard_pw_matches_configured_operating_point(standard_exp):
    times = np.array([2 * US])
    curve = standard_exp.run_standard_dlcz(times, target_heralds=5000)
    pw_hat = curve.n_w[0] / curve.trials[0]
    se = math.sqrt(0.01 * 0.99 / curve.trials[0])
    assert abs(pw_hat - 0.01) < 4 * se


def test_standard_beat_oscillation_period(paper_cfg, standard_exp):
    times = paper_cfg.storage_times()
    curve = standard_exp.run_standard_dlcz(times, target_heralds=4000)
    q = standard_exp.noise.read_noise_prob(standard_exp.expected_pw())
    fit = standard_decay_fit(curve.times, curve.eta, sigma=curve.err, floor=q,
                             p0_omega=1.8e5)
    omega_true = paper_cfg.classes_beat_frequencies[1]
    assert abs(fit.beat_frequency - omega_true) / omega_true < 0.05


def test_budget_error_when_heralds_unreachable(paper_cfg):
    cfg = paper_cfg.replace(run_scenario="standard",
                            emission_excitation_probability=0.0,
                            detection_dark_rate=0.0,
                            run_max_trials_per_point=100_000)
    exp = build_experiment(cfg)
    with pytest.raises(SimulationBudgetError):
        exp.run_standard_dlcz([2 * US], target_heralds=10)


def test_scan_beyond_interrogation_window_rejected(standard_exp):
    with pytest.raises(InvalidParameterError):
        standard_exp.run_standard_dlcz([400 * US], target_heralds=10)


# ---------------------------------------------------------------------------
# rephasing runs
# ---------------------------------------------------------------------------

def test_rephasing_peak_at_solver_position(paper_cfg, rephase_exp):
    echo = rephase_exp.rephasing_time()
    step = 25 * NS
    scan = np.arange(echo - 0.5 * US, echo + 0.5 * US, step)
    curve = rephase_exp.run_rephasing(scan, target_heralds=3000)
    fit = gaussian_peak_fit(curve.times, curve.eta, sigma=curve.err)
    assert abs(fit.center - echo) < 2 * step


def test_fwhm_halves_when_gradient_doubles(paper_cfg):
    # Doubling G0 (and the reversal target) keeps the area balance and the
    # echo time but halves the Gaussian envelope width.
    base = paper_cfg.replace(run_scenario="rephase",
                             sequence_rephasing_time_jitter=0.0)
    fwhms = []
    for scale in (1.0, 2.0):
        cfg = base.replace(gradient_amplitude=base.gradient_amplitude * scale)
        exp = build_experiment(cfg)
        echo = exp.rephasing_time()
        scan = np.arange(echo - 0.35 * US, echo + 0.35 * US, 8 * NS)
        curve = exp.run_rephasing(scan, target_heralds=4000)
        fit = gaussian_peak_fit(curve.times, curve.eta, sigma=curve.err)
        fwhms.append(fit.fwhm)
    assert fwhms[1] == pytest.approx(fwhms[0] / 2, rel=0.15)


def test_echo_time_identical_for_both_gradient_scales(paper_cfg):
    base = build_experiment(paper_cfg.replace(run_scenario="rephase"))
    doubled = build_experiment(paper_cfg.replace(
        run_scenario="rephase",
        gradient_amplitude=paper_cfg.gradient_amplitude * 2))
    assert base.rephasing_time() == pytest.approx(doubled.rephasing_time(),
                                                  abs=1e-9)


# ---------------------------------------------------------------------------
# multiplexing
# ---------------------------------------------------------------------------

def test_multiplexed_peak_order_is_inverted(paper_cfg):
    cfg = paper_cfg.replace(run_scenario="multiplex")
    exp = build_experiment(cfg)
    offsets = cfg.multiplex_write_offsets
    peaks = [exp.rephasing_time(creation_time=off) for off in offsets]
    # the later write rephases earlier and vice versa
    assert peaks[1] < peaks[0]


def test_multiplexed_peak_spacing_within_one_scan_step(paper_cfg):
    cfg = paper_cfg.replace(run_scenario="multiplex")
    exp = build_experiment(cfg)
    offsets = cfg.multiplex_write_offsets
    peaks = [exp.rephasing_time(creation_time=off) for off in offsets]
    spacing = abs(peaks[0] - peaks[1])
    write_spacing = offsets[1] - offsets[0]
    assert abs(spacing - write_spacing) <= cfg.scan_multiplex_step


def test_noiseless_single_wave_selectivity_is_one(paper_cfg):
    cfg = paper_cfg.replace(
        run_scenario="multiplex",
        noise_kappa=0.0, detection_dark_rate=0.0,
        emission_excitation_probability=0.002,
        sequence_rephasing_time_jitter=0.0)
    exp = build_experiment(cfg)
    plan = MultiplexPlan(write_offsets=cfg.multiplex_write_offsets)
    res = exp.run_multiplex(plan, target_heralds=1500)
    assert res.mean_selectivity > 0.99


def test_multiplex_independent_peaks_match_prediction(paper_cfg):
    cfg = paper_cfg.replace(run_scenario="multiplex")
    exp = build_experiment(cfg)
    peaks = [exp.rephasing_time(creation_time=off)
             for off in cfg.multiplex_write_offsets]
    scan = np.array(sorted(set(
        list(np.arange(peaks[1] - 0.4 * US, peaks[0] + 0.4 * US, 100 * NS))
        + peaks)))
    plan = MultiplexPlan(write_offsets=cfg.multiplex_write_offsets,
                         readout_scan=scan)
    res = exp.run_multiplex(plan, target_heralds=2500)
    for j in range(2):
        curve = res.independent_curves[j]
        t_max = res.scan_times[np.nanargmax(curve.eta)]
        assert abs(t_max - peaks[j]) < 150 * NS


# ---------------------------------------------------------------------------
# event-level path: state machine, wall clock, records
# ---------------------------------------------------------------------------

def test_every_trial_is_cleaned_xor_heralded(rephase_exp):
    trials, _, _ = rephase_exp.generate_records(40)
    assert trials, "no trials generated"
    for t in trials:
        assert t.heralded == (t.cleaning_time is None)


def test_heralded_trial_ends_the_ensemble(rephase_exp):
    trials, _, _ = rephase_exp.generate_records(40)
    by_ensemble = {}
    for t in trials:
        by_ensemble.setdefault(t.ensemble_id, []).append(t)
    for ts in by_ensemble.values():
        heralds = [t for t in ts if t.heralded]
        assert len(heralds) <= 1
        if heralds:
            assert heralds[0].trial_index == max(t.trial_index for t in ts)


def test_reversal_never_precedes_its_write_click(rephase_exp):
    trials, _, _ = rephase_exp.generate_records(60)
    for t in trials:
        if not t.heralded:
            continue
        reversals = [tt for tt, action in t.gradient_events if action == "reverse"]
        assert reversals
        last_click = max(tc for tc, _ in t.write_clicks)
        assert reversals[0] >= last_click


def test_duty_cycle_matches_repetition_rate(rephase_exp):
    _, _, periods = rephase_exp.generate_records(50)
    expected = 1.0 / rephase_exp.sequence.repetition_rate
    # all cycles fit the repetition period at these settings, so loads are
    # clocked at exactly the repetition rate
    assert np.all(periods >= expected - 1e-12)
    assert abs(periods.mean() - expected) <= rephase_exp.sequence.trial_period


def test_event_records_are_deterministic(rephase_exp):
    _, rec_a, _ = rephase_exp.generate_records(25)
    _, rec_b, _ = rephase_exp.generate_records(25)
    assert np.array_equal(rec_a, rec_b)


def test_multiplex_records_histogram_shows_imbalanced_peak_bins(paper_cfg):
    # rates pushed up so the event-level path yields enough coincidences
    cfg = paper_cfg.replace(run_scenario="multiplex",
                            emission_excitation_probability=0.3,
                            emission_fock_cutoff=14,
                            ensemble_atom_count=4000,
                            retrieval_eta0=1.0)
    exp = build_experiment(cfg)
    offsets = cfg.multiplex_write_offsets
    echo = exp.rephasing_time()  # wave-0 echo; wave 1 is dephased there
    _, records, _ = exp.generate_records(900, readout_delay=echo,
                                         write_offsets=offsets)
    # bin edges offset so the two discrete delays land at bin centres
    hist = start_stop_histogram(
        records, Channel.WRITE, [Channel.READ1, Channel.READ2],
        bin_width=200 * NS, time_range=(echo - 1.1 * US, echo + 0.9 * US))
    centers = (hist.bin_edges[:-1] + hist.bin_edges[1:]) / 2
    bin_own = int(np.argmin(np.abs(centers - echo)))
    bin_other = int(np.argmin(np.abs(centers - (echo - offsets[1]))))
    others = hist.counts.sum() - hist.counts[bin_own] - hist.counts[bin_other]
    # all start-stop delays land in the two write-slot bins, dominated by
    # the wave that rephases at this readout
    assert others == 0
    assert hist.counts[bin_own] > 3 * max(hist.counts[bin_other], 1)


def test_residual_excitation_keeps_unheralded_waves(paper_cfg):
    cfg = paper_cfg.replace(run_scenario="rephase",
                            sequence_residual_excitation=0.8,
                            emission_excitation_probability=0.3,
                            emission_fock_cutoff=14,
                            noise_kappa=0.0, detection_dark_rate=0.0)
    exp = build_experiment(cfg)
    trials, records, _ = exp.generate_records(150)
    assert any(t.heralded for t in trials)
    # smoke: the path runs and produces read clicks from somewhere
    assert (records["channel"] != int(Channel.WRITE)).sum() >= 0
