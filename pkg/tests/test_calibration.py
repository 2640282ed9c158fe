import math

import pytest

from dlczsim.calibration import (
    Target,
    coil_tau_for_echo,
    echo_time,
    gamma_and_jitter_for_peak,
    run_calibration,
    temperature_for_decay,
)
from dlczsim.config import build_experiment, default_config
from dlczsim.constants import K_BOLTZMANN, RB87_MASS
from dlczsim.errors import CalibrationError

US = 1e-6
NS = 1e-9


def test_coil_tau_reproduces_peak_time_to_1ns():
    tau = coil_tau_for_echo(3 * US, 20.84 * US)
    assert abs(echo_time(0.2, 3 * US, tau) - 20.84 * US) < 1 * NS


def test_temperature_reproduces_decay_time():
    cfg = default_config()
    temperature = temperature_for_decay(cfg.delta_k_magnitude, 57 * US, RB87_MASS)
    sigma_v = math.sqrt(K_BOLTZMANN * temperature / RB87_MASS)
    assert 1.0 / (cfg.delta_k_magnitude * sigma_v) == pytest.approx(57 * US, rel=1e-9)


def test_gamma_jitter_inversion_roundtrip():
    gamma, jitter = gamma_and_jitter_for_peak(150 * NS, 0.6, 1e-3, -0.15)
    sigma_i = 1.0 / (math.sqrt(2) * gamma * 1e-3 * 0.15)
    sigma_obs = math.hypot(sigma_i, jitter)
    assert 2 * math.sqrt(2 * math.log(2)) * sigma_obs == pytest.approx(150 * NS)
    assert sigma_i / sigma_obs == pytest.approx(0.6)


def test_full_staged_calibration_converges():
    cfg = default_config()
    targets = {
        "decay_time": Target("decay_time", 57 * US, 0.05 * 57 * US),
        "peak_time": Target("peak_time", 20.84 * US, 1 * NS),
        "fwhm": Target("fwhm", 150 * NS, 0.15 * 150 * NS),
        "relative_efficiency": Target("relative_efficiency", 0.60, 0.05),
        "snr": Target("snr", 13.3, 0.5),
    }
    fitted, report = run_calibration(cfg, targets)
    assert report.ok
    assert set(fitted) == {"temperature", "coil_tau", "gamma_eff",
                           "rephasing_time_jitter", "kappa"}
    # fitted values agree with the shipped defaults (same pipeline)
    assert fitted["coil_tau"] == pytest.approx(cfg.gradient_coil_tau, rel=1e-6)
    assert fitted["kappa"] == pytest.approx(cfg.noise_kappa, rel=1e-6)
    assert "OK" in report.text()


def test_unreachable_peak_time_fails():
    # even an instantaneous reversal at 3 us cannot rephase before 6 us
    with pytest.raises(CalibrationError):
        coil_tau_for_echo(3 * US, 2 * US)


def test_inconsistent_targets_report_non_convergence():
    cfg = default_config()
    targets = {"peak_time": Target("peak_time", 5 * US, 1 * NS)}
    with pytest.raises(CalibrationError):
        run_calibration(cfg, targets)


def test_unknown_target_rejected():
    cfg = default_config()
    with pytest.raises(CalibrationError):
        run_calibration(cfg, {"bogus": Target("bogus", 1.0, 0.1)})


def test_snr_calibration_requires_reachable_target():
    cfg = default_config()
    with pytest.raises(CalibrationError):
        run_calibration(cfg, {"snr": Target("snr", 0.5, 0.1)})
