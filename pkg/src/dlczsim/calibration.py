"""Staged calibration of model parameters to measured observables.

Only products of the gradient physics are observable, so joint fitting is
degenerate and the calibration is staged, each stage pinning one
parameter from one observable:

1. decay_time      -> temperature        (Doppler envelope 1/e time)
2. peak_time       -> coil response tau  (gradient-area zero crossing)
3. fwhm (+ relative_efficiency)
                   -> gamma_eff and the echo-time jitter
4. snr             -> read-noise kappa

Every stage closes the loop by recomputing its observable from the
updated parameters; a residual outside the target tolerance raises
``CalibrationError`` with the best-so-far report.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .constants import K_BOLTZMANN
from .errors import CalibrationError, InvalidParameterError, NoRootInWindowError
from .fitting import FWHM_PER_SIGMA
from .physics import GradientWaveform, solve_rephasing_time


# ---------------------------------------------------------------------------
# Closed-form observable models
# ---------------------------------------------------------------------------

def doppler_decay_time(dk_mag: float, sigma_v: float) -> float:
    """1/e time of the Gaussian motional envelope exp(-(|dk| sigma_v t)^2)."""
    return 1.0 / (dk_mag * sigma_v)


def temperature_for_decay(dk_mag: float, decay_time: float, mass: float) -> float:
    sigma_v = 1.0 / (dk_mag * decay_time)
    return mass * sigma_v**2 / K_BOLTZMANN


def reversal_waveform(amplitude: float, reversal_latency: float, coil_tau: float,
                      gamma_eff: float) -> GradientWaveform:
    """Settled gradient +G0 reversed to -G0 at the instruction time."""
    return GradientWaveform(
        segments=((reversal_latency, -amplitude),),
        coil_response_tau=coil_tau,
        gamma_eff=gamma_eff,
        initial_amplitude=amplitude)


def echo_time(amplitude: float, reversal_latency: float, coil_tau: float,
              window_max: float = 1e-3) -> float:
    wf = reversal_waveform(amplitude, reversal_latency, coil_tau, gamma_eff=1.0)
    return solve_rephasing_time(wf, (reversal_latency, window_max))


def coil_tau_for_echo(reversal_latency: float, target_echo: float) -> float:
    """Invert the first-order coil model for the echo time.

    For an instantaneous reversal the echo sits at 2 * latency; a slower
    coil pushes it later (up to 3 * latency + 2 * tau asymptotically).
    """
    if target_echo <= 2.0 * reversal_latency:
        raise CalibrationError(
            f"echo target {target_echo} not reachable: even an instantaneous "
            f"reversal at {reversal_latency} rephases at {2 * reversal_latency}")

    def residual(tau):
        return echo_time(1.0, reversal_latency, tau) - target_echo

    # residual(0+) < 0; bracket upward
    hi = reversal_latency
    for _ in range(60):
        try:
            if residual(hi) > 0:
                break
        except NoRootInWindowError:
            pass
        hi *= 2.0
    else:
        raise CalibrationError("failed to bracket the coil time constant")
    return float(brentq(residual, 1e-12, hi, xtol=1e-15))


def echo_envelope_sigma(gamma_eff: float, sigma_z: float,
                        gradient_at_echo: float) -> float:
    """Gaussian sigma of the intrinsic echo peak in time.

    Near the echo the area is G(t*) (t - t*), so the overlap envelope is
    exp(-(gamma sigma_z G(t*))^2 (t - t*)^2) with time sigma
    1 / (sqrt(2) gamma sigma_z |G(t*)|).
    """
    return 1.0 / (math.sqrt(2.0) * gamma_eff * sigma_z * abs(gradient_at_echo))


def gamma_and_jitter_for_peak(fwhm_observed: float, relative_efficiency: float,
                              sigma_z: float, gradient_at_echo: float):
    """Invert the observed peak width and height reduction.

    The per-ensemble echo-time jitter convolves the intrinsic Gaussian
    peak: height scales by sigma_i / sigma_obs and the width grows to
    sigma_obs, so sigma_i = rel_eff * sigma_obs and
    sigma_jitter = sigma_obs * sqrt(1 - rel_eff^2).
    """
    if not (0.0 < relative_efficiency <= 1.0):
        raise InvalidParameterError("relative efficiency must be in (0, 1]")
    sigma_obs = fwhm_observed / FWHM_PER_SIGMA
    sigma_i = relative_efficiency * sigma_obs
    jitter = sigma_obs * math.sqrt(max(1.0 - relative_efficiency**2, 0.0))
    gamma_eff = 1.0 / (math.sqrt(2.0) * sigma_i * sigma_z * abs(gradient_at_echo))
    return gamma_eff, jitter


def detected_peak_efficiency(eta0: float, echo_t: float, decay_time: float,
                             relative_efficiency: float, arm_efficiency: float,
                             beat_factor: float = 1.0,
                             extrinsic_lifetime: float = math.inf) -> float:
    """Per-excitation detection probability at the echo centre."""
    doppler = math.exp(-((echo_t / decay_time) ** 2))
    extrinsic = math.exp(-echo_t / extrinsic_lifetime) if math.isfinite(extrinsic_lifetime) else 1.0
    return eta0 * doppler * extrinsic * relative_efficiency * arm_efficiency * beat_factor


def expected_read_probability(per_excitation_prob: float, number_given_click,
                              q1: float, q2: float) -> float:
    """Exact P(any read click | herald).

    ``number_given_click`` is the heralded excitation-number distribution
    (multi-excitation events raise the conditional read probability above
    the single-photon value); q1/q2 are the uncorrelated click
    probabilities of the two read detectors.
    """
    n = np.arange(len(number_given_click))
    survive_none = float(np.sum(number_given_click
                                * (1.0 - per_excitation_prob) ** n))
    return 1.0 - (1.0 - q1) * (1.0 - q2) * survive_none


def snr_model(kappa: float, per_excitation_peak: float, number_given_click,
              splitter: float, dark_click_prob: float, noise_floor: float,
              p_w: float, cavity_suppression: float = 1.0) -> float:
    """Model SNR = E[eta_ret](peak) / E[eta_ret](dephased background)."""
    q = kappa / cavity_suppression * p_w + noise_floor
    q1 = q * splitter + dark_click_prob
    q2 = q * (1.0 - splitter) + dark_click_prob
    peak = expected_read_probability(per_excitation_peak, number_given_click, q1, q2)
    background = expected_read_probability(0.0, number_given_click, q1, q2)
    return peak / background


def kappa_for_snr(snr: float, per_excitation_peak: float, number_given_click,
                  splitter: float, dark_click_prob: float, noise_floor: float,
                  p_w: float, cavity_suppression: float = 1.0) -> float:
    """Noise level reproducing the target echo SNR (monotone root find)."""
    if snr <= 1.0:
        raise CalibrationError("SNR target must exceed 1")

    def residual(kappa):
        return snr_model(kappa, per_excitation_peak, number_given_click,
                         splitter, dark_click_prob, noise_floor, p_w,
                         cavity_suppression) - snr

    lo, hi = 0.0, 1.0
    if residual(lo) < 0:
        raise CalibrationError(
            "dark counts and floor alone already exceed the SNR target")
    for _ in range(20):
        if residual(hi) < 0:
            break
        hi *= 4.0
    else:
        raise CalibrationError("failed to bracket kappa for the SNR target")
    return float(brentq(residual, lo, hi, xtol=1e-12))


# ---------------------------------------------------------------------------
# Target file driven calibration
# ---------------------------------------------------------------------------

@dataclass
class Target:
    name: str
    value: float
    tolerance: float  # absolute


@dataclass
class StageResult:
    name: str
    parameter: str
    fitted: float
    observable: float
    target: float
    tolerance: float

    @property
    def residual(self) -> float:
        return self.observable - self.target

    @property
    def ok(self) -> bool:
        return abs(self.residual) <= self.tolerance


@dataclass
class CalibrationReport:
    stages: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return all(s.ok for s in self.stages)

    def text(self) -> str:
        lines = ["calibration report", "=================="]
        for s in self.stages:
            status = "OK " if s.ok else "FAIL"
            lines.append(
                f"[{status}] {s.name}: {s.parameter} = {s.fitted!r}; "
                f"model {s.observable!r} vs target {s.target!r} "
                f"(residual {s.residual:.3e}, tol {s.tolerance:.3e})")
        return "\n".join(lines) + "\n"


KNOWN_TARGETS = ("decay_time", "peak_time", "fwhm", "relative_efficiency", "snr")


def run_calibration(cfg, targets: dict[str, Target]) -> tuple[dict, CalibrationReport]:
    """Fit the free parameters for the given targets against config ``cfg``.

    ``cfg`` is a RunConfig-like object exposing the physical parameters;
    returns the fitted parameter dict and the residual report.  Raises
    ``CalibrationError`` when any stage misses its tolerance.
    """
    unknown = set(targets) - set(KNOWN_TARGETS)
    if unknown:
        raise CalibrationError(f"unknown calibration targets: {sorted(unknown)}")
    report = CalibrationReport()
    fitted: dict[str, float] = {}

    dk_mag = cfg.delta_k_magnitude
    mass = cfg.mass

    # stage 1: temperature from the motional decay time
    decay_time = None
    if "decay_time" in targets:
        t = targets["decay_time"]
        temperature = temperature_for_decay(dk_mag, t.value, mass)
        sigma_v = math.sqrt(K_BOLTZMANN * temperature / mass)
        model = doppler_decay_time(dk_mag, sigma_v)
        fitted["temperature"] = temperature
        decay_time = t.value
        report.stages.append(StageResult("decay", "temperature", temperature,
                                         model, t.value, t.tolerance))
    else:
        sigma_v = math.sqrt(K_BOLTZMANN * cfg.temperature / mass)
        decay_time = doppler_decay_time(dk_mag, sigma_v)

    # stage 2: coil time constant from the echo position
    coil_tau = cfg.coil_tau
    if "peak_time" in targets:
        t = targets["peak_time"]
        coil_tau = coil_tau_for_echo(cfg.reversal_latency, t.value)
        model = echo_time(cfg.gradient_amplitude, cfg.reversal_latency, coil_tau)
        fitted["coil_tau"] = coil_tau
        report.stages.append(StageResult("echo position", "coil_tau", coil_tau,
                                         model, t.value, t.tolerance))
    echo_t = echo_time(cfg.gradient_amplitude, cfg.reversal_latency, coil_tau)
    wf = reversal_waveform(cfg.gradient_amplitude, cfg.reversal_latency,
                           coil_tau, gamma_eff=1.0)
    g_echo = wf.amplitude(echo_t)

    # stage 3: Zeeman coefficient and echo jitter from the peak shape
    if "fwhm" in targets:
        t = targets["fwhm"]
        rel = targets["relative_efficiency"].value if "relative_efficiency" in targets \
            else cfg.relative_efficiency_default
        gamma_eff, jitter = gamma_and_jitter_for_peak(
            t.value, rel, cfg.sigma_z, g_echo)
        fitted["gamma_eff"] = gamma_eff
        fitted["rephasing_time_jitter"] = jitter
        sigma_i = echo_envelope_sigma(gamma_eff, cfg.sigma_z, g_echo)
        model_fwhm = FWHM_PER_SIGMA * math.hypot(sigma_i, jitter)
        report.stages.append(StageResult("peak width", "gamma_eff", gamma_eff,
                                         model_fwhm, t.value, t.tolerance))
        if "relative_efficiency" in targets:
            tr = targets["relative_efficiency"]
            model_rel = sigma_i / math.hypot(sigma_i, jitter)
            report.stages.append(StageResult(
                "peak height reduction", "rephasing_time_jitter", jitter,
                model_rel, tr.value, tr.tolerance))
        rel_used = rel
    else:
        gamma_eff = cfg.gamma_eff
        sigma_i = echo_envelope_sigma(gamma_eff, cfg.sigma_z, g_echo)
        jitter = cfg.rephasing_time_jitter
        rel_used = sigma_i / math.hypot(sigma_i, jitter) if jitter else 1.0

    # stage 4: read-noise kappa from the echo SNR
    if "snr" in targets:
        from .photon_stats import herald_tables

        t = targets["snr"]
        beat = float(cfg.mixture.beat_factor(np.asarray(echo_t)))
        peak_eta = detected_peak_efficiency(
            cfg.eta0, echo_t, decay_time, rel_used, cfg.arm_efficiency,
            beat_factor=beat, extrinsic_lifetime=cfg.extrinsic_lifetime)
        tables = herald_tables(cfg.emission_model, cfg.detection_chain)
        chain = cfg.detection_chain
        kappa = kappa_for_snr(t.value, peak_eta, tables.p_n_given_click,
                              chain.read_splitter_ratio, cfg.dark_click_prob,
                              cfg.noise_floor, cfg.target_pw,
                              cfg.cavity_suppression)
        fitted["kappa"] = kappa
        model_snr = snr_model(kappa, peak_eta, tables.p_n_given_click,
                              chain.read_splitter_ratio, cfg.dark_click_prob,
                              cfg.noise_floor, cfg.target_pw,
                              cfg.cavity_suppression)
        report.stages.append(StageResult("echo SNR", "kappa", kappa,
                                         model_snr, t.value, t.tolerance))

    if not report.ok:
        raise CalibrationError("calibration did not converge within tolerances",
                               report=report)
    return fitted, report
