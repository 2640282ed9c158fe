"""Run configuration: unit-checked key-value files, defaults, experiment assembly.

The configuration format is plain text with sections and mandatory unit
suffixes on every dimensional quantity::

    [sequence]
    reversal_latency = 3 us
    repetition_rate = 59 Hz

    [classes]
    weights = 0.9, 0.1

Unknown sections or keys are rejected with the offending line number.
Dimensionless fields (probabilities, ratios, counts) take bare numbers;
lists are comma separated with a single trailing unit.  Environment
variables ``DLCZSIM_<SECTION>_<KEY>`` override file values and defaults.
"""

from __future__ import annotations

import hashlib
import math
import os
from dataclasses import dataclass

import numpy as np

from . import __version__
from .calibration import (
    coil_tau_for_echo,
    echo_time,
    gamma_and_jitter_for_peak,
    kappa_for_snr,
    detected_peak_efficiency,
    echo_envelope_sigma,
    reversal_waveform,
    temperature_for_decay,
)
from .constants import RB87_MASS
from .errors import ConfigError, InvalidParameterError
from .photon_stats import (
    DetectionChain,
    EmissionModel,
    NoiseModel,
    excitation_for_write_probability,
    herald_tables,
)
from .physics import ClassMixture, EnsembleModel, GradientWaveform, SpinWaveMode
from .sequencer import Experiment, MultiplexPlan, SequenceConfig

# ---------------------------------------------------------------------------
# Units
# ---------------------------------------------------------------------------

UNIT_TABLES = {
    "time": {"s": 1.0, "ms": 1e-3, "us": 1e-6, "ns": 1e-9},
    "rate": {"Hz": 1.0, "kHz": 1e3, "MHz": 1e6, "per_s": 1.0},
    "temperature": {"K": 1.0, "mK": 1e-3, "uK": 1e-6},
    "length": {"m": 1.0, "mm": 1e-3, "um": 1e-6, "nm": 1e-9},
    "gradient": {"T_per_m": 1.0, "G_per_cm": 1e-2},
    "angle": {"rad": 1.0, "deg": math.pi / 180.0, "mrad": 1e-3},
    "zeeman": {"rad_per_s_per_T": 1.0},
    "angular_frequency": {"rad_per_s": 1.0},
}

CANONICAL_UNIT = {
    "time": "s", "rate": "Hz", "temperature": "K", "length": "m",
    "gradient": "T_per_m", "angle": "rad", "zeeman": "rad_per_s_per_T",
    "angular_frequency": "rad_per_s",
}


@dataclass(frozen=True)
class FieldSpec:
    section: str
    key: str
    kind: str  # float | int | bool | enum | list
    dimension: str | None  # None = dimensionless
    help: str
    choices: tuple = ()

    @property
    def attr(self) -> str:
        return f"{self.section}_{self.key}"


SCHEMA: list[FieldSpec] = [
    FieldSpec("run", "scenario", "enum", None,
              "scenario to execute", ("standard", "rephase", "multiplex", "alpha-scan")),
    FieldSpec("run", "global_seed", "int", None, "master RNG seed"),
    FieldSpec("run", "target_write_clicks", "int", None,
              "write clicks collected per curve point"),
    FieldSpec("run", "max_trials_per_point", "int", None,
              "hard trial budget per point before aborting"),
    FieldSpec("run", "output_dir", "str", None, "artifact directory"),

    FieldSpec("ensemble", "atom_count", "int", None, "Monte Carlo atoms"),
    FieldSpec("ensemble", "sigma_x", "float", "length", "cloud radius, x"),
    FieldSpec("ensemble", "sigma_y", "float", "length", "cloud radius, y"),
    FieldSpec("ensemble", "sigma_z", "float", "length", "cloud radius along the gradient"),
    FieldSpec("ensemble", "temperature", "float", "temperature", "atom temperature"),

    FieldSpec("geometry", "wavelength", "float", "length", "photon wavelength"),
    FieldSpec("geometry", "crossing_angle", "float", "angle",
              "write beam / detection-mode angle"),
    FieldSpec("geometry", "misalignment", "float", "angle",
              "gradient axis vs stored-wavevector tilt"),

    FieldSpec("gradient", "amplitude", "float", "gradient", "gradient amplitude G0"),
    FieldSpec("gradient", "coil_tau", "float", "time",
              "first-order coil response time constant"),
    FieldSpec("gradient", "gamma_eff", "float", "zeeman",
              "Zeeman detuning per gradient*position"),
    FieldSpec("gradient", "moving_zeeman", "bool", None,
              "carry atomic motion inside the Zeeman integral"),

    FieldSpec("classes", "weights", "list", None, "class population weights (sum 1)"),
    FieldSpec("classes", "zeeman_scales", "list", None, "per-class Zeeman scale"),
    FieldSpec("classes", "beat_frequencies", "list", "angular_frequency",
              "per-class beat frequency"),

    FieldSpec("emission", "excitation_probability", "float", None,
              "spin-wave creation probability per trial"),
    FieldSpec("emission", "fock_cutoff", "int", None, "number-state cutoff"),

    FieldSpec("detection", "filter_transmission", "float", None,
              "spectral filter transmission (both arms)"),
    FieldSpec("detection", "spd_efficiency", "float", None, "SPD efficiency"),
    FieldSpec("detection", "read_splitter_ratio", "float", None,
              "read beamsplitter ratio to detector r1"),
    FieldSpec("detection", "dark_rate", "float", "rate", "dark counts per detector"),
    FieldSpec("detection", "coincidence_window", "float", "time",
              "coincidence window"),

    FieldSpec("noise", "kappa", "float", None,
              "read background proportionality: q = kappa p_w + floor"),
    FieldSpec("noise", "floor", "float", None, "read background floor"),
    FieldSpec("noise", "cavity_suppression", "float", None,
              "write-cavity noise suppression factor (divides kappa)"),

    FieldSpec("retrieval", "eta0", "float", None,
              "intrinsic retrieval efficiency at zero storage time"),
    FieldSpec("retrieval", "extrinsic_lifetime", "float", "time",
              "extra exponential decay (inf disables)"),

    FieldSpec("sequence", "mot_load", "float", "time", "MOT loading stage"),
    FieldSpec("sequence", "molasses", "float", "time", "molasses stage"),
    FieldSpec("sequence", "pumping", "float", "time", "optical pumping stage"),
    FieldSpec("sequence", "interrogation_max", "float", "time",
              "maximum interrogation window"),
    FieldSpec("sequence", "max_trials", "int", None, "write pulses per ensemble"),
    FieldSpec("sequence", "trial_period", "float", "time", "write-trial period"),
    FieldSpec("sequence", "reversal_latency", "float", "time",
              "write slot to gradient-reversal instruction"),
    FieldSpec("sequence", "readout_delay", "float", "time",
              "write slot to read pulse (single-point runs)"),
    FieldSpec("sequence", "repetition_rate", "float", "rate", "ensemble load rate"),
    FieldSpec("sequence", "residual_excitation", "float", None,
              "probability a spin-wave survives cleaning"),
    FieldSpec("sequence", "read_duration", "float", "time",
              "read-pulse duration for the convolution option"),
    FieldSpec("sequence", "rephasing_time_jitter", "float", "time",
              "per-ensemble sigma of the echo time"),

    FieldSpec("scan", "storage_start", "float", "time", "standard scan start"),
    FieldSpec("scan", "storage_stop", "float", "time", "standard scan stop"),
    FieldSpec("scan", "storage_step", "float", "time", "standard scan step"),
    FieldSpec("scan", "background_start", "float", "time", "background region start"),
    FieldSpec("scan", "background_stop", "float", "time", "background region stop"),
    FieldSpec("scan", "background_step", "float", "time", "background sampling step"),
    FieldSpec("scan", "peak_window", "float", "time", "width of the echo scan window"),
    FieldSpec("scan", "peak_step", "float", "time", "echo scan step"),
    FieldSpec("scan", "multiplex_step", "float", "time", "multiplexed echo scan step"),
    FieldSpec("scan", "grid_step", "float", "time", "physics tabulation step"),
    FieldSpec("scan", "pw_values", "list", None, "alpha-scan write probabilities"),
    FieldSpec("scan", "alpha_budget_constant", "float", None,
              "alpha-scan trials = max(min_trials, constant / p_w^2)"),
    FieldSpec("scan", "alpha_min_trials", "int", None, "alpha-scan trial floor"),

    FieldSpec("multiplex", "write_offsets", "list", "time",
              "write slot offsets inside one trial"),
]

_SCHEMA_BY_SECTION: dict[str, dict[str, FieldSpec]] = {}
for _f in SCHEMA:
    _SCHEMA_BY_SECTION.setdefault(_f.section, {})[_f.key] = _f


# ---------------------------------------------------------------------------
# Calibrated defaults
# ---------------------------------------------------------------------------

PAPER_TARGETS = {
    "decay_time": 57e-6,  # s
    "peak_time": 20.84e-6,  # s
    "fwhm": 150e-9,  # s
    "relative_efficiency": 0.60,
    "snr": 13.3,
    "pw": 0.01,
}


def _calibrated_defaults() -> dict:
    """Default parameter set reproducing the headline observables."""
    wavelength = 780e-9
    crossing = math.radians(0.95)
    dk = 2.0 * (2.0 * math.pi / wavelength) * math.sin(crossing / 2.0)
    temperature = temperature_for_decay(dk, PAPER_TARGETS["decay_time"], RB87_MASS)

    latency = 3e-6
    g0 = 0.2  # T/m (20 G/cm)
    coil_tau = coil_tau_for_echo(latency, PAPER_TARGETS["peak_time"])
    echo_t = echo_time(g0, latency, coil_tau)
    wf = reversal_waveform(g0, latency, coil_tau, gamma_eff=1.0)
    g_echo = wf.amplitude(echo_t)
    sigma_z = 1e-3
    gamma_eff, jitter = gamma_and_jitter_for_peak(
        PAPER_TARGETS["fwhm"], PAPER_TARGETS["relative_efficiency"], sigma_z, g_echo)

    chain = DetectionChain()
    p_exc = excitation_for_write_probability(PAPER_TARGETS["pw"], chain)
    eta0 = 0.20
    beat_omega = 2.0 * math.pi / 28e-6  # fitted-by-eye beat period
    mixture = ClassMixture(weights=(0.9, 0.1), zeeman_scales=(1.0, 0.6),
                           beat_frequencies=(0.0, beat_omega))
    beat = float(mixture.beat_factor(np.asarray(echo_t)))
    peak_eta = detected_peak_efficiency(
        eta0, echo_t, PAPER_TARGETS["decay_time"],
        PAPER_TARGETS["relative_efficiency"], chain.arm_efficiency,
        beat_factor=beat)
    tables = herald_tables(EmissionModel(p_exc), chain)
    kappa = kappa_for_snr(PAPER_TARGETS["snr"], peak_eta, tables.p_n_given_click,
                          chain.read_splitter_ratio, chain.dark_click_prob,
                          0.0, PAPER_TARGETS["pw"])

    return {
        "run_scenario": "rephase",
        "run_global_seed": 12345,
        "run_target_write_clicks": 10_000,
        "run_max_trials_per_point": 10**12,
        "run_output_dir": "out",
        "ensemble_atom_count": 20_000,
        "ensemble_sigma_x": 1e-3,
        "ensemble_sigma_y": 1e-3,
        "ensemble_sigma_z": sigma_z,
        "ensemble_temperature": temperature,
        "geometry_wavelength": wavelength,
        "geometry_crossing_angle": crossing,
        "geometry_misalignment": 0.0,
        "gradient_amplitude": g0,
        "gradient_coil_tau": coil_tau,
        "gradient_gamma_eff": gamma_eff,
        "gradient_moving_zeeman": False,
        "classes_weights": (0.9, 0.1),
        "classes_zeeman_scales": (1.0, 0.6),
        "classes_beat_frequencies": (0.0, beat_omega),
        "emission_excitation_probability": p_exc,
        "emission_fock_cutoff": 8,
        "detection_filter_transmission": 0.20,
        "detection_spd_efficiency": 0.43,
        "detection_read_splitter_ratio": 0.5,
        "detection_dark_rate": 20.0,
        "detection_coincidence_window": 200e-9,
        "noise_kappa": kappa,
        "noise_floor": 0.0,
        "noise_cavity_suppression": 1.0,
        "retrieval_eta0": eta0,
        "retrieval_extrinsic_lifetime": math.inf,
        "sequence_mot_load": 15e-3,
        "sequence_molasses": 1.6e-3,
        "sequence_pumping": 10e-6,
        "sequence_interrogation_max": 660e-6,
        "sequence_max_trials": 200,
        "sequence_trial_period": 1.7e-6,
        "sequence_reversal_latency": latency,
        "sequence_readout_delay": echo_t,
        "sequence_repetition_rate": 59.0,
        "sequence_residual_excitation": 0.0,
        "sequence_read_duration": 0.0,
        "sequence_rephasing_time_jitter": jitter,
        "scan_storage_start": 2e-6,
        "scan_storage_stop": 120e-6,
        "scan_storage_step": 4e-6,
        "scan_background_start": 8e-6,
        "scan_background_stop": 19e-6,
        "scan_background_step": 1e-6,
        "scan_peak_window": 1.1e-6,
        "scan_peak_step": 25e-9,
        "scan_multiplex_step": 250e-9,
        "scan_grid_step": 10e-9,
        "scan_pw_values": (0.0017, 0.0028, 0.005, 0.01),
        "scan_alpha_budget_constant": 1.2e5,
        "scan_alpha_min_trials": 10_000_000,
        "multiplex_write_offsets": (0.0, 600e-9),
    }


_DEFAULTS_CACHE: dict | None = None


def schema_defaults() -> dict:
    global _DEFAULTS_CACHE
    if _DEFAULTS_CACHE is None:
        _DEFAULTS_CACHE = _calibrated_defaults()
    return dict(_DEFAULTS_CACHE)


# ---------------------------------------------------------------------------
# RunConfig
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RunConfig:
    values: dict

    def __getattr__(self, name):
        values = object.__getattribute__(self, "values")
        if name in values:
            return values[name]
        raise AttributeError(name)

    def replace(self, **updates) -> "RunConfig":
        merged = dict(self.values)
        for k, v in updates.items():
            if k not in merged:
                raise ConfigError(f"unknown config attribute", field=k)
            merged[k] = v
        return RunConfig(values=merged)

    # -- derived quantities used by calibration and builders --------------

    @property
    def mass(self) -> float:
        return RB87_MASS

    @property
    def delta_k_magnitude(self) -> float:
        return 2.0 * (2.0 * math.pi / self.geometry_wavelength) * math.sin(
            self.geometry_crossing_angle / 2.0)

    @property
    def sigma_z(self) -> float:
        return self.ensemble_sigma_z

    @property
    def temperature(self) -> float:
        return self.ensemble_temperature

    @property
    def coil_tau(self) -> float:
        return self.gradient_coil_tau

    @property
    def gradient_amplitude(self) -> float:
        return self.values["gradient_amplitude"]

    @property
    def gamma_eff(self) -> float:
        return self.gradient_gamma_eff

    @property
    def reversal_latency(self) -> float:
        return self.sequence_reversal_latency

    @property
    def rephasing_time_jitter(self) -> float:
        return self.sequence_rephasing_time_jitter

    @property
    def eta0(self) -> float:
        return self.retrieval_eta0

    @property
    def extrinsic_lifetime(self) -> float:
        return self.retrieval_extrinsic_lifetime

    @property
    def arm_efficiency(self) -> float:
        return self.detection_filter_transmission * self.detection_spd_efficiency

    @property
    def dark_click_prob(self) -> float:
        return -math.expm1(-self.detection_dark_rate * self.detection_coincidence_window)

    @property
    def noise_floor(self) -> float:
        return self.values["noise_floor"]

    @property
    def cavity_suppression(self) -> float:
        return self.noise_cavity_suppression

    @property
    def mixture(self) -> ClassMixture:
        return ClassMixture(weights=tuple(self.classes_weights),
                            zeeman_scales=tuple(self.classes_zeeman_scales),
                            beat_frequencies=tuple(self.classes_beat_frequencies))

    @property
    def target_pw(self) -> float:
        """Expected per-trial write click probability of this configuration."""
        return herald_tables(self.emission_model, self.detection_chain).p_click

    @property
    def relative_efficiency_default(self) -> float:
        wf = reversal_waveform(self.gradient_amplitude, self.reversal_latency,
                               self.coil_tau, gamma_eff=1.0)
        echo_t = echo_time(self.gradient_amplitude, self.reversal_latency,
                           self.coil_tau)
        sigma_i = echo_envelope_sigma(self.gamma_eff, self.sigma_z,
                                      wf.amplitude(echo_t))
        jitter = self.rephasing_time_jitter
        return sigma_i / math.hypot(sigma_i, jitter) if jitter else 1.0

    # -- model objects ------------------------------------------------------

    @property
    def emission_model(self) -> EmissionModel:
        return EmissionModel(self.emission_excitation_probability,
                             self.emission_fock_cutoff)

    @property
    def detection_chain(self) -> DetectionChain:
        return DetectionChain(
            filter_transmission=self.detection_filter_transmission,
            spd_efficiency=self.detection_spd_efficiency,
            read_splitter_ratio=self.detection_read_splitter_ratio,
            dark_rate=self.detection_dark_rate,
            coincidence_window=self.detection_coincidence_window)

    def waveform(self) -> GradientWaveform:
        return GradientWaveform(
            segments=((self.sequence_reversal_latency, -self.gradient_amplitude),),
            coil_response_tau=self.gradient_coil_tau,
            gamma_eff=self.gradient_gamma_eff,
            initial_amplitude=self.gradient_amplitude)

    def sequence_config(self) -> SequenceConfig:
        return SequenceConfig(
            mot_load=self.sequence_mot_load,
            molasses=self.sequence_molasses,
            pumping=self.sequence_pumping,
            interrogation_max=self.sequence_interrogation_max,
            max_trials=self.sequence_max_trials,
            trial_period=self.sequence_trial_period,
            reversal_latency=self.sequence_reversal_latency,
            readout_delay=self.sequence_readout_delay,
            repetition_rate=self.sequence_repetition_rate,
            residual_excitation=self.sequence_residual_excitation,
            read_duration=self.sequence_read_duration,
            rephasing_time_jitter=self.sequence_rephasing_time_jitter)

    def multiplex_plan(self, readout_scan=()) -> MultiplexPlan:
        return MultiplexPlan(write_offsets=tuple(self.multiplex_write_offsets),
                             readout_scan=tuple(readout_scan))

    # -- scan assembly --------------------------------------------------------

    def storage_times(self) -> np.ndarray:
        return np.arange(self.scan_storage_start,
                         self.scan_storage_stop + self.scan_storage_step / 2,
                         self.scan_storage_step)

    def background_times(self) -> np.ndarray:
        return np.arange(self.scan_background_start,
                         self.scan_background_stop + self.scan_background_step / 2,
                         self.scan_background_step)

    def peak_times(self, center: float, step: float | None = None) -> np.ndarray:
        step = self.scan_peak_step if step is None else step
        half = self.scan_peak_window / 2.0
        return np.arange(center - half, center + half + step / 2, step)

    def rephase_scan(self, echo_t: float) -> np.ndarray:
        return np.unique(np.concatenate([
            self.background_times(), self.peak_times(echo_t)]))

    def multiplex_scan(self, peak_times) -> np.ndarray:
        parts = [self.background_times()]
        for t in peak_times:
            parts.append(self.peak_times(t, step=self.scan_multiplex_step))
        return np.unique(np.concatenate(parts))


def build_experiment(cfg: RunConfig, gradient: bool | None = None) -> Experiment:
    """Assemble the Experiment; gradient defaults to the scenario's choice."""
    if gradient is None:
        gradient = cfg.run_scenario != "standard"
    try:
        ensemble = EnsembleModel(
            atom_count=cfg.ensemble_atom_count,
            cloud_sigma=(cfg.ensemble_sigma_x, cfg.ensemble_sigma_y,
                         cfg.ensemble_sigma_z),
            temperature=cfg.ensemble_temperature,
            rng_seed=cfg.run_global_seed)
        mode0 = SpinWaveMode.from_geometry(
            cfg.geometry_wavelength, cfg.geometry_crossing_angle,
            misalignment=cfg.geometry_misalignment)
        return Experiment(
            ensemble_model=ensemble,
            mode0=mode0,
            waveform=cfg.waveform() if gradient else None,
            mixture=cfg.mixture,
            emission=cfg.emission_model,
            chain=cfg.detection_chain,
            noise=NoiseModel(kappa=cfg.noise_kappa, floor=cfg.values["noise_floor"],
                             cavity_suppression=cfg.noise_cavity_suppression),
            sequence=cfg.sequence_config(),
            eta0=cfg.retrieval_eta0,
            extrinsic_lifetime=cfg.retrieval_extrinsic_lifetime,
            seed=cfg.run_global_seed,
            moving_zeeman=cfg.gradient_moving_zeeman,
            grid_step=cfg.scan_grid_step,
            max_trials_per_point=cfg.run_max_trials_per_point)
    except InvalidParameterError as exc:
        raise ConfigError(str(exc)) from exc


def default_config() -> RunConfig:
    return RunConfig(values=schema_defaults())


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------

def _parse_scalar(text: str, spec: FieldSpec, line: int):
    parts = text.split()
    if spec.dimension is None:
        if len(parts) != 1:
            raise ConfigError("dimensionless field takes a bare number",
                              field=f"{spec.section}.{spec.key}", line=line)
        return float(parts[0])
    if len(parts) != 2:
        raise ConfigError(
            f"expected '<value> <unit>' with unit in "
            f"{sorted(UNIT_TABLES[spec.dimension])}",
            field=f"{spec.section}.{spec.key}", line=line)
    value, unit = parts
    table = UNIT_TABLES[spec.dimension]
    if unit not in table:
        raise ConfigError(f"unknown unit {unit!r} for dimension {spec.dimension}",
                          field=f"{spec.section}.{spec.key}", line=line)
    return float(value) * table[unit]


def _parse_value(text: str, spec: FieldSpec, line: int):
    text = text.strip()
    try:
        if spec.kind == "str":
            return text
        if spec.kind == "enum":
            if text not in spec.choices:
                raise ConfigError(f"must be one of {spec.choices}",
                                  field=f"{spec.section}.{spec.key}", line=line)
            return text
        if spec.kind == "bool":
            if text.lower() in ("true", "yes", "on", "1"):
                return True
            if text.lower() in ("false", "no", "off", "0"):
                return False
            raise ConfigError("expected true/false",
                              field=f"{spec.section}.{spec.key}", line=line)
        if spec.kind == "int":
            return int(text)
        if spec.kind == "float":
            return _parse_scalar(text, spec, line)
        if spec.kind == "list":
            if not text:
                return ()
            if spec.dimension is None:
                return tuple(float(v.strip()) for v in text.split(","))
            # unit trails the final element
            items = [v.strip() for v in text.split(",")]
            last_parts = items[-1].split()
            if len(last_parts) != 2:
                raise ConfigError("list of dimensional values needs one trailing unit",
                                  field=f"{spec.section}.{spec.key}", line=line)
            unit = last_parts[1]
            table = UNIT_TABLES[spec.dimension]
            if unit not in table:
                raise ConfigError(f"unknown unit {unit!r}",
                                  field=f"{spec.section}.{spec.key}", line=line)
            scale = table[unit]
            numbers = [float(v) for v in items[:-1]] + [float(last_parts[0])]
            return tuple(n * scale for n in numbers)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc), field=f"{spec.section}.{spec.key}", line=line)
    raise ConfigError(f"unhandled kind {spec.kind}", field=spec.key, line=line)


ENV_PREFIX = "DLCZSIM_"


def parse_config_text(text: str, apply_env: bool = True) -> RunConfig:
    values = schema_defaults()
    section = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            if section not in _SCHEMA_BY_SECTION:
                raise ConfigError(f"unknown section [{section}]", line=lineno)
            continue
        if "=" not in line:
            raise ConfigError("expected 'key = value'", line=lineno)
        if section is None:
            raise ConfigError("key outside of any [section]", line=lineno)
        key, value_text = (s.strip() for s in line.split("=", 1))
        spec = _SCHEMA_BY_SECTION[section].get(key)
        if spec is None:
            raise ConfigError(f"unknown key", field=f"{section}.{key}", line=lineno)
        values[spec.attr] = _parse_value(value_text, spec, lineno)
    if apply_env:
        for spec in SCHEMA:
            env_key = f"{ENV_PREFIX}{spec.section.upper()}_{spec.key.upper()}"
            if env_key in os.environ:
                values[spec.attr] = _parse_value(os.environ[env_key], spec, 0)
    cfg = RunConfig(values=values)
    validate_config(cfg)
    return cfg


def load_config(path, apply_env: bool = True) -> RunConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config_text(fh.read(), apply_env=apply_env)


def validate_config(cfg: RunConfig):
    """Build every model object once so range violations surface early."""
    try:
        EnsembleModel(atom_count=cfg.ensemble_atom_count,
                      cloud_sigma=(cfg.ensemble_sigma_x, cfg.ensemble_sigma_y,
                                   cfg.ensemble_sigma_z),
                      temperature=cfg.ensemble_temperature,
                      rng_seed=cfg.run_global_seed)
    except InvalidParameterError as exc:
        raise ConfigError(str(exc), field="ensemble") from exc
    try:
        cfg.emission_model
    except InvalidParameterError as exc:
        raise ConfigError(str(exc), field="emission") from exc
    try:
        cfg.detection_chain
    except InvalidParameterError as exc:
        raise ConfigError(str(exc), field="detection") from exc
    try:
        NoiseModel(kappa=cfg.noise_kappa, floor=cfg.values["noise_floor"],
                   cavity_suppression=cfg.noise_cavity_suppression)
    except InvalidParameterError as exc:
        raise ConfigError(str(exc), field="noise") from exc
    try:
        cfg.mixture
    except InvalidParameterError as exc:
        raise ConfigError(str(exc), field="classes") from exc
    try:
        cfg.sequence_config()
    except InvalidParameterError as exc:
        raise ConfigError(str(exc), field="sequence") from exc
    try:
        cfg.waveform()
    except InvalidParameterError as exc:
        raise ConfigError(str(exc), field="gradient") from exc
    if not (0.0 < cfg.retrieval_eta0 <= 1.0):
        raise ConfigError("eta0 must be in (0, 1]", field="retrieval.eta0")


# ---------------------------------------------------------------------------
# Canonical serialisation (manifests, write-config)
# ---------------------------------------------------------------------------

def _render_value(spec: FieldSpec, value):
    if spec.kind in ("str", "enum"):
        return str(value)
    if spec.kind == "bool":
        return "true" if value else "false"
    if spec.kind == "int":
        return str(int(value))
    if spec.kind == "float":
        if spec.dimension is None:
            return repr(float(value))
        return f"{float(value)!r} {CANONICAL_UNIT[spec.dimension]}"
    if spec.kind == "list":
        body = ", ".join(repr(float(v)) for v in value)
        if spec.dimension is None:
            return body
        return f"{body} {CANONICAL_UNIT[spec.dimension]}"
    raise InvalidParameterError(spec.kind)


def canonical_text(cfg: RunConfig) -> str:
    """Deterministic full dump of the resolved configuration (SI units)."""
    lines = [f"# dlczsim {__version__} resolved configuration"]
    current = None
    for spec in SCHEMA:
        if spec.section != current:
            lines.append(f"[{spec.section}]")
            current = spec.section
        lines.append(f"{spec.key} = {_render_value(spec, cfg.values[spec.attr])}")
    return "\n".join(lines) + "\n"


def config_hash(cfg: RunConfig) -> str:
    return hashlib.sha256(canonical_text(cfg).encode("utf-8")).hexdigest()


def schema_help() -> str:
    """Field list with units, used by --help."""
    lines = []
    current = None
    for spec in SCHEMA:
        if spec.section != current:
            lines.append(f"[{spec.section}]")
            current = spec.section
        if spec.dimension is not None:
            units = "/".join(sorted(UNIT_TABLES[spec.dimension]))
            unit_note = f" ({units})"
        elif spec.kind == "enum":
            unit_note = f" ({'|'.join(spec.choices)})"
        else:
            unit_note = f" ({spec.kind})"
        lines.append(f"  {spec.key}{unit_note}: {spec.help}")
    return "\n".join(lines)
