"""Ensemble physics: atom sampling, per-atom phase accrual, collective overlap.

The collective excitation created by a heralded write event is tracked
through the phase each contributing atom accrues relative to creation,

    phi_j(t) = gamma_eff * z_j * int_{t0}^{t} G(t') dt'  +  dk . v_j * (t - t0),

i.e. a spatially dependent Zeeman term driven by the magnetic gradient
G(t) and a Doppler term from ballistic motion against the stored
wavevector mismatch dk.  The retrieval efficiency is proportional to the
squared overlap of the dephased state with the initial one, which for a
class mixture reads

    |sum_c w_c e^{i Omega_c (t-t0)} (1/N) sum_j e^{i phi_{j,c}(t)}|^2 .

The Zeeman integral is evaluated at the atom's creation-time position by
default; displacement over tens of microseconds is negligible against a
millimetre cloud.  Set ``moving_zeeman=True`` to carry the full z_j(t')
inside the integral for sensitivity studies.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .constants import K_BOLTZMANN, RB87_MASS
from .errors import (
    EmptyEnsembleError,
    InvalidParameterError,
    NoRootInWindowError,
    TimeOrderError,
)
from .rng import stream

# Largest number of (atom, time) phase entries evaluated per chunk.
_CHUNK_ELEMENTS = 4_000_000


@dataclass(frozen=True, eq=False)
class AtomSample:
    """One atom's frozen position (m) and velocity (m/s); z is the gradient axis."""

    position: np.ndarray
    velocity: np.ndarray


class Ensemble:
    """Array-backed collection of atom samples.

    Behaves as a sequence of :class:`AtomSample` while keeping positions
    and velocities as (N, 3) arrays for vectorised phase evaluation.
    """

    def __init__(self, positions, velocities):
        positions = np.atleast_2d(np.asarray(positions, dtype=float))
        velocities = np.atleast_2d(np.asarray(velocities, dtype=float))
        if positions.shape != velocities.shape or positions.shape[1] != 3:
            raise InvalidParameterError("positions and velocities must both be (N, 3)")
        if len(positions) == 0:
            raise EmptyEnsembleError("ensemble must contain at least one atom")
        self.positions = positions
        self.velocities = velocities

    @classmethod
    def from_atoms(cls, atoms):
        atoms = list(atoms)
        if not atoms:
            raise EmptyEnsembleError("ensemble must contain at least one atom")
        return cls(
            np.array([a.position for a in atoms], dtype=float),
            np.array([a.velocity for a in atoms], dtype=float),
        )

    def __len__(self):
        return len(self.positions)

    def __getitem__(self, i):
        if isinstance(i, slice):
            return Ensemble(self.positions[i], self.velocities[i])
        return AtomSample(self.positions[i].copy(), self.velocities[i].copy())

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]


@dataclass(frozen=True)
class EnsembleModel:
    """Gaussian cloud of N thermal atoms; identical seeds give identical samples."""

    atom_count: int
    cloud_sigma: tuple[float, float, float]  # m
    temperature: float  # K
    rng_seed: int = 0
    mass: float = RB87_MASS  # kg

    def __post_init__(self):
        if int(self.atom_count) < 1 or self.atom_count != int(self.atom_count):
            raise InvalidParameterError(f"atom_count must be a positive integer, got {self.atom_count}")
        if len(self.cloud_sigma) != 3 or any(s <= 0 for s in self.cloud_sigma):
            raise InvalidParameterError(f"cloud_sigma must be three positive lengths, got {self.cloud_sigma}")
        if self.temperature <= 0:
            raise InvalidParameterError(f"temperature must be positive, got {self.temperature}")
        if self.mass <= 0:
            raise InvalidParameterError(f"mass must be positive, got {self.mass}")

    @property
    def velocity_sigma(self) -> float:
        """Maxwell-Boltzmann per-axis velocity std, sqrt(kB T / m), m/s."""
        return math.sqrt(K_BOLTZMANN * self.temperature / self.mass)


def sample_ensemble(model: EnsembleModel) -> Ensemble:
    """Draw the atom cloud: Gaussian positions, Maxwell-Boltzmann velocities."""
    rng = stream(model.rng_seed, "ensemble-sample")
    n = int(model.atom_count)
    positions = rng.normal(0.0, 1.0, size=(n, 3)) * np.asarray(model.cloud_sigma)
    velocities = rng.normal(0.0, model.velocity_sigma, size=(n, 3))
    return Ensemble(positions, velocities)


@dataclass(frozen=True, eq=False)
class SpinWaveMode:
    """Stored wavevector mismatch dk = k_W - k_w and the creation time.

    The read-side wavevectors only select which spatial mode is collected
    (k_r = k_R + k_W - k_w); they carry no state here and are therefore
    not represented.
    """

    delta_k: np.ndarray  # rad/m
    creation_time: float = 0.0  # s

    def __post_init__(self):
        object.__setattr__(self, "delta_k", np.asarray(self.delta_k, dtype=float))
        if self.delta_k.shape != (3,):
            raise InvalidParameterError("delta_k must be a 3-vector")

    @classmethod
    def from_geometry(cls, wavelength: float, crossing_angle: float,
                      misalignment: float = 0.0, creation_time: float = 0.0):
        """Build dk from the photon wavelength and write/detect crossing angle.

        Both wavevectors have magnitude 2 pi / wavelength (the hyperfine
        splitting is negligible), so |dk| = 2 k sin(angle / 2).  The
        dominant component is aligned with the gradient (z) axis;
        ``misalignment`` tilts it in the x-z plane.
        """
        if wavelength <= 0:
            raise InvalidParameterError("wavelength must be positive")
        if crossing_angle <= 0:
            raise InvalidParameterError("crossing_angle must be positive")
        k = 2.0 * math.pi / wavelength
        dk_mag = 2.0 * k * math.sin(crossing_angle / 2.0)
        direction = np.array([math.sin(misalignment), 0.0, math.cos(misalignment)])
        return cls(dk_mag * direction, creation_time)


@dataclass(frozen=True)
class GradientWaveform:
    """Piecewise gradient amplitude with first-order coil response.

    ``segments`` lists (start_time, target_amplitude) instructions; the
    instantaneous amplitude approaches each target exponentially with
    ``coil_response_tau`` starting from its current value, so G(t) is
    continuous.  Before the first segment G equals ``initial_amplitude``
    (use the target value to model a gradient settled long before t = 0).
    ``gamma_eff`` converts gradient * position into a detuning:
    d(omega)_j = gamma_eff * G(t) * z_j, rad/s.
    """

    segments: tuple[tuple[float, float], ...]  # (s, T/m)
    coil_response_tau: float  # s
    gamma_eff: float  # rad/(s T)
    initial_amplitude: float = 0.0  # T/m

    # derived, filled in __post_init__
    _starts: np.ndarray = field(init=False, repr=False, compare=False, default=None)
    _targets: np.ndarray = field(init=False, repr=False, compare=False, default=None)
    _g_at_start: np.ndarray = field(init=False, repr=False, compare=False, default=None)
    _area_at_start: np.ndarray = field(init=False, repr=False, compare=False, default=None)
    _moment_at_start: np.ndarray = field(init=False, repr=False, compare=False, default=None)

    def __post_init__(self):
        if self.coil_response_tau < 0:
            raise InvalidParameterError("coil_response_tau must be >= 0")
        segs = tuple((float(t), float(a)) for t, a in self.segments)
        object.__setattr__(self, "segments", segs)
        starts = np.array([t for t, _ in segs])
        if np.any(starts < 0):
            raise InvalidParameterError("segment start times must be >= 0")
        if np.any(np.diff(starts) <= 0):
            raise InvalidParameterError("segment start times must be strictly increasing")
        targets = np.array([a for _, a in segs])

        # Propagate the continuous amplitude and cumulative integrals
        # through the segment boundaries once; evaluation is then O(log n).
        tau = self.coil_response_tau
        g = float(self.initial_amplitude)
        area = 0.0
        moment = 0.0
        g_at, area_at, mom_at = [], [], []
        prev_t = 0.0
        prev_target = None  # None encodes 'constant initial amplitude'
        for t_i, target in segs:
            dt = t_i - prev_t
            if prev_target is None:
                area += g * dt
                moment += g * (t_i**2 - prev_t**2) / 2.0
            else:
                a_inc, m_inc, g = _segment_integrals(prev_target, g, tau, prev_t, dt)
                area += a_inc
                moment += m_inc
            g_at.append(g)
            area_at.append(area)
            mom_at.append(moment)
            prev_t, prev_target = t_i, target
        object.__setattr__(self, "_starts", starts)
        object.__setattr__(self, "_targets", targets)
        object.__setattr__(self, "_g_at_start", np.array(g_at))
        object.__setattr__(self, "_area_at_start", np.array(area_at))
        object.__setattr__(self, "_moment_at_start", np.array(mom_at))

    @classmethod
    def constant(cls, amplitude: float, gamma_eff: float):
        """A gradient settled at a fixed amplitude for all t >= 0."""
        return cls(segments=(), coil_response_tau=0.0, gamma_eff=gamma_eff,
                   initial_amplitude=amplitude)

    def shifted(self, dt: float) -> "GradientWaveform":
        """Same waveform with every segment instruction delayed by dt."""
        return GradientWaveform(
            segments=tuple((t + dt, a) for t, a in self.segments),
            coil_response_tau=self.coil_response_tau,
            gamma_eff=self.gamma_eff,
            initial_amplitude=self.initial_amplitude)

    def amplitude(self, t):
        """Instantaneous gradient amplitude G(t), T/m, for t >= 0."""
        t = np.asarray(t, dtype=float)
        scalar = t.ndim == 0
        t = np.atleast_1d(t)
        if np.any(t < 0):
            raise TimeOrderError("gradient amplitude is defined for t >= 0")
        out = np.full(t.shape, float(self.initial_amplitude))
        if len(self._starts):
            idx = np.searchsorted(self._starts, t, side="right") - 1
            inside = idx >= 0
            if np.any(inside):
                i = idx[inside]
                dt = t[inside] - self._starts[i]
                target = self._targets[i]
                if self.coil_response_tau == 0.0:
                    out[inside] = target
                else:
                    out[inside] = target + (self._g_at_start[i] - target) * np.exp(
                        -dt / self.coil_response_tau)
        return out[0] if scalar else out

    def area(self, t):
        """Cumulative gradient area int_0^t G dt', T/m * s."""
        t = np.asarray(t, dtype=float)
        scalar = t.ndim == 0
        t = np.atleast_1d(t)
        if np.any(t < 0):
            raise TimeOrderError("gradient area is defined for t >= 0")
        out = self.initial_amplitude * t
        if len(self._starts):
            idx = np.searchsorted(self._starts, t, side="right") - 1
            inside = idx >= 0
            if np.any(inside):
                i = idx[inside]
                s0 = self._starts[i]
                dt = t[inside] - s0
                target = self._targets[i]
                g0 = self._g_at_start[i]
                if self.coil_response_tau == 0.0:
                    seg_area = target * dt
                else:
                    tau = self.coil_response_tau
                    seg_area = target * dt + (g0 - target) * tau * (1.0 - np.exp(-dt / tau))
                out[inside] = self._area_at_start[i] + seg_area
        return out[0] if scalar else out

    def first_moment(self, t):
        """Cumulative first moment int_0^t G(t') t' dt' (for moving-atom phases)."""
        t = np.asarray(t, dtype=float)
        scalar = t.ndim == 0
        t = np.atleast_1d(t)
        if np.any(t < 0):
            raise TimeOrderError("gradient moment is defined for t >= 0")
        out = self.initial_amplitude * t**2 / 2.0
        if len(self._starts):
            idx = np.searchsorted(self._starts, t, side="right") - 1
            inside = idx >= 0
            if np.any(inside):
                i = idx[inside]
                s0 = self._starts[i]
                dt = t[inside] - s0
                target = self._targets[i]
                g0 = self._g_at_start[i]
                tau = self.coil_response_tau
                seg = target * (np.square(t[inside]) - np.square(s0)) / 2.0
                if tau > 0.0:
                    e = np.exp(-dt / tau)
                    seg += (g0 - target) * (s0 * tau * (1.0 - e)
                                            + tau * tau * (1.0 - e * (1.0 + dt / tau)))
                out[inside] = self._moment_at_start[i] + seg
        return out[0] if scalar else out


def _segment_integrals(target, g0, tau, t_start, dt):
    """Area, first moment and final amplitude of one exponential segment."""
    if tau == 0.0:
        area = target * dt
        moment = target * ((t_start + dt) ** 2 - t_start**2) / 2.0
        return area, moment, target
    e = math.exp(-dt / tau)
    b = g0 - target
    area = target * dt + b * tau * (1.0 - e)
    moment = target * ((t_start + dt) ** 2 - t_start**2) / 2.0 + b * (
        t_start * tau * (1.0 - e) + tau * tau * (1.0 - e * (1.0 + dt / tau)))
    g_end = target + b * e
    return area, moment, g_end


def gradient_amplitude(waveform: GradientWaveform, t) -> float:
    """G(t): piecewise exponential approach to each segment target."""
    return waveform.amplitude(t)


@dataclass(frozen=True)
class ClassMixture:
    """Coherence classes from imperfect optical pumping.

    Each class carries a population weight, a scale factor on the Zeeman
    term (different magnetic sensitivity of its ground-state coherence)
    and a beat frequency relative to the reference class.  Two classes
    reproduce the beating seen on the retrieval-efficiency decay.
    """

    weights: tuple[float, ...] = (1.0,)
    zeeman_scales: tuple[float, ...] = (1.0,)
    beat_frequencies: tuple[float, ...] = (0.0,)  # rad/s

    def __post_init__(self):
        w = tuple(float(x) for x in self.weights)
        if len(w) != len(self.zeeman_scales) or len(w) != len(self.beat_frequencies):
            raise InvalidParameterError("class arrays must have equal length")
        if not w:
            raise InvalidParameterError("at least one class is required")
        if any(x < 0 for x in w):
            raise InvalidParameterError("class weights must be >= 0")
        if abs(sum(w) - 1.0) > 1e-12:
            raise InvalidParameterError(f"class weights must sum to 1, got {sum(w)}")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "zeeman_scales", tuple(float(x) for x in self.zeeman_scales))
        object.__setattr__(self, "beat_frequencies", tuple(float(x) for x in self.beat_frequencies))

    def beat_factor(self, dt):
        """|sum_c w_c e^{i Omega_c dt}|^2, the gradient-free class envelope."""
        dt = np.asarray(dt, dtype=float)
        total = np.zeros(dt.shape, dtype=complex)
        for w, om in zip(self.weights, self.beat_frequencies):
            total = total + w * np.exp(1j * om * dt)
        return np.abs(total) ** 2


SINGLE_CLASS = ClassMixture()


def accrued_phase(atom: AtomSample, mode: SpinWaveMode, waveform: GradientWaveform,
                  t: float, zeeman_scale: float = 1.0,
                  moving_zeeman: bool = False) -> float:
    """Phase of one atom at time t relative to the creation of the spin-wave.

    Zeeman term: gamma_eff * z_j * int_{t0}^{t} G dt' (frozen position, or
    the full moving-atom integral with ``moving_zeeman``).  Doppler term:
    dk . v_j * (t - t0).  Raises ``TimeOrderError`` for t < creation time.
    """
    t0 = mode.creation_time
    if t < t0:
        raise TimeOrderError(f"t={t} precedes spin-wave creation at {t0}")
    d_area = waveform.area(t) - waveform.area(t0)
    z = atom.position[2]
    zeeman = zeeman_scale * waveform.gamma_eff * z * d_area
    if moving_zeeman:
        d_mom = waveform.first_moment(t) - waveform.first_moment(t0) - t0 * d_area
        zeeman += zeeman_scale * waveform.gamma_eff * atom.velocity[2] * d_mom
    doppler = float(np.dot(mode.delta_k, atom.velocity)) * (t - t0)
    return zeeman + doppler


def mean_phasor(ensemble: Ensemble, mode: SpinWaveMode, waveform: GradientWaveform,
                times, zeeman_scale: float = 1.0, moving_zeeman: bool = False):
    """(1/N) sum_j exp(i phi_j(t)) for an array of times (complex array)."""
    times = np.atleast_1d(np.asarray(times, dtype=float))
    t0 = mode.creation_time
    if np.any(times < t0):
        raise TimeOrderError("all times must be >= creation_time")
    d_area = (waveform.area(times) - waveform.area(t0)) * waveform.gamma_eff * zeeman_scale
    dt = times - t0
    z = ensemble.positions[:, 2]
    doppler = ensemble.velocities @ mode.delta_k  # rad/s per atom
    if moving_zeeman:
        d_mom = (waveform.first_moment(times) - waveform.first_moment(t0)
                 - t0 * (waveform.area(times) - waveform.area(t0)))
        d_mom = d_mom * waveform.gamma_eff * zeeman_scale
        vz = ensemble.velocities[:, 2]
    n = len(ensemble)
    total = np.zeros(len(times), dtype=complex)
    chunk = max(1, _CHUNK_ELEMENTS // max(1, len(times)))
    for lo in range(0, n, chunk):
        hi = min(n, lo + chunk)
        phase = np.outer(z[lo:hi], d_area) + np.outer(doppler[lo:hi], dt)
        if moving_zeeman:
            phase += np.outer(vz[lo:hi], d_mom)
        total += np.exp(1j * phase).sum(axis=0)
    return total / n


def collective_overlap(atoms, mode: SpinWaveMode, waveform: GradientWaveform,
                       mixture: ClassMixture = SINGLE_CLASS, t=None,
                       moving_zeeman: bool = False):
    """Squared overlap of the evolved spin-wave with its initial state, in [0, 1].

    Accepts a scalar time or an array; equals 1 at the creation time.
    """
    if t is None:
        raise InvalidParameterError("t is required")
    ensemble = atoms if isinstance(atoms, Ensemble) else Ensemble.from_atoms(atoms)
    times = np.asarray(t, dtype=float)
    scalar = times.ndim == 0
    times = np.atleast_1d(times)
    dt = times - mode.creation_time
    total = np.zeros(len(times), dtype=complex)
    for w, scale, beat in zip(mixture.weights, mixture.zeeman_scales,
                              mixture.beat_frequencies):
        s = mean_phasor(ensemble, mode, waveform, times, zeeman_scale=scale,
                        moving_zeeman=moving_zeeman)
        total += w * np.exp(1j * beat * dt) * s
    overlap = np.abs(total) ** 2
    # |mean phasor| <= 1 and weights sum to 1, so clipping only removes
    # float round-off above 1.
    np.clip(overlap, 0.0, 1.0, out=overlap)
    return float(overlap[0]) if scalar else overlap


def solve_rephasing_time(waveform: GradientWaveform, search_window: tuple[float, float],
                         creation_time: float = 0.0, tol: float = 1e-12) -> float:
    """Time at which the gradient area since creation returns to zero.

    Solves int_{t0}^{t} G dt' = 0 inside ``search_window``.  Because the
    per-atom detuning factorises as gamma_eff * G(t) * z_j, this root is
    the rephasing time of every atom regardless of position.
    """
    lo, hi = float(search_window[0]), float(search_window[1])
    if not (0.0 <= lo < hi):
        raise InvalidParameterError(f"invalid search window {search_window}")
    a0 = waveform.area(creation_time)

    def f(t):
        return waveform.area(t) - a0

    f_lo, f_hi = f(lo), f(hi)
    if f_lo == 0.0:
        return lo
    if f_lo * f_hi > 0:
        # Endpoints agree in sign; scan for an interior sign change before
        # giving up (the area can dip through zero and come back).
        grid = np.linspace(lo, hi, 257)
        vals = f(grid)
        sign_change = np.nonzero(vals[:-1] * vals[1:] <= 0)[0]
        if len(sign_change) == 0:
            raise NoRootInWindowError(
                f"gradient area does not change sign in {search_window}")
        lo, hi = grid[sign_change[0]], grid[sign_change[0] + 1]
    return float(brentq(f, lo, hi, xtol=tol))


def retrieval_efficiency_curve(atoms, mode: SpinWaveMode, waveform: GradientWaveform,
                               mixture: ClassMixture, times, eta0: float,
                               motional_lifetime: float = math.inf,
                               moving_zeeman: bool = False):
    """eta(t) = eta0 * overlap(t) * exp(-(t - t0)/motional_lifetime).

    The Doppler term of the accrued phase produces the motional decay
    intrinsically; ``motional_lifetime`` multiplies in an extra
    exponential for unmodelled decoherence (default: none).
    """
    if not (0.0 < eta0 <= 1.0):
        raise InvalidParameterError(f"eta0 must be in (0, 1], got {eta0}")
    if motional_lifetime <= 0:
        raise InvalidParameterError("motional_lifetime must be positive")
    times = np.atleast_1d(np.asarray(times, dtype=float))
    if np.any(np.diff(times) < 0):
        raise InvalidParameterError("times must be non-decreasing")
    overlap = collective_overlap(atoms, mode, waveform, mixture, times,
                                 moving_zeeman=moving_zeeman)
    dt = times - mode.creation_time
    extra = np.exp(-dt / motional_lifetime) if math.isfinite(motional_lifetime) else 1.0
    return eta0 * overlap * extra
