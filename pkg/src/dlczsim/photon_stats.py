"""Photon-pair emission, lossy detection and coincidence statistics.

The write process emits into a two-mode squeezed state: the write-photon
number and the spin-wave excitation number are perfectly correlated,
P(n, n) = (1 - p) p^n.  Detection is binomial thinning through scalar
efficiencies onto non-number-resolving threshold detectors (click when
at least one photon survives), with uncorrelated noise clicks on top.

Read-arm noise follows the empirical background law: the per-readout
noise click probability is kappa * p_w + floor, proportional to the
write detection probability, optionally divided by a cavity suppression
factor.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    EmptyStreamError,
    InsufficientStatisticsError,
    InvalidParameterError,
    RegionError,
)
from .fitting import gaussian_peak_fit


@dataclass(frozen=True)
class EmissionModel:
    """Per-trial spin-wave excitation probability p and a Fock-space cutoff.

    The cutoff bounds the number states kept in conditional tables and
    enumeration; its truncated-norm deficit p^(cutoff+1) must stay below
    1e-6.
    """

    excitation_probability: float
    fock_cutoff: int = 8

    def __post_init__(self):
        p = self.excitation_probability
        if not (0.0 <= p < 1.0):
            raise InvalidParameterError(f"excitation probability must be in [0, 1), got {p}")
        if self.fock_cutoff < 2:
            raise InvalidParameterError("fock_cutoff must be >= 2")
        if p > 0 and p ** (self.fock_cutoff + 1) >= 1e-6:
            raise InvalidParameterError(
                f"norm deficit {p**(self.fock_cutoff + 1):.2e} at cutoff "
                f"{self.fock_cutoff} exceeds 1e-6; raise fock_cutoff")

    def number_probabilities(self) -> np.ndarray:
        """P(n) = (1-p) p^n, renormalised on 0..cutoff."""
        p = self.excitation_probability
        n = np.arange(self.fock_cutoff + 1)
        pn = (1.0 - p) * p**n
        return pn / pn.sum()


@dataclass(frozen=True)
class DetectionChain:
    """Scalar filter/detector efficiencies shared by both arms.

    Every read photon passes the same spectral filter and SPD efficiency
    as the write photon; the read arm then splits onto two detectors.
    """

    filter_transmission: float = 0.20
    spd_efficiency: float = 0.43
    read_splitter_ratio: float = 0.5
    dark_rate: float = 20.0  # counts/s per detector
    coincidence_window: float = 200e-9  # s

    def __post_init__(self):
        for name in ("filter_transmission", "spd_efficiency", "read_splitter_ratio"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise InvalidParameterError(f"{name} must be in [0, 1], got {v}")
        if self.dark_rate < 0:
            raise InvalidParameterError("dark_rate must be >= 0")
        if self.coincidence_window <= 0:
            raise InvalidParameterError("coincidence_window must be > 0")

    @property
    def arm_efficiency(self) -> float:
        """Filter times SPD: survival probability of one photon in one arm."""
        return self.filter_transmission * self.spd_efficiency

    @property
    def dark_click_prob(self) -> float:
        """Probability of a dark click inside one coincidence window."""
        return -math.expm1(-self.dark_rate * self.coincidence_window)


@dataclass(frozen=True)
class NoiseModel:
    """Read-arm background: noise click probability kappa * p_w + floor."""

    kappa: float = 0.0
    floor: float = 0.0
    cavity_suppression: float = 1.0

    def __post_init__(self):
        if self.kappa < 0 or self.floor < 0:
            raise InvalidParameterError("kappa and floor must be >= 0")
        if self.cavity_suppression < 1.0:
            raise InvalidParameterError("cavity_suppression must be >= 1")

    def read_noise_prob(self, expected_pw: float) -> float:
        """Noise click probability per readout, before the read splitter."""
        return self.kappa / self.cavity_suppression * expected_pw + self.floor


# ---------------------------------------------------------------------------
# Emission and detection sampling
# ---------------------------------------------------------------------------

def sample_pair_numbers(model: EmissionModel, rng: np.random.Generator, size=None):
    """Draw (n_write, n_spinwave) from the two-mode squeezed state.

    Photon numbers in the two modes are perfectly correlated; the
    marginal is geometric with mean p / (1 - p).
    """
    p = model.excitation_probability
    if p == 0.0:
        n = np.zeros(size if size is not None else (), dtype=np.int64)
    else:
        # numpy geometric counts trials to first success (>= 1)
        n = rng.geometric(1.0 - p, size=size).astype(np.int64) - 1
    return n, n.copy()


def thinned_click(n, efficiency: float, extra_click_prob: float,
                  rng: np.random.Generator):
    """Threshold-detector click after binomial thinning plus noise clicks."""
    n = np.asarray(n)
    detected = rng.binomial(n, efficiency) > 0
    if extra_click_prob > 0.0:
        detected = detected | (rng.random(n.shape) < extra_click_prob)
    return detected


def read_detection(spinwave_numbers, conversion_eta, chain: DetectionChain,
                   noise_prob: float, rng: np.random.Generator):
    """Detect the retrieved field on the two read SPDs.

    Each of the n excitations converts to a photon with probability
    ``conversion_eta`` (scalar or per-trial array), passes the filter and
    SPD efficiency, and is routed to r1 with the splitter ratio.  Noise
    clicks (background law plus dark counts) are added independently per
    detector.  Returns boolean click arrays (r1, r2).
    """
    n = np.asarray(spinwave_numbers)
    eta = np.asarray(conversion_eta, dtype=float)
    if np.any(eta < 0) or np.any(eta > 1):
        raise InvalidParameterError("conversion efficiency must be in [0, 1]")
    photons = rng.binomial(n, eta)
    surviving = rng.binomial(photons, chain.arm_efficiency)
    s = chain.read_splitter_ratio
    k1 = rng.binomial(surviving, s)
    k2 = surviving - k1
    q1 = noise_prob * s + chain.dark_click_prob
    q2 = noise_prob * (1.0 - s) + chain.dark_click_prob
    r1 = (k1 > 0) | (rng.random(n.shape) < q1)
    r2 = (k2 > 0) | (rng.random(n.shape) < q2)
    return r1, r2


@dataclass(frozen=True)
class TrialOutcome:
    """Detector-level result of one trial (possibly several write pulses)."""

    write_clicks: tuple[bool, ...]
    read1: bool = False
    read2: bool = False

    @property
    def write_click(self) -> bool:
        return any(self.write_clicks)

    @property
    def read_click(self) -> bool:
        return self.read1 or self.read2


def detect_trial(numbers, chain: DetectionChain, eta_ret_at_readout: float,
                 noise: NoiseModel, rng: np.random.Generator,
                 expected_pw: float = 0.0) -> TrialOutcome:
    """Push one emitted pair through the full detection chain.

    ``numbers`` is the (n_write, n_spinwave) tuple from
    :func:`sample_pair_numbers`; ``eta_ret_at_readout`` is the physics
    conversion probability supplied by the ensemble model.
    ``expected_pw`` feeds the background law of ``noise``.
    """
    if not (0.0 <= eta_ret_at_readout <= 1.0):
        raise InvalidParameterError("eta_ret_at_readout must be in [0, 1]")
    n_write, n_spin = numbers
    w = bool(thinned_click(np.asarray([n_write]), chain.arm_efficiency,
                           chain.dark_click_prob, rng)[0])
    q = noise.read_noise_prob(expected_pw)
    r1, r2 = read_detection(np.asarray([n_spin]), eta_ret_at_readout, chain, q, rng)
    return TrialOutcome(write_clicks=(w,), read1=bool(r1[0]), read2=bool(r2[0]))


# ---------------------------------------------------------------------------
# Heralding tables (exact conditionals used by the fast trial engine)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class HeraldTables:
    """Exact click probability and number-state conditionals for one write."""

    p_click: float
    p_n_given_click: np.ndarray
    p_n_given_noclick: np.ndarray

    def sample_given_click(self, rng: np.random.Generator, size: int) -> np.ndarray:
        cdf = np.cumsum(self.p_n_given_click)
        return np.searchsorted(cdf, rng.random(size) * cdf[-1], side="right")

    def sample_given_noclick(self, rng: np.random.Generator, size: int) -> np.ndarray:
        cdf = np.cumsum(self.p_n_given_noclick)
        return np.searchsorted(cdf, rng.random(size) * cdf[-1], side="right")


def herald_tables(emission: EmissionModel, chain: DetectionChain) -> HeraldTables:
    pn = emission.number_probabilities()
    n = np.arange(len(pn))
    pdark = chain.dark_click_prob
    p_click_n = 1.0 - (1.0 - chain.arm_efficiency) ** n * (1.0 - pdark)
    p_click = float((pn * p_click_n).sum())
    if p_click > 0:
        given_click = pn * p_click_n / p_click
    else:
        given_click = np.zeros_like(pn)
        given_click[0] = 1.0
    if p_click < 1:
        given_noclick = pn * (1.0 - p_click_n) / (1.0 - p_click)
    else:
        given_noclick = np.zeros_like(pn)
        given_noclick[0] = 1.0
    return HeraldTables(p_click, given_click, given_noclick)


def excitation_for_write_probability(target_pw: float, chain: DetectionChain,
                                     include_dark: bool = True) -> float:
    """Invert p_w -> p for the geometric source through the write arm.

    p_w = 1 - (1 - p_dark)(1 - p) / (1 - p (1 - eta_w)); solved for p.
    """
    if not (0.0 < target_pw < 1.0):
        raise InvalidParameterError("target p_w must be in (0, 1)")
    eta_w = chain.arm_efficiency
    pdark = chain.dark_click_prob if include_dark else 0.0
    if target_pw <= pdark:
        raise InvalidParameterError(
            f"target p_w {target_pw} is below the dark click floor {pdark:.2e}")
    # (1-p_w) = (1-pdark)(1-p)/(1-p(1-eta_w))
    r = (1.0 - target_pw) / (1.0 - pdark)
    p = (1.0 - r) / (1.0 - r * (1.0 - eta_w))
    return float(p)


# ---------------------------------------------------------------------------
# Coincidence statistics
# ---------------------------------------------------------------------------

def _binomial_err(k: float, n: float) -> float:
    if n <= 0:
        return math.nan
    phat = k / n
    return math.sqrt(max(phat * (1.0 - phat), 0.0) / n)


@dataclass
class CoincidenceStats:
    """Trial-level counts and the derived DLCZ counting statistics.

    n_w counts trials with a write click, n_r trials with any read click,
    n_wr trials with both, n_wr1/n_wr2 write+individual-detector pairs
    and n_wr1r2 triple coincidences.
    """

    trials: int = 0
    n_w: int = 0
    n_r: int = 0
    n_wr: int = 0
    n_wr1: int = 0
    n_wr2: int = 0
    n_wr1r2: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.n_wr > min(self.n_w, self.n_r):
            raise InvalidParameterError("n_wr cannot exceed min(n_w, n_r)")
        if self.n_wr1r2 > min(self.n_wr1, self.n_wr2):
            raise InvalidParameterError("triples cannot exceed pairwise counts")
        for name in ("trials", "n_w", "n_r", "n_wr", "n_wr1", "n_wr2", "n_wr1r2"):
            if getattr(self, name) < 0:
                raise InvalidParameterError(f"{name} must be >= 0")

    # -- accumulation ---------------------------------------------------

    @classmethod
    def from_outcomes(cls, outcomes) -> "CoincidenceStats":
        stats = cls()
        count = 0
        for o in outcomes:
            count += 1
            w, r1, r2 = o.write_click, o.read1, o.read2
            stats.trials += 1
            stats.n_w += w
            stats.n_r += r1 or r2
            stats.n_wr += w and (r1 or r2)
            stats.n_wr1 += w and r1
            stats.n_wr2 += w and r2
            stats.n_wr1r2 += w and r1 and r2
        if count == 0:
            raise EmptyStreamError("no trials to accumulate")
        return stats

    @classmethod
    def from_arrays(cls, trials: int, write_click, read1, read2) -> "CoincidenceStats":
        """Array form: boolean click arrays over the heralded/gated trials
        plus the total trial count (unlisted trials had no clicks)."""
        if trials <= 0:
            raise EmptyStreamError("no trials to accumulate")
        w = np.asarray(write_click, dtype=bool)
        r1 = np.asarray(read1, dtype=bool)
        r2 = np.asarray(read2, dtype=bool)
        return cls(
            trials=int(trials),
            n_w=int(w.sum()),
            n_r=int((r1 | r2).sum()),
            n_wr=int((w & (r1 | r2)).sum()),
            n_wr1=int((w & r1).sum()),
            n_wr2=int((w & r2).sum()),
            n_wr1r2=int((w & r1 & r2).sum()),
        )

    def merge(self, other: "CoincidenceStats") -> "CoincidenceStats":
        """Associative, commutative merge of two count records."""
        return CoincidenceStats(
            trials=self.trials + other.trials,
            n_w=self.n_w + other.n_w,
            n_r=self.n_r + other.n_r,
            n_wr=self.n_wr + other.n_wr,
            n_wr1=self.n_wr1 + other.n_wr1,
            n_wr2=self.n_wr2 + other.n_wr2,
            n_wr1r2=self.n_wr1r2 + other.n_wr1r2,
        )

    # -- derived quantities ----------------------------------------------

    @property
    def p_w(self) -> float:
        return self.n_w / self.trials if self.trials else math.nan

    @property
    def p_w_err(self) -> float:
        return _binomial_err(self.n_w, self.trials)

    @property
    def eta_ret_defined(self) -> bool:
        return self.n_w > 0

    @property
    def eta_ret(self):
        """p_wr / p_w; None when no write clicks were recorded."""
        if not self.eta_ret_defined:
            return None
        return self.n_wr / self.n_w

    @property
    def eta_ret_err(self):
        if not self.eta_ret_defined:
            return None
        return _binomial_err(self.n_wr, self.n_w)

    # -- serialisation ----------------------------------------------------

    CSV_COLUMNS = ("trials", "n_w", "n_r", "n_wr", "n_wr1", "n_wr2", "n_wr1r2",
                   "p_w", "p_w_err", "eta_ret", "eta_ret_err")

    def to_csv_row(self) -> list:
        eta = self.eta_ret
        eta_err = self.eta_ret_err
        return [self.trials, self.n_w, self.n_r, self.n_wr, self.n_wr1,
                self.n_wr2, self.n_wr1r2, self.p_w, self.p_w_err,
                math.nan if eta is None else eta,
                math.nan if eta_err is None else eta_err]

    def to_kv_text(self) -> str:
        lines = [f"{k} = {v!r}" for k, v in zip(self.CSV_COLUMNS, self.to_csv_row())]
        return "\n".join(lines) + "\n"


def accumulate(outcomes) -> CoincidenceStats:
    """Fold a stream of TrialOutcome into counting statistics."""
    return CoincidenceStats.from_outcomes(outcomes)


def antibunching_alpha(stats: CoincidenceStats) -> tuple[float, float]:
    """Heralded read-field autocorrelation alpha with its standard error.

    alpha = p_{w,r1,r2} p_w / (p_{w,r1} p_{w,r2}); < 1 is nonclassical,
    0 for ideal single photons.  The error propagates Poisson counting
    uncertainties of all four counts.
    """
    if stats.n_wr1 == 0 or stats.n_wr2 == 0:
        raise InsufficientStatisticsError(
            "alpha needs at least one (w, r1) and one (w, r2) coincidence")
    alpha = stats.n_wr1r2 * stats.n_w / (stats.n_wr1 * stats.n_wr2)
    if stats.n_wr1r2 > 0:
        rel = math.sqrt(1.0 / stats.n_wr1r2 + 1.0 / stats.n_wr1
                        + 1.0 / stats.n_wr2 + 1.0 / stats.n_w)
        err = alpha * rel
    else:
        # zero triples: quote the one-count scale as the uncertainty
        err = stats.n_w / (stats.n_wr1 * stats.n_wr2)
    return float(alpha), float(err)


def alpha_model_curve(p: float, c: float) -> float:
    """Model alpha(p) = 2p(2c(1+p) - p) / (c(1+p))^2.

    ``c`` is the proportionality factor between the real and ideal
    write-read cross-correlation; c = 1 recovers the loss-independent
    two-mode-squeezed prediction (alpha -> 4p/c for p -> 0).
    """
    if not (0.0 < p < 1.0):
        raise InvalidParameterError(f"p must be in (0, 1), got {p}")
    if not (0.0 < c <= 1.0):
        raise InvalidParameterError(f"c must be in (0, 1], got {c}")
    return 2.0 * p * (2.0 * c * (1.0 + p) - p) / (c * (1.0 + p)) ** 2


def g2_cross(stats: CoincidenceStats) -> tuple[float, float]:
    """Write-read cross correlation p_wr / (p_w p_r) with standard error."""
    if stats.n_w == 0 or stats.n_r == 0:
        raise InsufficientStatisticsError("g2 needs write and read clicks")
    g2 = stats.n_wr * stats.trials / (stats.n_w * stats.n_r)
    if stats.n_wr > 0:
        rel = math.sqrt(1.0 / stats.n_wr + 1.0 / stats.n_w + 1.0 / stats.n_r)
        err = g2 * rel
    else:
        err = stats.trials / (stats.n_w * stats.n_r)
    return float(g2), float(err)


@dataclass(frozen=True)
class SnrResult:
    snr: float
    peak_value: float
    background_mean: float
    peak_fit: object = field(default=None, compare=False)


def snr_at_rephasing(times, etas, background_region, peak_region,
                     errs=None) -> SnrResult:
    """Peak of the fitted rephasing divided by the mean background.

    Regions are explicit (t_min, t_max) intervals.  The peak is the
    maximum of a Gaussian fit over the peak region (raw maximum when the
    region holds too few points for a fit).
    """
    times = np.asarray(times, dtype=float)
    etas = np.asarray(etas, dtype=float)
    bg_mask = (times >= background_region[0]) & (times <= background_region[1])
    pk_mask = (times >= peak_region[0]) & (times <= peak_region[1])
    if not np.any(bg_mask):
        raise RegionError("background region contains no samples")
    if not np.any(pk_mask):
        raise RegionError("peak region contains no samples")
    background = float(etas[bg_mask].mean())
    pk_times, pk_vals = times[pk_mask], etas[pk_mask]
    pk_errs = None if errs is None else np.asarray(errs, dtype=float)[pk_mask]
    fit = None
    if len(pk_times) >= 5:
        try:
            fit = gaussian_peak_fit(pk_times, pk_vals, sigma=pk_errs,
                                    offset=background)
            peak_value = fit.peak_value
        except RuntimeError:
            peak_value = float(pk_vals.max())
    else:
        peak_value = float(pk_vals.max())
    if background <= 0:
        raise RegionError("background mean is not positive; SNR undefined")
    return SnrResult(snr=peak_value / background, peak_value=peak_value,
                     background_mean=background, peak_fit=fit)
