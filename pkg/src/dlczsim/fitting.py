"""Model fits used by the analysis layer: peak shapes, decay envelopes, alpha(p)."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import curve_fit

from .errors import InvalidParameterError

FWHM_PER_SIGMA = 2.0 * math.sqrt(2.0 * math.log(2.0))


def _sanitize_sigma(sigma):
    """Counting errors of zero-count bins come out as 0; floor them to the
    smallest positive error so no point gets infinite weight."""
    if sigma is None:
        return None
    sigma = np.asarray(sigma, dtype=float)
    positive = sigma[np.isfinite(sigma) & (sigma > 0)]
    if len(positive) == 0:
        return None
    return np.where(np.isfinite(sigma) & (sigma > 0), sigma, positive.min())


@dataclass(frozen=True)
class PeakFit:
    center: float
    center_err: float
    fwhm: float
    fwhm_err: float
    amplitude: float  # height above the offset
    offset: float

    @property
    def peak_value(self) -> float:
        return self.offset + self.amplitude


def _gaussian(t, amp, center, sigma, offset):
    return offset + amp * np.exp(-((t - center) ** 2) / (2.0 * sigma**2))


def gaussian_peak_fit(times, values, sigma=None, offset=None) -> PeakFit:
    """Fit a Gaussian peak on a flat offset.

    ``sigma`` are per-point uncertainties (optional); ``offset`` pins the
    baseline instead of fitting it.  Falls back to the raw maximum when
    there are too few points for a four-parameter fit.
    """
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    sigma = _sanitize_sigma(sigma)
    if len(times) < 4:
        i = int(np.argmax(values))
        base = float(offset) if offset is not None else float(values.min())
        return PeakFit(center=float(times[i]), center_err=math.nan,
                       fwhm=math.nan, fwhm_err=math.nan,
                       amplitude=float(values[i]) - base, offset=base)

    base0 = float(np.median(values)) if offset is None else float(offset)
    i_max = int(np.argmax(values))
    amp0 = max(values[i_max] - base0, 1e-12)
    above = times[values > base0 + amp0 / 2]
    width0 = (above.max() - above.min()) / FWHM_PER_SIGMA if len(above) > 1 else \
        (times[-1] - times[0]) / 10
    width0 = max(width0, (times[1] - times[0]))

    if offset is None:
        def model(t, amp, center, s, off):
            return _gaussian(t, amp, center, s, off)
        p0 = [amp0, times[i_max], width0, base0]
    else:
        def model(t, amp, center, s):
            return _gaussian(t, amp, center, s, offset)
        p0 = [amp0, times[i_max], width0]

    popt, pcov = curve_fit(model, times, values, p0=p0, sigma=sigma,
                           absolute_sigma=sigma is not None, maxfev=20000)
    perr = np.sqrt(np.maximum(np.diag(pcov), 0.0))
    off = popt[3] if offset is None else float(offset)
    return PeakFit(center=float(popt[1]), center_err=float(perr[1]),
                   fwhm=float(abs(popt[2]) * FWHM_PER_SIGMA),
                   fwhm_err=float(perr[2] * FWHM_PER_SIGMA),
                   amplitude=float(popt[0]), offset=float(off))


@dataclass(frozen=True)
class DecayFit:
    tau: float  # 1/e time of the Gaussian envelope, s
    tau_err: float
    amplitude: float
    beat_weight: float
    beat_frequency: float  # rad/s


def standard_decay_fit(times, values, sigma=None, floor: float = 0.0,
                       p0_tau: float = 60e-6, p0_weight: float = 0.1,
                       p0_omega: float = 2e5) -> DecayFit:
    """Fit the no-gradient retrieval curve.

    Model: eta(t) = A exp(-(t/tau)^2) * |(1-w) + w e^{i Omega t}|^2 + floor,
    a Gaussian motional envelope modulated by the two-class beat.
    """
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    sigma = _sanitize_sigma(sigma)

    def model(t, amp, tau, w, omega):
        beat = (1 - w) ** 2 + w**2 + 2 * w * (1 - w) * np.cos(omega * t)
        return amp * np.exp(-((t / tau) ** 2)) * beat + floor

    p0 = [max(values.max() - floor, 1e-6), p0_tau, p0_weight, p0_omega]
    bounds = ([0.0, 1e-6, 0.0, 0.0], [1.0, 1e-2, 0.49, 1e8])
    popt, pcov = curve_fit(model, times, values, p0=p0, sigma=sigma,
                           absolute_sigma=sigma is not None, bounds=bounds,
                           maxfev=40000)
    perr = np.sqrt(np.maximum(np.diag(pcov), 0.0))
    return DecayFit(tau=float(popt[1]), tau_err=float(perr[1]),
                    amplitude=float(popt[0]), beat_weight=float(popt[2]),
                    beat_frequency=float(popt[3]))


def fit_alpha_proportionality(p_values, alphas, errs=None) -> tuple[float, float]:
    """Fit the single proportionality factor c of the alpha(p) model curve."""
    from .photon_stats import alpha_model_curve

    p_values = np.asarray(p_values, dtype=float)
    alphas = np.asarray(alphas, dtype=float)
    if np.any(p_values <= 0) or np.any(p_values >= 1):
        raise InvalidParameterError("p values must lie in (0, 1)")

    errs = _sanitize_sigma(errs)

    def model(p, c):
        return np.array([alpha_model_curve(pi, c) for pi in p])

    popt, pcov = curve_fit(model, p_values, alphas, p0=[0.5], sigma=errs,
                           absolute_sigma=errs is not None,
                           bounds=([1e-6], [1.0]), maxfev=20000)
    return float(popt[0]), float(math.sqrt(max(pcov[0, 0], 0.0)))
