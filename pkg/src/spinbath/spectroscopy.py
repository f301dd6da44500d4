"""
Dynamical-decoupling noise spectroscopy.

A CPMG-N filter F(w t)/w^2 is peaked at w0 = pi N / t, so in the delta-filter approximation

    S(w0) = -2 ln L(t) / (t P_e^2)

maps every measured L(t) onto one spectral sample. Only this first harmonic is used for extraction;
predictions integrate the full filter of the target sequence.
"""
import logging

import numpy as np

from .dd_sequences import PulseSequence, filter_function
from .errors import SpectroscopyInputError
from .noise_model import OMEGA_SPAN, NoiseSpectrum, gauss_legendre, gaussian_coherence_freq
from .types import CoherenceCurve, Extrapolation, QualityFlag

logger = logging.getLogger(__name__)

UNIT_TOLERANCE = 1e-9
COVERAGE_THRESHOLD = 0.9


def extract_spectrum(
    curve: CoherenceCurve,
    N: int,
    P_e: float,
    high_extrapolation: Extrapolation = Extrapolation.POWER_LAW,
    low_extrapolation: Extrapolation = Extrapolation.HOLD,
) -> NoiseSpectrum:
    """
    Effective spectrum from CPMG-N coherence sampled over total times.

    Args:
        curve: |L| at several total times; t = 0 samples are skipped
        N: number of pulses of the measuring sequence
        P_e: electron-polarization difference of the qubit transition

    Returns:
        Spectrum on the ascending grid w0 = pi N / t

    Raises:
        SpectroscopyInputError: for L outside (0, 1], repeated times, N < 1 or P_e = 0
    """
    if N < 1:
        raise SpectroscopyInputError(f"Extraction needs a CPMG pulse number N >= 1, got {N}")
    if P_e == 0:
        raise SpectroscopyInputError("P_e = 0: the qubit does not couple to the noise, nothing to extract")

    keep = curve.times > 0
    t = curve.times[keep]
    magnitude = np.abs(curve.values[keep])
    if len(t) < 2:
        raise SpectroscopyInputError(f"Need at least two non-zero times, got {len(t)}")
    if np.any(np.diff(t) <= 0):
        raise SpectroscopyInputError("Times must be strictly increasing: repeated times map onto the same frequency")
    if np.any(magnitude <= 0) or np.any(magnitude > 1 + UNIT_TOLERANCE):
        bad = magnitude[(magnitude <= 0) | (magnitude > 1 + UNIT_TOLERANCE)][0]
        raise SpectroscopyInputError(f"Coherence values must lie in (0, 1], got {bad:.12g}")

    with np.errstate(divide="ignore"):
        S = np.where(magnitude >= 1 - UNIT_TOLERANCE, 0.0, -2 * np.log(magnitude) / (t * P_e ** 2))
    omega0 = np.pi * N / t
    order = np.argsort(omega0)
    spectrum = NoiseSpectrum(omegas=omega0[order], values=S[order],
                             high_extrapolation=high_extrapolation, low_extrapolation=low_extrapolation,
                             metadata={**curve.metadata, "extraction_N": N, "P_e": P_e})
    logger.info(f"Extracted {len(S)} spectral points over w = {omega0.min():.4g}..{omega0.max():.4g} rad/s "
                f"from CPMG-{N}")
    return spectrum


def coverage(spectrum: NoiseSpectrum, seq: PulseSequence, t: float) -> float:
    """
    Share of the filter weight F(w t)/w^2 that falls inside the sampled band of the spectrum.

    The total weight int_0^inf F(w t)/w^2 dw equals pi t for every sequence of ideal pi pulses.
    """
    if t <= 0:
        return 1.0
    lo, hi = spectrum.omegas[0], min(spectrum.omegas[-1], OMEGA_SPAN * np.pi * max(seq.N, 1) / t)
    if hi <= lo:
        return 0.0
    n_cells = int(np.ceil((hi - lo) / (np.pi / (2 * t))))
    omega, w = gauss_legendre(np.linspace(lo, hi, n_cells + 1))
    with np.errstate(divide="ignore", invalid="ignore"):
        integrand = np.where(omega > 0, filter_function(seq, omega * t) / omega ** 2, t ** 2 * seq.net_area ** 2)
    return float(np.sum(w * integrand) / (np.pi * t))


def predict_decoherence(
    spectrum: NoiseSpectrum,
    seq: PulseSequence,
    P_e: float,
    t_grid: np.ndarray,
    coverage_threshold: float = COVERAGE_THRESHOLD,
) -> CoherenceCurve:
    """
    Gaussian-model coherence of `seq` under an (extracted) spectrum.

    Points whose filter weight mostly lies outside the sampled band are still computed through the
    extrapolation, and the curve is flagged LOW_COVERAGE.
    """
    t_grid = np.asarray(t_grid, dtype=np.float64)
    values = gaussian_coherence_freq(spectrum, seq, P_e, t_grid)
    shares = np.array([coverage(spectrum, seq, float(t)) for t in t_grid])
    curve = CoherenceCurve(times=t_grid, values=values,
                           metadata={"sequence": seq.name, "P_e": P_e, "coverage": shares,
                                     **{k: v for k, v in spectrum.metadata.items() if k == "extraction_N"}})
    low = shares < coverage_threshold
    if np.any(low):
        curve.flags.add(QualityFlag.LOW_COVERAGE)
        logger.warning(f"{seq.name}: {int(np.sum(low))} of {len(t_grid)} points have less than "
                       f"{coverage_threshold:.0%} of the filter weight inside the spectrum band "
                       f"(min {shares.min():.1%})")
    return curve


def relative_log_error(reference: CoherenceCurve, prediction: CoherenceCurve, floor: float = 1e-6) -> float:
    """
    max |ln|L_pred| - ln|L_ref|| / |ln|L_ref|| over times where floor < |L_ref| < 1 - floor.
    """
    ref = np.abs(reference.values)
    pred = np.abs(np.interp(reference.times, prediction.times, np.abs(prediction.values)))
    usable = (ref > floor) & (ref < 1 - floor) & (pred > 0)
    if not np.any(usable):
        return 0.0
    log_ref = np.log(ref[usable])
    return float(np.max(np.abs(np.log(pred[usable]) - log_ref) / np.abs(log_ref)))
