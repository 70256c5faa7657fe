"""Discrete Fourier analysis for patch-length selection and distortion reports.

A radix-2 iterative FFT covers the fast path (inputs are zero-padded to the
next power of two), while an O(n^2) DFT provides exact spectra at the true
length for analysis and serves as the independent oracle in tests.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ContractError


@dataclass
class AmplitudeSpectrum:
    """One-sided amplitude spectrum |X_k| for k = 0 .. n//2."""

    n: int
    amplitudes: np.ndarray
    sample_rate: float = 1.0

    def frequencies(self) -> np.ndarray:
        """Bin frequencies in cycles per time unit."""
        return np.arange(self.amplitudes.size) * self.sample_rate / self.n


def _bit_reverse_indices(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.intp)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    return rev


def _fft_pow2(x: np.ndarray) -> np.ndarray:
    n = x.size
    a = x[_bit_reverse_indices(n)].astype(np.complex128)
    size = 2
    while size <= n:
        half = size // 2
        tw = np.exp(-2j * np.pi * np.arange(half) / size)
        a = a.reshape(n // size, size)
        even = a[:, :half]
        odd = a[:, half:] * tw
        a = np.concatenate([even + odd, even - odd], axis=1).reshape(n)
        size *= 2
    return a


def next_pow2(n: int) -> int:
    p = 1
    while p < n:
        p *= 2
    return p


def fft(x) -> np.ndarray:
    """Radix-2 FFT; non-power-of-two inputs are zero-padded to the next power
    of two (the returned array has the padded length)."""
    x = np.asarray(x)
    if x.size == 0:
        raise ContractError("fft: empty input")
    n = next_pow2(x.size)
    if n != x.size:
        x = np.concatenate([x, np.zeros(n - x.size, dtype=x.dtype)])
    return _fft_pow2(x.astype(np.complex128))


def inverse_fft(spectrum) -> np.ndarray:
    spectrum = np.asarray(spectrum, dtype=np.complex128)
    n = spectrum.size
    if n == 0:
        raise ContractError("inverse_fft: empty input")
    if next_pow2(n) != n:
        raise ContractError(f"inverse_fft: length {n} is not a power of two")
    return np.conj(_fft_pow2(np.conj(spectrum))) / n


def naive_dft(x) -> np.ndarray:
    """Direct O(n^2) DFT at the exact input length (the analysis oracle)."""
    x = np.asarray(x, dtype=np.complex128)
    n = x.size
    if n == 0:
        raise ContractError("naive_dft: empty input")
    out = np.empty(n, dtype=np.complex128)
    t = np.arange(n)
    # chunk the bin axis so the phase matrix stays modest for long inputs
    chunk = max(1, 4_000_000 // n)
    for k0 in range(0, n, chunk):
        k = np.arange(k0, min(k0 + chunk, n))
        out[k0 : k0 + k.size] = np.exp(-2j * np.pi * np.outer(k, t) / n) @ x
    return out


def _exact_dft(x: np.ndarray) -> np.ndarray:
    n = x.size
    if n and next_pow2(n) == n:
        return _fft_pow2(np.asarray(x, dtype=np.complex128))
    return naive_dft(x)


def amplitude_spectrum(x, sample_rate: float = 1.0) -> AmplitudeSpectrum:
    """One-sided amplitude spectrum at the exact input length."""
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        raise ContractError("amplitude_spectrum: empty input")
    spec = _exact_dft(x)
    half = x.size // 2 + 1
    return AmplitudeSpectrum(n=x.size, amplitudes=np.abs(spec[:half]), sample_rate=sample_rate)


def dominant_peak(amplitudes, kappa: float = 3.0):
    """Strong-peak test on a one-sided amplitude spectrum (DC excluded).

    Returns the bin index of the argmax over k in [1, n/2] when its amplitude
    reaches ``kappa`` times the quadratic mean of the other non-DC bins (the
    quadratic mean keeps white noise below threshold at the default kappa),
    otherwise None.
    """
    if kappa <= 1:
        raise ConfigError("dominant peak test: kappa must exceed 1")
    amplitudes = np.asarray(amplitudes, dtype=np.float64)
    if amplitudes.size <= 2:
        return None
    candidates = amplitudes[1:]
    peak = int(np.argmax(candidates))
    others = np.delete(candidates, peak)
    if candidates[peak] >= kappa * np.sqrt(np.mean(others * others)):
        return peak + 1
    return None


def dominant_frequency(x, kappa: float = 3.0):
    """Bin index of a strong spectral peak, or None when no peak stands out.

    The input is zero-centered first, so the DC bin never qualifies and
    constant inputs report no peak.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        raise ContractError("dominant_frequency: empty input")
    centered = x - x.mean()
    if not centered.any():
        return None
    return dominant_peak(amplitude_spectrum(centered).amplitudes, kappa)


def band_rmse(pred: AmplitudeSpectrum, true: AmplitudeSpectrum, band) -> float:
    """RMSE between amplitudes over bins whose frequency lies in [lo, hi)."""
    if pred.n != true.n or pred.sample_rate != true.sample_rate:
        raise ContractError(
            f"band_rmse: spectra disagree (n {pred.n}/{true.n}, "
            f"rate {pred.sample_rate}/{true.sample_rate})"
        )
    lo, hi = band
    freqs = pred.frequencies()
    in_band = (freqs >= lo) & (freqs < hi)
    if not in_band.any():
        raise ContractError(f"band_rmse: no bins in band [{lo}, {hi})")
    diff = pred.amplitudes[in_band] - true.amplitudes[in_band]
    return float(np.sqrt(np.mean(diff * diff)))


@dataclass
class InterpDistortionReport:
    """Per-bin amplitude ratio and phase difference of linear interpolation."""

    n: int
    factor: int
    attenuation: np.ndarray  # |interp| / |original|, nan where original ~ 0
    phase_delay: np.ndarray  # wrapped to (-pi, pi], nan where either ~ 0
    original: AmplitudeSpectrum
    interpolated: AmplitudeSpectrum


def subsample_interpolate(x, factor: int) -> np.ndarray:
    """Keep every ``factor``-th point and rebuild the fine grid by linear
    interpolation, treating the signal as periodic (the last segment
    interpolates toward the first coarse sample)."""
    x = np.asarray(x, dtype=np.float64)
    n = x.size
    if factor < 1:
        raise ConfigError("subsample_interpolate: factor must be >= 1")
    if n == 0 or n % factor != 0:
        raise ContractError(
            f"subsample_interpolate: factor {factor} does not divide length {n}"
        )
    if factor == 1:
        return x.copy()
    coarse = x[::factor]
    left = np.repeat(coarse, factor)
    right = np.repeat(np.roll(coarse, -1), factor)
    frac = np.tile(np.arange(factor) / factor, coarse.size)
    return left + (right - left) * frac


def wrap_phase(phi: np.ndarray) -> np.ndarray:
    """Wrap angles to (-pi, pi]."""
    wrapped = (phi + np.pi) % (2 * np.pi) - np.pi
    return np.where(wrapped == -np.pi, np.pi, wrapped)


def interp_distortion_report(
    x, factor: int, sample_rate: float = 1.0
) -> InterpDistortionReport:
    """Spectral fingerprint of subsample-then-linearly-interpolate.

    Compares the exact spectrum of the original fine-grid signal against the
    spectrum after keeping every ``factor``-th sample and filling the gaps by
    (periodic) linear interpolation. Bins where the original amplitude is
    negligible get nan entries instead of meaningless ratios.
    """
    x = np.asarray(x, dtype=np.float64)
    rebuilt = subsample_interpolate(x, factor)
    orig = _exact_dft(x)
    interp = _exact_dft(rebuilt)
    half = x.size // 2 + 1
    orig_h, interp_h = orig[:half], interp[:half]
    mag_orig = np.abs(orig_h)
    mag_interp = np.abs(interp_h)
    floor = 1e-12 * max(1.0, mag_orig.max())
    defined = mag_orig > floor
    attenuation = np.where(defined, mag_interp / np.where(defined, mag_orig, 1.0), np.nan)
    both = defined & (mag_interp > floor)
    raw_phase = np.angle(interp_h) - np.angle(orig_h)
    phase_delay = np.where(both, wrap_phase(raw_phase), np.nan)
    return InterpDistortionReport(
        n=x.size,
        factor=factor,
        attenuation=attenuation,
        phase_delay=phase_delay,
        original=AmplitudeSpectrum(x.size, mag_orig, sample_rate),
        interpolated=AmplitudeSpectrum(x.size, mag_interp, sample_rate),
    )
