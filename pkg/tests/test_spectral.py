"""Fourier analysis: FFT vs the exact DFT oracle, dominance detection,
band RMSE arithmetic, and interpolation-distortion reports."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ctformer import spectral as S
from ctformer.errors import ConfigError, ContractError


# --- fft ------------------------------------------------------------------


def test_fft_dc_only():
    assert np.allclose(S.fft([1.0, 1.0, 1.0, 1.0]), [4.0, 0.0, 0.0, 0.0], atol=1e-12)


def test_fft_nyquist_tone():
    assert np.allclose(S.fft([1.0, -1.0, 1.0, -1.0]), [0.0, 0.0, 4.0, 0.0], atol=1e-12)


def test_fft_matches_naive_dft():
    rng = np.random.default_rng(42)
    x = rng.normal(size=64)
    assert np.max(np.abs(S.fft(x) - S.naive_dft(x))) < 1e-9


def test_fft_matches_naive_dft_up_to_1024():
    rng = np.random.default_rng(9)
    for n in (8, 128, 512, 1024):
        x = rng.normal(size=n)
        assert np.max(np.abs(S.fft(x) - S.naive_dft(x))) < 1e-9


def test_fft_zero_pads_non_power_of_two():
    x = np.ones(5)
    out = S.fft(x)
    assert out.size == 8
    padded = np.concatenate([x, np.zeros(3)])
    assert np.max(np.abs(out - S.naive_dft(padded))) < 1e-9


def test_fft_empty_input_errors():
    with pytest.raises(ContractError):
        S.fft([])


def test_inverse_fft_roundtrip():
    rng = np.random.default_rng(3)
    x = rng.normal(size=256)
    assert np.max(np.abs(S.inverse_fft(S.fft(x)) - x)) < 1e-9


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1), st.sampled_from([4, 16, 64, 256, 1024]))
def test_parseval(seed, n):
    x = np.random.default_rng(seed).normal(size=n)
    spec = S.fft(x)
    time_energy = np.sum(x * x)
    freq_energy = np.sum(np.abs(spec) ** 2) / n
    assert abs(time_energy - freq_energy) < 1e-9 * max(1.0, time_energy)


# --- dominant frequency -----------------------------------------------------


def test_dominant_frequency_pure_two_cycle_sine():
    x = [0.0, 1.0, 0.0, -1.0, 0.0, 1.0, 0.0, -1.0]
    assert S.dominant_frequency(x) == 2


def test_dominant_frequency_constant_is_none():
    assert S.dominant_frequency(np.full(16, 5.0)) is None


def test_dominant_frequency_white_noise_mostly_none():
    nones = 0
    for seed in range(100):
        x = np.random.default_rng(seed).normal(size=256)
        if S.dominant_frequency(x, kappa=3.0) is None:
            nones += 1
    assert nones >= 95


def test_dominant_frequency_kappa_validation():
    with pytest.raises(ConfigError):
        S.dominant_frequency(np.arange(8.0), kappa=1.0)


def test_dominant_frequency_ignores_dc_offset():
    t = np.arange(48)
    x = 100.0 + np.sin(2 * np.pi * 4 * t / 48)
    assert S.dominant_frequency(x) == 4


# --- band rmse ---------------------------------------------------------------


def _spectrum(amps, n, rate=1.0):
    return S.AmplitudeSpectrum(n=n, amplitudes=np.asarray(amps, float), sample_rate=rate)


def test_band_rmse_identity():
    spec = _spectrum([1.0, 2.0, 3.0], n=4)
    assert S.band_rmse(spec, spec, (0.0, 0.5)) == 0.0


def test_band_rmse_constant_offset():
    true = _spectrum([1.0, 2.0, 3.0], n=4)
    pred = _spectrum([2.0, 3.0, 4.0], n=4)
    assert S.band_rmse(pred, true, (0.0, 0.6)) == pytest.approx(1.0)


def test_band_rmse_hand_example():
    # length-5 spectra, band covering bins {1, 2}, diffs (3, 4)
    true = _spectrum([0.0, 1.0, 1.0, 0.0, 0.0], n=8)
    pred = _spectrum([0.0, 4.0, 5.0, 0.0, 0.0], n=8)
    # bins 1, 2 sit at frequencies 1/8, 2/8
    value = S.band_rmse(pred, true, (0.1, 0.3))
    assert value == pytest.approx(2.5 * np.sqrt(2))
    assert value == pytest.approx(3.5355, abs=1e-4)


def test_band_rmse_empty_band_errors():
    spec = _spectrum([1.0, 2.0, 3.0], n=4)
    with pytest.raises(ContractError):
        S.band_rmse(spec, spec, (0.9, 1.0))


def test_band_rmse_mismatched_spectra_error():
    with pytest.raises(ContractError):
        S.band_rmse(_spectrum([1.0, 2.0], n=2), _spectrum([1.0, 2.0, 3.0], n=4), (0.0, 0.5))


# --- interpolation distortion -------------------------------------------------


def _oracle_attenuation_phase(x, r, k):
    """Independent time-domain oracle: np.interp + numpy's FFT."""
    n = len(x)
    coarse_pos = np.arange(0, n + 1, r)
    coarse = np.append(x[::r], x[0])  # periodic anchor
    rebuilt = np.interp(np.arange(n), coarse_pos, coarse)
    orig = np.fft.fft(x)
    interp = np.fft.fft(rebuilt)
    att = np.abs(interp[k]) / np.abs(orig[k])
    dphi = np.angle(interp[k]) - np.angle(orig[k])
    dphi = (dphi + np.pi) % (2 * np.pi) - np.pi
    return att, dphi


def test_interp_distortion_dc_survives():
    x = np.full(64, 3.0)
    report = S.interp_distortion_report(x, 4)
    assert report.attenuation[0] == pytest.approx(1.0, abs=1e-12)


def test_interp_distortion_matches_time_domain_oracle():
    n, r = 256, 4
    t = np.arange(n)
    for k in (4, 8, 16):
        x = np.sin(2 * np.pi * k * t / n + 0.3)
        report = S.interp_distortion_report(x, r)
        att_oracle, dphi_oracle = _oracle_attenuation_phase(x, r, k)
        assert abs(report.attenuation[k] - att_oracle) < 1e-9
        assert abs(report.phase_delay[k] - dphi_oracle) < 1e-9


def test_interp_distortion_midband_attenuates_without_phase_advance():
    n, r = 256, 4
    t = np.arange(n)
    k = 16  # mid-band: half the coarse Nyquist
    x = np.sin(2 * np.pi * k * t / n + 1.1)
    report = S.interp_distortion_report(x, r)
    assert report.attenuation[k] < 1.0
    assert report.phase_delay[k] <= 1e-9


def test_interp_distortion_attenuation_monotone_in_frequency():
    n, r = 256, 4
    t = np.arange(n)
    values = []
    for k in (4, 8, 12, 16, 20):  # all below the coarse Nyquist bin (32)
        x = np.sin(2 * np.pi * k * t / n + 0.7)
        values.append(S.interp_distortion_report(x, r).attenuation[k])
    assert all(v <= 1.0 + 1e-12 for v in values)
    assert all(values[i + 1] <= values[i] + 1e-12 for i in range(len(values) - 1))


def test_interp_distortion_r1_is_identity():
    rng = np.random.default_rng(12)
    x = rng.normal(size=64)
    report = S.interp_distortion_report(x, 1)
    finite = np.isfinite(report.attenuation)
    assert np.allclose(report.attenuation[finite], 1.0, atol=1e-9)


def test_interp_distortion_requires_divisible_length():
    with pytest.raises(ContractError):
        S.interp_distortion_report(np.ones(10), 4)


def test_wrap_phase_range():
    phi = np.array([-4 * np.pi, -np.pi, -0.5, 0.0, 0.5, np.pi, 4 * np.pi + 0.1])
    wrapped = S.wrap_phase(phi)
    assert (wrapped > -np.pi).all()
    assert (wrapped <= np.pi).all()
    assert wrapped[2] == pytest.approx(-0.5)
    assert wrapped[5] == pytest.approx(np.pi)
