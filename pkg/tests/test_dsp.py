import math

import numpy as np
import pytest

from hopm import dsp

FS = 512e3


def _tone(amp, f, n, phase=0.0, fn=np.cos):
    t = np.arange(n) / FS
    return amp * fn(2 * math.pi * f * t + phase)


def _settled(iq, cutoff):
    return iq.tail(10.0 / (2 * math.pi * cutoff))


# ---------------------------------------------------------------- lock-in

@pytest.mark.parametrize("fn,expect", [(np.cos, (3.0, 0.0)), (np.sin, (0.0, 3.0))])
def test_lockin_gain_and_quadrature(fn, expect):
    f0, fc = 30e3, 1500.0
    x = _tone(3.0, f0, int(0.02 * FS), fn=fn)
    iq = _settled(dsp.lock_in(x, FS, 2 * math.pi * f0, 0.0, fc, 32), fc)
    # every settled sample within 0.1% of the amplitude
    assert np.max(np.abs(iq.i_vals - expect[0])) < 3e-3
    assert np.max(np.abs(iq.q_vals - expect[1])) < 3e-3


def test_lockin_harmonic_rejection():
    f0 = 32e3
    fc = f0 / 100
    x = _tone(2.0, f0, int(0.05 * FS)) + _tone(5.0, 3 * f0, int(0.05 * FS))
    iq = _settled(dsp.lock_in(x, FS, 2 * math.pi * f0, 0.0, fc, 16), fc)
    assert np.mean(iq.i_vals) == pytest.approx(2.0, rel=1e-3)
    leak = max(np.max(np.abs(iq.i_vals - 2.0)), np.max(np.abs(iq.q_vals)))
    assert 20 * math.log10(leak / 2.0) < -40


def test_lockin_phase_rotation():
    """Advancing the demod phase by d rotates (I, Q) by +d (see convention)."""
    f0, fc = 30e3, 1500.0
    x = _tone(1.0, f0, int(0.02 * FS), phase=0.4)
    z = []
    for ph in (0.0, 0.9):
        iq = _settled(dsp.lock_in(x, FS, 2 * math.pi * f0, ph, fc, 32), fc)
        z.append(complex(np.mean(iq.i_vals), np.mean(iq.q_vals)))
    rot = np.angle(z[1] / z[0])
    assert rot == pytest.approx(0.9, abs=1e-3)
    assert abs(z[1]) == pytest.approx(abs(z[0]), rel=1e-3)


def test_lockin_linearity():
    rng = np.random.default_rng(3)
    x, y = rng.standard_normal((2, 64 * 200))
    w = 2 * math.pi * 30e3
    a = dsp.lock_in(2.5 * x - 0.5 * y, FS, w, 0.3, 1500.0, 64)
    b = dsp.lock_in(x, FS, w, 0.3, 1500.0, 64)
    c = dsp.lock_in(y, FS, w, 0.3, 1500.0, 64)
    np.testing.assert_allclose(a.i_vals, 2.5 * b.i_vals - 0.5 * c.i_vals, atol=1e-12)
    np.testing.assert_allclose(a.q_vals, 2.5 * b.q_vals - 0.5 * c.q_vals, atol=1e-12)


def test_lockin_reference_phase_matches_frequency_form():
    n = 64 * 100
    w = 2 * math.pi * 30e3
    x = _tone(1.0, 30e3, n, phase=1.1)
    a = dsp.lock_in(x, FS, w, 0.2, 1500.0, 32)
    b = dsp.lock_in(x, FS, None, 0.2, 1500.0, 32, ref_phase=w * np.arange(n) / FS)
    np.testing.assert_allclose(a.i_vals, b.i_vals, atol=1e-12)


def test_lockin_rejects_cutoff_above_nyquist():
    with pytest.raises(ValueError, match="Nyquist"):
        dsp.lock_in(np.zeros(1024), FS, 1e5, 0.0, 9e3, 32)
    with pytest.raises(ValueError):
        dsp.lock_in(np.zeros(1024), FS, 2 * math.pi * 300e3, 0.0, 1e3, 32)


def test_lockin_deterministic():
    x = np.random.default_rng(0).standard_normal(8192)
    a = dsp.lock_in(x, FS, 1e5, 0.0, 1e3, 32)
    b = dsp.lock_in(x, FS, 1e5, 0.0, 1e3, 32)
    assert a.i_vals.tobytes() == b.i_vals.tobytes()


def test_iq_series_length_check():
    with pytest.raises(ValueError):
        dsp.IqSeries(np.zeros(3), np.zeros(4), 1.0, 0.0)


# ---------------------------------------------------------------- IIR sections

@pytest.mark.parametrize("kind", ["lowpass", "highpass"])
def test_iir_minus_3db_at_cutoff(kind):
    fc = 1000.0
    n = int(0.5 * FS)
    x = _tone(1.0, fc, n)
    y = dsp.iir_first_order(x, fc, FS, kind)[n // 2:]
    amp = math.sqrt(2 * np.mean(y ** 2))
    assert amp == pytest.approx(1 / math.sqrt(2), rel=0.01)
    assert abs(dsp.first_order_response(fc, fc, FS, kind)) == pytest.approx(1 / math.sqrt(2),
                                                                             rel=1e-9)


def test_highpass_rejects_dc():
    y = dsp.iir_first_order(np.ones(int(FS)), 10.0, FS, "highpass")
    assert abs(y[-1]) < 1e-12 * 1e6


def test_iir_range_checks():
    with pytest.raises(ValueError):
        dsp.iir_first_order(np.zeros(10), 0.0, FS)
    with pytest.raises(ValueError):
        dsp.iir_first_order(np.zeros(10), FS / 2, FS)
    with pytest.raises(ValueError):
        dsp.iir_first_order(np.zeros(10), 100.0, FS, "bandpass")


def test_noise_shaping_cascade_flat_in_band():
    fs = 16e3
    asd = 10e-12
    rng = np.random.default_rng(11)
    w = asd * math.sqrt(fs / 2) * rng.standard_normal(int(200 * fs))
    y = dsp.iir_first_order(dsp.iir_first_order(w, 1e3, fs, "lowpass"), 1.0, fs, "highpass")
    s = dsp.psd_welch(y, fs, dsp.seg_len_for(2.0, fs))
    band = (s.freqs >= 10) & (s.freqs <= 500)
    h2 = np.abs(dsp.first_order_response(s.freqs[band], 1e3, fs)
                * dsp.first_order_response(s.freqs[band], 1.0, fs, "highpass")) ** 2
    # the shaped spectrum is flat within 1 dB (the 1 kHz pole alone costs
    # 0.97 dB at 500 Hz) and the estimate follows |H|^2 in 10 Hz band averages
    assert np.max(np.abs(10 * np.log10(h2))) < 1.0
    k = np.ones(5) / 5
    est = np.convolve(s.psd[band], k, mode="valid")
    model = asd ** 2 * np.convolve(h2, k, mode="valid")
    assert np.max(np.abs(10 * np.log10(est / model))) < 0.3


# ---------------------------------------------------------------- PSD

def _periodogram_average(x, fs, seg, overlap):
    """Independent Welch: Hann, constant detrend, density scaling, one-sided."""
    step = int(seg * (1 - overlap))
    win = 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(seg) / seg)
    acc = np.zeros(seg // 2 + 1)
    k = 0
    for start in range(0, len(x) - seg + 1, step):
        s = x[start:start + seg]
        s = s - s.mean()
        acc += np.abs(np.fft.rfft(s * win)) ** 2
        k += 1
    p = acc / (k * fs * np.sum(win ** 2))
    p[1:-1] *= 2
    return p


def test_psd_matches_independent_estimator():
    rng = np.random.default_rng(5)
    x = rng.standard_normal(50_000)
    s = dsp.psd_welch(x, 1000.0, 1000, 0.5)
    np.testing.assert_allclose(s.psd, _periodogram_average(x, 1000.0, 1000, 0.5), rtol=1e-9)


def test_psd_sine_power():
    fs, seg = 1000.0, 1000
    x = np.sin(2 * math.pi * 50.0 * np.arange(100 * seg) / fs)
    s = dsp.psd_welch(x, fs, seg)
    assert dsp.tone_power(s, 50.0) == pytest.approx(0.5, rel=0.01)
    assert dsp.tone_amplitude(s, 50.0) == pytest.approx(1.0, rel=0.005)


def test_psd_white_noise_level():
    fs, sigma = 2000.0, 1.7
    x = sigma * np.random.default_rng(9).standard_normal(400 * 512)
    s = dsp.psd_welch(x, fs, 512)
    assert s.n_avg >= 64
    assert np.mean(s.psd[1:-1]) == pytest.approx(sigma ** 2 / (fs / 2), rel=0.03)


def test_psd_parseval():
    x = np.random.default_rng(21).standard_normal(1 << 18)
    s = dsp.psd_welch(x, 1.0, 4096)
    assert np.sum(s.psd) * s.df == pytest.approx(np.var(x), rel=0.01)


def test_psd_frequency_grid_and_errors():
    s = dsp.psd_welch(np.random.default_rng(0).standard_normal(4096), 100.0, 256)
    assert s.freqs[0] == 0.0 and np.all(np.diff(s.freqs) > 0)
    with pytest.raises(ValueError):
        dsp.psd_welch(np.zeros(100), 1.0, 200)
    with pytest.raises(ValueError):
        dsp.psd_welch(np.zeros(1000), 1.0, 200, overlap=1.0)


def test_psd_time_shift_invariance():
    x = np.random.default_rng(2).standard_normal(1 << 17)
    a = dsp.psd_welch(x, 1.0, 2048).psd
    b = dsp.psd_welch(np.roll(x, 777), 1.0, 2048).psd
    assert np.mean(a) == pytest.approx(np.mean(b), rel=0.02)
