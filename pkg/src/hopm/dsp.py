"""Lock-in demodulation, first-order IIR sections and Welch PSD estimation."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit
from scipy import signal


@dataclass
class IqSeries:
    i_vals: np.ndarray
    q_vals: np.ndarray
    fs_out: float
    demod_phase: float
    omega_demod: float | None = None
    t: np.ndarray | None = None

    def __post_init__(self):
        self.i_vals = np.asarray(self.i_vals, dtype=float)
        self.q_vals = np.asarray(self.q_vals, dtype=float)
        if self.i_vals.shape != self.q_vals.shape:
            raise ValueError("I and Q must have equal length")
        if self.t is None:
            self.t = np.arange(len(self.i_vals)) / self.fs_out

    def __len__(self):
        return len(self.i_vals)

    def tail(self, t_from: float) -> "IqSeries":
        m = self.t >= t_from
        return IqSeries(self.i_vals[m], self.q_vals[m], self.fs_out, self.demod_phase,
                        self.omega_demod, self.t[m])


@dataclass
class Spectrum:
    freqs: np.ndarray
    psd: np.ndarray
    n_avg: int
    window: str = "hann"
    units: str = "1"

    @property
    def df(self) -> float:
        return float(self.freqs[1] - self.freqs[0])

    def band(self, f_lo: float, f_hi: float) -> "Spectrum":
        m = (self.freqs >= f_lo) & (self.freqs <= f_hi)
        return Spectrum(self.freqs[m], self.psd[m], self.n_avg, self.window, self.units)

    def asd(self) -> np.ndarray:
        return np.sqrt(self.psd)


# --------------------------------------------------------------------------
# first-order sections

def first_order_coeffs(cutoff: float, fs: float, kind: str = "lowpass"):
    """Bilinear-transform first-order section with frequency prewarping, so the
    -3 dB point lands exactly on ``cutoff``.  Returns (b, a)."""
    if not 0 < cutoff < fs / 2:
        raise ValueError(f"cutoff {cutoff:g} Hz outside (0, fs/2 = {fs / 2:g} Hz)")
    k = math.tan(math.pi * cutoff / fs)
    a = np.array([1.0, (k - 1.0) / (k + 1.0)])
    if kind == "lowpass":
        b = np.array([k, k]) / (k + 1.0)
    elif kind == "highpass":
        b = np.array([1.0, -1.0]) / (k + 1.0)
    else:
        raise ValueError(f"unknown filter kind {kind!r}")
    return b, a


def iir_first_order(x, cutoff: float, fs: float, kind: str = "lowpass") -> np.ndarray:
    b, a = first_order_coeffs(cutoff, fs, kind)
    return signal.lfilter(b, a, np.asarray(x, dtype=float))


def first_order_response(f, cutoff: float, fs: float, kind: str = "lowpass"):
    """Complex frequency response of the discrete section at ``f`` (Hz)."""
    b, a = first_order_coeffs(cutoff, fs, kind)
    _, h = signal.freqz(b, a, worN=np.atleast_1d(np.asarray(f, dtype=float)), fs=fs)
    return h


# --------------------------------------------------------------------------
# lock-in

@njit(cache=True)
def lia_sample(x, ref, b0, b1, a1, state):
    """Mix one sample with 2cos / 2sin of ``ref`` and push it through two
    cascaded first-order low-pass sections per channel.

    ``state`` = [xI, y1I, y2I, xQ, y1Q, y2Q] (previous input, stage-1 and
    stage-2 outputs), updated in place; the outputs are state[2], state[5].
    """
    mi = 2.0 * x * math.cos(ref)
    mq = 2.0 * x * math.sin(ref)
    y1 = b0 * mi + b1 * state[0] - a1 * state[1]
    state[2] = b0 * y1 + b1 * state[1] - a1 * state[2]
    state[0] = mi
    state[1] = y1
    y1 = b0 * mq + b1 * state[3] - a1 * state[4]
    state[5] = b0 * y1 + b1 * state[4] - a1 * state[5]
    state[3] = mq
    state[4] = y1


@njit(cache=True)
def _mix_filter(x, ref_phase, b0, b1, a1, state, i_out, q_out, decim):
    """Lock-in over a whole array, keeping the last sample of each block."""
    j = 0
    for i in range(x.shape[0]):
        lia_sample(x[i], ref_phase[i], b0, b1, a1, state)
        if (i + 1) % decim == 0:
            i_out[j] = state[2]
            q_out[j] = state[5]
            j += 1
    return j


def check_lockin(fs: float, omega_demod: float | None, lpf_cutoff: float, decim: int):
    if decim < 1 or int(decim) != decim:
        raise ValueError("decim must be a positive integer")
    if omega_demod is not None and not omega_demod / (2 * math.pi) < fs / 2:
        raise ValueError("demodulation frequency above Nyquist")
    fs_out = fs / decim
    if not 0 < lpf_cutoff < fs_out / 2:
        raise ValueError(f"lpf_cutoff {lpf_cutoff:g} Hz not below decimated Nyquist "
                         f"{fs_out / 2:g} Hz")
    return fs_out


def lock_in(x, fs: float, omega_demod: float | None, demod_phase: float, lpf_cutoff: float,
            decim: int, ref_phase=None, t0: float = 0.0) -> IqSeries:
    """Digital lock-in: I = LPF(2x cos(wt + phase)), Q = LPF(2x sin(wt + phase)).

    The low-pass is two cascaded first-order sections at ``lpf_cutoff``.  If
    ``ref_phase`` (per-sample reference phase, e.g. the pump phase of a
    frequency-hopped trace) is given it replaces ``omega_demod * t``.
    Output sample k is the filter state at the end of input block k.
    """
    x = np.asarray(x, dtype=float)
    fs_out = check_lockin(fs, omega_demod, lpf_cutoff, decim)
    if ref_phase is None:
        if omega_demod is None:
            raise ValueError("need omega_demod or ref_phase")
        ref = omega_demod * (t0 + np.arange(len(x)) / fs) + demod_phase
    else:
        ref = np.asarray(ref_phase, dtype=float) + demod_phase
    b, a = first_order_coeffs(lpf_cutoff, fs)
    n_out = len(x) // decim
    i_out = np.empty(n_out)
    q_out = np.empty(n_out)
    _mix_filter(x, ref, b[0], b[1], a[1], np.zeros(6), i_out, q_out, int(decim))
    t = t0 + (np.arange(n_out) + 1) * decim / fs
    return IqSeries(i_out, q_out, fs_out, demod_phase, omega_demod, t)


def lockin_response(f, lpf_cutoff: float, fs: float):
    """Baseband transfer of the lock-in post-filter (two sections)."""
    return first_order_response(f, lpf_cutoff, fs) ** 2


# --------------------------------------------------------------------------
# PSD

def psd_welch(x, fs: float, seg_len: int, overlap: float = 0.5, units: str = "1") -> Spectrum:
    """Hann-windowed, mean-detrended, one-sided Welch PSD (units^2/Hz)."""
    x = np.asarray(x, dtype=float)
    seg_len = int(seg_len)
    if seg_len > len(x):
        raise ValueError(f"seg_len {seg_len} exceeds data length {len(x)}")
    if not 0 <= overlap < 1:
        raise ValueError("overlap must lie in [0, 1)")
    noverlap = int(round(seg_len * overlap))
    freqs, psd = signal.welch(x, fs=fs, window="hann", nperseg=seg_len, noverlap=noverlap,
                              detrend="constant", scaling="density", return_onesided=True)
    n_avg = 1 + (len(x) - seg_len) // (seg_len - noverlap)
    return Spectrum(freqs, psd, n_avg, "hann", f"{units}^2/Hz")


def seg_len_for(resolution: float, fs: float) -> int:
    """Segment length giving bin spacing ``resolution`` Hz (rounded to even)."""
    n = int(round(fs / resolution))
    return n + (n % 2)


def tone_power(spec: Spectrum, f0: float, half_width: int = 3) -> float:
    """Integrated PSD (units^2) over ``half_width`` bins either side of the
    bin nearest ``f0``; a sine of amplitude A yields A^2/2."""
    k = int(np.argmin(np.abs(spec.freqs - f0)))
    lo, hi = max(k - half_width, 0), min(k + half_width + 1, len(spec.psd))
    return float(np.sum(spec.psd[lo:hi]) * spec.df)


def tone_amplitude(spec: Spectrum, f0: float, half_width: int = 3) -> float:
    return math.sqrt(2.0 * tone_power(spec, f0, half_width))
