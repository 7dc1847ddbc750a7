"""Ratio-method calibration and field-equivalent sensitivity.

Two-step calibration: quasi-static slopes dI/dX and dQ/dB_dc from linear fits
of settled, noiseless I/Q around the operating point, then the frequency
dependence R^2(f)/R^2(0) from injected tones.  Residual I/Q noise PSDs are
divided by R^2(f) to give T^2/Hz.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import tomli
import tomli_w

from . import dsp
from .control import fll_run
from .instrument import (demodulate, lockin_settle, noiseless, resolve_demod_phase,
                         settle_time, steady_iq)
from .physics import Along, Sum, run_trace


class OperatingPointError(ValueError):
    """Calibration sweep is non-monotonic or not linear around the operating point."""


class StaleCalibrationError(ValueError):
    """Calibration was taken for a different operating point."""


def operating_point_hash(cfg) -> str:
    """Hash of everything that fixes the deterministic response.

    Noise switches, strengths and the seed are excluded, so one calibration
    serves the noise-toggled runs of a noise budget.
    """
    c = cfg.copy()
    c.noise.spn_enabled = False
    c.noise.spn_strength = 0.0
    c.noise.rng_seed = 0
    c.readout.psn_enabled = False
    if c.readout.s3_in == 0.0:
        c.readout.back_action_enabled = True
    return c.hash()


# --------------------------------------------------------------------------
# linear fits

@dataclass
class LineFit:
    slope: float
    intercept: float
    residual: float      # max |residual| as a fraction of the fitted span
    x: np.ndarray
    y: np.ndarray


def fit_line(x, y, max_residual: float = 0.05, monotonic: bool = True) -> LineFit:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    slope, intercept = np.polyfit(x, y, 1)
    span = abs(slope) * (x.max() - x.min())
    resid = y - (slope * x + intercept)
    rel = float(np.max(np.abs(resid)) / span) if span > 0 else math.inf
    if monotonic:
        d = np.diff(y[np.argsort(x)])
        if not (np.all(d > 0) or np.all(d < 0)):
            raise OperatingPointError("response is not monotonic over the calibration window")
    if rel > max_residual:
        raise OperatingPointError(f"linear fit residual {rel:.1%} of span exceeds "
                                  f"{max_residual:.0%}")
    return LineFit(float(slope), float(intercept), rel, x, y)


# --------------------------------------------------------------------------
# responsivity

@dataclass
class Responsivity:
    r_i0: float                  # dI/dX at f = 0, per T
    r_q0: float                  # dQ/dB_dc at f = 0, per T
    r_i_bdc: float               # dI/dB_dc (cross term)
    r_q_x: float                 # dQ/dX (cross term)
    i0: float                    # I at the operating point
    q0: float
    fit_range_x: float           # half-span of the X sweep, T
    fit_range_b: float           # half-span of the B_dc sweep, T
    fit_residual_i: float
    fit_residual_q: float
    demod_phase: float
    config_hash: str
    freqs: np.ndarray = field(default_factory=lambda: np.zeros(0))
    freq_response_i: np.ndarray = field(default_factory=lambda: np.zeros(0))
    freq_response_q: np.ndarray = field(default_factory=lambda: np.zeros(0))
    low_snr_i: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))
    low_snr_q: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))
    probe_x: float = 0.0
    probe_b: float = 0.0

    @property
    def ratio_i(self) -> float:
        """|dI/dX| / |dI/dB_dc|."""
        return abs(self.r_i0) / abs(self.r_i_bdc) if self.r_i_bdc else math.inf

    @property
    def ratio_q(self) -> float:
        """|dQ/dB_dc| / |dQ/dX|."""
        return abs(self.r_q0) / abs(self.r_q_x) if self.r_q_x else math.inf

    def has_response(self) -> bool:
        return len(self.freqs) > 0

    def _ratio(self, f, table):
        if not self.has_response():
            raise ValueError("frequency response not calibrated; run calibrate_response")
        f = np.asarray(f, dtype=float)
        ff = np.concatenate(([0.0], self.freqs))
        rr = np.concatenate(([1.0], table))
        out = np.interp(f, ff, rr)
        return np.where(f <= ff[-1], out, np.nan)

    def r2_i(self, f):
        """R_I^2(f) in (I units / T)^2; nan beyond the calibrated band."""
        return self.r_i0 ** 2 * self._ratio(f, self.freq_response_i)

    def r2_q(self, f):
        return self.r_q0 ** 2 * self._ratio(f, self.freq_response_q)

    def check(self, cfg) -> None:
        h = operating_point_hash(cfg)
        if h != self.config_hash:
            raise StaleCalibrationError(
                f"calibration taken for operating point {self.config_hash}, "
                f"config is {h}; recalibrate")

    # structured text record
    def to_record(self) -> str:
        d = {
            "config_hash": self.config_hash,
            "operating_point": {"i0": self.i0, "q0": self.q0, "demod_phase_rad": self.demod_phase},
            "static": {"r_i0_per_T": self.r_i0, "r_q0_per_T": self.r_q0,
                       "r_i_bdc_per_T": self.r_i_bdc, "r_q_x_per_T": self.r_q_x,
                       "fit_range_x_T": self.fit_range_x, "fit_range_b_T": self.fit_range_b,
                       "fit_residual_i": self.fit_residual_i,
                       "fit_residual_q": self.fit_residual_q},
            "response": {"freqs_Hz": [float(x) for x in self.freqs],
                         "ratio_i": [float(x) for x in self.freq_response_i],
                         "ratio_q": [float(x) for x in self.freq_response_q],
                         "low_snr_i": [bool(x) for x in self.low_snr_i],
                         "low_snr_q": [bool(x) for x in self.low_snr_q],
                         "probe_x_T": self.probe_x, "probe_b_T": self.probe_b},
        }
        return tomli_w.dumps(d)

    @classmethod
    def from_record(cls, text: str) -> "Responsivity":
        d = tomli.loads(text)
        op, st, rs = d["operating_point"], d["static"], d["response"]
        return cls(st["r_i0_per_T"], st["r_q0_per_T"], st["r_i_bdc_per_T"], st["r_q_x_per_T"],
                   op["i0"], op["q0"], st["fit_range_x_T"], st["fit_range_b_T"],
                   st["fit_residual_i"], st["fit_residual_q"], op["demod_phase_rad"],
                   d["config_hash"], np.array(rs["freqs_Hz"], dtype=float),
                   np.array(rs["ratio_i"], dtype=float), np.array(rs["ratio_q"], dtype=float),
                   np.array(rs["low_snr_i"], dtype=bool), np.array(rs["low_snr_q"], dtype=bool),
                   rs["probe_x_T"], rs["probe_b_T"])


def linewidth_field(cfg) -> float:
    """Resonance half-width expressed as a field, (Gamma + <R_OP>) / gamma."""
    return cfg.linewidth / cfg.atom.gamma


def _at(cfg, x: float = 0.0, db: float = 0.0, dph: float | None = None):
    c = cfg.replace(**{"field.rf_x_amp": x, "field.delta_b_dc": cfg.field.delta_b_dc + db})
    return steady_iq(c, demod_phase=dph)


def calibrate_static(cfg, n_points: int = 11, span_x: float = 5e-9,
                     span_b: float | None = None, max_residual: float = 0.05) -> Responsivity:
    """Quasi-static slopes from symmetric sweeps of X and of B_dc.

    ``span_x`` and ``span_b`` are half-spans; ``span_b`` defaults to 10% of
    the resonance half-width.  Sweeps use the noiseless model.
    """
    if n_points < 3:
        raise ValueError("need at least 3 sweep points")
    c = noiseless(cfg)
    span_b = 0.1 * linewidth_field(c) if span_b is None else span_b
    dph = resolve_demod_phase(c)
    xs = np.linspace(-span_x, span_x, n_points)
    bs = np.linspace(-span_b, span_b, n_points)
    iq_x = np.array([_at(c, x=x, dph=dph) for x in xs])
    iq_b = np.array([_at(c, db=b, dph=dph) for b in bs])
    fit_i = fit_line(xs, iq_x[:, 0], max_residual)
    fit_q = fit_line(bs, iq_b[:, 1], max_residual)
    # cross terms: slope only, these responses are ideally flat
    r_i_bdc = float(np.polyfit(bs, iq_b[:, 0], 1)[0])
    r_q_x = float(np.polyfit(xs, iq_x[:, 1], 1)[0])
    mid = n_points // 2
    return Responsivity(fit_i.slope, fit_q.slope, r_i_bdc, r_q_x, float(iq_x[mid, 0]),
                        float(iq_b[mid, 1]), span_x, span_b, fit_i.residual, fit_q.residual,
                        dph, operating_point_hash(cfg))


# --------------------------------------------------------------------------
# frequency response

@dataclass
class ToneMeasurement:
    amplitude: float      # recovered tone amplitude in I or Q units
    snr_db: float         # tone-bin PSD over the local floor


def tone_segment(f0: float, fs: float, resolution: float, min_cycles: int = 4) -> int:
    """Welch segment length that puts ``f0`` on a bin centre with at least
    ``min_cycles`` tone cycles per segment and bins no wider than ``resolution``."""
    k = max(min_cycles, math.ceil(f0 / resolution))
    return int(round(k * fs / f0))


def measure_tone(x, fs: float, f0: float, seg: int, overlap: float = 0.5,
                 half_width: int = 3) -> ToneMeasurement:
    """Tone amplitude from the integrated Welch peak, and its height over the
    median of the neighbouring bins."""
    spec = dsp.psd_welch(x, fs, min(seg, len(x)), overlap)
    amp = dsp.tone_amplitude(spec, f0, half_width)
    k = int(np.argmin(np.abs(spec.freqs - f0)))
    lo, hi = max(k - 8 * half_width, 1), min(k + 8 * half_width + 1, len(spec.psd))
    idx = np.arange(lo, hi)
    idx = idx[np.abs(idx - k) > half_width]
    floor = float(np.median(spec.psd[idx])) if len(idx) else 0.0
    peak = float(np.max(spec.psd[max(k - 1, 0):k + 2]))
    snr = 10 * math.log10(peak / floor) if floor > 0 else math.inf
    return ToneMeasurement(amp, snr)


def _tone(cfg, f0, amp, target, duration, resolution, overlap=0.5):
    seg = tone_segment(f0, cfg.fs_out, resolution)
    # at least three half-overlapped segments
    dur = max(duration, 2.0 * seg / cfg.fs_out + 2.0 / cfg.fs_out)
    return measure_tone(_tone_run(cfg, f0, amp, target, dur), cfg.fs_out, f0, seg, overlap)


def _tone_run(cfg, f0: float, amp: float, target: str, duration: float):
    """I (target 'x') or Q (target 'b') during an injected tone."""
    fp = cfg.field
    tone = _Cosine(amp, f0)
    if target == "x":
        prog = _field_with(fp, rf_x_amp=Sum1(fp.rf_x_amp, tone))
    else:
        prog = _field_with(fp, extra_noise=Sum(fp.extra_noise, Along(tone, fp.b_dc_dir)))
    warm = settle_time(cfg)
    tr = run_trace(cfg, duration + lockin_settle(cfg), warmup=warm, fp=prog)
    iq = demodulate(cfg, tr)
    return iq.i_vals if target == "x" else iq.q_vals


class _Cosine:
    def __init__(self, amp, f0):
        self.amp, self.w = amp, 2 * math.pi * f0

    def __call__(self, t):
        return self.amp * np.cos(self.w * np.asarray(t, dtype=float))


class Sum1:
    """Sum of scalar signals."""

    def __init__(self, *parts):
        self.parts = [p for p in parts if p is not None]

    def __call__(self, t):
        from .physics import sample_signal
        t = np.atleast_1d(t)
        out = np.zeros(len(t))
        for p in self.parts:
            out += sample_signal(p, t)
        return out


def _field_with(fp, **changes):
    import copy
    new = copy.copy(fp)
    for k, v in changes.items():
        setattr(new, k, v)
    return new


def calibrate_response(cfg, freqs, probe_x: float = 1e-9, probe_b: float = 0.5e-9, *,
                       static: Responsivity | None = None, duration: float = 0.5,
                       resolution: float = 4.0, snr_min_db: float = 10.0,
                       check_linearity: bool = True, linearity_tol: float = 0.02) -> Responsivity:
    """Frequency response R^2(f)/R^2(0) of I to X tones and Q to B_dc tones.

    Tone amplitudes are read from the PSD peak and divided by the quasi-static
    prediction ``R(0) * probe``.  Frequencies whose tone is less than
    ``snr_min_db`` above the local floor are flagged, not dropped.
    """
    freqs = np.asarray(sorted(float(f) for f in freqs))
    if len(freqs) == 0 or freqs[0] <= 0:
        raise ValueError("response frequencies must be positive")
    static = static or calibrate_static(cfg)
    static.check(cfg)
    if check_linearity:
        f_chk = freqs[0]
        for target, amp in (("x", probe_x), ("b", probe_b)):
            a1 = _tone(cfg, f_chk, amp, target, duration, resolution).amplitude
            a2 = _tone(cfg, f_chk, 2 * amp, target, duration, resolution).amplitude
            if abs(a2 / (2 * a1) - 1) > linearity_tol:
                raise OperatingPointError(
                    f"{target} probe {amp:g} T not linear: doubling gave x{a2 / a1:.3f}")
    out = {}
    for target, amp, r0 in (("x", probe_x, static.r_i0), ("b", probe_b, static.r_q0)):
        ratios, flags = [], []
        for f in freqs:
            m = _tone(cfg, f, amp, target, duration, resolution)
            ratios.append((m.amplitude / abs(r0 * amp)) ** 2)
            flags.append(m.snr_db < snr_min_db)
        out[target] = (np.array(ratios), np.array(flags, dtype=bool))
    r = static
    return Responsivity(r.r_i0, r.r_q0, r.r_i_bdc, r.r_q_x, r.i0, r.q0, r.fit_range_x,
                        r.fit_range_b, r.fit_residual_i, r.fit_residual_q, r.demod_phase,
                        r.config_hash, freqs, out["x"][0], out["b"][0], out["x"][1],
                        out["b"][1], probe_x, probe_b)


def response_3db(resp: Responsivity, channel: str = "i") -> float:
    """First frequency where the interpolated R^2 ratio falls to 1/2."""
    ratio = resp.freq_response_i if channel == "i" else resp.freq_response_q
    ff = np.concatenate(([0.0], resp.freqs))
    rr = np.concatenate(([1.0], ratio))
    below = np.nonzero(rr < 0.5)[0]
    if len(below) == 0:
        return math.inf
    k = below[0]
    # linear interpolation in log frequency between the bracketing points
    f1, f2, r1, r2 = ff[k - 1], ff[k], rr[k - 1], rr[k]
    if f1 <= 0:
        return float(f1 + (0.5 - r1) / (r2 - r1) * (f2 - f1))
    lf = math.log(f1) + (0.5 - r1) / (r2 - r1) * (math.log(f2) - math.log(f1))
    return float(math.exp(lf))


def analytic_3db(cfg) -> float:
    """-3 dB frequency of a first-order resonance response, (Gamma + <R_OP>)/(2 pi)."""
    return cfg.linewidth / (2 * math.pi)


# --------------------------------------------------------------------------
# sensitivity

@dataclass
class SensitivitySpectrum:
    freqs: np.ndarray
    s_x: np.ndarray       # T^2/Hz, rf quadrature channel
    s_bdc: np.ndarray     # T^2/Hz, dc channel
    loop_state: str
    s_i: dsp.Spectrum     # raw I PSD
    s_q: dsp.Spectrum
    r2_i: np.ndarray
    r2_q: np.ndarray
    config_hash: str

    @property
    def asd_x(self) -> np.ndarray:
        return np.sqrt(self.s_x)

    @property
    def asd_bdc(self) -> np.ndarray:
        return np.sqrt(self.s_bdc)

    def band(self, f_lo: float, f_hi: float):
        m = (self.freqs >= f_lo) & (self.freqs <= f_hi)
        return self.freqs[m], self.s_x[m], self.s_bdc[m]


def sensitivity_spectrum(cfg, resp: Responsivity, duration: float = 4.0,
                         loop_state: str = "open", *, resolution: float | None = None,
                         pi=None, warmup: float | None = None) -> SensitivitySpectrum:
    """Residual I/Q noise converted to field units with the calibration."""
    if loop_state not in ("open", "closed"):
        raise ValueError("loop_state must be 'open' or 'closed'")
    resp.check(cfg)
    fs_out = cfg.fs_out
    seg = dsp.seg_len_for(resolution or cfg.dsp.psd_resolution, fs_out)
    res = fll_run(cfg, pi, None, duration, closed=loop_state == "closed", warmup=warmup,
                  plant_gain=None if loop_state == "closed" else 1.0)
    s_i = dsp.psd_welch(res.i, fs_out, seg, cfg.dsp.psd_overlap, "I")
    s_q = dsp.psd_welch(res.q, fs_out, seg, cfg.dsp.psd_overlap, "Q")
    f = s_i.freqs
    r2i = resp.r2_i(f)
    r2q = resp.r2_q(f)
    return SensitivitySpectrum(f, s_i.psd / r2i, s_q.psd / r2q, loop_state, s_i, s_q, r2i, r2q,
                               resp.config_hash)


def recover_tone(cfg, resp: Responsivity, f0: float, amp: float, duration: float = 1.0,
                 resolution: float = 2.0) -> float:
    """Inject an X tone of ``amp`` tesla at ``f0`` and estimate its amplitude
    from I through the calibration."""
    resp.check(cfg)
    m = _tone(cfg, f0, amp, "x", duration, resolution)
    return m.amplitude / math.sqrt(float(resp.r2_i(f0)))


# --------------------------------------------------------------------------
# lineshapes

@dataclass
class IqMap:
    delta_b: np.ndarray   # T
    b_rf: np.ndarray      # T
    i: np.ndarray         # shape (len(delta_b), len(b_rf))
    q: np.ndarray


def iq_map(cfg, delta_b, b_rf) -> IqMap:
    """Noiseless settled I, Q over a (delta B_dc, B_rf) grid."""
    delta_b = np.asarray(delta_b, dtype=float)
    b_rf = np.asarray(b_rf, dtype=float)
    c = noiseless(cfg)
    dph = resolve_demod_phase(c)
    out = np.array([[_at(c, x=b, db=d, dph=dph) for b in b_rf] for d in delta_b])
    return IqMap(delta_b, b_rf, out[..., 0], out[..., 1])


def symmetry_residuals(m: IqMap):
    """Worst even-symmetry residual of I and odd-symmetry residual of Q in
    delta B_dc, each relative to the peak |I| (resp. |Q|) of its column."""
    i_res = q_res = 0.0
    for k in range(len(m.b_rf)):
        i, q = m.i[:, k], m.q[:, k]
        i_res = max(i_res, float(np.max(np.abs(i - i[::-1])) / np.max(np.abs(i))))
        q_res = max(q_res, float(np.max(np.abs(q + q[::-1])) / np.max(np.abs(q))))
    return i_res, q_res


@dataclass
class PhaseCircle:
    phases: np.ndarray
    i: np.ndarray
    q: np.ndarray
    i0: float
    q0: float

    @property
    def radius(self) -> np.ndarray:
        return np.hypot(self.i - self.i0, self.q - self.q0)

    @property
    def relative_spread(self) -> float:
        r = self.radius
        return float(np.std(r) / np.mean(r))


def phase_circle(cfg, b_rf: float = 4e-9, n_phases: int = 24) -> PhaseCircle:
    """Locus of settled (I, Q) as the rf carrier phase goes round the circle,
    centred on the rf-off operating point."""
    c = noiseless(cfg)
    dph = resolve_demod_phase(c)
    i0, q0 = _at(c, dph=dph)
    phases = np.linspace(0.0, 2 * math.pi, n_phases, endpoint=False)
    pts = np.array([steady_iq(c.replace(**{"field.rf_x_amp": b_rf, "field.varphi_rf": ph}),
                              demod_phase=dph) for ph in phases])
    return PhaseCircle(phases, pts[:, 0], pts[:, 1], i0, q0)


def align_pump_phase(cfg, probe: float = 2e-9, iterations: int = 3) -> float:
    """Pump phase offset that puts an rf drive at varphi_rf = 0 on the I axis.

    The demod phase is recalibrated (Q = 0 at resonance) at each iterate; the
    pump phase is turned by the angle of the rf-induced (dI, dQ).
    """
    c = noiseless(cfg)
    c.dsp.demod_phase = None
    phase0 = c.pump.phase0
    for _ in range(iterations):
        c.pump.phase0 = phase0
        dph = resolve_demod_phase(c)
        i0, q0 = _at(c, dph=dph)
        i1, q1 = _at(c, x=probe, dph=dph)
        ang = math.atan2(q1 - q0, i1 - i0)
        phase0 = (phase0 - ang + math.pi) % (2 * math.pi) - math.pi
    return phase0


# --------------------------------------------------------------------------
# quantum-noise budget

# weak and strong optical pumping (peak rate, s^-1); the strong one is the default
PUMP_LEVELS = (500.0, 2000.0)


def _noise_only(cfg, spn: bool, psn: bool, back_action: bool, r_peak: float | None = None):
    c = cfg.copy()
    c.noise.spn_enabled = spn
    c.readout.psn_enabled = psn
    c.readout.back_action_enabled = back_action
    if r_peak is not None:
        c.pump.r_peak = float(r_peak)
    return c


@dataclass
class NoiseBudget:
    """Raw open-loop I/Q noise PSDs (detector units squared per Hz).

    ``spectra`` keys: ``spn``, ``psn`` (single source, back-action off, default
    pump), ``sns`` (pump off, every source on) and ``opm@<r_peak>`` (pump on,
    every source on), each mapped to ``{"i": psd, "q": psd}``.
    """
    freqs: np.ndarray
    spectra: dict
    pump_levels: tuple
    config_hash: str

    def band_mean(self, key: str, channel: str, f_lo: float, f_hi: float) -> float:
        m = (self.freqs >= f_lo) & (self.freqs <= f_hi)
        return float(np.mean(self.spectra[key][channel][m]))

    def band_median(self, key: str, channel: str, f_lo: float, f_hi: float) -> float:
        """Band level robust to the narrow deterministic carrier-ripple lines."""
        m = (self.freqs >= f_lo) & (self.freqs <= f_hi)
        return float(np.median(self.spectra[key][channel][m]))

    def crossover(self, channel: str = "q", f_min: float = 10.0, smooth: int = 9) -> float:
        """Lowest frequency above ``f_min`` where smoothed SPN falls below PSN (nan if none)."""
        k = np.ones(smooth) / smooth
        spn = np.convolve(self.spectra["spn"][channel], k, mode="same")
        psn = np.convolve(self.spectra["psn"][channel], k, mode="same")
        m = (self.freqs >= f_min) & (spn < psn)
        m[-smooth:] = False
        return float(self.freqs[m][0]) if m.any() else math.nan


def noise_budget(cfg, duration: float = 4.0, pump_levels=PUMP_LEVELS, *,
                 resolution: float | None = None) -> NoiseBudget:
    """Open-loop noise spectra separating the intrinsic sources.

    All runs share the configured seed, so each source sees the same
    realisation wherever it is enabled.
    """
    if len(pump_levels) < 1:
        raise ValueError("need at least one pump level")
    base = cfg.copy()
    base.dsp.demod_phase = resolve_demod_phase(cfg)
    runs = {"spn": _noise_only(base, True, False, False),
            "psn": _noise_only(base, False, True, False),
            "sns": _noise_only(base, True, True, True, r_peak=0.0)}
    for rp in pump_levels:
        runs[f"opm@{rp:g}"] = _noise_only(base, True, True, True, r_peak=rp)
    seg = dsp.seg_len_for(resolution or cfg.dsp.psd_resolution, cfg.fs_out)
    spectra, freqs = {}, None
    for key, c in runs.items():
        res = fll_run(c, None, None, duration, closed=False, plant_gain=1.0)
        s_i = dsp.psd_welch(res.i, c.fs_out, seg, c.dsp.psd_overlap)
        s_q = dsp.psd_welch(res.q, c.fs_out, seg, c.dsp.psd_overlap)
        freqs = s_i.freqs
        spectra[key] = {"i": s_i.psd, "q": s_q.psd}
    return NoiseBudget(freqs, spectra, tuple(float(p) for p in pump_levels), cfg.hash())
