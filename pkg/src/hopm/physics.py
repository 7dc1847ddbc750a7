"""Stochastic Bloch dynamics and Faraday-rotation readout of the hybrid OPM.

The collective spin obeys

    dF/dt = [-gamma B(t) + G_S S3(t) z] x F - Gamma F + R_OP(t) (F_max - F) + N_at(t)

and is read out through S2_out = S1 sin(G_F F_z) + N_opt.  Spin vectors are
normalised so that full polarisation along the pump gives |F| = 1.

The integrator is a fixed-sample-rate scheme: within each detector sample the
deterministic part is advanced with RK4, with sub-steps split exactly at the
pump pulse edges so the square pulse train does not spoil the order; the
Langevin increment (if enabled) is then added once per sample.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Union

import numpy as np
from numba import njit

# 87Rb ground state, 6.996 Hz/nT
GAMMA_RB87 = 2.0 * math.pi * 6.996e9

# chunk length (samples) for streamed runs; bounds memory of noise draws
CHUNK = 1 << 16

TWO_PI = 2.0 * math.pi


class StabilityError(ValueError):
    """Step size violates dt <= 0.1 / max(gamma |B|, Gamma, r_peak)."""


class ScenarioLengthError(ValueError):
    """A tabulated time series was queried outside its programmed range."""


# --------------------------------------------------------------------------
# time-addressable inputs

class Tabulated:
    """Sampled signal with zero-order hold; querying outside its span raises.

    ``values`` has shape (n,) or (n, 3); sample ``k`` covers
    ``[t0 + k/fs, t0 + (k+1)/fs)``.
    """

    def __init__(self, values, fs: float, t0: float = 0.0):
        self.values = np.asarray(values, dtype=float)
        self.fs = float(fs)
        self.t0 = float(t0)

    @property
    def t_end(self) -> float:
        return self.t0 + len(self.values) / self.fs

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        idx = np.floor((t - self.t0) * self.fs + 1e-9).astype(np.int64)
        if np.any(idx < 0) or np.any(idx >= len(self.values)):
            raise ScenarioLengthError(
                f"query outside tabulated span [{self.t0:g}, {self.t_end:g}) s; "
                "scenario is longer than the programmed signal")
        return self.values[idx]


TimeSignal = Union[float, np.ndarray, Callable, Tabulated, None]


class Along:
    """Scalar signal applied along a fixed direction: ``sig(t) * axis``."""

    def __init__(self, sig, axis):
        self.sig = sig
        self.axis = np.asarray(axis, dtype=float).reshape(3)

    def __call__(self, t):
        return np.multiply.outer(sample_signal(self.sig, np.atleast_1d(t)), self.axis)


class Sum:
    """Sum of vector-valued signals."""

    def __init__(self, *parts):
        self.parts = [p for p in parts if p is not None]

    def __call__(self, t):
        t = np.atleast_1d(t)
        out = np.zeros((len(t), 3))
        for p in self.parts:
            out += sample_signal(p, t, vector=True)
        return out


def sample_signal(sig: TimeSignal, t: np.ndarray, vector: bool = False) -> np.ndarray:
    """Evaluate a time-addressable signal on ``t``; returns (n,) or (n, 3)."""
    n = len(t)
    shape = (n, 3) if vector else (n,)
    if sig is None:
        return np.zeros(shape)
    if callable(sig):
        out = np.asarray(sig(t), dtype=float)
    else:
        out = np.asarray(sig, dtype=float)
    return np.broadcast_to(out, shape).astype(float, copy=True)


# --------------------------------------------------------------------------
# domain types

def _unit(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    nrm = np.linalg.norm(v)
    if not nrm > 0:
        raise ValueError("direction vector must be non-zero")
    return v / nrm


@dataclass
class SpinState:
    f_vec: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        self.f_vec = np.asarray(self.f_vec, dtype=float).reshape(3)


@dataclass
class AtomParams:
    gamma: float = GAMMA_RB87
    gamma_relax: float = 500.0
    f_max_dir: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")
        if self.gamma_relax < 0:
            raise ValueError("gamma_relax must be >= 0")
        self.f_max_dir = _unit(self.f_max_dir)


@dataclass
class PumpWaveform:
    """Square pulse train: rate ``r_peak`` for the first ``duty`` of each cycle
    counted from ``phase0``.  The pulse centre sits at phase ``phase0 + pi*duty``.
    """
    omega_p: float
    r_peak: float = 2000.0
    duty: float = 0.3
    phase0: float = 0.0

    def __post_init__(self):
        if not self.omega_p > 0:
            raise ValueError("omega_p must be positive")
        if self.r_peak < 0:
            raise ValueError("r_peak must be >= 0")
        if not 0.0 < self.duty < 1.0:
            raise ValueError("duty must lie in (0, 1)")

    @property
    def mean_rate(self) -> float:
        return self.r_peak * self.duty

    @property
    def fundamental_phase(self) -> float:
        """Phase of the fundamental harmonic of R_OP (pulse centre)."""
        return self.phase0 + math.pi * self.duty


@dataclass
class FieldProgram:
    b_dc_mag: float = 4.3e-6
    b_dc_dir: np.ndarray = field(
        default_factory=lambda: np.array([1.0, 0.0, 1.0]) / math.sqrt(2.0))
    delta_b_dc: float = 0.0
    rf_x_amp: TimeSignal = 0.0
    rf_y_amp: TimeSignal = 0.0
    omega_rf: float | None = None     # None: follow the pump frequency
    varphi_rf: float = 0.0
    extra_noise: TimeSignal = None    # 3-vector field, tesla

    def __post_init__(self):
        self.b_dc_dir = _unit(self.b_dc_dir)

    @property
    def b_dc_vec(self) -> np.ndarray:
        return (self.b_dc_mag + self.delta_b_dc) * self.b_dc_dir


@dataclass
class ReadoutParams:
    g_f: float = 0.05
    g_s: float = 0.0
    back_action_enabled: bool = True
    s1_in: float = 1e14
    s3_in: float = 0.0
    psn_enabled: bool = True
    detector_bandwidth: float = 512e3

    def __post_init__(self):
        if self.g_f < 0 or self.s1_in < 0:
            raise ValueError("g_f and s1_in must be >= 0")
        if not self.detector_bandwidth > 0:
            raise ValueError("detector_bandwidth must be positive")

    @property
    def g_s_eff(self) -> float:
        return self.g_s if self.back_action_enabled else 0.0


@dataclass
class NoiseParams:
    spn_enabled: bool = True
    spn_strength: float = 1e-4
    rng_seed: int = 0

    def __post_init__(self):
        if self.spn_strength < 0:
            raise ValueError("spn_strength must be >= 0")


def noise_streams(seed: int) -> dict[str, np.random.Generator]:
    """Independent generators per noise source, so toggling one source never
    shifts the realisation of another."""
    names = ("spn", "psn", "s3", "inject")
    children = np.random.SeedSequence(int(seed) & (2**64 - 1)).spawn(len(names))
    return {n: np.random.Generator(np.random.PCG64(c)) for n, c in zip(names, children)}


# --------------------------------------------------------------------------
# scalar operations

def pump_rate(pw: PumpWaveform, t):
    """Optical pumping rate R_OP(t) in s^-1."""
    u = np.mod(pw.omega_p * np.asarray(t, dtype=float) - pw.phase0, TWO_PI)
    out = np.where(u < TWO_PI * pw.duty, pw.r_peak, 0.0)
    return float(out) if out.ndim == 0 else out


def field_at(fp: FieldProgram, t, omega_rf: float | None = None) -> np.ndarray:
    """Total field in tesla at time(s) ``t``; shape (3,) or (n, 3)."""
    scalar = np.ndim(t) == 0
    tt = np.atleast_1d(np.asarray(t, dtype=float))
    w = fp.omega_rf if fp.omega_rf is not None else omega_rf
    x = sample_signal(fp.rf_x_amp, tt)
    y = sample_signal(fp.rf_y_amp, tt)
    if w is None:
        if np.any(x != 0) or np.any(y != 0):
            raise ValueError("omega_rf unset and no pump frequency supplied")
        w = 0.0
    arg = w * tt + fp.varphi_rf
    b = np.broadcast_to(fp.b_dc_vec, (len(tt), 3)).copy()
    b[:, 0] += x * np.cos(arg) + y * np.sin(arg)
    b += sample_signal(fp.extra_noise, tt, vector=True)
    return b[0] if scalar else b


# RK4 sub-steps run at this fraction of the stability bound; at the bound
# itself the accumulated phase error over 10 ms reaches ~5e-5 of |F|
SUBSTEP_FRACTION = 0.5


def stability_dt(gamma: float, b_abs: float, gamma_relax: float, r_peak: float) -> float:
    rate = max(gamma * b_abs, gamma_relax, r_peak)
    return math.inf if rate == 0 else 0.1 / rate


# --------------------------------------------------------------------------
# compiled kernels
#
# parameter vector layout
P_GAMMA, P_RELAX, P_FMX, P_FMY, P_FMZ, P_BX, P_BY, P_BZ, P_RPEAK, P_DUTY, \
    P_PHASE0, P_VARPHI, P_GS = range(13)
N_PARAMS = 13


@njit(cache=True)
def _drift(f0, f1, f2, bx, by, bz, r, gs_s3, p, out):
    g = p[P_GAMMA]
    wx = -g * bx
    wy = -g * by
    wz = -g * bz + gs_s3
    relax = p[P_RELAX]
    out[0] = wy * f2 - wz * f1 - relax * f0 + r * (p[P_FMX] - f0)
    out[1] = wz * f0 - wx * f2 - relax * f1 + r * (p[P_FMY] - f1)
    out[2] = wx * f1 - wy * f0 - relax * f2 + r * (p[P_FMZ] - f2)


@njit(cache=True)
def _rf_field(tau, thrf, wrf, xa, ya, p):
    arg = thrf + wrf * tau + p[P_VARPHI]
    return xa * math.cos(arg) + ya * math.sin(arg)


@njit(cache=True)
def _rk4_segment(f, tau0, length, nsteps, r, thrf, wrf, xa, ya, ex, ey, ez, gs_s3, p, k):
    h = length / nsteps
    bx0 = p[P_BX] + ex
    by = p[P_BY] + ey
    bz = p[P_BZ] + ez
    for i in range(nsteps):
        t = tau0 + i * h
        b_a = bx0 + _rf_field(t, thrf, wrf, xa, ya, p)
        b_m = bx0 + _rf_field(t + 0.5 * h, thrf, wrf, xa, ya, p)
        b_b = bx0 + _rf_field(t + h, thrf, wrf, xa, ya, p)
        _drift(f[0], f[1], f[2], b_a, by, bz, r, gs_s3, p, k[0])
        _drift(f[0] + 0.5 * h * k[0, 0], f[1] + 0.5 * h * k[0, 1], f[2] + 0.5 * h * k[0, 2],
               b_m, by, bz, r, gs_s3, p, k[1])
        _drift(f[0] + 0.5 * h * k[1, 0], f[1] + 0.5 * h * k[1, 1], f[2] + 0.5 * h * k[1, 2],
               b_m, by, bz, r, gs_s3, p, k[2])
        _drift(f[0] + h * k[2, 0], f[1] + h * k[2, 1], f[2] + h * k[2, 2],
               b_b, by, bz, r, gs_s3, p, k[3])
        for j in range(3):
            f[j] += h / 6.0 * (k[0, j] + 2.0 * k[1, j] + 2.0 * k[2, j] + k[3, j])


@njit(cache=True)
def _propagate(f, dt, h_max, thp, wp, thrf, wrf, xa, ya, ex, ey, ez, s3, p, k):
    """Advance ``f`` in place across one sample of length ``dt``.

    Pump phase ``thp + wp*tau`` sets the pulse edges; the interval is split
    there so R_OP is constant on every RK4 segment.
    """
    duty_ph = TWO_PI * p[P_DUTY]
    u0 = (thp - p[P_PHASE0]) % TWO_PI
    gs_s3 = p[P_GS] * s3
    high = u0 < duty_ph
    m = 0
    tau = 0.0
    while tau < dt:
        if wp > 0.0:
            nxt = TWO_PI * m + duty_ph if high else TWO_PI * (m + 1)
            tau_edge = (nxt - u0) / wp
        else:
            tau_edge = dt
        end = tau_edge if tau_edge < dt else dt
        length = end - tau
        if length > 0.0:
            r = p[P_RPEAK] if high else 0.0
            nsteps = int(math.ceil(length / h_max - 1e-9))
            if nsteps < 1:
                nsteps = 1
            _rk4_segment(f, tau, length, nsteps, r, thrf, wrf, xa, ya, ex, ey, ez, gs_s3, p, k)
        if tau_edge >= dt:
            break
        tau = end
        if high:
            high = False
        else:
            high = True
            m += 1


@njit(cache=True)
def _run_kernel(f, dt, h_max, thp, wp, thrf, wrf, xa, ya, extra, s3, spn_incr, p, fz_out):
    k = np.empty((4, 3))
    n = thp.shape[0]
    for i in range(n):
        fz_out[i] = f[2]
        _propagate(f, dt, h_max, thp[i], wp[i], thrf[i], wrf[i], xa[i], ya[i],
                   extra[i, 0], extra[i, 1], extra[i, 2], s3[i], p, k)
        f[0] += spn_incr[i, 0]
        f[1] += spn_incr[i, 1]
        f[2] += spn_incr[i, 2]
        if not (math.isfinite(f[0]) and math.isfinite(f[1]) and math.isfinite(f[2])):
            return i
    return n


def param_vector(ap: AtomParams, pw: PumpWaveform, fp: FieldProgram,
                 rp: ReadoutParams) -> np.ndarray:
    p = np.zeros(N_PARAMS)
    p[P_GAMMA] = ap.gamma
    p[P_RELAX] = ap.gamma_relax
    p[P_FMX:P_FMZ + 1] = ap.f_max_dir
    p[P_BX:P_BZ + 1] = fp.b_dc_vec
    p[P_RPEAK] = pw.r_peak
    p[P_DUTY] = pw.duty
    p[P_PHASE0] = pw.phase0
    p[P_VARPHI] = fp.varphi_rf
    p[P_GS] = rp.g_s_eff
    return p


def rk4_fixed(f0, p: np.ndarray, duration: float, n_steps: int, r_op: float = 0.0) -> np.ndarray:
    """Plain RK4 with ``n_steps`` equal steps, static field and constant pump
    rate; no stability guard.  Meant for convergence studies."""
    f = np.array(f0, dtype=float).reshape(3)
    k = np.empty((4, 3))
    _rk4_segment(f, 0.0, float(duration), int(n_steps), float(r_op), 0.0, 0.0, 0.0, 0.0,
                 0.0, 0.0, 0.0, 0.0, p, k)
    return f


# --------------------------------------------------------------------------
# single step

def bloch_step(s: SpinState, ap: AtomParams, pw: PumpWaveform, fp: FieldProgram,
               rp: ReadoutParams, np_: NoiseParams, dt: float,
               rng: np.random.Generator | None = None) -> SpinState:
    """Advance the spin by one step ``dt``.

    Deterministic part is RK4 (split at pump edges); with SPN enabled the
    Langevin increment ``sqrt(dt) * spn_strength * xi`` is added, drawn from
    ``rng`` (a fresh generator seeded from ``np_.rng_seed`` if omitted).
    """
    if not dt > 0:
        raise StabilityError("dt must be positive")
    if not np.all(np.isfinite(s.f_vec)):
        raise ValueError("spin state is not finite")
    b = field_at(fp, s.t, omega_rf=pw.omega_p)
    b_abs = float(np.linalg.norm(b))
    x_amp = float(sample_signal(fp.rf_x_amp, np.array([s.t]))[0])
    y_amp = float(sample_signal(fp.rf_y_amp, np.array([s.t]))[0])
    b_abs = max(b_abs, float(np.linalg.norm(fp.b_dc_vec)) + abs(x_amp) + abs(y_amp))
    limit = stability_dt(ap.gamma, b_abs, ap.gamma_relax, pw.r_peak)
    if dt > limit * (1 + 1e-12):
        raise StabilityError(
            f"dt={dt:.3e} s exceeds stability bound 0.1/max(gamma|B|, Gamma, r_peak)"
            f" = {limit:.3e} s")
    w_rf = fp.omega_rf if fp.omega_rf is not None else pw.omega_p
    extra = sample_signal(fp.extra_noise, np.array([s.t]), vector=True)[0]
    need_rng = np_.spn_enabled or (rp.psn_enabled and rp.g_s_eff != 0)
    if rng is None and need_rng:
        rng = noise_streams(np_.rng_seed)["spn"]
    s3 = rp.s3_in
    if rp.psn_enabled and rp.g_s_eff != 0:
        s3 += math.sqrt(rp.s1_in / (2 * dt)) * rng.standard_normal()
    f = s.f_vec.copy()
    p = param_vector(ap, pw, fp, rp)
    k = np.empty((4, 3))
    _propagate(f, dt, dt, pw.omega_p * s.t % TWO_PI, pw.omega_p, w_rf * s.t % TWO_PI, w_rf,
               x_amp, y_amp, extra[0], extra[1], extra[2], s3, p, k)
    if np_.spn_enabled and np_.spn_strength > 0:
        f += math.sqrt(dt) * np_.spn_strength * rng.standard_normal(3)
    return SpinState(f, s.t + dt)


# --------------------------------------------------------------------------
# readout

def faraday_readout(fz, rp: ReadoutParams, rng: np.random.Generator | None = None,
                    dt_sample: float | None = None):
    """Polarimeter output S2_out in photons/s for spin component(s) ``fz``.

    ``fz`` may be a SpinState, a scalar or an array of F_z samples.  Photon
    shot noise (variance S1 / (2 dt_sample) per sample) is added when
    ``rp.psn_enabled``; ``rng`` is then required.
    """
    if isinstance(fz, SpinState):
        fz = fz.f_vec[2]
    fz = np.asarray(fz, dtype=float)
    out = rp.s1_in * np.sin(rp.g_f * fz)   # S2_in has zero mean
    if rp.psn_enabled and rp.s1_in > 0:
        if rng is None:
            raise ValueError("photon shot noise enabled but no rng supplied")
        dt_sample = dt_sample or 1.0 / rp.detector_bandwidth
        out = out + math.sqrt(rp.s1_in / (2.0 * dt_sample)) * rng.standard_normal(out.shape)
    return float(out) if out.ndim == 0 else out


# --------------------------------------------------------------------------
# traces

@dataclass
class Trace:
    t: np.ndarray           # sample times, s
    s2: np.ndarray          # polarimeter output, photons/s
    fz: np.ndarray          # spin z-component at sample times
    pump_phase: np.ndarray  # accumulated pump phase (mod 2 pi), rad
    fs: float
    final: SpinState


@dataclass
class Drive:
    """Per-sample drive arrays for one chunk."""
    wp: np.ndarray
    wrf: np.ndarray
    xa: np.ndarray
    ya: np.ndarray
    extra: np.ndarray


def sample_count(duration: float, fs: float) -> int:
    if not duration > 0:
        raise ValueError("duration must be positive")
    n = int(round(duration * fs))
    if n < 1:
        raise ValueError("duration shorter than one sample")
    return n


def default_initial_state(ap: AtomParams, pw: PumpWaveform) -> np.ndarray:
    """Longitudinal steady state under the mean pumping rate."""
    rbar = pw.mean_rate
    denom = ap.gamma_relax + rbar
    return ap.f_max_dir * (rbar / denom if denom > 0 else 0.0)


class Simulator:
    """Streams the spin dynamics chunk by chunk at the detector sample rate.

    ``omega_p`` may be a float or a time-addressable signal (frequency
    hopping).  The rf carrier follows ``fp.omega_rf`` or, if unset, the pump
    frequency schedule.
    """

    def __init__(self, ap: AtomParams, pw: PumpWaveform, fp: FieldProgram,
                 rp: ReadoutParams, np_: NoiseParams, fs: float,
                 f0=None, omega_p: TimeSignal = None, b_margin: float = 0.0):
        if abs(rp.detector_bandwidth - fs) > 1e-9 * fs:
            raise ValueError("detector_bandwidth must equal the simulation sample rate")
        self.ap, self.pw, self.fp, self.rp, self.np = ap, pw, fp, rp, np_
        self.fs = float(fs)
        self.dt = 1.0 / self.fs
        self.omega_p = pw.omega_p if omega_p is None else omega_p
        self.p = param_vector(ap, pw, fp, rp)
        self.f = (default_initial_state(ap, pw) if f0 is None
                  else np.array(f0, dtype=float).reshape(3))
        self.index = 0
        self.thp = 0.0
        self.thrf = 0.0
        self.b_margin = b_margin
        self.rngs = noise_streams(np_.rng_seed)

    @property
    def t(self) -> float:
        return self.index * self.dt

    def drive(self, n: int, extra_add: np.ndarray | None = None) -> Drive:
        t = (self.index + np.arange(n)) * self.dt
        wp = sample_signal(self.omega_p, t)
        wrf = wp if self.fp.omega_rf is None else np.full(n, float(self.fp.omega_rf))
        extra = sample_signal(self.fp.extra_noise, t, vector=True)
        if extra_add is not None:
            extra += extra_add
        return Drive(wp, wrf, sample_signal(self.fp.rf_x_amp, t),
                     sample_signal(self.fp.rf_y_amp, t), extra)

    def h_max(self, d: Drive) -> float:
        b_abs = (np.linalg.norm(self.fp.b_dc_vec) + np.max(np.abs(d.xa)) + np.max(np.abs(d.ya))
                 + np.max(np.linalg.norm(d.extra, axis=1)) + self.b_margin
                 + abs(self.rp.g_s_eff * self.rp.s3_in) / self.ap.gamma)   # light shift
        return SUBSTEP_FRACTION * stability_dt(self.ap.gamma, b_abs, self.ap.gamma_relax,
                                               self.pw.r_peak)

    def noise(self, n: int):
        """Per-sample noise draws: (spn increments (n,3), s3 (n,), psn (n,))."""
        dt = self.dt
        if self.np.spn_enabled and self.np.spn_strength > 0:
            spn = math.sqrt(dt) * self.np.spn_strength * self.rngs["spn"].standard_normal((n, 3))
        else:
            spn = np.zeros((n, 3))
        s3 = np.full(n, float(self.rp.s3_in))
        if self.rp.psn_enabled and self.rp.g_s_eff != 0 and self.rp.s1_in > 0:
            s3 += math.sqrt(self.rp.s1_in / (2 * dt)) * self.rngs["s3"].standard_normal(n)
        if self.rp.psn_enabled and self.rp.s1_in > 0:
            psn = math.sqrt(self.rp.s1_in / (2 * dt)) * self.rngs["psn"].standard_normal(n)
        else:
            psn = np.zeros(n)
        return spn, s3, psn

    def phases(self, d: Drive):
        """Phase at the start of every sample of the chunk; advances the
        accumulators to the end of the chunk."""
        cp = np.cumsum(d.wp * self.dt)
        cr = np.cumsum(d.wrf * self.dt)
        thp = np.mod(self.thp + np.concatenate(([0.0], cp[:-1])), TWO_PI)
        thrf = np.mod(self.thrf + np.concatenate(([0.0], cr[:-1])), TWO_PI)
        self.thp = (self.thp + cp[-1]) % TWO_PI
        self.thrf = (self.thrf + cr[-1]) % TWO_PI
        return thp, thrf

    def step_chunk(self, n: int):
        d = self.drive(n)
        thp, thrf = self.phases(d)
        spn, s3, psn = self.noise(n)
        fz = np.empty(n)
        done = _run_kernel(self.f, self.dt, self.h_max(d), thp, d.wp, thrf, d.wrf,
                           d.xa, d.ya, d.extra, s3, spn, self.p, fz)
        if done < n:
            raise FloatingPointError(f"spin state diverged at t={self.t + done * self.dt:g} s")
        t = (self.index + np.arange(n)) * self.dt
        self.index += n
        s2 = self.rp.s1_in * np.sin(self.rp.g_f * fz) + psn
        return t, s2, fz, thp

    def run(self, n: int) -> Trace:
        parts = []
        left = n
        while left > 0:
            m = min(CHUNK, left)
            parts.append(self.step_chunk(m))
            left -= m
        t, s2, fz, thp = (np.concatenate(x) for x in zip(*parts))
        return Trace(t, s2, fz, thp, self.fs, SpinState(self.f.copy(), self.t))


def simulator_from_config(cfg, f0=None, omega_p: TimeSignal = None,
                          fp: FieldProgram | None = None, b_margin: float = 0.0) -> Simulator:
    return Simulator(cfg.atom, cfg.pump, fp or cfg.field, cfg.readout, cfg.noise,
                     cfg.sample_rate, f0=f0, omega_p=omega_p, b_margin=b_margin)


def run_trace(cfg, duration: float, *, warmup: float = 0.0, fp: FieldProgram | None = None,
              f0=None) -> Trace:
    """Fixed-step polarimeter trace at ``cfg.sample_rate``.

    ``warmup`` seconds are simulated first and discarded (time axis keeps
    running), letting the pumped spin reach its limit cycle.
    """
    n = sample_count(duration, cfg.sample_rate)
    sim = simulator_from_config(cfg, f0=f0, fp=fp)
    if warmup > 0:
        sim.run(int(round(warmup * cfg.sample_rate)))
    return sim.run(n)
