"""Field-locked loop: PI control of the dc field from the Q quadrature.

The closed loop is one sequential co-simulation: per lock-in output tick the
spin is advanced over ``decim`` detector samples with the current actuator
field, the polarimeter output is demodulated sample by sample, and the PI law
runs on the decimated Q.  The controller is the velocity form

    u[n] = clamp(u[n-1] + kp (e[n] - e[n-1]) + ki T e[n]),  e = (setpoint - Q) / g

with ``g = dQ/dB`` along the actuation axis, so kp is dimensionless and the
output is in tesla.  A value computed at the end of controller tick n is
applied ``delay_ticks`` ticks later.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit
from scipy import linalg, optimize, signal

from . import dsp
from .instrument import noiseless, resolve_demod_phase, settle_time
from .physics import (CHUNK, Along, FieldProgram, Sum, Tabulated, _propagate,
                      noise_streams, simulator_from_config)


class LoopDivergedError(FloatingPointError):
    pass


@dataclass
class PiParams:
    kp: float = 3.0
    ki: float = 6000.0
    update_rate: float | None = None    # None: every lock-in output sample
    output_limit: float = 2e-6
    setpoint: float = 0.0
    delay_ticks: int = 1
    axis: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0]))
    plant_gain: float | None = None     # dQ/dB along axis; None: identify

    def __post_init__(self):
        a = np.asarray(self.axis, dtype=float).reshape(3)
        self.axis = a / np.linalg.norm(a)
        if self.output_limit <= 0:
            raise ValueError("output_limit must be positive")
        if int(self.delay_ticks) != self.delay_ticks or self.delay_ticks < 1:
            raise ValueError("delay_ticks must be an integer >= 1")

    def ticks_per_update(self, fs_out: float) -> int:
        if self.update_rate is None:
            return 1
        if self.update_rate > fs_out * (1 + 1e-12):
            raise ValueError(f"update_rate {self.update_rate:g} Hz exceeds lock-in rate "
                             f"{fs_out:g} Hz")
        m = fs_out / self.update_rate
        if abs(m - round(m)) > 1e-9 * m:
            raise ValueError("update_rate must divide the lock-in output rate")
        return int(round(m))

    def with_gains(self, kp: float, ki: float) -> "PiParams":
        return PiParams(kp, ki, self.update_rate, self.output_limit, self.setpoint,
                        self.delay_ticks, self.axis.copy(), self.plant_gain)


# --------------------------------------------------------------------------
# co-simulation kernel

# pi_cfg layout
C_KP, C_KIT, C_LIM, C_SET, C_INVG, C_AX, C_AY, C_AZ, C_EVERY, C_CLOSED = range(10)
# pi_state layout: applied u, last computed u, previous error, tick counter, ring index
S_UA, S_U, S_EPREV, S_TICK, S_RIDX = range(5)


@njit(cache=True)
def _loop_kernel(f, dt, h_max, thp, wp, thrf, wrf, xa, ya, extra, s3, spn, psn, p,
                 s1, g_f, lpf, lia, demod_phase, decim, pi_cfg, pi_state, ring,
                 i_out, q_out, u_out):
    k = np.empty((4, 3))
    n_ticks = thp.shape[0] // decim
    every = int(pi_cfg[C_EVERY])
    depth = ring.shape[0]
    ax = pi_cfg[C_AX]
    ay = pi_cfg[C_AY]
    az = pi_cfg[C_AZ]
    for tk in range(n_ticks):
        ua = pi_state[S_UA]
        for j in range(decim):
            s = tk * decim + j
            fz = f[2]
            _propagate(f, dt, h_max, thp[s], wp[s], thrf[s], wrf[s], xa[s], ya[s],
                       extra[s, 0] + ua * ax, extra[s, 1] + ua * ay, extra[s, 2] + ua * az,
                       s3[s], p, k)
            f[0] += spn[s, 0]
            f[1] += spn[s, 1]
            f[2] += spn[s, 2]
            x = s1 * math.sin(g_f * fz) + psn[s]
            dsp.lia_sample(x, thp[s] + demod_phase, lpf[0], lpf[1], lpf[2], lia)
        q = lia[5]
        i_out[tk] = lia[2]
        q_out[tk] = q
        u_out[tk] = ua
        if not (math.isfinite(q) and math.isfinite(f[0]) and math.isfinite(f[1])
                and math.isfinite(f[2])):
            return tk
        tick = int(pi_state[S_TICK])
        if pi_cfg[C_CLOSED] > 0.0 and (tick + 1) % every == 0:
            e = (pi_cfg[C_SET] - q) * pi_cfg[C_INVG]
            u = pi_state[S_U] + pi_cfg[C_KP] * (e - pi_state[S_EPREV]) + pi_cfg[C_KIT] * e
            lim = pi_cfg[C_LIM]
            if u > lim:
                u = lim
            elif u < -lim:
                u = -lim
            pi_state[S_U] = u
            pi_state[S_EPREV] = e
            r = int(pi_state[S_RIDX])
            ring[r] = u
            r = (r + 1) % depth
            pi_state[S_RIDX] = r
            pi_state[S_UA] = ring[r]
        pi_state[S_TICK] = tick + 1
    return n_ticks


@dataclass
class FllResult:
    trace: dsp.IqSeries
    control: np.ndarray          # actuator field applied during each tick, T
    t: np.ndarray                # tick end times, s
    plant_gain: float
    closed: bool

    @property
    def q(self) -> np.ndarray:
        return self.trace.q_vals

    @property
    def i(self) -> np.ndarray:
        return self.trace.i_vals


def _b_margin(pi: PiParams, disturbance_peak: float) -> float:
    return pi.output_limit + disturbance_peak


def fll_run(cfg, pi: PiParams | None = None, disturbance=None, duration: float = 0.1, *,
            closed: bool = True, warmup: float | None = None, omega_p=None,
            fp: FieldProgram | None = None, plant_gain: float | None = None,
            disturbance_peak: float | None = None) -> FllResult:
    """Co-simulate plant, lock-in and PI controller.

    ``disturbance`` is a time-addressable 3-vector field (T) summed into the
    field independently of the actuator.  With ``closed=False`` the same
    pipeline runs with the actuator held at zero, so open- and closed-loop
    runs with one seed share every noise draw.  ``warmup`` (default: the
    settling time of the open-loop resonance) is simulated with the loop
    closed and then discarded; the disturbance sees absolute time.
    """
    pi = pi or cfg.control
    fs = cfg.sample_rate
    decim = int(cfg.dsp.decim)
    fs_out = dsp.check_lockin(fs, None, cfg.dsp.lpf_cutoff, decim)
    every = pi.ticks_per_update(fs_out)
    if not duration > 0:
        raise ValueError("duration must be positive")
    if warmup is None:
        warmup = settle_time(cfg)
    if closed:
        g = plant_gain if plant_gain is not None else (
            pi.plant_gain if pi.plant_gain is not None else identify_plant(cfg, pi.axis).gain)
        if g == 0 or not math.isfinite(g):
            raise ValueError("plant gain must be finite and non-zero")
    else:
        g = plant_gain or pi.plant_gain or 1.0
    demod_phase = resolve_demod_phase(cfg)
    if disturbance_peak is None:
        disturbance_peak = _peak(disturbance)
    sim = simulator_from_config(cfg, omega_p=omega_p, fp=fp,
                                b_margin=_b_margin(pi, disturbance_peak))
    b, a = dsp.first_order_coeffs(cfg.dsp.lpf_cutoff, fs)
    lpf = np.array([b[0], b[1], a[1]])
    lia = np.zeros(6)
    pi_cfg = np.array([pi.kp, pi.ki * every / fs_out, pi.output_limit, pi.setpoint, 1.0 / g,
                       pi.axis[0], pi.axis[1], pi.axis[2], every, 1.0 if closed else 0.0])
    pi_state = np.zeros(5)
    ring = np.zeros(int(pi.delay_ticks))

    n_warm = int(round(warmup * fs_out))
    n_keep = int(round(duration * fs_out))
    if n_keep < 1:
        raise ValueError("duration shorter than one lock-in tick")
    total = n_warm + n_keep
    i_all = np.empty(total)
    q_all = np.empty(total)
    u_all = np.empty(total)
    ticks_per_chunk = max(CHUNK // decim, 1)
    done = 0
    while done < total:
        m = min(ticks_per_chunk, total - done)
        n = m * decim
        t = sim.t + np.arange(n) * sim.dt
        d = sim.drive(n, extra_add=_sample_vec(disturbance, t))
        thp, thrf = sim.phases(d)
        spn, s3, psn = sim.noise(n)
        got = _loop_kernel(sim.f, sim.dt, sim.h_max(d), thp, d.wp, thrf, d.wrf, d.xa, d.ya,
                           d.extra, s3, spn, psn, sim.p, cfg.readout.s1_in, cfg.readout.g_f,
                           lpf, lia, demod_phase, decim, pi_cfg, pi_state, ring,
                           i_all[done:done + m], q_all[done:done + m], u_all[done:done + m])
        if got < m:
            t_bad = (done + got + 1) / fs_out
            raise LoopDivergedError(
                f"loop signals became non-finite at t={t_bad:.6g} s "
                f"(u={pi_state[S_U]:.3g} T); gains may be unstable")
        sim.index += n
        done += m
    t_out = (np.arange(total) + 1) / fs_out
    sl = slice(n_warm, total)
    iq = dsp.IqSeries(i_all[sl], q_all[sl], fs_out, demod_phase, None, t_out[sl])
    return FllResult(iq, u_all[sl], t_out[sl], g, closed)


def _sample_vec(sig, t):
    if sig is None:
        return None
    from .physics import sample_signal
    return sample_signal(sig, t, vector=True)


def _peak(sig) -> float:
    if sig is None:
        return 0.0
    if isinstance(sig, Tabulated):
        v = sig.values
        return float(np.max(np.abs(v))) * (1.0 if v.ndim == 1 else math.sqrt(3.0))
    if isinstance(sig, Along):
        return _peak(sig.sig)
    if isinstance(sig, Sum):
        return sum(_peak(p) for p in sig.parts)
    if isinstance(sig, Step):
        return abs(sig.amp)
    if callable(sig):
        return 0.0
    return float(np.max(np.linalg.norm(np.atleast_2d(sig), axis=-1)))


@dataclass
class Step:
    """Field step of ``amp`` tesla along ``axis`` switched on at ``t_on``."""
    amp: float
    t_on: float
    axis: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0]))
    t_off: float = math.inf

    def __call__(self, t):
        t = np.atleast_1d(t)
        on = ((t >= self.t_on) & (t < self.t_off)).astype(float)
        return np.multiply.outer(self.amp * on, np.asarray(self.axis, dtype=float))


# --------------------------------------------------------------------------
# plant identification and the linear loop model

@dataclass
class PlantModel:
    """First-order small-signal model of dQ/dB along the actuation axis."""
    gain: float        # Q units per tesla
    pole: float        # rad/s
    axis: np.ndarray
    q0: float          # settled Q at zero offset

    @property
    def pole_hz(self) -> float:
        return self.pole / (2 * math.pi)


_PLANT_CACHE: dict[tuple, PlantModel] = {}

# probe amplitude for identification: small against the 1/(gamma T2) half-width
PROBE = 0.5e-9


def static_gain(cfg, axis, delta: float = PROBE) -> tuple[float, float]:
    """Central-difference dQ/dB along ``axis`` from noiseless settled runs;
    returns (gain, Q at zero offset)."""
    from .instrument import steady_iq
    axis = np.asarray(axis, dtype=float)
    dph = resolve_demod_phase(cfg)
    out = []
    for s in (-1.0, 0.0, 1.0):
        c = noiseless(cfg)
        c.field.extra_noise = Sum(c.field.extra_noise, s * delta * axis)
        out.append(steady_iq(c, demod_phase=dph)[1])
    return (out[2] - out[0]) / (2 * delta), out[1]


def identify_plant(cfg, axis=None, delta: float = PROBE) -> PlantModel:
    """Fit gain and pole of the open-loop Q response to a small field step.

    The gain comes from a central difference of settled Q; the pole from a
    least-squares fit of the simulated step response (minus a matched run
    without the step) against ``g/(1 + s/p)`` followed by the lock-in filter.
    """
    axis = cfg.control.axis if axis is None else np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    c0 = noiseless(cfg)
    c0.seed = 0      # noiseless runs do not depend on the seed
    key = (c0.hash(), tuple(np.round(axis, 12)), delta)
    if key in _PLANT_CACHE:
        return _PLANT_CACHE[key]
    gain, q0 = static_gain(cfg, axis, delta)
    c = noiseless(cfg)
    t_on = settle_time(c)
    dur = 12.0 / cfg.linewidth
    # a matched run without the step cancels the deterministic carrier ripple
    runs = [fll_run(c, c.control, dist, dur + 2e-3, closed=False, warmup=t_on - 2e-3,
                    plant_gain=1.0) for dist in (Step(delta, t_on, axis), None)]
    t = runs[0].t - t_on
    y = (runs[0].q - runs[1].q) / (gain * delta)
    m = t > -1e-3

    def cost(logp):
        model = LinearLoop(1.0, math.exp(logp), cfg.dsp.lpf_cutoff, cfg.fs_out, 0.0, 0.0)
        return float(np.sum((model.open_step(t[m]) - y[m]) ** 2))

    p0 = math.log(cfg.linewidth)
    r = optimize.minimize_scalar(cost, bounds=(p0 - 2.0, p0 + 2.0), method="bounded",
                                 options={"xatol": 1e-6})
    model = PlantModel(gain, math.exp(r.x), axis, q0)
    _PLANT_CACHE[key] = model
    return model


class LinearLoop:
    """Hybrid linear model of the loop: continuous plant pole and two-pole
    lock-in filter, sampled with zero-order hold at the controller period,
    discrete velocity-form PI and an integer tick delay.  Gains refer to the
    normalised plant (unity dc gain)."""

    def __init__(self, gain: float, pole: float, lpf_cutoff: float, fs_ctrl: float,
                 kp: float, ki: float, delay_ticks: int = 1):
        self.gain, self.pole, self.lpf = gain, pole, lpf_cutoff
        self.T = 1.0 / fs_ctrl
        self.kp, self.ki, self.delay = kp, ki, int(delay_ticks)
        wc = 2 * math.pi * lpf_cutoff
        # states: plant output, first and second filter stages
        a = np.array([[-pole, 0.0, 0.0], [wc, -wc, 0.0], [0.0, wc, -wc]])
        b = np.array([[pole], [0.0], [0.0]])
        self.ac, self.bc = a, b
        self.c = np.array([[0.0, 0.0, 1.0]])
        self.ad, self.bd, *_ = signal.cont2discrete((a, b, self.c, np.zeros((1, 1))), self.T,
                                                    method="zoh")

    @classmethod
    def from_plant(cls, plant: PlantModel, cfg, pi: PiParams) -> "LinearLoop":
        fs_ctrl = cfg.fs_out / pi.ticks_per_update(cfg.fs_out)
        return cls(plant.gain, plant.pole, cfg.dsp.lpf_cutoff, fs_ctrl, pi.kp, pi.ki,
                   pi.delay_ticks)

    def _z(self, f):
        return np.exp(1j * 2 * math.pi * np.asarray(f, dtype=float) * self.T)

    def pulse_tf(self, f):
        """Sampled plant-plus-filter response to a held input, C (zI - A)^-1 B."""
        z = self._z(f)
        out = np.empty(z.shape, dtype=complex)
        eye = np.eye(3)
        for k, zk in np.ndenumerate(z):
            out[k] = (self.c @ linalg.solve(zk * eye - self.ad, self.bd))[0, 0]
        return out

    def controller_tf(self, f):
        z = self._z(f)
        return self.kp + self.ki * self.T / (1.0 - 1.0 / z)

    def loop_gain(self, f):
        z = self._z(f)
        return self.controller_tf(f) * z ** (1 - self.delay) * self.pulse_tf(f)

    def sensitivity(self, f):
        return 1.0 / (1.0 + self.loop_gain(f))

    def xi(self, f):
        """Noise rejection |1 + L|^2 of the sampled measurement."""
        return np.abs(1.0 + self.loop_gain(f)) ** 2

    def closed_poles(self):
        """Closed-loop poles in z; |z| < 1 for stability."""
        # augment: plant/filter states, integrator-form controller, delay line
        n, dly = 3, self.delay
        kit = self.ki * self.T
        dim = n + 2 + dly
        m = np.zeros((dim, dim))
        # x[k+1] = Ad x[k] + Bd v[k], v = output of delay line
        m[:n, :n] = self.ad
        m[:n, n + 2 + dly - 1] = self.bd[:, 0]
        # y[k] = C x[k+1]; e = -y; controller state (u_prev, e_prev)
        cad = self.c @ self.ad
        cbd = self.c @ self.bd
        row_e = np.zeros(dim)
        row_e[:n] = -cad[0]
        row_e[n + 2 + dly - 1] = -cbd[0, 0]
        row_u = np.zeros(dim)
        row_u[n] = 1.0
        row_u += (self.kp + kit) * row_e
        row_u[n + 1] -= self.kp
        m[n] = row_u
        m[n + 1] = row_e
        # delay line: slot 0 takes u, slots shift toward the applied end
        m[n + 2] = row_u
        for j in range(1, dly):
            m[n + 2 + j, n + 2 + j - 1] = 1.0
        return np.linalg.eigvals(m)

    def is_stable(self) -> bool:
        return bool(np.all(np.abs(self.closed_poles()) < 1.0))

    def step(self, n_ticks: int, amp: float = 1.0, closed: bool = True):
        """Sampled measurement after a unit-normalised disturbance step of
        ``amp`` applied from t = 0 (in plant-input units)."""
        x = np.zeros(3)
        line = np.zeros(self.delay)
        u = e_prev = 0.0
        kit = self.ki * self.T
        y = np.empty(n_ticks)
        for k in range(n_ticks):
            v = line[-1] if closed else 0.0
            x = self.ad @ x + self.bd[:, 0] * (amp + v)
            y[k] = x[2]
            if closed:
                e = -y[k]
                u = u + self.kp * (e - e_prev) + kit * e
                e_prev = e
                line = np.concatenate(([u], line[:-1]))
        return y

    def open_step(self, t):
        """Continuous open-loop unit step response at times ``t`` (s)."""
        t = np.asarray(t, dtype=float)
        out = np.zeros_like(t)
        a_inv_b = linalg.solve(self.ac, self.bc)
        eye = np.eye(3)
        for k, tk in np.ndenumerate(t):
            if tk > 0:
                out[k] = (self.c @ (linalg.expm(self.ac * tk) - eye) @ a_inv_b)[0, 0]
        return out


def first_order_settling(ki: float, band: float = 0.05) -> float:
    """Settling time ln(1/band)/ki of a pure integrator on a unity plant."""
    return math.log(1.0 / band) / ki


# --------------------------------------------------------------------------
# step response

@dataclass
class StepResult:
    settling_time: float      # s, inf if not settled or unstable
    overshoot: float          # fraction of the peak excursion
    stable: bool
    t: np.ndarray             # time since the step, s
    q_mean: np.ndarray        # repetition-averaged Q
    control_mean: np.ndarray  # repetition-averaged actuator field, T
    peak: float
    n_rep: int
    message: str = ""


def settling_metrics(t, y, y0: float, band: float = 0.05):
    """Settling time and overshoot of ``y`` after a step at t = 0."""
    dev = y - y0
    post = t >= 0
    tp, dp = t[post], dev[post]
    if len(dp) == 0:
        raise ValueError("no samples after the step")
    k = int(np.argmax(np.abs(dp)))
    peak = float(dp[k])
    if peak == 0.0:
        return 0.0, 0.0, 0.0
    outside = np.nonzero(np.abs(dp) > band * abs(peak))[0]
    last = outside[-1]
    if last == len(dp) - 1:
        settle = math.inf
    else:
        settle = float(tp[last + 1])
    after = dp[k:] * -math.copysign(1.0, peak)
    overshoot = max(float(np.max(after)), 0.0) / abs(peak)
    return settle, overshoot, peak


def step_response(cfg, pi: PiParams | None = None, step_amp: float = 32e-9, axis=None, *,
                  n_rep: int = 10, duration: float = 0.02, pre: float = 2e-3,
                  band: float = 0.05, seed: int | None = None) -> StepResult:
    """Closed-loop Q after a field step, averaged over ``n_rep`` noise seeds.

    Settling time is measured to the ±``band`` fraction of the peak Q
    excursion around the pre-step mean.  A diverging or non-settling loop is
    reported through ``stable=False``.
    """
    pi = pi or cfg.control
    axis = pi.axis if axis is None else np.asarray(axis, dtype=float)
    if n_rep < 1:
        raise ValueError("n_rep must be >= 1")
    if step_amp == 0.0:
        return StepResult(0.0, 0.0, True, np.zeros(0), np.zeros(0), np.zeros(0), 0.0, n_rep)
    g = pi.plant_gain if pi.plant_gain is not None else identify_plant(cfg, pi.axis).gain
    base_seed = cfg.seed if seed is None else seed
    t_on = settle_time(cfg) + pre
    qs, us = [], []
    for r in range(n_rep):
        c = cfg.copy()
        c.seed = base_seed + r
        try:
            res = fll_run(c, pi, Step(step_amp, t_on, axis), duration + pre, plant_gain=g,
                          warmup=t_on - pre)
        except LoopDivergedError as e:
            return StepResult(math.inf, math.inf, False, np.zeros(0), np.zeros(0), np.zeros(0),
                              math.nan, r, str(e))
        qs.append(res.q)
        us.append(res.control)
    t = res.t - t_on
    q = np.mean(qs, axis=0)
    u = np.mean(us, axis=0)
    q0 = float(np.mean(q[t < 0]))
    settle, over, peak = settling_metrics(t, q, q0, band)
    railed = np.any(np.abs(u[-max(len(u) // 10, 1):]) >= pi.output_limit * (1 - 1e-9))
    stable = math.isfinite(settle) and not railed
    msg = "" if stable else ("actuator saturated" if railed else "did not settle")
    return StepResult(settle if stable else math.inf, over, stable, t, q, u, peak, n_rep, msg)


# --------------------------------------------------------------------------
# noise rejection

@dataclass
class NoiseSpec:
    """White field noise of one-sided ASD ``asd`` (T/rtHz) through first-order
    low-pass ``lp`` and high-pass ``hp`` sections, along ``axis``."""
    asd: float = 10e-12
    lp: float = 1e3
    hp: float = 1.0
    axis: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))
    seed: int | None = None       # None: derived from the config seed

    def realize(self, fs: float, n: int, t0: float, seed: int) -> Tabulated:
        rng = noise_streams(seed if self.seed is None else self.seed)["inject"]
        w = self.asd * math.sqrt(fs / 2.0) * rng.standard_normal(n)
        if self.lp:
            w = dsp.iir_first_order(w, self.lp, fs, "lowpass")
        if self.hp:
            w = dsp.iir_first_order(w, self.hp, fs, "highpass")
        return Tabulated(np.multiply.outer(w, np.asarray(self.axis, dtype=float)), fs, t0)

    def psd(self, f, fs: float):
        """One-sided PSD (T^2/Hz) of the realised noise at ``f``."""
        h = np.ones(np.shape(f), dtype=complex)
        if self.lp:
            h = h * dsp.first_order_response(f, self.lp, fs, "lowpass")
        if self.hp:
            h = h * dsp.first_order_response(f, self.hp, fs, "highpass")
        return self.asd ** 2 * np.abs(h) ** 2


@dataclass
class RejectionSpectrum:
    freqs: np.ndarray
    xi: np.ndarray                # power ratio; nan where invalid
    valid: np.ndarray
    p_ol_n: dsp.Spectrum
    p_ol_c: dsp.Spectrum
    p_cl_n: dsp.Spectrum
    p_cl_c: dsp.Spectrum
    channel: str = "q"
    model: LinearLoop | None = None

    @property
    def xi_db(self) -> np.ndarray:
        return 10.0 * np.log10(self.xi)

    def smoothed(self, width: float = 20.0):
        """ξ from PSD differences summed over a ``width`` Hz moving window,
        and the linear-model prediction weighted the same way."""
        d_ol = self.p_ol_n.psd - self.p_ol_c.psd
        d_cl = self.p_cl_n.psd - self.p_cl_c.psd
        k = max(int(round(width / self.p_ol_n.df)), 1)
        ker = np.ones(k)
        num = np.convolve(d_ol, ker, mode="same")
        den = np.convolve(d_cl, ker, mode="same")
        ok = (num > 0) & (den > 0)
        xi = np.where(ok, num / np.where(den > 0, den, 1.0), np.nan)
        pred = None
        if self.model is not None:
            s2 = np.zeros_like(self.freqs)
            pos = self.freqs > 0          # the integrator pole sits at dc
            s2[pos] = 1.0 / self.model.xi(self.freqs[pos])
            pred = np.convolve(d_ol, ker, mode="same") / np.convolve(d_ol * s2, ker, mode="same")
        return xi, pred

    def at(self, f0: float, width: float = 20.0) -> float:
        xi, _ = self.smoothed(width)
        return float(xi[int(np.argmin(np.abs(self.freqs - f0)))])


def xi_measure(cfg, pi: PiParams | None = None, noise: NoiseSpec | None = None,
               duration: float = 4.0, *, resolution: float = 4.0, channel: str = "q",
               min_averages: int = 8) -> RejectionSpectrum:
    """Noise rejection ξ(f) from four matched runs (open/closed loop, with
    and without injected noise) sharing every noise draw."""
    pi = pi or cfg.control
    noise = noise or NoiseSpec()
    if channel not in ("i", "q"):
        raise ValueError("channel must be 'i' or 'q'")
    fs_out = cfg.fs_out
    seg = dsp.seg_len_for(resolution, fs_out)
    step = seg - int(round(seg * cfg.dsp.psd_overlap))
    n_out = int(round(duration * fs_out))
    n_avg = 1 + (n_out - seg) // step if n_out >= seg else 0
    if n_avg < min_averages:
        need = (seg + (min_averages - 1) * step) / fs_out
        raise ValueError(f"duration {duration:g} s gives {n_avg} averages at {resolution:g} Hz "
                         f"resolution; need at least {need:.3g} s")
    plant = identify_plant(cfg, pi.axis)
    g = pi.plant_gain if pi.plant_gain is not None else plant.gain
    warm = settle_time(cfg)
    fs = cfg.sample_rate
    n_inj = int(round((warm + duration) * fs)) + 2 * cfg.dsp.decim
    inj = noise.realize(fs, n_inj, 0.0, cfg.seed)
    spectra = {}
    for closed in (False, True):
        for tag, dist in (("n", inj), ("c", None)):
            res = fll_run(cfg, pi, dist, duration, closed=closed, warmup=warm, plant_gain=g,
                          disturbance_peak=float(np.max(np.abs(inj.values))))
            x = res.i if channel == "i" else res.q
            spectra[("cl" if closed else "ol") + tag] = dsp.psd_welch(
                x, fs_out, seg, cfg.dsp.psd_overlap)
    d_ol = spectra["oln"].psd - spectra["olc"].psd
    d_cl = spectra["cln"].psd - spectra["clc"].psd
    valid = (d_ol > 0) & (d_cl > 0)
    xi = np.where(valid, d_ol / np.where(d_cl > 0, d_cl, 1.0), np.nan)
    model = LinearLoop.from_plant(plant, cfg, pi)
    return RejectionSpectrum(spectra["oln"].freqs, xi, valid, spectra["oln"], spectra["olc"],
                             spectra["cln"], spectra["clc"], channel, model)
