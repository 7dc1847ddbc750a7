"""Glue between the physics traces and the lock-in: demodulation with the
configured settings, demod-phase calibration, settled noiseless I/Q."""
from __future__ import annotations

import math

import numpy as np

from . import dsp
from .physics import Trace, run_trace

# time for the pumped spin and the lock-in filter to settle, in linewidths
SETTLE_LINEWIDTHS = 25.0


def lockin_settle(cfg) -> float:
    """Time for the lock-in post-filter to forget its zero initial state."""
    return 10.0 / (2 * math.pi * cfg.dsp.lpf_cutoff)


def settle_time(cfg) -> float:
    return SETTLE_LINEWIDTHS / cfg.linewidth + lockin_settle(cfg)


def noiseless(cfg):
    """Copy of ``cfg`` with every stochastic source switched off."""
    c = cfg.copy()
    c.noise.spn_enabled = False
    c.readout.psn_enabled = False
    return c


def demodulate(cfg, trace: Trace, demod_phase: float | None = None,
               trim: bool = True) -> dsp.IqSeries:
    """Lock-in with the configured settings; ``trim`` drops the filter start-up."""
    if demod_phase is None:
        demod_phase = resolve_demod_phase(cfg)
    iq = dsp.lock_in(trace.s2, cfg.sample_rate, None, demod_phase, cfg.dsp.lpf_cutoff,
                     cfg.dsp.decim, ref_phase=trace.pump_phase, t0=float(trace.t[0]))
    if trim:
        iq = iq.tail(float(trace.t[0]) + lockin_settle(cfg))
    return iq


def steady_iq(cfg, demod_phase: float | None = None, average: float = 20e-3):
    """Noiseless settled (I, Q), averaged over ``average`` seconds."""
    c = noiseless(cfg)
    tr = run_trace(c, average + lockin_settle(c), warmup=settle_time(c))
    iq = demodulate(c, tr, demod_phase)
    return float(np.mean(iq.i_vals)), float(np.mean(iq.q_vals))


_PHASE_CACHE: dict[str, float] = {}


def resolve_demod_phase(cfg) -> float:
    """Configured demod phase, or the phase that puts Q = 0 (and I > 0) at
    resonance for the nominal operating point of ``cfg``."""
    if cfg.dsp.demod_phase is not None:
        return cfg.dsp.demod_phase
    c = _nominal(cfg)
    key = c.hash()
    if key not in _PHASE_CACHE:
        i, q = steady_iq(c, demod_phase=0.0)
        # (I, Q) = A (cos(phase - phi0), sin(phase - phi0)); rotate so Q = 0, I > 0
        _PHASE_CACHE[key] = -math.atan2(q, i)
    return _PHASE_CACHE[key]


def _nominal(cfg):
    """Noiseless, unperturbed copy fixing the resonance signal phase."""
    c = noiseless(cfg)
    c.field.delta_b_dc = 0.0
    c.field.rf_x_amp = 0.0
    c.field.rf_y_amp = 0.0
    c.field.extra_noise = None
    c.noise.spn_strength = 0.0
    c.noise.rng_seed = 0
    return c
