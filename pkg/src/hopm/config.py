"""HopmConfig: every physical, noise and signal-chain parameter in one place.

Config files are TOML with unit-suffixed strings (``b_dc = "4.3 uT"``).
Serialisation writes SI values with ``repr`` precision, so
``parse(serialize(cfg)) == cfg`` exactly; the content hash of the serialised
form stamps every output and calibration record.
"""
from __future__ import annotations

import copy
import hashlib
import math
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np
import tomli
import tomli_w

from .comms import CommsConfig, DEFAULT_MESSAGE_HEX, bits_from_hex, bits_to_hex
from .control import PiParams
from .physics import (GAMMA_RB87, AtomParams, FieldProgram, NoiseParams, PumpWaveform,
                      ReadoutParams)
from .units import format_quantity, parse_quantity


class ConfigError(ValueError):
    pass


# pump phase offset that puts an rf drive at varphi_rf = 0 purely on the I
# quadrature for the nominal 45 degree bias geometry (see sensing.align_pump_phase)
DEFAULT_PUMP_PHASE0 = -2.5323


@dataclass
class DspSettings:
    lpf_cutoff: float = 1500.0
    decim: int = 32
    demod_phase: float | None = None     # None: calibrate so Q = 0 at resonance
    psd_resolution: float = 2.0
    psd_overlap: float = 0.5


@dataclass
class HopmConfig:
    atom: AtomParams = dc_field(default_factory=AtomParams)
    pump: PumpWaveform | None = None
    field: FieldProgram = dc_field(default_factory=FieldProgram)
    readout: ReadoutParams = dc_field(default_factory=lambda: ReadoutParams(
        g_f=0.05, g_s=5.0e-10, s1_in=2.0e15))
    noise: NoiseParams = dc_field(default_factory=lambda: NoiseParams(spn_strength=1.4e-3))
    dsp: DspSettings = dc_field(default_factory=DspSettings)
    control: PiParams = dc_field(default_factory=PiParams)
    comms: CommsConfig = dc_field(default_factory=CommsConfig)
    sample_rate: float = 512e3

    def __post_init__(self):
        if self.pump is None:
            self.pump = PumpWaveform(omega_p=self.resonant_omega(), r_peak=2000.0, duty=0.3,
                                     phase0=DEFAULT_PUMP_PHASE0)
        self.readout.detector_bandwidth = self.sample_rate

    @property
    def seed(self) -> int:
        return self.noise.rng_seed

    @seed.setter
    def seed(self, value: int):
        self.noise.rng_seed = int(value)

    @property
    def fs_out(self) -> float:
        return self.sample_rate / self.dsp.decim

    def resonant_omega(self) -> float:
        return self.atom.gamma * self.field.b_dc_mag

    @property
    def linewidth(self) -> float:
        """Effective transverse relaxation rate Gamma + <R_OP>, s^-1."""
        return self.atom.gamma_relax + self.pump.mean_rate

    def copy(self) -> "HopmConfig":
        return copy.deepcopy(self)

    def replace(self, **changes) -> "HopmConfig":
        """Deep copy with dotted-path overrides in SI, e.g.
        ``cfg.replace(**{"field.delta_b_dc": 1e-9})``."""
        new = self.copy()
        for path, value in changes.items():
            obj = new
            *head, last = path.split(".")
            for part in head:
                obj = getattr(obj, part)
            if not hasattr(obj, last):
                raise ConfigError(f"unknown config attribute {path!r}")
            setattr(obj, last, value)
        new.readout.detector_bandwidth = new.sample_rate
        return new

    def hash(self) -> str:
        return config_hash(self)


# --------------------------------------------------------------------------
# (de)serialisation

def _vec(v):
    return [float(x) for x in np.asarray(v, dtype=float)]


def _const(sig, name):
    if sig is None:
        return 0.0
    if callable(sig) or np.ndim(sig) != 0:
        raise ConfigError(f"{name} is time-dependent and cannot be serialised")
    return float(sig)


def to_dict(cfg: HopmConfig) -> dict:
    q = format_quantity
    a, p, f, r, n, d, c, m = (cfg.atom, cfg.pump, cfg.field, cfg.readout, cfg.noise, cfg.dsp,
                              cfg.control, cfg.comms)
    if f.extra_noise is not None:
        raise ConfigError("field.extra_noise is time-dependent and cannot be serialised")
    return {
        "sample_rate": q(cfg.sample_rate, "Hz"),
        "seed": int(n.rng_seed),
        "atom": {"gamma": q(a.gamma, "rad/s/T"), "gamma_relax": q(a.gamma_relax, "1/s"),
                 "f_max_dir": _vec(a.f_max_dir)},
        "pump": {"f_p": q(p.omega_p / (2 * math.pi), "Hz"), "r_peak": q(p.r_peak, "1/s"),
                 "duty": float(p.duty), "phase0": q(p.phase0, "rad")},
        "field": {"b_dc": q(f.b_dc_mag, "T"), "b_dc_dir": _vec(f.b_dc_dir),
                  "delta_b_dc": q(f.delta_b_dc, "T"),
                  "rf_x": q(_const(f.rf_x_amp, "rf_x_amp"), "T"),
                  "rf_y": q(_const(f.rf_y_amp, "rf_y_amp"), "T"),
                  "f_rf": "pump" if f.omega_rf is None else q(f.omega_rf / (2 * math.pi), "Hz"),
                  "varphi_rf": q(f.varphi_rf, "rad")},
        "readout": {"g_f": float(r.g_f), "g_s": float(r.g_s),
                    "back_action": bool(r.back_action_enabled),
                    "s1": q(r.s1_in, "photons/s"), "s3": q(r.s3_in, "photons/s"),
                    "psn": bool(r.psn_enabled)},
        "noise": {"spn": bool(n.spn_enabled), "spn_strength": float(n.spn_strength)},
        "dsp": {"lpf_cutoff": q(d.lpf_cutoff, "Hz"), "decim": int(d.decim),
                "demod_phase": "auto" if d.demod_phase is None else q(d.demod_phase, "rad"),
                "psd_resolution": q(d.psd_resolution, "Hz"),
                "psd_overlap": float(d.psd_overlap)},
        "control": {"kp": float(c.kp), "ki": q(c.ki, "1/s"),
                    "update_rate": "auto" if c.update_rate is None else q(c.update_rate, "Hz"),
                    "output_limit": q(c.output_limit, "T"), "setpoint": float(c.setpoint),
                    "delay_ticks": int(c.delay_ticks), "axis": _vec(c.axis),
                    "plant_gain": "auto" if c.plant_gain is None else float(c.plant_gain)},
        "comms": {"n_channels": int(m.n_channels), "f_base": q(m.f_base, "Hz"),
                  "chan_sep": q(m.chan_sep, "Hz"), "f_ook": q(m.f_ook, "Hz"),
                  "b_rf": q(m.b_rf_amp, "T"),
                  "hop_scheme": "default" if m.hop_scheme is None else list(m.hop_scheme),
                  "n_tx": int(m.n_tx), "message": bits_to_hex(m.message),
                  "message_bits": len(m.message), "guard": float(m.guard),
                  "n_w": int(m.n_w), "preamble": q(m.preamble, "s"), "snr": float(m.snr)},
    }


def _get(sec: dict, key: str, default, unit: str | None = None):
    if key not in sec:
        return default
    v = sec[key]
    if unit is None:
        return v
    try:
        return parse_quantity(v, unit)
    except ValueError as e:
        raise ConfigError(f"{key}: {e}") from None


_SECTIONS = {"atom", "pump", "field", "readout", "noise", "dsp", "control", "comms"}


def from_dict(raw: dict) -> HopmConfig:
    """Build a config; missing keys take the shipped defaults."""
    unknown = set(raw) - _SECTIONS - {"sample_rate", "seed"}
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
    base = HopmConfig()
    s = {k: dict(raw.get(k, {})) for k in _SECTIONS}
    try:
        fs = _get(raw, "sample_rate", base.sample_rate, "Hz")
        a = s["atom"]
        atom = AtomParams(gamma=_get(a, "gamma", base.atom.gamma, "rad/s/T"),
                          gamma_relax=_get(a, "gamma_relax", base.atom.gamma_relax, "1/s"),
                          f_max_dir=_get(a, "f_max_dir", base.atom.f_max_dir))
        f = s["field"]
        f_rf = f.get("f_rf", "pump")
        fld = FieldProgram(
            b_dc_mag=_get(f, "b_dc", base.field.b_dc_mag, "T"),
            b_dc_dir=_get(f, "b_dc_dir", base.field.b_dc_dir),
            delta_b_dc=_get(f, "delta_b_dc", 0.0, "T"),
            rf_x_amp=_get(f, "rf_x", 0.0, "T"), rf_y_amp=_get(f, "rf_y", 0.0, "T"),
            omega_rf=None if f_rf == "pump" else 2 * math.pi * parse_quantity(f_rf, "Hz"),
            varphi_rf=_get(f, "varphi_rf", 0.0, "rad"))
        p = s["pump"]
        f_p = p.get("f_p", "auto")
        omega_p = (atom.gamma * fld.b_dc_mag if f_p == "auto"
                   else 2 * math.pi * parse_quantity(f_p, "Hz"))
        pump = PumpWaveform(omega_p=omega_p, r_peak=_get(p, "r_peak", base.pump.r_peak, "1/s"),
                            duty=float(_get(p, "duty", base.pump.duty)),
                            phase0=_get(p, "phase0", base.pump.phase0, "rad"))
        r = s["readout"]
        br = base.readout
        readout = ReadoutParams(g_f=float(_get(r, "g_f", br.g_f)), g_s=float(_get(r, "g_s", br.g_s)),
                                back_action_enabled=bool(_get(r, "back_action", True)),
                                s1_in=_get(r, "s1", br.s1_in, "photons/s"),
                                s3_in=_get(r, "s3", br.s3_in, "photons/s"),
                                psn_enabled=bool(_get(r, "psn", True)), detector_bandwidth=fs)
        n = s["noise"]
        noise = NoiseParams(spn_enabled=bool(_get(n, "spn", True)),
                            spn_strength=float(_get(n, "spn_strength", base.noise.spn_strength)),
                            rng_seed=int(raw.get("seed", 0)))
        d = s["dsp"]
        dph = d.get("demod_phase", "auto")
        dsp = DspSettings(lpf_cutoff=_get(d, "lpf_cutoff", base.dsp.lpf_cutoff, "Hz"),
                          decim=int(_get(d, "decim", base.dsp.decim)),
                          demod_phase=None if dph == "auto" else parse_quantity(dph, "rad"),
                          psd_resolution=_get(d, "psd_resolution", base.dsp.psd_resolution, "Hz"),
                          psd_overlap=float(_get(d, "psd_overlap", base.dsp.psd_overlap)))
        c = s["control"]
        bc = base.control
        ur = c.get("update_rate", "auto")
        pg = c.get("plant_gain", "auto")
        control = PiParams(kp=float(_get(c, "kp", bc.kp)), ki=_get(c, "ki", bc.ki, "1/s"),
                           update_rate=None if ur == "auto" else parse_quantity(ur, "Hz"),
                           output_limit=_get(c, "output_limit", bc.output_limit, "T"),
                           setpoint=float(_get(c, "setpoint", bc.setpoint)),
                           delay_ticks=int(_get(c, "delay_ticks", bc.delay_ticks)),
                           axis=_get(c, "axis", bc.axis),
                           plant_gain=None if pg == "auto" else float(pg))
        m = s["comms"]
        bm = base.comms
        hs = m.get("hop_scheme", "default")
        msg = m.get("message", DEFAULT_MESSAGE_HEX)
        comms = CommsConfig(
            n_channels=int(_get(m, "n_channels", bm.n_channels)),
            f_base=_get(m, "f_base", bm.f_base, "Hz"), chan_sep=_get(m, "chan_sep", bm.chan_sep, "Hz"),
            f_ook=_get(m, "f_ook", bm.f_ook, "Hz"), b_rf_amp=_get(m, "b_rf", bm.b_rf_amp, "T"),
            hop_scheme=None if hs == "default" else [int(x) for x in hs],
            n_tx=int(_get(m, "n_tx", bm.n_tx)),
            message=bits_from_hex(msg, int(m["message_bits"]) if "message_bits" in m else None),
            guard=float(_get(m, "guard", bm.guard)), n_w=int(_get(m, "n_w", bm.n_w)),
            preamble=_get(m, "preamble", bm.preamble, "s"), snr=float(_get(m, "snr", bm.snr)))
    except ConfigError:
        raise
    except (ValueError, TypeError, KeyError) as e:
        raise ConfigError(str(e)) from None
    return HopmConfig(atom=atom, pump=pump, field=fld, readout=readout, noise=noise, dsp=dsp,
                      control=control, comms=comms, sample_rate=fs)


def serialize(cfg: HopmConfig) -> str:
    return tomli_w.dumps(to_dict(cfg))


def parse(text: str) -> HopmConfig:
    try:
        raw = tomli.loads(text)
    except tomli.TOMLDecodeError as e:
        raise ConfigError(f"config is not valid TOML: {e}") from None
    return from_dict(raw)


def load(path, overrides: list[str] | None = None) -> HopmConfig:
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from None
    try:
        raw = tomli.loads(text)
    except tomli.TOMLDecodeError as e:
        raise ConfigError(f"config is not valid TOML: {e}") from None
    for ov in overrides or []:
        apply_override(raw, ov)
    return from_dict(raw)


def apply_override(raw: dict, item: str) -> None:
    """``section.key=value`` with a TOML-literal or bare-string value."""
    if "=" not in item:
        raise ConfigError(f"override {item!r} is not key=value")
    key, value = (x.strip() for x in item.split("=", 1))
    try:
        parsed = tomli.loads(f"v = {value}")["v"]
    except tomli.TOMLDecodeError:
        parsed = value
    *head, last = key.split(".")
    sec = raw
    for part in head:
        sec = sec.setdefault(part, {})
    sec[last] = parsed


def config_hash(cfg: HopmConfig) -> str:
    return hashlib.sha256(serialize(cfg).encode()).hexdigest()[:16]


def default_config() -> HopmConfig:
    return HopmConfig()
