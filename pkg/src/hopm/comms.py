"""FHSS / OOK magnetic link: encoding, threshold calibration, decoding, BER."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import binomtest

from .control import fll_run, identify_plant
from .instrument import settle_time
from .physics import Along, FieldProgram, Sum, Tabulated, noise_streams

# ASCII "OOK!": 16 ones, and every 5-symbol window holds both bit values
DEFAULT_MESSAGE_HEX = "0x4F4F4B21"


def bits_from_hex(text: str, n_bits: int | None = None) -> list[int]:
    """Hex (``0x..``) or bit-string (``0b..`` / plain 0/1) to an MSB-first list."""
    s = str(text).strip().lower().replace("_", "")
    if s.startswith("0b"):
        return [int(c) for c in s[2:]]
    if s.startswith("0x"):
        s = s[2:]
        n = n_bits if n_bits is not None else 4 * len(s)
        val = int(s, 16)
        if val >= 1 << n:
            raise ValueError(f"message 0x{s} does not fit in {n} bits")
        return [(val >> (n - 1 - k)) & 1 for k in range(n)]
    if s and set(s) <= {"0", "1"}:
        return [int(c) for c in s]
    raise ValueError(f"cannot parse message {text!r}")


def bits_to_hex(bits) -> str:
    bits = list(bits)
    val = 0
    for b in bits:
        val = (val << 1) | int(b)
    return "0x" + format(val, f"0{(len(bits) + 3) // 4}X")


@dataclass
class CommsConfig:
    n_channels: int = 16
    f_base: float = 30e3
    chan_sep: float = 250.0
    f_ook: float = 100.0
    b_rf_amp: float = 6.39e-9
    hop_scheme: list[int] | None = None      # None: 1..N, N..1 repeated
    n_tx: int = 67
    message: list[int] = field(default_factory=lambda: bits_from_hex(DEFAULT_MESSAGE_HEX))
    guard: float = 0.2
    n_w: int = 5
    preamble: float = 0.03
    snr: float = 5.0

    def __post_init__(self):
        if self.n_channels < 1:
            raise ValueError("n_channels must be >= 1")
        if not self.chan_sep > self.f_ook > 0:
            raise ValueError("need chan_sep > f_ook > 0 so channels are resolvable")
        if not 0 <= self.guard < 0.5:
            raise ValueError("guard must lie in [0, 0.5)")
        if self.n_tx < 1 or self.n_w < 1:
            raise ValueError("n_tx and n_w must be >= 1")
        if self.b_rf_amp < 0 or self.preamble < 0:
            raise ValueError("b_rf_amp and preamble must be >= 0")
        if any(b not in (0, 1) for b in self.message):
            raise ValueError("message must contain only bits")
        if self.hop_scheme is not None and any(
                not 1 <= int(c) <= self.n_channels for c in self.hop_scheme):
            raise ValueError(f"hop indices must lie in [1, {self.n_channels}]")

    @property
    def symbol_time(self) -> float:
        return 1.0 / self.f_ook

    @property
    def b_noise(self) -> float:
        """Injected noise level for the configured SNR (inf SNR gives 0)."""
        return noise_level(self.b_rf_amp, self.snr)

    def channel_freq(self, ch) -> np.ndarray | float:
        """Carrier of 1-based channel ``ch`` in Hz."""
        return self.f_base + (np.asarray(ch) - 1) * self.chan_sep


def default_hop_scheme(n_channels: int, length: int) -> list[int]:
    """1, 2, .., N, N, .., 1 repeated and cut to ``length``."""
    cycle = list(range(1, n_channels + 1)) + list(range(n_channels, 0, -1))
    reps = -(-length // len(cycle))
    return (cycle * reps)[:length]


def hop_sequence(cc: CommsConfig, n_symbols: int | None = None) -> np.ndarray:
    n = len(cc.message) if n_symbols is None else n_symbols
    seq = cc.hop_scheme if cc.hop_scheme is not None else default_hop_scheme(cc.n_channels, n)
    if len(seq) < n:
        raise ValueError(f"hop schedule has {len(seq)} entries for {n} symbols")
    return np.asarray(seq[:n], dtype=int)


class Piecewise:
    """Piecewise-constant signal: ``values[j]`` on ``[edges[j], edges[j+1])``,
    ``before`` / ``after`` outside."""

    def __init__(self, edges, values, before: float, after: float):
        self.edges = np.asarray(edges, dtype=float)
        self.values = np.asarray(values, dtype=float)
        if len(self.edges) != len(self.values) + 1:
            raise ValueError("need one more edge than values")
        self.table = np.concatenate(([before], self.values, [after]))

    def __call__(self, t):
        return self.table[np.searchsorted(self.edges, t, side="right")]


@dataclass
class TxSchedule:
    """Synchronised transmitter/receiver program for one message."""
    bits: np.ndarray
    channels: np.ndarray
    freqs: np.ndarray          # Hz per symbol
    t_start: float             # start of symbol 0, s
    symbol_time: float
    rf_amp: Piecewise          # OOK envelope of the rf X quadrature, T
    omega_p: Piecewise         # pump, rf carrier and lock-in frequency, rad/s

    @property
    def n_symbols(self) -> int:
        return len(self.bits)

    @property
    def t_end(self) -> float:
        return self.t_start + self.n_symbols * self.symbol_time

    def window(self, j: int, guard: float = 0.0) -> tuple[float, float]:
        t0 = self.t_start + j * self.symbol_time
        return t0 + guard * self.symbol_time, t0 + (1.0 - guard) * self.symbol_time


def encode_tx(cc: CommsConfig, t_start: float = 0.0, message=None,
              amplitude: float | None = None) -> TxSchedule:
    """OOK onto the rf amplitude, one hop channel per symbol.

    Before the first symbol the program idles on the first channel with the
    carrier off; after the last it holds the last channel.
    """
    bits = np.asarray(cc.message if message is None else message, dtype=int)
    if bits.size == 0:
        raise ValueError("message is empty")
    amp = cc.b_rf_amp if amplitude is None else float(amplitude)
    ch = hop_sequence(cc, len(bits))
    f = np.asarray(cc.channel_freq(ch), dtype=float)
    edges = t_start + np.arange(len(bits) + 1) * cc.symbol_time
    w = 2 * math.pi * f
    return TxSchedule(bits, ch, f, float(t_start), cc.symbol_time,
                      Piecewise(edges, amp * bits, 0.0, 0.0),
                      Piecewise(edges, w, w[0], w[-1]))


# --------------------------------------------------------------------------
# noise injection

def noise_level(b_rf: float, snr: float) -> float:
    """b_noise = b_rf / SNR; an infinite SNR means no noise."""
    if not snr > 0:
        raise ValueError("target SNR must be positive")
    return 0.0 if math.isinf(snr) else b_rf / snr


@dataclass
class NoiseInjection:
    """White Gaussian field noise whose PSD integrated over ``bandwidth``
    (the symbol rate) equals ``b_noise`` squared."""
    b_noise: float
    bandwidth: float = 100.0
    axis: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))

    @classmethod
    def for_snr(cls, cc: CommsConfig, snr: float | None = None, axis=None):
        ni = cls(noise_level(cc.b_rf_amp, cc.snr if snr is None else snr), cc.f_ook)
        if axis is not None:
            ni.axis = np.asarray(axis, dtype=float)
        return ni

    @property
    def psd(self) -> float:
        """One-sided PSD in T^2/Hz."""
        return self.b_noise ** 2 / self.bandwidth

    def realize(self, fs: float, duration: float, seed: int, t0: float = 0.0) -> Tabulated | None:
        if self.b_noise == 0:
            return None
        n = int(math.ceil(duration * fs)) + 1
        rng = noise_streams(seed)["inject"]
        w = math.sqrt(self.psd * fs / 2.0) * rng.standard_normal(n)
        axis = np.asarray(self.axis, dtype=float) / np.linalg.norm(self.axis)
        return Tabulated(np.multiply.outer(w, axis), fs, t0)


def inject_noise(ni: NoiseInjection, duration: float, fs: float, seed: int = 0):
    """Time-addressable noise field (T, 3-vector) or None for zero noise."""
    return ni.realize(fs, duration, seed)


# --------------------------------------------------------------------------
# receiver

@dataclass
class ThresholdCalibration:
    n_w: int
    v_h: np.ndarray
    v_l: np.ndarray

    @property
    def v_thr(self) -> np.ndarray:
        return 0.5 * (self.v_h + self.v_l)


def calibrate_thresholds(means, n_w: int = 5) -> ThresholdCalibration:
    """Local thresholds from per-symbol means, shape (n_symbols,) or
    (n_repetitions, n_symbols).

    Repetitions are averaged first; V_H and V_L are the running max and min
    over a centred window of ``n_w`` symbols, clipped at the message ends.
    """
    m = np.atleast_2d(np.asarray(means, dtype=float))
    if m.shape[0] < 1 or m.shape[1] < 1:
        raise ValueError("need at least one repetition of one symbol")
    avg = m.mean(axis=0)
    n = len(avg)
    if n_w < 1 or n_w > n:
        raise ValueError(f"window n_w={n_w} must lie in [1, {n}]")
    h = n_w // 2
    v_h = np.array([avg[max(0, j - h):j + h + 1].max() for j in range(n)])
    v_l = np.array([avg[max(0, j - h):j + h + 1].min() for j in range(n)])
    return ThresholdCalibration(n_w, v_h, v_l)


def symbol_means(iq, tx: TxSchedule, guard: float = 0.2) -> np.ndarray:
    """Mean I over each symbol window with ``guard`` trimmed at both edges."""
    t = np.asarray(iq.t)
    out = np.empty(tx.n_symbols)
    for j in range(tx.n_symbols):
        a, b = tx.window(j, guard)
        sel = (t >= a) & (t < b)
        if not sel.any():
            raise ValueError(f"I/Q record does not cover symbol {j}")
        out[j] = float(np.mean(iq.i_vals[sel]))
    return out


@dataclass
class LinkResult:
    msg_tx: np.ndarray
    msg_rx: np.ndarray
    per_symbol_means: np.ndarray
    thresholds: np.ndarray

    @property
    def xor_map(self) -> np.ndarray:
        return np.bitwise_xor(self.msg_tx, self.msg_rx)

    @property
    def ber(self) -> float:
        return float(np.mean(self.xor_map))

    def to_text(self) -> str:
        lines = [f"msg_tx = {bits_to_hex(self.msg_tx)}", f"msg_rx = {bits_to_hex(self.msg_rx)}",
                 f"ber = {self.ber:.6g}", "symbol,bit_tx,bit_rx,mean_i,threshold,xor"]
        for j, (a, b, m, v) in enumerate(zip(self.msg_tx, self.msg_rx,
                                             self.per_symbol_means, self.thresholds)):
            lines.append(f"{j},{a},{b},{m:.9g},{v:.9g},{a ^ b}")
        return "\n".join(lines) + "\n"


def decode_means(means, cal: ThresholdCalibration, msg_tx=None) -> LinkResult:
    means = np.asarray(means, dtype=float)
    if len(cal.v_thr) != len(means):
        raise ValueError(f"calibration covers {len(cal.v_thr)} symbols, "
                         f"message has {len(means)}")
    rx = (means > cal.v_thr).astype(int)
    tx = rx.copy() if msg_tx is None else np.asarray(msg_tx, dtype=int)
    if len(tx) != len(rx):
        raise ValueError("msg_tx length differs from the decoded message")
    return LinkResult(tx, rx, means, cal.v_thr.copy())


def decode_rx(iq, tx: TxSchedule, cal: ThresholdCalibration, guard: float = 0.2,
              msg_tx=None) -> LinkResult:
    """Bits from the I quadrature: symbol mean above the local threshold is 1."""
    return decode_means(symbol_means(iq, tx, guard), cal,
                        tx.bits if msg_tx is None else msg_tx)


# --------------------------------------------------------------------------
# end-to-end link

def transmit(cfg, seed: int, *, amplitude: float | None = None, snr: float | None = None,
             message=None, pi=None):
    """One closed-loop transmission; returns (I/Q record, schedule)."""
    cc = cfg.comms
    pi = pi or cfg.control
    gain = pi.plant_gain if pi.plant_gain is not None else identify_plant(cfg, pi.axis).gain
    c = cfg.copy()
    c.seed = int(seed)
    warm = settle_time(c)
    tx = encode_tx(cc, warm + cc.preamble, message, amplitude)
    duration = tx.t_end - warm
    ni = NoiseInjection.for_snr(cc, snr)
    noise = ni.realize(c.sample_rate, tx.t_end + 1e-3, c.seed)   # tick rounding
    fp = c.field
    fp.rf_x_amp = tx.rf_amp
    fp.omega_rf = None
    if noise is not None:
        fp.extra_noise = Sum(fp.extra_noise, noise) if fp.extra_noise is not None else noise
    res = fll_run(c, pi, None, duration, closed=True, warmup=warm, omega_p=tx.omega_p, fp=fp,
                  plant_gain=gain)
    return res.trace, tx


def link_means(cfg, seeds, **kw) -> tuple[np.ndarray, TxSchedule]:
    """Per-symbol means, one row per seeded repetition."""
    rows, tx = [], None
    for s in seeds:
        iq, tx = transmit(cfg, s, **kw)
        rows.append(symbol_means(iq, tx, cfg.comms.guard))
    return np.array(rows), tx


@dataclass
class SessionResult:
    """N_TX repetitions decoded with one threshold calibration."""
    links: list
    calibration: ThresholdCalibration
    means: np.ndarray
    amplitude: float
    snr: float

    @property
    def n_errors(self) -> int:
        return int(sum(int(r.xor_map.sum()) for r in self.links))

    @property
    def n_bits(self) -> int:
        return int(sum(len(r.msg_tx) for r in self.links))

    @property
    def ber(self) -> float:
        return self.n_errors / self.n_bits

    def ber_ci(self, level: float = 0.95) -> tuple[float, float]:
        ci = binomtest(self.n_errors, self.n_bits).proportion_ci(level, method="wilson")
        return float(ci.low), float(ci.high)

    @property
    def error_profile(self) -> np.ndarray:
        """Error count per symbol position summed over repetitions."""
        return np.sum([r.xor_map for r in self.links], axis=0)


def run_session(cfg, n_tx: int | None = None, *, seed: int | None = None,
                amplitude: float | None = None, snr: float | None = None,
                cal: ThresholdCalibration | None = None) -> SessionResult:
    """Transmit the configured message ``n_tx`` times with consecutive seeds.

    Without ``cal`` the thresholds are calibrated on the same repetitions
    (training message equals the evaluation message).
    """
    cc = cfg.comms
    n = cc.n_tx if n_tx is None else int(n_tx)
    base = cfg.seed if seed is None else int(seed)
    snr = cc.snr if snr is None else snr
    amp = cc.b_rf_amp if amplitude is None else float(amplitude)
    means, tx = link_means(cfg, range(base, base + n), amplitude=amp, snr=snr)
    cal = cal or calibrate_thresholds(means, cc.n_w)
    links = [decode_means(row, cal, tx.bits) for row in means]
    return SessionResult(links, cal, means, amp, snr)


@dataclass
class BerPoint:
    amplitude: float
    ber: float
    ci_low: float
    ci_high: float
    n_bits: int


def ber_sweep(cfg, amplitudes, n_tx: int | None = None, *, snr_ref: float | None = None,
              seed: int | None = None) -> list[BerPoint]:
    """BER against carrier amplitude at a fixed injected noise level.

    The noise level is set by the configured amplitude and ``snr_ref``, so the
    effective SNR scales with the swept amplitude.
    """
    cc = cfg.comms
    snr_ref = cc.snr if snr_ref is None else snr_ref
    out = []
    for a in amplitudes:
        r = run_session(cfg, n_tx, seed=seed, amplitude=a, snr=snr_ref)
        lo, hi = r.ber_ci()
        out.append(BerPoint(float(a), r.ber, lo, hi, r.n_bits))
    return out
