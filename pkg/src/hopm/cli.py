"""Command-line scenario runner.

``hopm <scenario> [--config FILE] --out DIR [--seed N] [--override key=value]``

Each scenario writes one CSV per curve or grid plus ``manifest.toml``.  CSV
files start with ``#`` comment lines carrying the scenario, config hash and
seed; column names end in their unit.  Exit status: 0 success, 2 config
error, 3 runtime or instability error.
"""
from __future__ import annotations

import argparse
import math
import sys
import time
from pathlib import Path

import numpy as np
import tomli_w

from . import __version__, comms, control, sensing
from .config import ConfigError, HopmConfig, default_config, load
from .physics import ScenarioLengthError, StabilityError

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3

SCENARIOS = ("iq-map", "phase-circle", "fll-step", "xi", "sensitivity", "noise-budget",
             "comms-run", "ber-sweep")

# I and Q are polarimeter Stokes units
IQ_UNIT = "photons_per_s"


class InstabilityError(RuntimeError):
    """The scenario ran but the loop did not settle; outputs are still written."""


class Writer:
    """Collects output files for one scenario run."""

    def __init__(self, out: Path, scenario: str, cfg: HopmConfig):
        self.out = out
        self.scenario = scenario
        self.cfg_hash = cfg.hash()
        self.seed = cfg.seed
        self.files: list[str] = []
        self.summary: dict = {}
        out.mkdir(parents=True, exist_ok=True)

    def csv(self, name: str, columns: dict, note: str = "") -> Path:
        cols = {k: np.asarray(v).ravel() for k, v in columns.items()}
        n = {len(v) for v in cols.values()}
        if len(n) != 1:
            raise ValueError(f"{name}: columns differ in length")
        path = self.out / name
        with path.open("w", newline="\n") as fh:
            fh.write(f"# scenario: {self.scenario}\n# config_hash: {self.cfg_hash}\n"
                     f"# seed: {self.seed}\n")
            if note:
                fh.write(f"# {note}\n")
            fh.write(",".join(cols) + "\n")
            for row in zip(*cols.values()):
                fh.write(",".join(_fmt(x) for x in row) + "\n")
        self.files.append(name)
        return path

    def text(self, name: str, body: str) -> Path:
        path = self.out / name
        path.write_text(f"# scenario: {self.scenario}\n# config_hash: {self.cfg_hash}\n"
                        f"# seed: {self.seed}\n" + body)
        self.files.append(name)
        return path

    def manifest(self, wall: float) -> Path:
        doc = {"scenario": self.scenario, "config_hash": self.cfg_hash, "seed": self.seed,
               "hopm_version": __version__, "wall_time_s": round(wall, 3),
               "files": self.files, "summary": self.summary}
        path = self.out / "manifest.toml"
        path.write_text(tomli_w.dumps(_plain(doc)))
        return path


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def _plain(obj):
    """Recursively convert numpy scalars and drop non-finite floats for TOML."""
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items() if v is not None}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    return obj


# --------------------------------------------------------------------------
# scenarios

def run_iq_map(cfg, w: Writer, args):
    half = 2.0 * sensing.linewidth_field(cfg)
    db = np.linspace(-half, half, 11)
    rf = np.linspace(0.0, 8e-9, 5)
    m = sensing.iq_map(cfg, db, rf)
    dd, rr = np.meshgrid(db, rf, indexing="ij")
    w.csv("iq_map.csv", {"delta_b_dc_T": dd, "b_rf_T": rr, f"i_{IQ_UNIT}": m.i,
                         f"q_{IQ_UNIT}": m.q})
    i_res, q_res = sensing.symmetry_residuals(m)
    w.summary.update(i_even_residual=i_res, q_odd_residual=q_res)


def run_phase_circle(cfg, w: Writer, args):
    pc = sensing.phase_circle(cfg, b_rf=4e-9, n_phases=24)
    w.csv("phase_circle.csv", {"varphi_rf_rad": pc.phases, f"i_{IQ_UNIT}": pc.i,
                               f"q_{IQ_UNIT}": pc.q},
          note=f"rf-off operating point i0={pc.i0!r} q0={pc.q0!r}; b_rf = 4e-9 T")
    w.summary.update(radius_relative_spread=pc.relative_spread)


def run_fll_step(cfg, w: Writer, args):
    r = control.step_response(cfg, step_amp=32e-9, n_rep=args.n_rep or 10)
    w.csv("fll_step.csv", {"t_s": r.t, f"q_mean_{IQ_UNIT}": r.q_mean,
                           "control_T": r.control_mean},
          note="32 nT step on the actuation axis at t = 0; averaged over repetitions")
    w.summary.update(settling_time_s=r.settling_time, overshoot=r.overshoot, stable=r.stable,
                     n_rep=r.n_rep)
    if not r.stable:
        raise InstabilityError(f"loop unstable: {r.message}")


def run_xi(cfg, w: Writer, args):
    x = control.xi_measure(cfg, duration=args.duration or 4.0)
    xs, pred = x.smoothed()
    cols = {"f_Hz": x.freqs, "xi_dB": x.xi_db, "xi_smoothed_dB": 10 * np.log10(xs)}
    if pred is not None:
        cols["xi_model_dB"] = 10 * np.log10(pred)
    cols["valid"] = x.valid
    with np.errstate(invalid="ignore", divide="ignore"):
        w.csv("xi.csv", cols, note=f"rejection measured on the {x.channel.upper()} quadrature")
    w.summary.update({f"xi_{int(f)}Hz_dB": 10 * math.log10(x.at(f)) for f in (60, 100, 260)})


def run_sensitivity(cfg, w: Writer, args):
    if args.calibration:
        resp = sensing.Responsivity.from_record(Path(args.calibration).read_text())
    else:
        freqs = [2, 5, 10, 20, 50, 100, 150, 200, 300, 400, 600, 1000]
        resp = sensing.calibrate_response(cfg, freqs)
    resp.check(cfg)
    w.text("calibration.toml", resp.to_record())
    sp = sensing.sensitivity_spectrum(cfg, resp, duration=args.duration or 4.0)
    w.csv("sensitivity.csv", {"f_Hz": sp.freqs, "s_x_T2_per_Hz": sp.s_x,
                              "s_bdc_T2_per_Hz": sp.s_bdc,
                              f"s_i_{IQ_UNIT}2_per_Hz": sp.s_i.psd,
                              f"s_q_{IQ_UNIT}2_per_Hz": sp.s_q.psd})
    if resp.has_response():
        w.csv("response.csv", {"f_Hz": resp.freqs, "r2_i_rel": resp.freq_response_i,
                               "r2_q_rel": resp.freq_response_q})
    f, sx, sb = sp.band(10.0, 200.0)
    w.summary.update(min_asd_x_T_per_rtHz=float(np.sqrt(np.nanmin(sx))),
                     min_asd_bdc_T_per_rtHz=float(np.sqrt(np.nanmin(sb))),
                     ratio_i=resp.ratio_i, ratio_q=resp.ratio_q)


def run_noise_budget(cfg, w: Writer, args):
    nb = sensing.noise_budget(cfg, duration=args.duration or 4.0)
    cols = {"f_Hz": nb.freqs}
    for key, spec in nb.spectra.items():
        for ch in ("i", "q"):
            cols[f"{key.replace('@', '_r')}_{ch}_{IQ_UNIT}2_per_Hz"] = spec[ch]
    w.csv("noise_budget.csv", cols,
          note="spn/psn: single source, back-action off; sns: pump off; "
               "opm_r<R>: pump peak rate R s^-1, all sources on")
    lo, hi = nb.pump_levels[0], nb.pump_levels[-1]
    w.summary.update(crossover_q_Hz=nb.crossover("q"),
                     low_band_q_weak=nb.band_mean(f"opm@{lo:g}", "q", 20, 200),
                     low_band_q_strong=nb.band_mean(f"opm@{hi:g}", "q", 20, 200))


def run_comms(cfg, w: Writer, args):
    cc = cfg.comms
    n = args.n_tx or cc.n_tx
    sess = comms.run_session(cfg, n)
    iq, tx = comms.transmit(cfg, cfg.seed)
    rf = tx.rf_amp(iq.t)
    w.csv("comms_trace.csv", {"t_s": iq.t, f"i_{IQ_UNIT}": iq.i_vals,
                              f"q_{IQ_UNIT}": iq.q_vals, "b_rf_T": rf,
                              "f_carrier_Hz": tx.omega_p(iq.t) / (2 * math.pi)},
          note="first repetition")
    cal = sess.calibration
    w.csv("comms_symbols.csv", {
        "symbol": np.arange(tx.n_symbols), "channel": tx.channels, "f_carrier_Hz": tx.freqs,
        "bit_tx": tx.bits, f"mean_i_{IQ_UNIT}": sess.means.mean(axis=0),
        f"v_h_{IQ_UNIT}": cal.v_h, f"v_l_{IQ_UNIT}": cal.v_l, f"v_thr_{IQ_UNIT}": cal.v_thr,
        "errors": sess.error_profile})
    w.text("link_result.txt", sess.links[0].to_text())
    lo, hi = sess.ber_ci()
    prof = sess.error_profile
    w.summary.update(ber=sess.ber, ber_ci_low=lo, ber_ci_high=hi, n_tx=n, snr=cc.snr,
                     error_positions=int(np.count_nonzero(prof)),
                     error_profile_max=int(prof.max()))


def run_ber_sweep(cfg, w: Writer, args):
    a0 = cfg.comms.b_rf_amp
    amps = ([float(x) for x in args.amplitudes.split(",")] if args.amplitudes
            else [0.0, 0.25 * a0, 0.5 * a0, a0, 2.0 * a0, 4.0 * a0])
    pts = comms.ber_sweep(cfg, amps, args.n_tx)
    w.csv("ber_sweep.csv", {"b_rf_T": [p.amplitude for p in pts], "ber": [p.ber for p in pts],
                            "ci_low": [p.ci_low for p in pts],
                            "ci_high": [p.ci_high for p in pts],
                            "n_bits": [p.n_bits for p in pts]},
          note=f"injected noise b_noise = {comms.noise_level(a0, cfg.comms.snr)!r} T")
    w.summary.update(ber=[p.ber for p in pts])


RUNNERS = {"iq-map": run_iq_map, "phase-circle": run_phase_circle, "fll-step": run_fll_step,
           "xi": run_xi, "sensitivity": run_sensitivity, "noise-budget": run_noise_budget,
           "comms-run": run_comms, "ber-sweep": run_ber_sweep}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hopm", description=__doc__.splitlines()[0])
    p.add_argument("scenario", choices=SCENARIOS)
    p.add_argument("--config", help="TOML config (default: built-in defaults)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                   help="config override, e.g. comms.snr=10 (repeatable)")
    p.add_argument("--duration", type=float, help="record length in s (xi, sensitivity, "
                   "noise-budget)")
    p.add_argument("--n-tx", type=int, help="link repetitions (comms-run, ber-sweep)")
    p.add_argument("--n-rep", type=int, help="step repetitions (fll-step)")
    p.add_argument("--amplitudes", help="comma-separated carrier amplitudes in T (ber-sweep)")
    p.add_argument("--calibration", help="responsivity record to reuse (sensitivity)")
    return p


def load_config(path: str | None, overrides: list[str], seed: int | None) -> HopmConfig:
    if path is None:
        from .config import apply_override, from_dict, to_dict
        raw = to_dict(default_config())
        for ov in overrides:
            apply_override(raw, ov)
        cfg = from_dict(raw)
    else:
        cfg = load(path, overrides)
    if seed is not None:
        cfg.seed = seed
    return cfg


def run_scenario(name: str, cfg: HopmConfig, out, args=None) -> Writer:
    if name not in RUNNERS:
        raise ConfigError(f"unknown scenario {name!r}")
    args = args or build_parser().parse_args([name, "--out", str(out)])
    w = Writer(Path(out), name, cfg)
    t0 = time.perf_counter()
    try:
        RUNNERS[name](cfg, w, args)
    except InstabilityError:
        w.manifest(time.perf_counter() - t0)
        raise
    w.manifest(time.perf_counter() - t0)
    return w


RUNTIME_ERRORS = (FloatingPointError, StabilityError, ScenarioLengthError,
                  sensing.StaleCalibrationError, sensing.OperatingPointError, RuntimeError,
                  ValueError, OSError)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.override, args.seed)
    except ConfigError as e:
        print(f"hopm: config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        w = run_scenario(args.scenario, cfg, args.out, args)
    except ConfigError as e:
        print(f"hopm: config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except RUNTIME_ERRORS as e:
        print(f"hopm: {args.scenario} failed: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    print(f"hopm: {args.scenario} wrote {len(w.files)} file(s) to {args.out}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
