"""Acceptance suite: one test per criterion, each reporting a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v``; the lines are
collected in the terminal summary.
"""
import math
import time

import numpy as np
import pytest
from scipy import stats

from hopm import comms, control, dsp, sensing
from hopm import physics as P
from hopm.config import default_config

from conftest import larmor_setup, loglog_slope

pytestmark = pytest.mark.slow

RESULTS: dict[int, str] = {}


def report(n: int, title: str, checks: dict, runtime: float | None = None,
           limit: float | None = None):
    """Record and print the verdict for criterion ``n``, then assert it."""
    if limit is not None:
        checks = {**checks, f"runtime {runtime:.1f} s < {limit:g} s": runtime < limit}
    ok = all(checks.values())
    detail = "; ".join(f"{k} [{'ok' if v else 'FAIL'}]" for k, v in checks.items())
    line = f"C{n:<2} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
    RESULTS[n] = line
    print(line)
    assert ok, line


class Clock:
    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.dt = time.perf_counter() - self.t0


@pytest.fixture(scope="module")
def cfg():
    return default_config()


def test_c01_lineshapes(cfg):
    with Clock() as clk:
        half = 2.0 * sensing.linewidth_field(cfg)
        db = np.linspace(-half, half, 11)
        m = sensing.iq_map(cfg, db, np.linspace(0.0, 8e-9, 5))
    i_res, q_res = sensing.symmetry_residuals(m)
    peak_ok = all(abs(int(np.argmax(m.i[:, k])) - 5) <= 1 for k in range(5))
    # Q changes sign across the centre, and the centre value is small
    zero_ok = all(m.q[4, k] * m.q[6, k] < 0 and abs(m.q[5, k]) < abs(m.q[4, k])
                  for k in range(5))
    report(1, "lineshapes on 11x5 grid",
           {f"I even residual {i_res:.2%} < 5%": i_res < 0.05,
            f"Q odd residual {q_res:.2%} < 5%": q_res < 0.05,
            "I peak within one step of 0": peak_ok,
            "Q zero crossing at 0": zero_ok}, clk.dt, 120)


def test_c02_phase_circle(cfg):
    with Clock() as clk:
        pc = sensing.phase_circle(cfg, b_rf=4e-9, n_phases=24)
    s = pc.relative_spread
    report(2, "phase circle at 4 nT", {f"radius spread {s:.2%} < 5%": s < 0.05}, clk.dt, 60)


def test_c03_operating_point(cfg):
    with Clock() as clk:
        r = sensing.calibrate_static(cfg)
    report(3, "cross-responsivity ratios",
           {f"|dI/dX|/|dI/dB| = {r.ratio_i:.1f} > 10": r.ratio_i > 10,
            f"|dQ/dB|/|dQ/dX| = {r.ratio_q:.1f} > 10": r.ratio_q > 10}, clk.dt, 60)


def test_c04_fll_step(cfg):
    with Clock() as clk:
        r = control.step_response(cfg, step_amp=32e-9, n_rep=10)
    report(4, "32 nT step with reference gains",
           {"stable": r.stable,
            f"settling {r.settling_time * 1e3:.2f} ms < 5 ms": r.settling_time < 5e-3},
           clk.dt, 60)


def test_c05_noise_rejection(cfg):
    with Clock() as clk:
        x = control.xi_measure(cfg, duration=4.0)
    xs, pred = x.smoothed()
    f = x.freqs
    low = (f >= 5) & (f < 60)
    xi_low = 10 * np.log10(np.nanmin(xs[low]))
    xi_100 = 10 * math.log10(x.at(100.0))
    band = (f >= 10) & (f <= 200)
    dev = np.nanmax(np.abs(10 * np.log10(xs[band] / pred[band])))
    report(5, "noise rejection xi(f)",
           {f"min xi below 60 Hz {xi_low:.1f} dB > 20 dB": xi_low > 20,
            f"xi(100 Hz) {xi_100:.1f} dB >= 15 dB": xi_100 >= 15,
            f"max |xi - model| over 10-200 Hz {dev:.2f} dB <= 3 dB": dev <= 3,
            f"xi(260 Hz) {10 * math.log10(x.at(260.0)):.1f} dB (reported)": True},
           clk.dt, 600)


def test_c06_sensitivity_pipeline(cfg):
    with Clock() as clk:
        resp = sensing.calibrate_response(cfg, [20, 50, 100, 200])
        est = sensing.recover_tone(cfg, resp, 50.0, 1e-9)
        floors = []
        for s1 in (2e15, 4e15):
            c = cfg.replace(**{"readout.s1_in": s1, "noise.spn_enabled": False,
                               "readout.back_action_enabled": False})
            r = sensing.calibrate_response(c, [250.0], check_linearity=False)
            sp = sensing.sensitivity_spectrum(c, r, duration=2.0)
            floors.append(float(np.mean(sp.band(10, 200)[1])))
    err = est / 1e-9 - 1
    ratio = floors[0] / floors[1]
    report(6, "tone recovery and probe-power scaling",
           {f"50 Hz tone recovered with error {err:+.2%} (within 5%)": abs(err) < 0.05,
            f"PSN floor ratio at 2x probe power {ratio:.3f} (2 within 5%)":
                abs(ratio / 2 - 1) < 0.05}, clk.dt, 600)


def test_c07_noise_budget(cfg):
    with Clock() as clk:
        nb = sensing.noise_budget(cfg, duration=4.0)
    checks = {}
    for ch in ("q", "i"):
        lo_spn, lo_psn = nb.band_mean("spn", ch, 20, 200), nb.band_mean("psn", ch, 20, 200)
        # medians: carrier-ripple lines common to both runs dominate high-band means
        hi_spn = nb.band_median("spn", ch, 2000, 6000)
        hi_psn = nb.band_median("psn", ch, 2000, 6000)
        fx = nb.crossover(ch)
        checks[f"{ch.upper()}: SPN/PSN {lo_spn / lo_psn:.2f} at 20-200 Hz > 1"] = lo_spn > lo_psn
        checks[f"{ch.upper()}: median SPN/PSN {hi_spn / hi_psn:.3f} at 2-6 kHz < 1"] = hi_spn < hi_psn
        checks[f"{ch.upper()}: crossover at {fx:.0f} Hz"] = math.isfinite(fx)
    a, b = nb.pump_levels[0], nb.pump_levels[-1]
    weak = nb.band_mean(f"opm@{a:g}", "q", 20, 200)
    strong = nb.band_mean(f"opm@{b:g}", "q", 20, 200)
    checks[f"pump-on low-f noise x{strong / weak:.2f} from R={a:g} to {b:g} s^-1"] = strong > weak
    report(7, "noise budget structure", checks, clk.dt, 600)


def test_c08_sub_pt_floor(cfg):
    resp = sensing.calibrate_response(cfg, [5, 20, 50, 100, 150, 200, 300])
    sp = sensing.sensitivity_spectrum(cfg, resp, duration=4.0)
    _, sx, sb = sp.band(10, 200)
    ax, ab = math.sqrt(np.nanmin(sx)), math.sqrt(np.nanmin(sb))
    report(8, "sub-pT floor in 10-200 Hz",
           {f"min sqrt(s_x) {ax * 1e12:.2f} pT/rtHz < 1": ax < 1e-12,
            f"min sqrt(s_bdc) {ab * 1e12:.2f} pT/rtHz < 1": ab < 1e-12})


def test_c09_clean_link(cfg):
    with Clock() as clk:
        s = comms.run_session(cfg, 67, snr=math.inf)
    report(9, "noise-free link, 67 x 32 bits",
           {f"BER {s.ber:.4f} ({s.n_errors} errors) == 0": s.n_errors == 0}, clk.dt, 1200)


def _margin_localisation(s):
    """Rank correlation between a symbol's distance from its threshold and its
    error count; strongly negative when errors sit near threshold crossings."""
    margin = np.abs(s.means.mean(axis=0) - s.calibration.v_thr)
    return stats.spearmanr(margin, s.error_profile)


def test_c10_noisy_link(cfg):
    with Clock() as clk:
        s = comms.run_session(cfg, 67, snr=5.0)
    prof = s.error_profile
    # uniform error positions would be a flat multinomial across the 32 symbols
    chi = stats.chisquare(prof) if prof.sum() > 0 else None
    loc = _margin_localisation(s)
    report(10, "SNR 5 link",
           {f"0 < BER {s.ber:.4f} < 0.2": 0 < s.ber < 0.2,
            f"error profile non-uniform (chi2 p={chi.pvalue if chi else 1:.1e})":
                chi is not None and chi.pvalue < 0.01,
            f"errors vs threshold margin: Spearman rho {loc.statistic:.2f}, p={loc.pvalue:.1e}":
                loc.statistic < 0 and loc.pvalue < 0.01},
           clk.dt, 1200)


def test_c11_ber_monotonic(cfg):
    a0 = cfg.comms.b_rf_amp
    amps = [0.0, 0.25 * a0, 0.5 * a0, a0, 2.0 * a0, 4.0 * a0]
    with Clock() as clk:
        pts = comms.ber_sweep(cfg, amps, 67)
    bers = [p.ber for p in pts]
    mono = all(pts[k + 1].ci_low <= pts[k].ci_high for k in range(len(pts) - 1))
    z = pts[0]
    report(11, "BER against amplitude " + ", ".join(f"{b:.3f}" for b in bers),
           {f"{len(pts)} amplitudes >= 4": len(pts) >= 4,
            "non-increasing within 95% CIs": mono,
            f"zero-amplitude BER {z.ber:.3f}, CI [{z.ci_low:.3f}, {z.ci_high:.3f}] ~ 0.5":
                z.ci_low <= 0.5 <= z.ci_high or abs(z.ber - 0.5) < 0.05,
            f"BER at 4x amplitude (SNR 20) {pts[-1].ber:.4f} == 0": pts[-1].ber == 0.0},
           clk.dt, 3600)


def test_c12_numerical_bedrock(cfg):
    # RK4 on the Larmor case
    w = 2 * math.pi * 1000.0
    ap, pw, fp, rp = larmor_setup(w)
    p = P.param_vector(ap, pw, fp, rp)
    T = 0.3e-3
    exact = np.array([0.0, math.sin(w * T), math.cos(w * T)])
    ns = 2 ** np.arange(1, 11)
    err = [np.linalg.norm(P.rk4_fixed([0, 0, 1], p, T, n) - exact) for n in ns]
    slope = loglog_slope(w * T / ns, err)
    # lock-in on a single tone
    fs, f0, fc, amp, th = 512e3, 30e3, 1500.0, 3.0, 0.7
    t = np.arange(int(0.02 * fs)) / fs
    iq = dsp.lock_in(amp * np.cos(2 * math.pi * f0 * t + th), fs, 2 * math.pi * f0, 0.0, fc, 32)
    iq = iq.tail(10 / (2 * math.pi * fc))
    lia = max(np.max(np.abs(iq.i_vals - amp * math.cos(th))),
              np.max(np.abs(iq.q_vals + amp * math.sin(th)))) / amp
    # Parseval
    x = np.random.default_rng(12).standard_normal(1 << 18)
    s = dsp.psd_welch(x, 1.0, 4096)
    pars = np.sum(s.psd) * s.df / np.var(x) - 1
    # byte reproducibility of seeded runs
    a, b = P.run_trace(cfg, 5e-3), P.run_trace(cfg, 5e-3)
    ra = control.fll_run(cfg, duration=0.02)
    rb = control.fll_run(cfg, duration=0.02)
    same = (a.s2.tobytes() == b.s2.tobytes() and ra.q.tobytes() == rb.q.tobytes()
            and ra.control.tobytes() == rb.control.tobytes())
    report(12, "numerical bedrock",
           {f"RK4 slope {slope:.3f} (4 +- 0.2)": abs(slope - 4) <= 0.2,
            f"lock-in tone error {lia:.2e} < 1e-3": lia < 1e-3,
            f"Parseval error {pars:+.2e} within 1%": abs(pars) < 0.01,
            "seeded runs byte-identical": same})
