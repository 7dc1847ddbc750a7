import csv
import re
import subprocess
import sys

import numpy as np
import pytest
import tomli

from hopm import cli, sensing
from hopm.config import default_config, serialize

FAST = [("iq-map", []), ("phase-circle", []), ("fll-step", ["--n-rep", "1"]),
        ("xi", ["--duration", "1.2"]), ("noise-budget", ["--duration", "1"]),
        ("comms-run", ["--n-tx", "1"]), ("ber-sweep", ["--n-tx", "1"])]

UNIT_SUFFIX = re.compile(r"_(T|Hz|s|rad|dB|rel|photons_per_s|T2_per_Hz|photons_per_s2_per_Hz)$")
UNITLESS = {"valid", "symbol", "channel", "bit_tx", "errors", "ber", "ci_low", "ci_high",
            "n_bits", "overshoot"}


def read_csv(path):
    lines = path.read_text().splitlines()
    head = [ln for ln in lines if ln.startswith("#")]
    body = [ln for ln in lines if not ln.startswith("#")]
    rows = list(csv.reader(body))
    cols = {name: [r[k] for r in rows[1:]] for k, name in enumerate(rows[0])}
    return head, cols


@pytest.fixture(scope="module")
def outputs(tmp_path_factory):
    out = {}
    for name, extra in FAST:
        d = tmp_path_factory.mktemp(name)
        assert cli.main([name, "--out", str(d), *extra]) == 0
        out[name] = d
    return out


@pytest.mark.parametrize("name", [n for n, _ in FAST])
def test_scenario_outputs_are_stamped(outputs, name):
    d = outputs[name]
    man = tomli.loads((d / "manifest.toml").read_text())
    assert man["scenario"] == name
    assert man["config_hash"] == default_config().hash()
    assert man["files"]
    for f in man["files"]:
        text = (d / f).read_text()
        assert f"# config_hash: {man['config_hash']}" in text
        assert f"# seed: {man['seed']}" in text
        if f.endswith(".csv"):
            _, cols = read_csv(d / f)
            for c in cols:
                assert c in UNITLESS or UNIT_SUFFIX.search(c), f"{f}: column {c} lacks a unit"


def test_iq_map_matches_direct_call(outputs):
    _, cols = read_csv(outputs["iq-map"] / "iq_map.csv")
    cfg = default_config()
    half = 2.0 * sensing.linewidth_field(cfg)
    m = sensing.iq_map(cfg, np.linspace(-half, half, 11), np.linspace(0, 8e-9, 5))
    i = np.array([float(x) for x in cols["i_photons_per_s"]])
    q = np.array([float(x) for x in cols["q_photons_per_s"]])
    assert np.array_equal(i, m.i.ravel()) and np.array_equal(q, m.q.ravel())


def test_phase_circle_is_closed_and_round(outputs):
    man = tomli.loads((outputs["phase-circle"] / "manifest.toml").read_text())
    assert man["summary"]["radius_relative_spread"] < 0.1


def test_rerun_is_byte_identical(outputs, tmp_path):
    assert cli.main(["fll-step", "--out", str(tmp_path), "--n-rep", "1"]) == 0
    for f in ("fll_step.csv",):
        assert (tmp_path / f).read_bytes() == (outputs["fll-step"] / f).read_bytes()


def test_config_file_and_seed(tmp_path):
    p = tmp_path / "c.toml"
    p.write_text(serialize(default_config()))
    d = tmp_path / "o"
    assert cli.main(["comms-run", "--config", str(p), "--out", str(d), "--seed", "3",
                     "--n-tx", "1", "--override", "comms.snr=inf"]) == 0
    man = tomli.loads((d / "manifest.toml").read_text())
    assert man["seed"] == 3 and man["summary"]["ber"] == 0.0


def test_config_errors_exit_2(tmp_path):
    assert cli.main(["iq-map", "--out", str(tmp_path), "--config", "/nonexistent.toml"]) == 2
    assert cli.main(["iq-map", "--out", str(tmp_path), "--override", "nosuch.key=1"]) == 2
    bad = tmp_path / "bad.toml"
    bad.write_text("field = [")
    assert cli.main(["iq-map", "--out", str(tmp_path), "--config", str(bad)]) == 2


def test_unknown_scenario_rejected(tmp_path):
    r = subprocess.run([sys.executable, "-m", "hopm.cli", "wobble", "--out", str(tmp_path)],
                       capture_output=True, text=True)
    assert r.returncode == 2
    assert "wobble" in r.stderr


def test_unstable_gains_exit_3(tmp_path):
    assert cli.main(["fll-step", "--out", str(tmp_path), "--n-rep", "1",
                     "--override", "control.kp=200"]) == 3
    man = tomli.loads((tmp_path / "manifest.toml").read_text())
    assert man["summary"]["stable"] is False


def test_stale_calibration_exit_3(tmp_path):
    cal_dir = tmp_path / "cal"
    assert cli.main(["sensitivity", "--out", str(cal_dir), "--duration", "1"]) == 0
    cal = cal_dir / "calibration.toml"
    assert cli.main(["sensitivity", "--out", str(tmp_path / "again"), "--duration", "1",
                     "--calibration", str(cal)]) == 0
    assert cli.main(["sensitivity", "--out", str(tmp_path / "stale"), "--duration", "1",
                     "--calibration", str(cal), "--override", "pump.r_peak=900"]) == 3
