import math
from pathlib import Path

import pytest

from hopm.config import ConfigError, default_config, from_dict, load, parse, serialize, to_dict
from hopm.units import UnitError, format_quantity, parse_quantity

ROOT = Path(__file__).resolve().parents[1]


@pytest.mark.parametrize("text,expect,value", [
    ("4.3 uT", "T", 4.3e-6),
    ("6.39 nT", "T", 6.39e-9),
    ("1.5 kHz", "Hz", 1500.0),
    ("10 ms", "s", 0.01),
    ("500 1/s", "1/s", 500.0),
    ("180 deg", "rad", math.pi),
    ("7 Hz/nT", "rad/s/T", 2 * math.pi * 7e9),
    ("2e15 photons/s", "photons/s", 2e15),
    ("inf", None, math.inf),
    (3, "T", 3.0),
])
def test_parse_quantity(text, expect, value):
    assert parse_quantity(text, expect) == value


@pytest.mark.parametrize("bad,expect", [("4.3 uX", "T"), ("4.3 uT", "Hz"), ("fast", None),
                                        (True, None)])
def test_parse_quantity_errors(bad, expect):
    with pytest.raises(UnitError):
        parse_quantity(bad, expect)


def test_format_is_lossless():
    x = 0.1 + 0.2
    assert parse_quantity(format_quantity(x, "T"), "T") == x


def test_config_round_trip():
    cfg = default_config()
    again = parse(serialize(cfg))
    assert serialize(again) == serialize(cfg)
    assert again.hash() == cfg.hash()


def test_shipped_config_equals_defaults():
    assert load(ROOT / "configs" / "default.toml").hash() == default_config().hash()


def test_overrides(tmp_path):
    p = tmp_path / "c.toml"
    p.write_text(serialize(default_config()))
    cfg = load(p, ["comms.snr=10", 'field.b_dc="4.4 uT"', "seed=9"])
    assert cfg.comms.snr == 10 and cfg.field.b_dc_mag == 4.4e-6 and cfg.seed == 9
    assert cfg.hash() != default_config().hash()
    with pytest.raises(ConfigError):
        load(p, ["comms.snr"])


def test_config_errors(tmp_path):
    with pytest.raises(ConfigError):
        load(tmp_path / "missing.toml")
    with pytest.raises(ConfigError):
        parse("this is = = not toml")
    raw = to_dict(default_config())
    raw["bogus"] = {"x": 1}
    with pytest.raises(ConfigError):
        from_dict(raw)
    raw = to_dict(default_config())
    raw["field"]["b_dc"] = "4.3 uHz"
    with pytest.raises(ConfigError):
        from_dict(raw)


def test_hash_ignores_nothing_that_matters():
    a = default_config()
    b = a.replace(**{"comms.n_w": 3})
    assert a.hash() != b.hash()
    assert a.replace(**{"comms.n_w": 5}).hash() == a.hash()
