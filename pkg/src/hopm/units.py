"""Unit-suffixed quantities for config files: ``"4.3 uT"`` -> 4.3e-6."""
from __future__ import annotations

import math
import re
from decimal import Decimal

# decimal exponents, applied exactly so "4.3 uT" == 4.3e-6
_PREFIX = {"f": -15, "p": -12, "n": -9, "u": -6, "µ": -6, "m": -3,
           "": 0, "k": 3, "M": 6, "G": 9}

# unit symbol -> (SI base symbol, factor)
_UNITS = {
    "T": ("T", 1.0),
    "Hz": ("Hz", 1.0),
    "s": ("s", 1.0),
    "rad": ("rad", 1.0),
    "deg": ("rad", math.pi / 180.0),
    "rad/s": ("rad/s", 1.0),
    "1/s": ("1/s", 1.0),
    "s^-1": ("1/s", 1.0),
    "T/rtHz": ("T/rtHz", 1.0),
    "photons/s": ("photons/s", 1.0),
    "1/rtHz": ("1/rtHz", 1.0),
    "rad/s/T": ("rad/s/T", 1.0),
    "Hz/T": ("rad/s/T", 2 * math.pi),
    "Hz/nT": ("rad/s/T", 2 * math.pi * 1e9),
}

_NUM = re.compile(r"^\s*([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?|[-+]?inf)\s*(.*?)\s*$")


class UnitError(ValueError):
    pass


def _lookup(sym: str):
    """(SI base, decimal exponent, extra factor) for a unit symbol."""
    if sym in _UNITS:
        base, f = _UNITS[sym]
        return base, 0, f
    for pre, exp in _PREFIX.items():
        if pre and sym.startswith(pre) and sym[len(pre):] in _UNITS:
            base, f = _UNITS[sym[len(pre):]]
            if base in ("rad", "1/s", "photons/s", "rad/s", "rad/s/T"):
                continue
            return base, exp, f
    raise UnitError(f"unknown unit {sym!r}")


def parse_quantity(value, expect: str | None = None) -> float:
    """Parse a number or ``"<number> <unit>"`` string into SI.

    ``expect`` names the SI base the key requires ("T", "Hz", ...); a bare
    number is taken as already SI.
    """
    if isinstance(value, bool):
        raise UnitError("boolean is not a quantity")
    if isinstance(value, (int, float)):
        return float(value)
    m = _NUM.match(str(value))
    if not m:
        raise UnitError(f"cannot parse quantity {value!r}")
    text, sym = m.group(1), m.group(2)
    if not sym:
        return float(text)
    base, exp, fac = _lookup(sym)
    if expect is not None and base != expect:
        raise UnitError(f"{value!r}: expected unit of {expect}, got {base}")
    num = float(Decimal(text).scaleb(exp)) if "inf" not in text else float(text)
    return num * fac if fac != 1.0 else num


def format_quantity(x: float, unit: str) -> str:
    """Lossless SI string, e.g. ``"4.3e-06 T"``."""
    if unit in ("", None):
        return repr(float(x))
    return f"{float(x)!r} {unit}"
