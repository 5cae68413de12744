"""JSON encoding of series, matrices and crystal instances.

Formats are big-integer-safe: every scalar travels as a decimal string,
p-adic ones as "p^e*u" with the unit reduced so the value is pinned at the
reported precision, rationals as "num/den".  Exponent vectors are rendered
as the literal key "[e1,e2,...]".
"""

from __future__ import annotations

import json
from fractions import Fraction

from .errors import ConfigError
from .padic import PadicContext, PadicScalar
from .series import QQ, Series, SeriesMatrix


def _var_names(nvars: int) -> list[str]:
    return [f"t{j + 1}" for j in range(nvars)]


def scalar_to_str(value) -> str:
    if isinstance(value, PadicScalar):
        return value.serialize()
    f = Fraction(value)
    return f"{f.numerator}/{f.denominator}" if f.denominator != 1 else str(f.numerator)


def scalar_from_str(text: str, ring):
    if ring.kind == "rational":
        if "/" in text:
            num, den = text.split("/")
            return Fraction(int(num), int(den))
        return Fraction(int(text))
    return PadicScalar.parse(ring, text)


def series_to_json(s: Series) -> dict:
    obj = {
        "ring": s.ring.kind,
        "vars": _var_names(s.nvars),
        "degree": s.cap,
        "coeffs": {},
    }
    if s.ring.kind == "padic":
        obj["p"] = s.ring.p
        obj["precision"] = s.ring.prec
    for m, c in s.terms():
        text = scalar_to_str(c)
        if text != "0":
            obj["coeffs"]["[" + ",".join(map(str, m)) + "]"] = text
    return obj


def _parse_expkey(key: str, nvars: int) -> tuple[int, ...]:
    key = key.strip()
    if not (key.startswith("[") and key.endswith("]")):
        raise ConfigError(f"bad exponent key {key!r}")
    body = key[1:-1].strip()
    parts = [p for p in body.split(",") if p.strip() != ""]
    m = tuple(int(p) for p in parts)
    if len(m) != nvars:
        raise ConfigError(f"exponent key {key!r} has wrong arity")
    return m


def series_from_json(obj: dict, ring=None) -> Series:
    try:
        kind = obj["ring"]
        nvars = len(obj["vars"])
        cap = int(obj["degree"])
        raw = obj["coeffs"]
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"malformed series object: {exc}") from exc
    if ring is None:
        if kind == "rational":
            ring = QQ
        else:
            ring = PadicContext.for_degree(int(obj["p"]), int(obj["precision"]), cap)
    if ring.kind != kind:
        raise ConfigError(f"ring mismatch: file says {kind!r}")
    terms = {}
    for key, text in raw.items():
        m = _parse_expkey(key, nvars)
        if sum(m) > cap:
            raise ConfigError(f"exponent {m} beyond degree cap {cap}")
        terms[m] = scalar_from_str(text, ring)
    return Series.from_terms(ring, nvars, cap, terms)


def matrix_to_json(mat: SeriesMatrix) -> dict:
    return {
        "rows": mat.rows,
        "cols": mat.cols,
        "entries": [[series_to_json(e) for e in row] for row in mat.entries],
    }


def matrix_from_json(obj: dict, ring=None) -> SeriesMatrix:
    try:
        entries = [[series_from_json(e, ring) for e in row] for row in obj["entries"]]
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"malformed matrix object: {exc}") from exc
    mat = SeriesMatrix(entries)
    if mat.rows != obj["rows"] or mat.cols != obj["cols"]:
        raise ConfigError("matrix shape disagrees with declared rows/cols")
    return mat


def dump(obj: dict, path=None) -> str:
    text = json.dumps(obj, indent=1, sort_keys=True)
    if path is not None:
        with open(path, "w") as fh:
            fh.write(text + "\n")
    return text


def load(path) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
