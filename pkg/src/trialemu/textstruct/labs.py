"""Lab normalization to the three canonical units (ULN, g/dL, count/uL)."""
from __future__ import annotations

import re
from datetime import date
from typing import Optional

from ..records import LabResult


class UnitError(ValueError):
    pass


TEST_ALIASES = {
    "hemoglobin": ("hemoglobin", "haemoglobin", "hgb", "hb"),
    "lymphocytes": ("lymphocytes", "lymphocyte count", "absolute lymphocyte count", "alc", "lymph"),
    "ALT": ("alt", "sgpt", "alanine aminotransferase"),
    "AST": ("ast", "sgot", "aspartate aminotransferase"),
    "ALP": ("alp", "alk phos", "alkaline phosphatase"),
    "bilirubin": ("bilirubin", "total bilirubin", "tbili", "bilirubin total"),
    "ANC": ("anc", "absolute neutrophil count", "neutrophils", "neutrophil count"),
    "platelets": ("platelets", "platelet count", "plt"),
    "WBC": ("wbc", "white blood cell count", "white blood cells", "leukocytes"),
}
_TEST_LOOKUP = {alias: name for name, aliases in TEST_ALIASES.items() for alias in aliases}
_TEST_LOOKUP.update({name.lower(): name for name in TEST_ALIASES})

CANONICAL_UNIT = {
    "hemoglobin": "g_per_dL",
    "lymphocytes": "count_per_uL",
    "ANC": "count_per_uL",
    "platelets": "count_per_uL",
    "WBC": "count_per_uL",
    "ALT": "ULN",
    "AST": "ULN",
    "ALP": "ULN",
    "bilirubin": "ULN",
}

# normalized unit string -> (dimension, factor to canonical)
_UNITS = {
    "g/dl": ("g_per_dL", 1.0),
    "g/l": ("g_per_dL", 0.1),
    "mg/dl": ("mass_conc", None),
    "/ul": ("count_per_uL", 1.0),
    "cells/ul": ("count_per_uL", 1.0),
    "/mm3": ("count_per_uL", 1.0),
    "cells/mm3": ("count_per_uL", 1.0),
    "x10^6/l": ("count_per_uL", 1.0),
    "k/ul": ("count_per_uL", 1e3),
    "x10^3/ul": ("count_per_uL", 1e3),
    "10^3/ul": ("count_per_uL", 1e3),
    "x10e3/ul": ("count_per_uL", 1e3),
    "thou/ul": ("count_per_uL", 1e3),
    "x10^9/l": ("count_per_uL", 1e3),
    "10^9/l": ("count_per_uL", 1e3),
    "x10e9/l": ("count_per_uL", 1e3),
    "u/l": ("activity", None),
    "iu/l": ("activity", None),
    "umol/l": ("mass_conc", None),
    "uln": ("ULN", 1.0),
    "xuln": ("ULN", 1.0),
}


def normalize_unit(unit: str) -> str:
    u = unit.strip().lower().replace("×", "x").replace("µ", "u").replace("μ", "u").replace("*", "^")
    u = re.sub(r"\s+", "", u)
    u = u.replace("10³", "10^3").replace("10⁹", "10^9").replace("10⁶", "10^6")
    u = u.replace("mm^3", "mm3").replace("mm³", "mm3")
    return u


def canonical_test(raw: str) -> str:
    name = _TEST_LOOKUP.get(re.sub(r"\s+", " ", raw.strip().lower()))
    if name is None:
        raise UnitError(f"unknown lab test {raw!r}")
    return name


def convert_value(value: float, unit: str, canonical: str, reference_upper: Optional[float] = None,
                  test: str = "") -> float:
    """Convert ``value`` in ``unit`` into the ``canonical`` unit."""
    key = normalize_unit(unit)
    if key not in _UNITS:
        raise UnitError(f"unknown unit {unit!r}")
    dim, factor = _UNITS[key]
    if canonical == "ULN":
        if dim == "ULN":
            return value
        if dim == "count_per_uL" or dim == "g_per_dL" and test == "hemoglobin":
            raise UnitError(f"unit {unit!r} cannot be expressed as a multiple of ULN")
        if reference_upper is None:
            raise UnitError(f"{test or 'lab'}: ULN normalization needs reference_upper")
        if reference_upper <= 0:
            raise UnitError("reference_upper must be positive")
        return value / reference_upper
    if dim != canonical:
        raise UnitError(f"unit {unit!r} does not match canonical unit {canonical}")
    return value * factor


def normalize_lab(raw: str, value: float, unit: str, reference_upper: Optional[float] = None,
                  when: Optional[date] = None) -> LabResult:
    test = canonical_test(raw)
    canonical = CANONICAL_UNIT[test]
    converted = convert_value(float(value), unit, canonical, reference_upper, test)
    return LabResult(test=test, date=when or date(1970, 1, 1), value=converted, unit=canonical,
                     reference_upper=reference_upper)
