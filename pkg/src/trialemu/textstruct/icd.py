"""Smoking and CNS-metastasis flags from diagnosis codes."""
from __future__ import annotations

import json
import re
from functools import lru_cache
from importlib import resources
from typing import Iterable, Optional


@lru_cache(maxsize=None)
def icd_flag_sets() -> dict:
    raw = resources.files("trialemu.textstruct").joinpath("lexicon/icd_flags.json").read_text("utf-8")
    return json.loads(raw)


def normalize_icd(code: str) -> str:
    c = code.strip().upper()
    if re.fullmatch(r"[A-Z]\d{2}[0-9A-Z]+", c):  # ICD-10 written without the dot
        c = c[:3] + "." + c[3:]
    return c


def _matches(code: str, spec: dict) -> bool:
    if any(code.startswith(p) for p in spec["exclude_prefixes"]):
        return False
    return any(code.startswith(p) for p in spec["include_prefixes"])


def flag_from_icd(icd_codes: Iterable[str], code_sets: Optional[dict] = None) -> tuple[Optional[bool], Optional[bool]]:
    """``(smoking, cns_metastasis)``; ``None`` where the codes give no evidence."""
    sets = code_sets or icd_flag_sets()
    codes = [normalize_icd(c) for c in icd_codes]
    smoking = True if any(_matches(c, sets["smoking"]) for c in codes) else None
    cns = True if any(_matches(c, sets["cns_metastasis"]) for c in codes) else None
    return smoking, cns
