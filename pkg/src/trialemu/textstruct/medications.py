"""Medication mentions with dosage/frequency/route/status attributes."""
from __future__ import annotations

import json
import re
from dataclasses import dataclass
from datetime import date
from functools import lru_cache
from importlib import resources
from typing import Optional

from ..records import MedicationEvent, NoteDocument
from ._text import ExtractionResult, byte_span, classify_intent, split_sentences


@dataclass(frozen=True)
class DrugLexicon:
    surface: dict[str, str]  # lower-cased surface form -> concept id
    drug_class: dict[str, str]  # concept id -> class
    pattern: re.Pattern

    @classmethod
    def from_mapping(cls, drugs: dict) -> "DrugLexicon":
        surface = {}
        classes = {}
        for concept, entry in drugs.items():
            classes[concept] = entry.get("class", concept)
            for form in [concept, *entry.get("surface_forms", ())]:
                surface[form.lower()] = concept
        forms = sorted(surface, key=len, reverse=True)
        rx = re.compile(r"(?<![\w-])(" + "|".join(re.escape(f) for f in forms) + r")(?![\w-])", re.IGNORECASE)
        return cls(surface, classes, rx)

    def concept(self, form: str) -> Optional[str]:
        return self.surface.get(form.lower())


@lru_cache(maxsize=None)
def default_lexicon() -> DrugLexicon:
    raw = resources.files("trialemu.textstruct").joinpath("lexicon/drugs.json").read_text("utf-8")
    return DrugLexicon.from_mapping(json.loads(raw)["drugs"])


def load_lexicon(path) -> DrugLexicon:
    with open(path, encoding="utf-8") as fh:
        return DrugLexicon.from_mapping(json.load(fh)["drugs"])


_DOSE_RE = re.compile(r"\b(?P<amt>\d+(?:\.\d+)?)\s*(?P<unit>mg/m2|mg/m\^2|mg/kg|mcg|mg|g)(?![\w/])", re.IGNORECASE)
_FREQ_RE = re.compile(
    r"\b(?P<f>q\d+\s*(?:w|wk|weeks?|d|days?)|every\s+\d+\s+(?:weeks?|days?)|once\s+daily|twice\s+daily|"
    r"daily|weekly|bid|tid)\b", re.IGNORECASE)
_ROUTE_RE = re.compile(
    r"\b(?P<r>IV|intravenously|intravenous|PO|orally|by\s+mouth|SC|subcutaneously|subcutaneous|IM)\b")
_DATE_RE = re.compile(r"\b(?P<iso>\d{4}-\d{2}-\d{2})\b|\b(?P<us>\d{1,2}/\d{1,2}/\d{4})\b")
_STATUS_RES = (
    ("discontinued", re.compile(r"\b(discontinued|stopped|held)\b", re.IGNORECASE)),
    ("substituted", re.compile(r"\b(substituted|switched|replaced)\b", re.IGNORECASE)),
    ("ordered", re.compile(r"\b(ordered)\b", re.IGNORECASE)),
    ("administered", re.compile(r"\b(administered|given|received|infused|infusion|taking|started|continues)\b",
                                re.IGNORECASE)),
)

_ROUTES = {"iv": "IV", "intravenous": "IV", "intravenously": "IV", "po": "PO", "orally": "PO",
           "by mouth": "PO", "sc": "SC", "subcutaneous": "SC", "subcutaneously": "SC", "im": "IM"}


def _parse_date(m) -> date:
    if m.group("iso"):
        return date.fromisoformat(m.group("iso"))
    mo, dd, yy = (int(x) for x in m.group("us").split("/"))
    return date(yy, mo, dd)


def _nearest(pos_a, pos_b, mentions):
    """Index of the mention nearest to [pos_a, pos_b); ties go left."""
    best, idx = None, None
    for i, (m0, m1, _) in enumerate(mentions):
        dist = pos_a - m1 if m1 <= pos_a else (m0 - pos_b if m0 >= pos_b else 0)
        if best is None or dist < best:
            best, idx = dist, i
    return idx


def extract_medications(note: NoteDocument, lexicon: Optional[DrugLexicon] = None) -> list[ExtractionResult]:
    """Mentions, attributes, linking, then the administration decision."""
    lexicon = lexicon or default_lexicon()
    text = note.text
    results = []
    for s0, s1 in split_sentences(text):
        mentions = [(m.start(), m.end(), lexicon.concept(m.group(1)))
                    for m in lexicon.pattern.finditer(text, s0, s1)]
        if not mentions:
            continue
        attrs: list[dict] = [{} for _ in mentions]

        def link(m, key, value):
            i = _nearest(m.start(), m.end(), mentions)
            attrs[i].setdefault(key, (value, m.start(), m.end()))

        for m in _DOSE_RE.finditer(text, s0, s1):
            link(m, "dosage", (float(m.group("amt")), m.group("unit").lower().replace("^", "")))
        for m in _FREQ_RE.finditer(text, s0, s1):
            link(m, "frequency", re.sub(r"\s+", " ", m.group("f").lower()))
        for m in _ROUTE_RE.finditer(text, s0, s1):
            link(m, "mode", _ROUTES[re.sub(r"\s+", " ", m.group("r").lower())])
        for m in _DATE_RE.finditer(text, s0, s1):
            link(m, "date", _parse_date(m))
        for status, rx in _STATUS_RES:
            for m in rx.finditer(text, s0, s1):
                link(m, "status_" + status, status)

        for (m0, m1, concept), a in zip(mentions, attrs):
            intent = classify_intent(text, s0, m0)
            if intent != "asserted":
                status = "mentioned-not-administered"
            else:
                cues = [a[k] for k in a if k.startswith("status_")]
                if cues:
                    # the cue closest to the mention decides
                    status = min(cues, key=lambda c: min(abs(c[1] - m1), abs(m0 - c[2])))[0]
                elif "dosage" in a:
                    status = "administered"
                else:
                    status = "mentioned-not-administered"
            ev = MedicationEvent(
                drug=concept,
                date=a["date"][0] if "date" in a else note.date,
                status=status,
                source="extracted",
                dosage=a["dosage"][0] if "dosage" in a else None,
                frequency=a["frequency"][0] if "frequency" in a else None,
                mode=a["mode"][0] if "mode" in a else None,
            )
            results.append(ExtractionResult("medication", ev, byte_span(text, m0, m1), intent, text[m0:m1]))
    return results
