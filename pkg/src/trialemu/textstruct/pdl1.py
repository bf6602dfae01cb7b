"""PD-L1 expression: entity extraction, relation linking, intent detection."""
from __future__ import annotations

import re

from ..records import BiomarkerResult, NoteDocument
from ._text import ExtractionResult, byte_span, classify_intent, split_sentences

_PDL1_RE = re.compile(r"\bPD-?L1\b", re.IGNORECASE)
_SCORE_RE = re.compile(
    r"\b(?P<type>CPS|TPS|combined\s+positive\s+score|tumou?r\s+proportion\s+score)\b", re.IGNORECASE)

# value expressions, tried in order; earlier kinds win on overlap
_VALUE_RES = (
    ("range", re.compile(r"(?P<lo>\d{1,3})\s*(?:-|–|to)\s*(?P<hi>\d{1,3})\s*%")),
    ("range", re.compile(r"(?P<cmp>[<>]=?|≥|≤)\s*(?P<v>\d{1,3}(?:\.\d+)?)\s*%")),
    ("percent", re.compile(r"(?<![<>=≥≤\d.])(?P<v>\d{1,3}(?:\.\d+)?)\s*%")),
    ("qual", re.compile(r"\b(?P<q>negative|positive|high|low)\b", re.IGNORECASE)),
)
# a bare number right after CPS/TPS is a score ("CPS 10")
_BARE_RE = re.compile(r"(?:\s*(?:of|is|=|:)\s*|\s+)(?P<v>\d{1,3}(?:\.\d+)?)\b(?!\s*%)(?![.,]\d)")


def _score_type(raw: str) -> str:
    raw = raw.lower()
    if raw == "cps" or raw.startswith("combined"):
        return "CPS"
    return "TPS"


def _values(text, s0, s1, scores):
    taken: list[tuple[int, int]] = []
    out = []

    def free(a, b):
        return all(b <= x or a >= y for x, y in taken)

    for kind, rx in _VALUE_RES:
        for m in rx.finditer(text, s0, s1):
            if not free(m.start(), m.end()):
                continue
            if kind == "range" and "lo" in m.groupdict() and m.group("lo") is not None:
                lo, hi = float(m.group("lo")), float(m.group("hi"))
                if not lo < hi or hi > 100:
                    continue
                val = ("range", (lo, hi))
            elif kind == "range":
                v = float(m.group("v"))
                cmp = m.group("cmp")
                lo, hi = (v, 100.0) if cmp in (">", ">=", "≥") else (0.0, v)
                if not lo < hi:
                    continue
                val = ("range", (lo, hi))
            elif kind == "percent":
                v = float(m.group("v"))
                if v > 100:
                    continue
                val = ("percent", v)
            else:
                val = (m.group("q").lower(), None)
            taken.append((m.start(), m.end()))
            out.append((m.start(), m.end(), val))
    for sm in scores:
        m = _BARE_RE.match(text, sm.end(), s1)
        if m and free(m.start("v"), m.end("v")) and float(m.group("v")) <= 100:
            taken.append((m.start("v"), m.end("v")))
            out.append((m.start("v"), m.end("v"), ("percent", float(m.group("v")))))
    out.sort()
    return out


def extract_pdl1(note: NoteDocument) -> list[ExtractionResult]:
    text = note.text
    results = []
    for s0, s1 in split_sentences(text):
        anchors = list(_PDL1_RE.finditer(text, s0, s1))
        scores = list(_SCORE_RE.finditer(text, s0, s1))
        if not anchors and not scores:
            continue
        for v0, v1, (kind, value) in _values(text, s0, s1, scores):
            # relation: nearest score type in the sentence, ties to the left
            score = None
            best = None
            for sm in scores:
                dist = v0 - sm.end() if sm.end() <= v0 else sm.start() - v1
                if best is None or dist < best:
                    best, score = dist, sm
            stype = _score_type(score.group("type")) if score else "other"
            head = min([v0] + ([score.start()] if score else [])
                       + [a.start() for a in anchors if a.start() < v0][-1:])
            intent = classify_intent(text, s0, head)
            start = min(head, v0)
            end = max(v1, score.end() if score else v1)
            payload = BiomarkerResult(gene_or_protein="PD-L1", score_type=stype, value_kind=kind,
                                      date=note.date, value=value)
            results.append(ExtractionResult("pdl1", payload, byte_span(text, start, end), intent,
                                            text[start:end]))
    return results
