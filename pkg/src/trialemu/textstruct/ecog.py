"""Performance-status mentions (ECOG, KPS, PPS, Lansky) normalized to ECOG."""
from __future__ import annotations

import re

from ..records import NoteDocument
from ._text import ExtractionResult, byte_span, classify_intent, split_sentences

_GAP = r"[^\d.\n;]{0,40}?"
_PATTERNS = (
    ("ECOG", re.compile(r"\b(?:ECOG|Zubrod)\b" + _GAP + r"\b([0-5])\b(?!\s*%|\d)", re.IGNORECASE)),
    ("KPS", re.compile(r"\b(?:KPS|Karnofsky(?:\s+performance\s+(?:status|score|scale))?)\b" + _GAP
                       + r"\b(\d{1,3})\b", re.IGNORECASE)),
    ("PPS", re.compile(r"\b(?:PPS|Palliative\s+Performance\s+(?:Scale|Score))\b" + _GAP
                       + r"\b(\d{1,3})\b", re.IGNORECASE)),
    ("Lansky", re.compile(r"\bLansky(?:\s+(?:play-performance|performance))?(?:\s+(?:status|score|scale))?\b"
                          + _GAP + r"\b(\d{1,3})\b", re.IGNORECASE)),
)


def percent_scale_to_ecog(score: int) -> int:
    """Decile mapping shared by KPS, PPS and Lansky (100-90 -> 0 ... 20-10 -> 4, 0 -> 5)."""
    if not 0 <= score <= 100:
        raise ValueError(f"performance score {score} outside 0-100")
    if score >= 90:
        return 0
    if score >= 70:
        return 1
    if score >= 50:
        return 2
    if score >= 30:
        return 3
    if score >= 10:
        return 4
    return 5


def extract_ecog(note: NoteDocument) -> list[ExtractionResult]:
    text = note.text
    found = []
    for s0, s1 in split_sentences(text):
        for scale, pattern in _PATTERNS:
            for m in pattern.finditer(text, s0, s1):
                raw = int(m.group(1))
                if scale == "ECOG":
                    ecog = raw
                elif raw <= 100:
                    ecog = percent_scale_to_ecog(raw)
                else:
                    continue
                found.append((m.start(), m.end(), ecog, classify_intent(text, s0, m.start())))
    found.sort()
    return [
        ExtractionResult("ecog", ecog, byte_span(text, a, b), intent, text[a:b])
        for a, b, ecog, intent in found
    ]
