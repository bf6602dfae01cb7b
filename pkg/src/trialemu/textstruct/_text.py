"""Sentence segmentation, intent cues and span bookkeeping shared by the extractors."""
from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Any

INTENTS = ("asserted", "negated", "hypothetical", "historical")

ABBREVIATIONS = frozenset({
    "dr", "mr", "mrs", "ms", "mg", "mcg", "ml", "e.g", "i.e", "vs", "approx", "pt", "no", "st", "etc",
})

# closed cue lists; a cue applies when it precedes the entity in the same sentence
INTENT_CUES = {
    "negated": ("no", "denies", "without"),
    "hypothetical": ("if", "consider", "plan to", "will order", "discussed"),
    "historical": ("history of", "previously"),
}

_CUE_RE = re.compile(
    r"\b(" + "|".join(
        re.escape(c).replace(r"\ ", r"\s+")
        for cues in INTENT_CUES.values() for c in sorted(cues, key=len, reverse=True)
    ) + r")\b",
    re.IGNORECASE,
)
_CUE_INTENT = {re.sub(r"\s+", " ", c): intent for intent, cues in INTENT_CUES.items() for c in cues}

_BOUNDARY_RE = re.compile(r"\.(?=\s+[A-Z])|\n+")


@dataclass(frozen=True)
class ExtractionResult:
    kind: str
    payload: Any
    span: tuple[int, int]  # UTF-8 byte offsets into the note text
    intent: str
    surface: str

    @property
    def promoted(self) -> bool:
        return self.intent == "asserted"


def split_sentences(text: str) -> list[tuple[int, int]]:
    """Character spans of sentences.

    A newline always ends a sentence; a period ends one when followed by
    whitespace and a capital letter and the preceding token is not a known
    abbreviation.
    """
    spans = []
    start = 0
    for m in _BOUNDARY_RE.finditer(text):
        if m.group(0) == ".":
            word = re.search(r"([A-Za-z.]+)$", text[start:m.start()])
            if word and word.group(1).lower().rstrip(".") in ABBREVIATIONS:
                continue
            end = m.end()
        else:
            end = m.start()
        if text[start:end].strip():
            spans.append(_strip(text, start, end))
        start = m.end()
    if text[start:].strip():
        spans.append(_strip(text, start, len(text)))
    return spans


def _strip(text, start, end):
    while start < end and text[start].isspace():
        start += 1
    while end > start and text[end - 1].isspace():
        end -= 1
    return start, end


def classify_intent(text: str, sent_start: int, entity_start: int) -> str:
    """Intent of the entity at ``entity_start``: the cue nearest before it wins."""
    best = None
    for m in _CUE_RE.finditer(text, sent_start, entity_start):
        best = m
    if best is None:
        return "asserted"
    return _CUE_INTENT[re.sub(r"\s+", " ", best.group(1).lower())]


def byte_span(text: str, start: int, end: int) -> tuple[int, int]:
    b0 = len(text[:start].encode("utf-8"))
    return b0, b0 + len(text[start:end].encode("utf-8"))


def span_text(text: str, span: tuple[int, int]) -> str:
    return text.encode("utf-8")[span[0]:span[1]].decode("utf-8")
