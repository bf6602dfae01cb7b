"""Rule-based structuring of clinical notes and coded data."""
from ._text import ExtractionResult, classify_intent, span_text, split_sentences
from .ecog import extract_ecog, percent_scale_to_ecog
from .icd import flag_from_icd
from .labs import UnitError, convert_value, normalize_lab
from .lot import derive_lines_of_therapy, line_at
from .medications import DrugLexicon, default_lexicon, extract_medications, load_lexicon
from .pdl1 import extract_pdl1
from .structure import extract_note, structure_patients

__all__ = [
    "DrugLexicon",
    "ExtractionResult",
    "UnitError",
    "classify_intent",
    "convert_value",
    "default_lexicon",
    "derive_lines_of_therapy",
    "extract_ecog",
    "extract_medications",
    "extract_note",
    "extract_pdl1",
    "flag_from_icd",
    "line_at",
    "load_lexicon",
    "normalize_lab",
    "percent_scale_to_ecog",
    "span_text",
    "split_sentences",
    "structure_patients",
]
