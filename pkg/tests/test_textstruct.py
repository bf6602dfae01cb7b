from datetime import date

import pytest

from trialemu.records import NoteDocument
from trialemu.synth import DEFAULT_TEMPLATES, SynthConfig, generate_notes, generate_patients, score_extractions
from trialemu.textstruct import (
    UnitError, extract_ecog, extract_medications, extract_note, extract_pdl1, flag_from_icd, normalize_lab,
    percent_scale_to_ecog, span_text, split_sentences, structure_patients,
)

from fixtures_util import shipped_corpus

DAY = date(2021, 3, 4)


def note(text):
    return NoteDocument("p1", DAY, "progress", text, "n1")


# --------------------------------------------------------------------------
# performance status


def test_ecog_direct():
    (r,) = extract_ecog(note("ECOG performance status: 1"))
    assert (r.payload, r.intent) == (1, "asserted")


def test_kps_uses_mapping_table():
    # the fixed table maps KPS 100-90 to ECOG 0
    (r,) = extract_ecog(note("KPS 90%"))
    assert (r.payload, r.intent) == (0, "asserted")


@pytest.mark.parametrize("score, ecog", [(100, 0), (90, 0), (80, 1), (70, 1), (60, 2), (50, 2),
                                         (40, 3), (30, 3), (20, 4), (10, 4), (0, 5)])
def test_percent_scale_table(score, ecog):
    assert percent_scale_to_ecog(score) == ecog


def test_ecog_hypothetical_not_promoted():
    (r,) = extract_ecog(note("if ECOG worsens to 3, hold therapy"))
    assert (r.payload, r.intent, r.promoted) == (3, "hypothetical", False)


def test_ecog_negated():
    (r,) = extract_ecog(note("Patient denies chest pain. No evidence of ECOG 2 decline."))
    assert r.intent == "negated"


def test_no_mention_is_empty():
    assert extract_ecog(note("Routine follow-up, no complaints.")) == []


# --------------------------------------------------------------------------
# PD-L1


def test_pdl1_tps_percent():
    (r,) = extract_pdl1(note("PD-L1 TPS 60%"))
    b = r.payload
    assert (b.score_type, b.value_kind, b.value, r.intent, b.date) == ("TPS", "percent", 60.0, "asserted", DAY)


def test_pdl1_cps_negative():
    (r,) = extract_pdl1(note("PD-L1 CPS <1, negative"))
    assert (r.payload.score_type, r.payload.value_kind, r.intent) == ("CPS", "negative", "asserted")


def test_pdl1_order_is_not_promoted():
    assert not [r for r in extract_pdl1(note("will order PD-L1 testing")) if r.promoted]


def test_pdl1_range():
    (r,) = extract_pdl1(note("PD-L1 >50%"))
    assert (r.payload.value_kind, r.payload.value) == ("range", (50.0, 100.0))


# --------------------------------------------------------------------------
# medications


def test_medication_administered_with_attributes():
    (r,) = extract_medications(note("Cycle 2 pembrolizumab 200 mg IV administered today"))
    m = r.payload
    assert (m.drug, m.dosage, m.mode, m.status, m.date) == ("pembrolizumab", (200.0, "mg"), "IV", "administered", DAY)


def test_medication_suggestion():
    (r,) = extract_medications(note("discussed starting nivolumab next month"))
    assert r.payload.status == "mentioned-not-administered"
    assert not r.promoted


def test_medication_discontinued():
    (r,) = extract_medications(note("carboplatin discontinued due to toxicity"))
    assert r.payload.status == "discontinued"


def test_attribute_links_to_nearest_mention():
    res = extract_medications(note("Carboplatin AUC 5 and pemetrexed 500 mg/m2 IV given today."))
    by_drug = {r.payload.drug: r.payload for r in res}
    assert by_drug["pemetrexed"].dosage == (500.0, "mg/m2")
    assert by_drug["carboplatin"].dosage is None


# --------------------------------------------------------------------------
# text utilities and invariants


def test_sentence_split_respects_abbreviations():
    text = "Seen by Dr. Smith today. ECOG 1."
    spans = split_sentences(text)
    assert [text[a:b].strip() for a, b in spans][:1] == ["Seen by Dr. Smith today."]


def test_spans_contain_surface_and_are_byte_offsets():
    text = "Pt seen – état général stable. ECOG 2. PD-L1 TPS 80%. Pembrolizumab 200 mg IV given."
    n = note(text)
    res = extract_note(n)
    assert len(res) == 3
    raw = text.encode("utf-8")
    for r in res:
        a, b = r.span
        assert 0 <= a < b <= len(raw)
        assert r.surface in span_text(text, r.span)


def test_extraction_deterministic():
    notes, _ = shipped_corpus()
    assert [extract_note(n) for n in notes] == [extract_note(n) for n in notes]


def test_promotion_soundness():
    patients, _ = generate_patients(SynthConfig(n=4, seed=5))
    p = patients[0]
    texts = ["If ECOG worsens to 4, hold therapy.", "No ECOG 3 decline.", "Will order PD-L1 TPS 5% testing.",
             "Discussed starting nivolumab next month.", "History of erlotinib."]
    notes = [NoteDocument(p.patient_id, DAY, "x", t, f"q{i}") for i, t in enumerate(texts)]
    assert all(not r.promoted for n in notes for r in extract_note(n))
    out = structure_patients([p], notes, derive_lot=False)[0]
    assert out.ecog_observations == p.ecog_observations
    assert out.biomarkers == p.biomarkers
    assert out.medications == p.medications


def test_shipped_fixtures_exact():
    notes, labels = shipped_corpus()
    score = score_extractions(notes, labels)
    assert score["precision"] == 1.0 and score["recall"] == 1.0, score


def test_generated_corpus_exact():
    patients, _ = generate_patients(SynthConfig(n=60, seed=11))
    notes, labels = generate_notes(patients, DEFAULT_TEMPLATES, seed=11)
    score = score_extractions(notes, labels)
    assert score["precision"] == 1.0 and score["recall"] == 1.0, score


# --------------------------------------------------------------------------
# labs and codes


def test_lab_uln():
    lab = normalize_lab("bilirubin", 1.5, "mg/dL", reference_upper=1.0)
    assert (lab.value, lab.unit) == (1.5, "ULN")


def test_lab_hemoglobin_canonical():
    lab = normalize_lab("hemoglobin", 9, "g/dL")
    assert (lab.value, lab.unit) == (9.0, "g_per_dL")


def test_lab_wbc_conversion():
    lab = normalize_lab("WBC", 4.5, "10^3/uL")
    assert lab.value == pytest.approx(4500.0)
    assert lab.unit == "count_per_uL"


def test_lab_uln_without_reference():
    with pytest.raises(UnitError):
        normalize_lab("bilirubin", 1.5, "mg/dL")


def test_lab_unknown_unit():
    with pytest.raises(UnitError):
        normalize_lab("hemoglobin", 9, "furlongs")


def test_icd_flags():
    assert flag_from_icd(["C79.31"]) == (None, True)
    assert flag_from_icd(["F17.210"]) == (True, None)
    assert flag_from_icd([]) == (None, None)


def test_icd_smokeless_tobacco_excluded():
    assert flag_from_icd(["F17.220"])[0] is None


def test_structured_values_not_overwritten():
    patients, _ = generate_patients(SynthConfig(n=5, seed=2))
    p = patients[0]
    out = structure_patients([p], [NoteDocument(p.patient_id, DAY, "x", "ECOG 4.", "z")])[0]
    assert set(p.ecog_observations) <= set(out.ecog_observations)
    assert out.demographics.smoking == p.demographics.smoking
