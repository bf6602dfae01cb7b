"""Fold note extractions and coded flags back into patient records."""
from __future__ import annotations

from collections import defaultdict
from dataclasses import replace
from typing import Iterable, Optional

from ..records import Demographics, NoteDocument, PatientRecord
from .ecog import extract_ecog
from .icd import flag_from_icd
from .lot import derive_lines_of_therapy
from .medications import DrugLexicon, default_lexicon, extract_medications
from .pdl1 import extract_pdl1


def extract_note(note: NoteDocument, lexicon: Optional[DrugLexicon] = None):
    return extract_ecog(note) + extract_pdl1(note) + extract_medications(note, lexicon)


def structure_patients(patients: Iterable[PatientRecord], notes: Iterable[NoteDocument],
                       lexicon: Optional[DrugLexicon] = None, derive_lot: bool = True) -> list[PatientRecord]:
    """Promote asserted extractions into the records; never overwrite structured values."""
    lexicon = lexicon or default_lexicon()
    by_patient: dict[str, list[NoteDocument]] = defaultdict(list)
    for n in notes:
        by_patient[n.patient_id].append(n)

    out = []
    for p in patients:
        ecog = list(p.ecog_observations)
        biomarkers = list(p.biomarkers)
        meds = list(p.medications)
        refs = list(p.notes_refs)
        for note in sorted(by_patient.get(p.patient_id, ()), key=lambda n: (n.date, n.note_id)):
            if note.note_id and note.note_id not in refs:
                refs.append(note.note_id)
            for res in extract_note(note, lexicon):
                if not res.promoted:
                    continue
                if res.kind == "ecog":
                    ecog.append((note.date, res.payload))
                elif res.kind == "pdl1":
                    biomarkers.append(res.payload)
                elif res.kind == "medication" and res.payload not in meds:
                    meds.append(res.payload)

        codes = [c for d in p.diagnoses for c in d.icd_codes]
        smoking, cns = flag_from_icd(codes)
        demo: Demographics = p.demographics
        demo = replace(
            demo,
            smoking=demo.smoking if demo.smoking is not None else smoking,
            cns_metastasis=demo.cns_metastasis if demo.cns_metastasis is not None else cns,
        )
        rec = replace(p, demographics=demo, ecog_observations=tuple(dict.fromkeys(ecog)),
                      biomarkers=tuple(biomarkers), medications=tuple(meds), notes_refs=tuple(refs))
        rec = rec.normalized()
        if derive_lot and rec.lines_of_therapy is None and rec.diagnosis_date is not None:
            sact = [m for m in rec.medications if m.drug in lexicon.drug_class and m.status == "administered"]
            if sact:
                lots = derive_lines_of_therapy(sact, rec.diagnosis_date, rec.progression_dates,
                                               lexicon.drug_class, patient_id=rec.patient_id)
                rec = replace(rec, lines_of_therapy=tuple(lots))
        out.append(rec)
    return out
