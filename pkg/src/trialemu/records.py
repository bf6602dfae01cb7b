"""Patient data model and JSON-lines I/O.

Records are frozen dataclasses; every list-valued field is stored as a tuple
sorted by date so two normalized records compare equal field-for-field.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, fields, replace
from datetime import date
from pathlib import Path
from typing import Any, Iterable, Optional

log = logging.getLogger(__name__)

GENDERS = ("female", "male", "unknown")
RACES = ("white", "black", "asian", "other", "unknown")
ETHNICITIES = ("hispanic", "not_hispanic", "unknown")
VITAL_STATUSES = ("alive", "deceased", "unknown")
STAGES = ("IA", "IB", "IIA", "IIB", "IIIA", "IIIB", "IIIC", "IV", "IVA", "IVB", "unknown")
MED_STATUSES = ("administered", "ordered", "discontinued", "substituted", "mentioned-not-administered")
MED_SOURCES = ("structured", "extracted")
ROUTES = ("IV", "PO", "SC", "IM", "unknown")
LAB_UNITS = ("ULN", "g_per_dL", "count_per_uL")
SCORE_TYPES = ("CPS", "TPS", "other")
VALUE_KINDS = ("percent", "range", "positive", "negative", "high", "low")
OUTCOME_ORIGINS = ("death_date", "last_contact", "trial_censored")


class RecordError(ValueError):
    """A record violates the schema or one of its invariants."""


def _enum(value, allowed, name, strict=False):
    if value is None:
        return "unknown" if "unknown" in allowed else None
    v = str(value)
    if v in allowed:
        return v
    if strict or "unknown" not in allowed:
        raise RecordError(f"{name}: {v!r} is not one of {allowed}")
    return "unknown"


def _date(value, name) -> Optional[date]:
    if value is None or isinstance(value, date):
        return value
    try:
        return date.fromisoformat(value)
    except (TypeError, ValueError) as exc:
        raise RecordError(f"{name}: invalid ISO-8601 date {value!r}") from exc


@dataclass(frozen=True)
class Demographics:
    birth_date: date
    last_contact_date: date
    gender: str = "unknown"
    race: str = "unknown"
    ethnicity: str = "unknown"
    vital_status: str = "unknown"
    death_date: Optional[date] = None
    smoking: Optional[bool] = None
    cns_metastasis: Optional[bool] = None

    def __post_init__(self):
        if self.death_date is not None and self.vital_status != "deceased":
            raise RecordError("demographics.death_date present but vital_status is not 'deceased'")
        if self.last_contact_date < self.birth_date:
            raise RecordError("demographics.last_contact_date precedes birth_date")
        if self.death_date is not None and self.death_date < self.birth_date:
            raise RecordError("demographics.death_date precedes birth_date")


@dataclass(frozen=True)
class DiagnosisEvent:
    date: date
    site: str = ""
    histology: str = ""
    stage: str = "unknown"
    icd_codes: tuple[str, ...] = ()

    def __post_init__(self):
        if self.stage not in STAGES:
            raise RecordError(f"diagnosis.stage {self.stage!r} not in {STAGES}")


@dataclass(frozen=True)
class MedicationEvent:
    drug: str
    date: Optional[date]
    status: str = "administered"
    source: str = "structured"
    dosage: Optional[tuple[float, str]] = None
    frequency: Optional[str] = None
    mode: Optional[str] = None

    def __post_init__(self):
        if not self.drug:
            raise RecordError("medication.drug must be non-empty")
        if self.status not in MED_STATUSES:
            raise RecordError(f"medication.status {self.status!r} not in {MED_STATUSES}")
        if self.status == "administered" and self.date is None:
            raise RecordError("administered medication events must carry a date")


@dataclass(frozen=True)
class LabResult:
    test: str
    date: date
    value: float
    unit: str
    reference_upper: Optional[float] = None

    def __post_init__(self):
        if not math.isfinite(self.value):
            raise RecordError(f"lab {self.test}: non-finite value {self.value}")
        if self.value < 0:
            raise RecordError(f"lab {self.test}: negative value {self.value}")
        if self.unit not in LAB_UNITS:
            raise RecordError(f"lab {self.test}: unit {self.unit!r} not canonical {LAB_UNITS}")


@dataclass(frozen=True)
class BiomarkerResult:
    gene_or_protein: str
    score_type: str
    value_kind: str
    date: date
    value: Optional[float | tuple[float, float]] = None

    def __post_init__(self):
        if self.score_type not in SCORE_TYPES:
            raise RecordError(f"biomarker.score_type {self.score_type!r} not in {SCORE_TYPES}")
        if self.value_kind not in VALUE_KINDS:
            raise RecordError(f"biomarker.value_kind {self.value_kind!r} not in {VALUE_KINDS}")
        if self.value_kind == "percent" and not (isinstance(self.value, (int, float)) and 0 <= self.value <= 100):
            raise RecordError("biomarker percent value must lie in [0, 100]")
        if self.value_kind == "range":
            if not (isinstance(self.value, tuple) and len(self.value) == 2 and self.value[0] < self.value[1]):
                raise RecordError("biomarker range value must be (lo, hi) with lo < hi")


@dataclass(frozen=True)
class LineOfTherapy:
    patient_id: str
    lot_index: int
    drugs: frozenset[str]
    start_date: date
    end_date: Optional[date] = None


@dataclass(frozen=True)
class SurvivalOutcome:
    time_days: int
    event: bool
    origin: str

    def __post_init__(self):
        if self.time_days < 0:
            raise RecordError("survival time must be non-negative")
        if self.event and self.origin != "death_date":
            raise RecordError("an observed death must originate from death_date")


@dataclass(frozen=True)
class PatientRecord:
    patient_id: str
    demographics: Demographics
    diagnoses: tuple[DiagnosisEvent, ...] = ()
    medications: tuple[MedicationEvent, ...] = ()
    labs: tuple[LabResult, ...] = ()
    biomarkers: tuple[BiomarkerResult, ...] = ()
    ecog_observations: tuple[tuple[date, int], ...] = ()
    notes_refs: tuple[str, ...] = ()
    progression_dates: tuple[date, ...] = ()
    lines_of_therapy: Optional[tuple[LineOfTherapy, ...]] = None

    def __post_init__(self):
        if not self.patient_id:
            raise RecordError("patient_id must be non-empty")
        birth = self.demographics.birth_date
        for d in self._event_dates():
            if d < birth:
                raise RecordError(f"patient {self.patient_id}: event dated {d} precedes birth_date")
        for d, e in self.ecog_observations:
            if not 0 <= e <= 5:
                raise RecordError(f"patient {self.patient_id}: ECOG {e} outside 0-5")

    def _event_dates(self):
        yield from (d.date for d in self.diagnoses)
        yield from (m.date for m in self.medications if m.date is not None)
        yield from (lab.date for lab in self.labs)
        yield from (b.date for b in self.biomarkers)
        yield from (d for d, _ in self.ecog_observations)

    def normalized(self) -> "PatientRecord":
        """Return a copy with every event list sorted ascending by date (stable)."""
        med_key = lambda m: (m.date or date.min)  # noqa: E731
        return replace(
            self,
            diagnoses=tuple(sorted(self.diagnoses, key=lambda d: d.date)),
            medications=tuple(sorted(self.medications, key=med_key)),
            labs=tuple(sorted(self.labs, key=lambda x: x.date)),
            biomarkers=tuple(sorted(self.biomarkers, key=lambda x: x.date)),
            ecog_observations=tuple(sorted(self.ecog_observations, key=lambda x: x[0])),
            progression_dates=tuple(sorted(self.progression_dates)),
            lines_of_therapy=(None if self.lines_of_therapy is None
                              else tuple(sorted(self.lines_of_therapy, key=lambda lot: lot.lot_index))),
        )

    @property
    def diagnosis_date(self) -> Optional[date]:
        return self.diagnoses[0].date if self.diagnoses else None


# --------------------------------------------------------------------------
# survival


def resolve_survival(record: PatientRecord, therapy_start: date) -> SurvivalOutcome:
    demo = record.demographics
    if therapy_start < demo.birth_date:
        raise RecordError(f"patient {record.patient_id}: therapy start precedes birth_date")
    if demo.death_date is not None:
        days = (demo.death_date - therapy_start).days
        if days < 0:
            raise RecordError(f"patient {record.patient_id}: death_date precedes therapy start")
        return SurvivalOutcome(days, True, "death_date")
    days = (demo.last_contact_date - therapy_start).days
    if days < 0:
        raise RecordError(f"patient {record.patient_id}: last_contact_date precedes therapy start")
    return SurvivalOutcome(days, False, "last_contact")


# --------------------------------------------------------------------------
# JSON (de)serialization


def _iso(d: Optional[date]):
    return None if d is None else d.isoformat()


def _drop_none(obj: dict) -> dict:
    return {k: v for k, v in obj.items() if v is not None}


def record_to_dict(r: PatientRecord) -> dict:
    demo = r.demographics
    out: dict[str, Any] = {
        "patient_id": r.patient_id,
        "demographics": _drop_none({
            "birth_date": _iso(demo.birth_date),
            "gender": demo.gender,
            "race": demo.race,
            "ethnicity": demo.ethnicity,
            "vital_status": demo.vital_status,
            "death_date": _iso(demo.death_date),
            "last_contact_date": _iso(demo.last_contact_date),
            "smoking": demo.smoking,
            "cns_metastasis": demo.cns_metastasis,
        }),
        "diagnoses": [
            {"date": _iso(d.date), "site": d.site, "histology": d.histology, "stage": d.stage,
             "icd_codes": list(d.icd_codes)}
            for d in r.diagnoses
        ],
        "medications": [
            _drop_none({
                "drug": m.drug, "date": _iso(m.date), "status": m.status, "source": m.source,
                "dosage": None if m.dosage is None else {"amount": m.dosage[0], "unit": m.dosage[1]},
                "frequency": m.frequency, "mode": m.mode,
            })
            for m in r.medications
        ],
        "labs": [
            _drop_none({"test": x.test, "date": _iso(x.date), "value": x.value, "unit": x.unit,
                        "reference_upper": x.reference_upper})
            for x in r.labs
        ],
        "biomarkers": [
            _drop_none({"gene_or_protein": b.gene_or_protein, "score_type": b.score_type,
                        "value_kind": b.value_kind, "date": _iso(b.date),
                        "value": list(b.value) if isinstance(b.value, tuple) else b.value})
            for b in r.biomarkers
        ],
        "ecog_observations": [{"date": _iso(d), "ecog": e} for d, e in r.ecog_observations],
        "notes_refs": list(r.notes_refs),
    }
    if r.progression_dates:
        out["progression_dates"] = [_iso(d) for d in r.progression_dates]
    if r.lines_of_therapy is not None:
        out["lines_of_therapy"] = [
            _drop_none({"lot_index": lot.lot_index, "drugs": sorted(lot.drugs),
                        "start_date": _iso(lot.start_date), "end_date": _iso(lot.end_date)})
            for lot in r.lines_of_therapy
        ]
    return out


_KNOWN = {
    "top": {"patient_id", "demographics", "diagnoses", "medications", "labs", "biomarkers",
            "ecog_observations", "notes_refs", "progression_dates", "lines_of_therapy"},
    "demographics": {f.name for f in fields(Demographics)},
}


def record_from_dict(obj: dict) -> PatientRecord:
    unknown = set(obj) - _KNOWN["top"]
    if unknown:
        log.warning("ignoring unknown record fields %s", sorted(unknown))
    pid = obj.get("patient_id")
    if not isinstance(pid, str) or not pid:
        raise RecordError("patient_id: missing or empty")
    d = obj.get("demographics") or {}
    unknown = set(d) - _KNOWN["demographics"]
    if unknown:
        log.warning("ignoring unknown demographics fields %s", sorted(unknown))
    for req in ("birth_date", "last_contact_date"):
        if req not in d:
            raise RecordError(f"demographics.{req}: required field missing")
    birth = _date(d["birth_date"], "demographics.birth_date")
    death = _date(d.get("death_date"), "demographics.death_date")
    if death is not None and death < birth:
        raise RecordError("demographics.death_date precedes birth_date")
    demo = Demographics(
        birth_date=birth,
        last_contact_date=_date(d["last_contact_date"], "demographics.last_contact_date"),
        gender=_enum(d.get("gender"), GENDERS, "demographics.gender"),
        race=_enum(d.get("race"), RACES, "demographics.race"),
        ethnicity=_enum(d.get("ethnicity"), ETHNICITIES, "demographics.ethnicity"),
        vital_status=_enum(d.get("vital_status"), VITAL_STATUSES, "demographics.vital_status"),
        death_date=death,
        smoking=d.get("smoking"),
        cns_metastasis=d.get("cns_metastasis"),
    )
    diagnoses = tuple(
        DiagnosisEvent(
            date=_date(x["date"], "diagnoses.date"),
            site=x.get("site", ""),
            histology=x.get("histology", ""),
            stage=_enum(x.get("stage"), STAGES, "diagnoses.stage"),
            icd_codes=tuple(x.get("icd_codes", ())),
        )
        for x in obj.get("diagnoses", ())
    )
    meds = []
    for x in obj.get("medications", ()):
        dosage = x.get("dosage")
        meds.append(MedicationEvent(
            drug=x.get("drug", ""),
            date=_date(x.get("date"), "medications.date"),
            status=_enum(x.get("status", "administered"), MED_STATUSES, "medications.status", strict=True),
            source=_enum(x.get("source", "structured"), MED_SOURCES, "medications.source", strict=True),
            dosage=None if dosage is None else (float(dosage["amount"]), str(dosage["unit"])),
            frequency=x.get("frequency"),
            mode=x.get("mode"),
        ))
    labs = tuple(
        LabResult(test=x["test"], date=_date(x["date"], "labs.date"), value=float(x["value"]),
                  unit=x["unit"], reference_upper=x.get("reference_upper"))
        for x in obj.get("labs", ())
    )
    biomarkers = tuple(
        BiomarkerResult(
            gene_or_protein=x["gene_or_protein"], score_type=x["score_type"], value_kind=x["value_kind"],
            date=_date(x["date"], "biomarkers.date"),
            value=tuple(x["value"]) if isinstance(x.get("value"), list) else x.get("value"),
        )
        for x in obj.get("biomarkers", ())
    )
    ecog = tuple((_date(x["date"], "ecog_observations.date"), int(x["ecog"]))
                 for x in obj.get("ecog_observations", ()))
    lots = obj.get("lines_of_therapy")
    if lots is not None:
        lots = tuple(
            LineOfTherapy(patient_id=pid, lot_index=int(x["lot_index"]), drugs=frozenset(x["drugs"]),
                          start_date=_date(x["start_date"], "lines_of_therapy.start_date"),
                          end_date=_date(x.get("end_date"), "lines_of_therapy.end_date"))
            for x in lots
        )
    rec = PatientRecord(
        patient_id=pid,
        demographics=demo,
        diagnoses=diagnoses,
        medications=tuple(meds),
        labs=labs,
        biomarkers=biomarkers,
        ecog_observations=ecog,
        notes_refs=tuple(obj.get("notes_refs", ())),
        progression_dates=tuple(_date(x, "progression_dates") for x in obj.get("progression_dates", ())),
        lines_of_therapy=lots,
    )
    return rec.normalized()


def read_patients(path, format: str = "jsonl") -> list[PatientRecord]:
    """Read a JSON-lines patient file; errors carry the offending line number."""
    if format != "jsonl":
        raise ValueError(f"unsupported format {format!r}")
    records: list[PatientRecord] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = record_from_dict(json.loads(line))
            except (json.JSONDecodeError, RecordError, KeyError, TypeError, ValueError) as exc:
                raise RecordError(f"{path}:{lineno}: {exc}") from exc
            if rec.patient_id in seen:
                raise RecordError(f"{path}:{lineno}: duplicate patient_id {rec.patient_id!r}")
            seen.add(rec.patient_id)
            records.append(rec)
    return records


def write_patients(records: Iterable[PatientRecord], path) -> None:
    records = list(records)
    for r in records:
        for lab in r.labs:
            if not math.isfinite(lab.value):
                raise RecordError(f"patient {r.patient_id}: non-finite lab value")
    lines = [json.dumps(record_to_dict(r), sort_keys=True) for r in records]
    Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")


# --------------------------------------------------------------------------
# notes


@dataclass(frozen=True)
class NoteDocument:
    patient_id: str
    date: date
    note_type: str
    text: str
    note_id: str = ""


def read_notes(path) -> list[NoteDocument]:
    notes = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                notes.append(NoteDocument(
                    patient_id=obj["patient_id"], date=_date(obj["date"], "date"),
                    note_type=obj.get("note_type", ""), text=obj["text"], note_id=obj.get("note_id", ""),
                ))
            except (json.JSONDecodeError, KeyError, RecordError) as exc:
                raise RecordError(f"{path}:{lineno}: {exc}") from exc
    return notes


def write_notes(notes: Iterable[NoteDocument], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for n in notes:
            obj = {"patient_id": n.patient_id, "date": n.date.isoformat(), "note_type": n.note_type,
                   "text": n.text}
            if n.note_id:
                obj["note_id"] = n.note_id
            fh.write(json.dumps(obj, sort_keys=True) + "\n")
