import json
from datetime import date, timedelta

import pytest

from trialemu.records import (
    Demographics, DiagnosisEvent, LabResult, MedicationEvent, PatientRecord, RecordError, read_notes,
    read_patients, record_from_dict, record_to_dict, resolve_survival, write_notes, write_patients,
)
from trialemu.synth import SynthConfig, generate_patients


def _patient(pid="p1", death=None, last=date(2022, 1, 1), **kw):
    demo = Demographics(birth_date=date(1950, 1, 1), last_contact_date=last,
                        vital_status="deceased" if death else "alive", death_date=death)
    return PatientRecord(pid, demo, **kw)


def test_read_two_lines_sorts_events(tmp_path):
    p = _patient("a", medications=(MedicationEvent("docetaxel", date(2020, 3, 1)),
                                   MedicationEvent("docetaxel", date(2020, 2, 1))))
    lines = [record_to_dict(p), record_to_dict(_patient("b"))]
    lines[0]["medications"].reverse()
    path = tmp_path / "p.jsonl"
    path.write_text("".join(json.dumps(x) + "\n" for x in lines))
    recs = read_patients(path)
    assert [r.patient_id for r in recs] == ["a", "b"]
    assert [m.date for m in recs[0].medications] == [date(2020, 2, 1), date(2020, 3, 1)]


def test_death_before_birth_names_field(tmp_path):
    obj = record_to_dict(_patient("a", death=date(2020, 1, 1)))
    obj["demographics"]["death_date"] = "1940-01-01"
    path = tmp_path / "p.jsonl"
    path.write_text(json.dumps(obj) + "\n")
    with pytest.raises(RecordError, match=r"p.jsonl:1:.*death_date"):
        read_patients(path)


def test_empty_file(tmp_path):
    path = tmp_path / "p.jsonl"
    path.write_text("")
    assert read_patients(path) == []


def test_malformed_line_reports_number(tmp_path):
    path = tmp_path / "p.jsonl"
    path.write_text(json.dumps(record_to_dict(_patient("a"))) + "\n{not json\n")
    with pytest.raises(RecordError, match=":2:"):
        read_patients(path)


def test_duplicate_patient_id(tmp_path):
    path = tmp_path / "p.jsonl"
    line = json.dumps(record_to_dict(_patient("a"))) + "\n"
    path.write_text(line * 2)
    with pytest.raises(RecordError, match="duplicate"):
        read_patients(path)


def test_round_trip_synthetic_records(tmp_path):
    recs, _ = generate_patients(SynthConfig(n=10, seed=3, mcar_rate=0.2))
    path = tmp_path / "p.jsonl"
    write_patients(recs, path)
    assert read_patients(path) == [r.normalized() for r in recs]


def test_optional_fields_stay_absent(tmp_path):
    p = _patient("a")
    path = tmp_path / "p.jsonl"
    write_patients([p], path)
    obj = json.loads(path.read_text())
    assert "death_date" not in obj["demographics"]
    assert "smoking" not in obj["demographics"]
    back = read_patients(path)[0]
    assert back.demographics.smoking is None and back.lines_of_therapy is None


def test_non_finite_lab_rejected():
    with pytest.raises(RecordError):
        LabResult("hemoglobin", date(2020, 1, 1), float("nan"), "g_per_dL")


def test_unknown_enum_parses_to_unknown():
    obj = record_to_dict(_patient("a"))
    obj["demographics"]["gender"] = "nonstandard-value"
    assert record_from_dict(obj).demographics.gender == "unknown"


def test_resolve_survival_death():
    p = _patient(death=date(2020, 1, 1) + timedelta(days=300))
    out = resolve_survival(p, date(2020, 1, 1))
    assert (out.time_days, out.event) == (300, True)


def test_resolve_survival_censored():
    p = _patient(last=date(2021, 5, 15))
    out = resolve_survival(p, date(2020, 1, 1))
    assert (out.time_days, out.event, out.origin) == (500, False, "last_contact")


def test_resolve_survival_death_before_start():
    with pytest.raises(RecordError):
        resolve_survival(_patient(death=date(2019, 6, 1)), date(2020, 1, 1))


def test_normalize_idempotent():
    recs, _ = generate_patients(SynthConfig(n=5, seed=1))
    for r in recs:
        once = r.normalized()
        assert once.normalized() == once


def test_death_requires_deceased_status():
    with pytest.raises(RecordError):
        Demographics(date(1950, 1, 1), date(2020, 1, 1), vital_status="alive", death_date=date(2020, 1, 1))


def test_stage_enum_closed():
    with pytest.raises(RecordError):
        DiagnosisEvent(date(2020, 1, 1), stage="V")


def test_notes_round_trip(tmp_path):
    from trialemu.records import NoteDocument
    notes = [NoteDocument("a", date(2020, 1, 2), "progress", "ECOG 1.", "n1"),
             NoteDocument("b", date(2020, 1, 3), "progress", "KPS 80%")]
    write_notes(notes, tmp_path / "n.jsonl")
    assert read_notes(tmp_path / "n.jsonl") == notes
