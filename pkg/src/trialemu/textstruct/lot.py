"""Line-of-therapy derivation from administered systemic anti-cancer therapy."""
from __future__ import annotations

import logging
from datetime import date
from typing import Iterable, Mapping

from ..records import LineOfTherapy, MedicationEvent

log = logging.getLogger(__name__)


def derive_lines_of_therapy(meds: Iterable[MedicationEvent], diagnosis_date: date,
                            progression_dates: Iterable[date], drug_classes: Mapping[str, str],
                            patient_id: str = "", combination_window_days: int = 0) -> list[LineOfTherapy]:
    """Group administrations into numbered lines.

    1. The first administration on/after diagnosis opens line 1.
    2. After a documented progression the next administration opens a new line.
    3. A new drug of the same class as a drug already in the line is a
       substitution and stays in the line.
    4. A new drug of a new class added to the ongoing line opens a new line
       (the new line carries the ongoing drugs plus the new agent).
    5. Dropping agents never changes the line.

    Drugs first given within ``combination_window_days`` of the line start
    belong to the starting regimen.
    """
    admin = sorted((m for m in meds if m.status == "administered" and m.date is not None),
                   key=lambda m: (m.date, m.drug))
    progressions = sorted(progression_dates)
    lines: list[dict] = []
    for m in admin:
        if m.date < diagnosis_date:
            log.warning("patient %s: %s on %s precedes diagnosis; excluded from lines of therapy",
                        patient_id, m.drug, m.date)
            continue
        if not lines:
            lines.append({"drugs": {m.drug}, "start": m.date, "end": m.date})
            continue
        cur = lines[-1]
        # a progression is consumed by the first line opened after it
        if any(cur["start"] < p < m.date for p in progressions):
            lines.append({"drugs": {m.drug}, "start": m.date, "end": m.date})
            continue
        if m.drug in cur["drugs"]:
            cur["end"] = m.date
            continue
        if (m.date - cur["start"]).days <= combination_window_days:
            cur["drugs"].add(m.drug)
            cur["end"] = m.date
            continue
        cls = drug_classes.get(m.drug, m.drug)
        if any(drug_classes.get(d, d) == cls for d in cur["drugs"]):
            cur["drugs"].add(m.drug)
            cur["end"] = m.date
            continue
        lines.append({"drugs": cur["drugs"] | {m.drug}, "start": m.date, "end": m.date})
    return [
        LineOfTherapy(patient_id=patient_id, lot_index=i, drugs=frozenset(line["drugs"]),
                      start_date=line["start"], end_date=line["end"])
        for i, line in enumerate(lines, start=1)
    ]


def line_at(lines, as_of: date):
    """The line in progress at ``as_of`` (latest start on or before it), or None."""
    current = None
    for lot in lines or ():
        if lot.start_date <= as_of:
            current = lot
    return current
