"""Declarative two-arm trial specifications and eligibility evaluation.

A trial file looks like::

    {"name": "...",
     "arms": {"treatment": ["osimertinib"], "control": ["gefitinib", "erlotinib"]},
     "line_of_therapy": 1, "duration_days": 1095,
     "disease": {"stages": ["IIIA", ...], "sites": ["lung"]},
     "eligibility": {"all": [{"attr": "ANC", "op": ">=", "value": 1.5, "unit": "10^9/L"}, ...]},
     "confounders": ["gender", "smoking", ...]}

Eligibility expressions nest ``all`` / ``any`` / ``not`` around atoms.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from datetime import date
from importlib import resources
from typing import Optional, Union

from .records import STAGES, PatientRecord
from .textstruct.labs import CANONICAL_UNIT, UnitError, convert_value
from .textstruct.lot import line_at

DEFAULT_STAGES = frozenset({"IIIA", "IIIB", "IIIC", "IV", "IVA", "IVB"})

COVARIATES = ("age", "gender", "smoking", "histology", "cns_metastasis", "ecog", "race",
              "hemoglobin", "lymphocytes", "ALT", "AST", "ALP", "days_dx_to_tx")

# attribute -> (kind, canonical unit)
ATTRIBUTES = {
    "age": ("number", "years"),
    "days_dx_to_tx": ("number", "days"),
    "ecog": ("number", None),
    "line_of_therapy": ("number", None),
    "pdl1_tps": ("number", "percent"),
    "pdl1_cps": ("number", "percent"),
    "smoking": ("bool", None),
    "cns_metastasis": ("bool", None),
    "gender": ("category", None),
    "race": ("category", None),
    "histology": ("category", None),
    "site": ("category", None),
    "stage": ("category", None),
    **{lab: ("number", unit) for lab, unit in CANONICAL_UNIT.items()},
}

_OPS = {"<": "<", "<=": "<=", "≤": "<=", "=": "=", "==": "=", ">=": ">=", "≥": ">=", ">": ">",
        "in": "in", "in-set": "in"}
_UNIT_ALIASES = {
    "years": ("years", "year", "y", "yr"),
    "days": ("days", "day", "d"),
    "percent": ("%", "percent"),
}


class TrialSpecError(ValueError):
    pass


@dataclass(frozen=True)
class Atom:
    attr: str
    op: str
    value: object
    strict: bool = False
    source_unit: Optional[str] = None

    def describe(self) -> str:
        return f"{self.attr} {self.op} {self.value}"


@dataclass(frozen=True)
class All:
    items: tuple = ()


@dataclass(frozen=True)
class Any:
    items: tuple = ()


@dataclass(frozen=True)
class Not:
    item: object


EligibilityExpr = Union[Atom, All, Any, Not]


@dataclass(frozen=True)
class TrialSpec:
    name: str
    treatment_drugs: frozenset[str]
    control_drugs: frozenset[str]
    duration_days: int
    eligibility: EligibilityExpr = field(default_factory=All)
    confounders: tuple[str, ...] = ()
    line_of_therapy: Optional[int] = None
    required_stages: Optional[frozenset[str]] = None
    required_sites: Optional[frozenset[str]] = None
    add_on: bool = False
    approximate: bool = False

    def __post_init__(self):
        if not self.treatment_drugs or not self.control_drugs:
            raise TrialSpecError(f"{self.name}: both arms need at least one drug")
        overlap = self.treatment_drugs & self.control_drugs
        if overlap:
            raise TrialSpecError(f"{self.name}: drugs {sorted(overlap)} appear in both arms")
        if self.duration_days <= 0:
            raise TrialSpecError(f"{self.name}: duration_days must be positive")
        clash = set(self.confounders) & eligibility_attributes(self.eligibility)
        if clash:
            raise TrialSpecError(
                f"{self.name}: confounders {sorted(clash)} are eligibility criteria and must be dropped")

    @property
    def stages(self) -> frozenset[str]:
        return self.required_stages if self.required_stages is not None else DEFAULT_STAGES


def atoms(expr: EligibilityExpr) -> list[Atom]:
    if isinstance(expr, Atom):
        return [expr]
    if isinstance(expr, Not):
        return atoms(expr.item)
    return [a for item in expr.items for a in atoms(item)]


def eligibility_attributes(expr) -> set[str]:
    return {a.attr for a in atoms(expr)}


# --------------------------------------------------------------------------
# parsing


def _parse_unit(attr: str, value, unit: Optional[str], path: str):
    kind, canonical = ATTRIBUTES[attr]
    if unit is None or canonical is None:
        if unit is not None and canonical is None:
            raise TrialSpecError(f"{path}.unit: attribute {attr!r} takes no unit (got {unit!r})")
        return value
    if canonical in _UNIT_ALIASES:
        if unit.strip().lower() not in _UNIT_ALIASES[canonical]:
            raise TrialSpecError(f"{path}.unit: {unit!r} does not match {attr} unit {canonical!r}")
        return value
    convert = lambda v: convert_value(float(v), unit, canonical, None, attr)  # noqa: E731
    try:
        if isinstance(value, list):
            return [convert(v) for v in value]
        return convert(value)
    except UnitError as exc:
        raise TrialSpecError(f"{path}.unit: {exc}") from exc


def _parse_expr(obj, path: str) -> EligibilityExpr:
    if not isinstance(obj, dict):
        raise TrialSpecError(f"{path}: expected an object")
    if not obj:
        return All(())
    if "all" in obj or "any" in obj:
        key = "all" if "all" in obj else "any"
        items = obj[key]
        if not isinstance(items, list):
            raise TrialSpecError(f"{path}.{key}: expected a list")
        parsed = tuple(_parse_expr(x, f"{path}.{key}[{i}]") for i, x in enumerate(items))
        return All(parsed) if key == "all" else Any(parsed)
    if "not" in obj:
        return Not(_parse_expr(obj["not"], f"{path}.not"))
    attr = obj.get("attr")
    if attr not in ATTRIBUTES:
        raise TrialSpecError(f"{path}.attr: unknown attribute {attr!r}")
    op = _OPS.get(obj.get("op"))
    if op is None:
        raise TrialSpecError(f"{path}.op: unknown comparator {obj.get('op')!r}")
    if "value" not in obj:
        raise TrialSpecError(f"{path}.value: missing")
    kind = ATTRIBUTES[attr][0]
    value = obj["value"]
    if op == "in" and not isinstance(value, list):
        raise TrialSpecError(f"{path}.value: 'in' needs a list")
    if kind == "bool" and (op not in ("=",) or not isinstance(value, bool)):
        raise TrialSpecError(f"{path}: boolean attribute {attr!r} supports only '=' with true/false")
    if kind == "category" and op not in ("=", "in"):
        raise TrialSpecError(f"{path}.op: categorical attribute {attr!r} supports '=' and 'in'")
    if attr == "stage":
        bad = [v for v in (value if isinstance(value, list) else [value]) if v not in STAGES]
        if bad:
            raise TrialSpecError(f"{path}.value: unknown stages {bad}")
    value = _parse_unit(attr, value, obj.get("unit"), path)
    if isinstance(value, list):
        value = tuple(value)
    return Atom(attr=attr, op=op, value=value, strict=bool(obj.get("strict", False)),
                source_unit=obj.get("unit"))


def trial_spec_from_dict(obj: dict) -> TrialSpec:
    for key in ("name", "arms", "duration_days"):
        if key not in obj:
            raise TrialSpecError(f"$.{key}: required field missing")
    arms = obj["arms"]
    confounders = tuple(obj.get("confounders", ()))
    for i, c in enumerate(confounders):
        if c not in COVARIATES:
            raise TrialSpecError(f"$.confounders[{i}]: unknown covariate {c!r}")
    disease = obj.get("disease", {})
    stages = disease.get("stages")
    if stages is not None:
        bad = [s for s in stages if s not in STAGES]
        if bad:
            raise TrialSpecError(f"$.disease.stages: unknown stages {bad}")
    lot = obj.get("line_of_therapy")
    if lot is not None and (not isinstance(lot, int) or lot < 1):
        raise TrialSpecError("$.line_of_therapy: must be a positive integer")
    treatment = frozenset(arms.get("treatment", ()))
    control = frozenset(arms.get("control", ()))
    if treatment & control:
        raise TrialSpecError(f"$.arms: drugs {sorted(treatment & control)} appear in both arms")
    return TrialSpec(
        name=obj["name"],
        treatment_drugs=treatment,
        control_drugs=control,
        duration_days=int(obj["duration_days"]),
        eligibility=_parse_expr(obj.get("eligibility", {}), "$.eligibility"),
        confounders=confounders,
        line_of_therapy=lot,
        required_stages=None if stages is None else frozenset(stages),
        required_sites=None if disease.get("sites") is None else frozenset(disease["sites"]),
        add_on=bool(arms.get("add_on", False)),
        approximate=bool(obj.get("approximate", False)),
    )


def parse_trial_spec(path) -> TrialSpec:
    with open(path, encoding="utf-8") as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise TrialSpecError(f"{path}: invalid JSON: {exc}") from exc
    return trial_spec_from_dict(obj)


def bundled_trials() -> dict[str, TrialSpec]:
    folder = resources.files("trialemu").joinpath("trials")
    specs = {}
    for entry in sorted(folder.iterdir(), key=lambda p: p.name):
        if entry.name.endswith(".json"):
            spec = trial_spec_from_dict(json.loads(entry.read_text("utf-8")))
            specs[spec.name] = spec
    return specs


# --------------------------------------------------------------------------
# evaluation


def _latest(items, as_of):
    current = None
    for d, value in items:
        if d <= as_of:
            current = value
    return current


def _diagnosis_at(patient: PatientRecord, as_of: date):
    dx = [d for d in patient.diagnoses if d.date <= as_of]
    if dx:
        return dx[-1]
    return patient.diagnoses[0] if patient.diagnoses else None


def attribute_value(patient: PatientRecord, attr: str, as_of: date):
    """Value of ``attr`` at ``as_of`` in canonical units, or ``None`` when missing."""
    demo = patient.demographics
    if attr == "age":
        return (as_of - demo.birth_date).days / 365.25
    if attr in CANONICAL_UNIT:
        return _latest(((x.date, x.value) for x in patient.labs if x.test == attr), as_of)
    if attr == "ecog":
        return _latest(patient.ecog_observations, as_of)
    if attr in ("smoking", "cns_metastasis"):
        return getattr(demo, attr)
    if attr in ("gender", "race"):
        v = getattr(demo, attr)
        return None if v == "unknown" else v
    if attr in ("stage", "histology", "site"):
        dx = _diagnosis_at(patient, as_of)
        v = getattr(dx, attr) if dx else None
        return None if v in (None, "", "unknown") else v
    if attr == "line_of_therapy":
        if patient.lines_of_therapy is None:
            return None
        lot = line_at(patient.lines_of_therapy, as_of)
        return None if lot is None else lot.lot_index
    if attr == "days_dx_to_tx":
        dx = patient.diagnosis_date
        return None if dx is None else (as_of - dx).days
    if attr in ("pdl1_tps", "pdl1_cps"):
        stype = attr[-3:].upper()
        vals = []
        for b in patient.biomarkers:
            if b.gene_or_protein == "PD-L1" and b.score_type == stype and b.date <= as_of:
                if b.value_kind == "percent":
                    vals.append(b.value)
                elif b.value_kind == "range":
                    vals.append(sum(b.value) / 2.0)
        return vals[-1] if vals else None
    raise KeyError(attr)


def _compare(value, op, target) -> bool:
    if op == "<":
        return value < target
    if op == "<=":
        return value <= target
    if op == ">=":
        return value >= target
    if op == ">":
        return value > target
    if op == "=":
        return value == target
    return value in target


def evaluate_eligibility(expr: EligibilityExpr, patient: PatientRecord, as_of: date,
                         missing_policy: str = "ignore_criterion"):
    """``(eligible, trace)`` with one ``(atom, outcome)`` trace entry per atom.

    A missing attribute counts as satisfied under ``ignore_criterion`` and as
    failed under ``exclude_patient``; atoms marked ``strict`` always fail
    when missing.
    """
    if missing_policy not in ("ignore_criterion", "exclude_patient"):
        raise ValueError(f"unknown missing policy {missing_policy!r}")
    trace: list[tuple[Atom, str]] = []

    def ev(e) -> bool:
        if isinstance(e, Atom):
            value = attribute_value(patient, e.attr, as_of)
            if value is None:
                trace.append((e, "missing"))
                return missing_policy == "ignore_criterion" and not e.strict
            ok = _compare(value, e.op, e.value)
            trace.append((e, "pass" if ok else "fail"))
            return ok
        if isinstance(e, Not):
            return not ev(e.item)
        results = [ev(x) for x in e.items]  # no short-circuit: the trace covers every atom
        return all(results) if isinstance(e, All) else any(results)

    return ev(expr), trace
