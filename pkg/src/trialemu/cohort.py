"""Per-trial cohort assembly, cleaning and design-matrix encoding."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field, replace
from datetime import date, timedelta
from typing import Iterable, Optional

import numpy as np

from .records import PatientRecord, RecordError, resolve_survival
from .trialspec import TrialSpec, attribute_value, evaluate_eligibility

log = logging.getLogger(__name__)

EXCLUSION_REASONS = ("date_inconsistent", "gap_gt_2y", "crossover", "duplicate", "stage", "lot",
                     "ineligible", "no_arm_drug")
MAX_DX_TO_TX_DAYS = 730

COVARIATE_KINDS = {
    "age": "continuous",
    "hemoglobin": "continuous",
    "lymphocytes": "continuous",
    "ALT": "continuous",
    "AST": "continuous",
    "ALP": "continuous",
    "days_dx_to_tx": "continuous",
    "smoking": "flag",
    "cns_metastasis": "flag",
    "gender": "categorical",
    "race": "categorical",
    "histology": "categorical",
    "ecog": "categorical",
}


class CohortError(ValueError):
    pass


@dataclass
class EmulationDataset:
    """Analysis table: one row per patient with treatment, outcome and covariates.

    Before :func:`encode_design_matrix` the covariates live in ``raw`` (one
    list per confounder, ``None`` when missing) and ``X`` is empty.  After
    encoding ``X`` is numeric with ``missing_mask`` marking placeholders.
    """

    patient_ids: list[str]
    W: np.ndarray
    Y: np.ndarray
    D: np.ndarray
    covariate_names: list[str] = field(default_factory=list)
    X: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    missing_mask: np.ndarray = field(default_factory=lambda: np.zeros((0, 0), dtype=bool))
    column_kinds: list[str] = field(default_factory=list)
    column_groups: list[str] = field(default_factory=list)
    raw: dict[str, list] = field(default_factory=dict)
    therapy_start: list[date] = field(default_factory=list)
    diagnosis_date: list[Optional[date]] = field(default_factory=list)
    exclusion_log: list[tuple[str, str]] = field(default_factory=list)
    n_matched: int = 0

    def __len__(self):
        return len(self.patient_ids)

    @property
    def rows(self):
        return [(pid, int(w), int(y), int(d), self.X[i] if self.X.size else None)
                for i, (pid, w, y, d) in enumerate(zip(self.patient_ids, self.W, self.Y, self.D))]

    @property
    def encoded(self) -> bool:
        return self.X.shape[0] == len(self) and len(self) > 0 and bool(self.covariate_names)

    def subset(self, idx) -> "EmulationDataset":
        idx = np.asarray(idx, dtype=int)
        pick = lambda seq: [seq[i] for i in idx]  # noqa: E731
        return replace(
            self,
            patient_ids=pick(self.patient_ids),
            W=self.W[idx], Y=self.Y[idx], D=self.D[idx],
            X=self.X[idx] if self.X.shape[0] else self.X,
            missing_mask=self.missing_mask[idx] if self.missing_mask.shape[0] else self.missing_mask,
            raw={k: pick(v) for k, v in self.raw.items()},
            therapy_start=pick(self.therapy_start) if self.therapy_start else [],
            diagnosis_date=pick(self.diagnosis_date) if self.diagnosis_date else [],
            exclusion_log=list(self.exclusion_log),
        )

    def model_matrix(self) -> tuple[np.ndarray, list[str]]:
        """Columns for regression: first level of each one-hot group and constant columns dropped."""
        keep = []
        seen_groups = set()
        for j, (kind, group) in enumerate(zip(self.column_kinds, self.column_groups)):
            if kind == "onehot" and group not in seen_groups:
                seen_groups.add(group)
                continue
            col = self.X[:, j]
            if np.all(col == col[0]):
                continue
            keep.append(j)
        return self.X[:, keep], [self.covariate_names[j] for j in keep]

    def arm_sizes(self) -> tuple[int, int]:
        return int(np.sum(self.W == 1)), int(np.sum(self.W == 0))


def _sorted_log(entries):
    return sorted(entries, key=lambda e: (e[0], EXCLUSION_REASONS.index(e[1])))


# --------------------------------------------------------------------------
# assembly


def _arm_dates(patient: PatientRecord, drugs) -> list[date]:
    return sorted(m.date for m in patient.medications
                  if m.status == "administered" and m.date is not None and m.drug in drugs)


def raw_covariate(patient: PatientRecord, name: str, as_of: date):
    if name == "ecog":
        v = attribute_value(patient, "ecog", as_of)
        if v is None:
            return None
        return "3+" if v >= 3 else str(int(v))
    v = attribute_value(patient, name, as_of)
    if name in ("smoking", "cns_metastasis"):
        return None if v is None else bool(v)
    return v


def assemble_cohort(patients: Iterable[PatientRecord], spec: TrialSpec, apply_eligibility: bool = True,
                    missing_policy: str = "ignore_criterion") -> EmulationDataset:
    """Assign arms and therapy start, apply disease/LoT/eligibility filters, attach raw covariates."""
    ids, W, Y, D, starts, dx_dates = [], [], [], [], [], []
    raw = {c: [] for c in spec.confounders}
    excluded = []
    matched = 0
    for p in patients:
        t_dates = _arm_dates(p, spec.treatment_drugs)
        c_dates = _arm_dates(p, spec.control_drugs)
        if t_dates:
            w, start = 1, t_dates[0]
        elif c_dates:
            w, start = 0, c_dates[0]
        else:
            excluded.append((p.patient_id, "no_arm_drug"))
            continue
        matched += 1
        stage = attribute_value(p, "stage", start)
        site = attribute_value(p, "site", start)
        if stage not in spec.stages or (spec.required_sites is not None and site not in spec.required_sites):
            excluded.append((p.patient_id, "stage"))
            continue
        if spec.line_of_therapy is not None:
            lot = attribute_value(p, "line_of_therapy", start)
            if lot is not None and lot != spec.line_of_therapy:
                excluded.append((p.patient_id, "lot"))
                continue
        if apply_eligibility:
            ok, _ = evaluate_eligibility(spec.eligibility, p, start, missing_policy)
            if not ok:
                excluded.append((p.patient_id, "ineligible"))
                continue
        try:
            outcome = resolve_survival(p, start)
        except RecordError:
            excluded.append((p.patient_id, "date_inconsistent"))
            continue
        ids.append(p.patient_id)
        W.append(w)
        Y.append(outcome.time_days)
        D.append(int(outcome.event))
        starts.append(start)
        dx_dates.append(p.diagnosis_date)
        for c in spec.confounders:
            raw[c].append(raw_covariate(p, c, start))

    W_arr = np.asarray(W, dtype=int)
    for arm, name in ((1, "treatment"), (0, "control")):
        if not np.any(W_arr == arm):
            raise CohortError(f"{spec.name}: the {name} arm is empty after filtering")
    return EmulationDataset(
        patient_ids=ids, W=W_arr, Y=np.asarray(Y, dtype=int), D=np.asarray(D, dtype=int),
        covariate_names=[], raw=raw, therapy_start=starts, diagnosis_date=dx_dates,
        exclusion_log=_sorted_log(excluded), n_matched=matched,
    )


# --------------------------------------------------------------------------
# cleaning


def clean_cohort(ds: EmulationDataset, patients: Iterable[PatientRecord], spec: TrialSpec) -> EmulationDataset:
    """Drop inconsistent, late-start, crossover and duplicate rows; censor at trial duration.

    Removals run before censoring.  Every removal is logged.
    """
    by_id = {}
    for p in patients:
        by_id.setdefault(p.patient_id, p)
    keep = []
    excluded = []
    seen = set()
    window = timedelta(days=spec.duration_days)
    for i, pid in enumerate(ds.patient_ids):
        if pid in seen:
            excluded.append((pid, "duplicate"))
            continue
        seen.add(pid)
        p = by_id.get(pid)
        start = ds.therapy_start[i]
        dx = ds.diagnosis_date[i]
        death = p.demographics.death_date if p else None
        if dx is None or start < dx or (death is not None and (death < dx or death < start)):
            excluded.append((pid, "date_inconsistent"))
            continue
        if (start - dx).days > MAX_DX_TO_TX_DAYS:
            excluded.append((pid, "gap_gt_2y"))
            continue
        if p is not None:
            other = spec.control_drugs if ds.W[i] == 1 else spec.treatment_drugs
            if not (ds.W[i] == 1 and spec.add_on):
                # other-arm drug within one trial duration on either side of the start
                if any(abs(d - start) <= window for d in _arm_dates(p, other)):
                    excluded.append((pid, "crossover"))
                    continue
        keep.append(i)

    out = ds.subset(keep)
    over = out.Y > spec.duration_days
    Y = out.Y.copy()
    D = out.D.copy()
    Y[over] = spec.duration_days
    D[over] = 0
    out.Y, out.D = Y, D
    out.exclusion_log = _sorted_log(dict.fromkeys(list(ds.exclusion_log) + excluded))
    return out


# --------------------------------------------------------------------------
# encoding


def encode_design_matrix(ds: EmulationDataset) -> EmulationDataset:
    """Standardize continuous covariates, one-hot categoricals (with a missing level), keep flags 0/1.

    Standardization uses the population sd over observed entries; missing
    entries get placeholder 0 and ``missing_mask`` True.
    """
    n = len(ds)
    cols, names, kinds, groups, masks = [], [], [], [], []
    for name, values in ds.raw.items():
        kind = COVARIATE_KINDS[name]
        if kind == "continuous":
            x = np.array([np.nan if v is None else float(v) for v in values], dtype=float)
            obs = ~np.isnan(x)
            if not obs.any():
                log.warning("covariate %s has no observed values; dropped", name)
                continue
            mu = x[obs].mean()
            sd = x[obs].std()
            if sd == 0:
                log.warning("covariate %s has zero variance; dropped", name)
                continue
            z = np.where(obs, (x - mu) / sd, 0.0)
            cols.append(z)
            names.append(name)
            kinds.append("continuous")
            groups.append(name)
            masks.append(~obs)
        elif kind == "flag":
            obs = np.array([v is not None for v in values])
            x = np.array([float(bool(v)) if v is not None else 0.0 for v in values])
            if obs.all() and np.all(x == x[0]):
                log.warning("covariate %s has zero variance; dropped", name)
                continue
            cols.append(x)
            names.append(name)
            kinds.append("flag")
            groups.append(name)
            masks.append(~obs)
        else:
            labels = ["missing" if v is None else str(v) for v in values]
            levels = sorted(set(labels) - {"missing"}) + (["missing"] if "missing" in labels else [])
            if len(levels) < 2:
                log.warning("covariate %s has a single level; dropped", name)
                continue
            for level in levels:
                cols.append(np.array([1.0 if lab == level else 0.0 for lab in labels]))
                names.append(f"{name}={level}")
                kinds.append("onehot")
                groups.append(name)
                masks.append(np.zeros(n, dtype=bool))
    X = np.column_stack(cols) if cols else np.zeros((n, 0))
    M = np.column_stack(masks) if masks else np.zeros((n, 0), dtype=bool)
    return replace(ds, X=X, missing_mask=M, covariate_names=names, column_kinds=kinds, column_groups=groups)


# --------------------------------------------------------------------------
# audit files


def write_cohort_csv(ds: EmulationDataset, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["patient_id", "W", "Y", "D", *ds.covariate_names,
                     *[f"missing:{c}" for c in ds.covariate_names]])
        for i, pid in enumerate(ds.patient_ids):
            wr.writerow([pid, int(ds.W[i]), int(ds.Y[i]), int(ds.D[i]),
                         *[repr(float(v)) for v in ds.X[i]], *[int(m) for m in ds.missing_mask[i]]])


def read_cohort_csv(path) -> EmulationDataset:
    with open(path, encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    p = (len(header) - 4) // 2
    names = header[4:4 + p]
    X = np.array([[float(v) for v in r[4:4 + p]] for r in body]).reshape(len(body), p)
    M = np.array([[v == "1" for v in r[4 + p:]] for r in body], dtype=bool).reshape(len(body), p)
    kinds, groups = [], []
    for nm in names:
        g = nm.split("=", 1)[0]
        kinds.append("onehot" if "=" in nm else COVARIATE_KINDS.get(nm, "continuous"))
        groups.append(g)
    return EmulationDataset(
        patient_ids=[r[0] for r in body],
        W=np.array([int(r[1]) for r in body], dtype=int),
        Y=np.array([int(r[2]) for r in body], dtype=int),
        D=np.array([int(r[3]) for r in body], dtype=int),
        covariate_names=names, X=X, missing_mask=M, column_kinds=kinds, column_groups=groups,
    )


def write_exclusions_csv(ds: EmulationDataset, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["patient_id", "reason"])
        wr.writerows(ds.exclusion_log)
