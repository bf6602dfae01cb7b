"""Synthetic ground-truth data: confounded survival cohorts and templated notes.

``generate_cohort`` draws an analysis table directly from a known
process.  ``generate_patients`` draws the same process but renders it as
patient records, so the whole pipeline (cohort assembly, encoding,
imputation, estimation) can be run end to end and compared with the truth.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from datetime import date, timedelta
from typing import Optional, Sequence

import numpy as np

from .causal import fit_cox
from .cohort import EmulationDataset
from .records import (
    Demographics, DiagnosisEvent, LabResult, MedicationEvent, NoteDocument, PatientRecord,
)


class SynthError(ValueError):
    pass


DEFAULT_GAMMA = (0.8, -0.5, 0.4, 0.0, 0.6, 0.0)
DEFAULT_BETA = (0.5, 0.5, -0.3, 0.0, 0.4, 0.2)


@dataclass(frozen=True)
class SynthConfig:
    n: int = 2000
    true_log_hr: float = math.log(0.7)
    n_continuous: int = 4
    binary_prevalence: tuple[float, ...] = (0.4, 0.3)
    gamma: tuple[float, ...] = DEFAULT_GAMMA
    gamma0: float = 0.0
    beta: tuple[float, ...] = DEFAULT_BETA
    baseline_rate: float = 1 / 400
    weibull_shape: Optional[float] = None
    censor_rate: Optional[float] = None
    admin_censor_days: Optional[int] = 730
    mcar_rate: tuple[float, ...] | float = 0.0
    seed: int = 0

    def __post_init__(self):
        p = self.n_continuous + len(self.binary_prevalence)
        if self.n < 4:
            raise SynthError("n must be at least 4")
        if len(self.gamma) != p or len(self.beta) != p:
            raise SynthError(f"gamma and beta need {p} entries")
        if self.baseline_rate <= 0 or (self.weibull_shape is not None and self.weibull_shape <= 0):
            raise SynthError("baseline rate and shape must be positive")
        if self.censor_rate is not None and self.censor_rate <= 0:
            raise SynthError("censor_rate must be positive")
        if self.admin_censor_days is not None and self.admin_censor_days < 1:
            raise SynthError("admin_censor_days must be at least 1")
        if not all(0 < q < 1 for q in self.binary_prevalence):
            raise SynthError("binary prevalences must lie in (0, 1)")
        if not all(0 <= r < 1 for r in self.mcar_rates):
            raise SynthError("MCAR rates must lie in [0, 1)")

    @property
    def n_features(self) -> int:
        return self.n_continuous + len(self.binary_prevalence)

    @property
    def mcar_rates(self) -> tuple[float, ...]:
        if isinstance(self.mcar_rate, (int, float)):
            return (float(self.mcar_rate),) * self.n_features
        if len(self.mcar_rate) != self.n_features:
            raise SynthError("mcar_rate needs one entry per covariate")
        return tuple(self.mcar_rate)

    @property
    def feature_names(self) -> list[str]:
        return ([f"x{i + 1}" for i in range(self.n_continuous)]
                + [f"b{i + 1}" for i in range(len(self.binary_prevalence))])


@dataclass
class GroundTruth:
    true_hr: float
    true_log_hr: float
    gamma: tuple[float, ...]
    beta: tuple[float, ...]
    propensity: np.ndarray = field(repr=False)

    def to_dict(self) -> dict:
        return {"true_hr": self.true_hr, "true_log_hr": self.true_log_hr, "gamma": list(self.gamma),
                "beta": list(self.beta), "propensity": [float(p) for p in self.propensity]}


def _draw(cfg: SynthConfig, rng: np.random.Generator):
    n = cfg.n
    Xc = rng.standard_normal((n, cfg.n_continuous))
    Xb = (rng.random((n, len(cfg.binary_prevalence))) < np.asarray(cfg.binary_prevalence)).astype(float)
    X = np.hstack([Xc, Xb])
    e = 1.0 / (1.0 + np.exp(-(cfg.gamma0 + X @ np.asarray(cfg.gamma))))
    W = (rng.random(n) < e).astype(int)
    # inverse CDF of S(t) = exp(-(lambda t)^k * exp(eta))
    eta = cfg.true_log_hr * W + X @ np.asarray(cfg.beta)
    u = rng.random(n)
    k = cfg.weibull_shape or 1.0
    T = (-np.log(u) * np.exp(-eta)) ** (1.0 / k) / cfg.baseline_rate
    C = np.full(n, np.inf)
    if cfg.censor_rate is not None:
        C = rng.exponential(1.0 / cfg.censor_rate, n)
    if cfg.admin_censor_days is not None:
        C = np.minimum(C, cfg.admin_censor_days)
    T = np.maximum(np.round(T), 1)
    C = np.maximum(np.round(C), 1) if np.isfinite(C).all() else C
    D = (T <= C).astype(int)
    Y = np.where(D == 1, T, C).astype(int)
    miss = rng.random(X.shape) < np.asarray(cfg.mcar_rates)
    return X, W, Y, D, e, miss


def _draw_nonempty(cfg: SynthConfig):
    rng = np.random.default_rng(cfg.seed)
    for _ in range(10):
        out = _draw(cfg, rng)
        W = out[1]
        if 0 < W.sum() < len(W):
            return out
    raise SynthError("an arm was empty in 10 consecutive draws")


def generate_cohort(cfg: SynthConfig = SynthConfig()) -> tuple[EmulationDataset, GroundTruth]:
    """Draw an encoded analysis table from the configured confounded survival process."""
    X, W, Y, D, e, miss = _draw_nonempty(cfg)
    kinds = ["continuous"] * cfg.n_continuous + ["flag"] * len(cfg.binary_prevalence)
    names = cfg.feature_names
    ds = EmulationDataset(
        patient_ids=[f"S{i:06d}" for i in range(cfg.n)], W=W, Y=Y, D=D,
        covariate_names=names, X=np.where(miss, 0.0, X), missing_mask=miss,
        column_kinds=kinds, column_groups=list(names), n_matched=cfg.n,
    )
    truth = GroundTruth(true_hr=math.exp(cfg.true_log_hr), true_log_hr=cfg.true_log_hr,
                        gamma=tuple(cfg.gamma), beta=tuple(cfg.beta), propensity=e)
    return ds, truth


def marginal_hazard_ratio(cfg: SynthConfig = SynthConfig(), n: int = 400_000, seed: int = 12345) -> float:
    """Monte-Carlo marginal HR of the scenario: the same outcome model under 1:1 randomization.

    With prognostic covariates the Cox HR is non-collapsible, so this
    population-level HR (what inverse-propensity weighting targets) differs
    from ``exp(true_log_hr)``, the HR conditional on covariates.
    """
    rand = SynthConfig(**{**asdict(cfg), "n": n, "gamma": (0.0,) * cfg.n_features, "gamma0": 0.0,
                          "mcar_rate": 0.0, "seed": seed})
    _, W, Y, D, _, _ = _draw_nonempty(rand)
    fit = fit_cox(Y, D, W[:, None].astype(float), variance="information")
    return math.exp(fit.b_w)


# --------------------------------------------------------------------------
# patient records


# covariate -> (record field, affine map from the latent value)
PATIENT_COVARIATES = (
    ("age", lambda z: 65.0 + 8.0 * z),
    ("hemoglobin", lambda z: 12.0 + 1.5 * z),
    ("lymphocytes", lambda z: 1500.0 + 400.0 * z),
    ("ALP", lambda z: 1.2 + 0.25 * z),
    ("smoking", None),
    ("cns_metastasis", None),
)
SYNTH_TREATMENT = "pembrolizumab"
SYNTH_CONTROL = "docetaxel"
_EPOCH = date(2015, 1, 1)


def generate_patients(cfg: SynthConfig = SynthConfig(),
                      ecog_probs: Sequence[float] = (0.35, 0.4, 0.15, 0.1)
                      ) -> tuple[list[PatientRecord], GroundTruth]:
    """Render the scenario as lung-cancer patient records for the bundled SYNTHETIC trial.

    The six default covariates become age, hemoglobin, lymphocytes, ALP,
    smoking and CNS metastasis.  ECOG is drawn independently of everything
    else, so the ECOG eligibility filter removes rows at random.
    MCAR-missing labs are omitted and missing flags left unknown.
    """
    if cfg.n_features != len(PATIENT_COVARIATES) or cfg.n_continuous != 4:
        raise SynthError("generate_patients expects 4 continuous and 2 binary covariates")
    X, W, Y, D, e, miss = _draw_nonempty(cfg)
    rng = np.random.default_rng([cfg.seed, 1])
    n = cfg.n
    dx_offset = rng.integers(0, 3 * 365, n)
    dx_to_tx = rng.integers(14, 120, n)
    ecog = rng.choice(len(ecog_probs), size=n, p=np.asarray(ecog_probs))
    gender = rng.choice(["female", "male"], size=n)
    patients = []
    for i in range(n):
        dx = _EPOCH + timedelta(days=int(dx_offset[i]))
        start = dx + timedelta(days=int(dx_to_tx[i]))
        age = PATIENT_COVARIATES[0][1](X[i, 0])
        birth = start - timedelta(days=int(round(age * 365.25)))
        end = start + timedelta(days=int(Y[i]))
        demo = Demographics(
            birth_date=birth, last_contact_date=end, gender=str(gender[i]), race="unknown",
            vital_status="deceased" if D[i] else "alive", death_date=end if D[i] else None,
            smoking=None if miss[i, 4] else bool(X[i, 4]),
            cns_metastasis=None if miss[i, 5] else bool(X[i, 5]),
        )
        labs = []
        for j, (test, unit) in enumerate((("hemoglobin", "g_per_dL"), ("lymphocytes", "count_per_uL"),
                                          ("ALP", "ULN")), start=1):
            if not miss[i, j]:
                value = max(PATIENT_COVARIATES[j][1](X[i, j]), 0.0)
                labs.append(LabResult(test=test, date=start - timedelta(days=3), value=float(value), unit=unit))
        drug = SYNTH_TREATMENT if W[i] else SYNTH_CONTROL
        patients.append(PatientRecord(
            patient_id=f"P{i:06d}",
            demographics=demo,
            diagnoses=(DiagnosisEvent(date=dx, site="lung", histology="adenocarcinoma", stage="IV"),),
            medications=(MedicationEvent(drug=drug, date=start, status="administered"),),
            labs=tuple(labs),
            ecog_observations=((start - timedelta(days=7), int(ecog[i])),),
        ))
    truth = GroundTruth(true_hr=math.exp(cfg.true_log_hr), true_log_hr=cfg.true_log_hr,
                        gamma=tuple(cfg.gamma), beta=tuple(cfg.beta), propensity=e)
    return patients, truth


# --------------------------------------------------------------------------
# notes


@dataclass(frozen=True)
class NoteTemplate:
    """A sentence pattern and the extractions it plants.

    ``labels`` maps the fill values to a list of ``(kind, intent, payload)``
    where payload is the comparable key used for scoring (see ``label_key``).
    """
    name: str
    text: str
    labels: object


def _ecog_label(v):
    return [("ecog", "asserted", v["ecog"])]


def _kps_label(v):
    return [("ecog", "asserted", v["kps_ecog"])]


DEFAULT_TEMPLATES = (
    NoteTemplate("ecog", "Performance status ECOG {ecog} at today's visit.", _ecog_label),
    NoteTemplate("kps", "Karnofsky performance status {kps}%.", _kps_label),
    NoteTemplate("pdl1_tps", "PD-L1 TPS {tps}% on the diagnostic biopsy.",
                 lambda v: [("pdl1", "asserted", ("TPS", "percent", float(v["tps"])))]),
    NoteTemplate("pdl1_cps_range", "PD-L1 CPS {lo}-{hi}% by IHC.",
                 lambda v: [("pdl1", "asserted", ("CPS", "range", (float(v["lo"]), float(v["hi"]))))]),
    NoteTemplate("pdl1_negative", "PD-L1 TPS negative.",
                 lambda v: [("pdl1", "asserted", ("TPS", "negative", None))]),
    NoteTemplate("med_given",
                 "{Drug} {dose} mg IV every 3 weeks started {when}.",
                 lambda v: [("medication", "asserted",
                             (v["drug"], "administered", v["when"], (float(v["dose"]), "mg"), "every 3 weeks",
                              "IV"))]),
    NoteTemplate("med_hypothetical", "Consider {alt} at progression.",
                 lambda v: [("medication", "hypothetical",
                             (v["alt"], "mentioned-not-administered", v["note_date"], None, None, None))]),
    NoteTemplate("med_negated", "Patient denies {alt} exposure.",
                 lambda v: [("medication", "negated",
                             (v["alt"], "mentioned-not-administered", v["note_date"], None, None, None))]),
    NoteTemplate("pdl1_hypothetical", "Will order PD-L1 TPS {tps}% confirmation.",
                 lambda v: [("pdl1", "hypothetical", ("TPS", "percent", float(v["tps"])))]),
)

_ALTERNATIVES = ("gemcitabine", "pemetrexed", "nivolumab", "atezolizumab")
_KPS_TO_ECOG = {90: 0, 80: 1, 70: 1, 60: 2, 50: 2, 40: 3}


def label_key(kind: str, payload):
    """Comparable key for an extraction payload (ecog int, BiomarkerResult or MedicationEvent)."""
    if kind == "ecog":
        return int(payload)
    if kind == "pdl1":
        return (payload.score_type, payload.value_kind, payload.value)
    return (payload.drug, payload.status, payload.date.isoformat() if payload.date else None, payload.dosage,
            payload.frequency, payload.mode)


def generate_notes(patients: Sequence[PatientRecord], templates: Sequence[NoteTemplate] = DEFAULT_TEMPLATES,
                   seed: int = 0) -> tuple[list[NoteDocument], list[dict]]:
    """One progress note per patient plus sidecar labels for every planted extraction.

    Each note instantiates every template once.  The ECOG sentence carries
    the patient's recorded ECOG; the medication sentence their first
    recorded administration.
    """
    notes, labels = [], []
    for i, p in enumerate(patients):
        rng = np.random.default_rng([seed, i])
        meds = [m for m in p.medications if m.status == "administered" and m.date is not None]
        when = meds[0].date if meds else (p.diagnosis_date or p.demographics.last_contact_date)
        note_date = when
        drug = meds[0].drug if meds else "docetaxel"
        ecog = p.ecog_observations[-1][1] if p.ecog_observations else int(rng.integers(0, 3))
        kps = int(rng.choice(sorted(_KPS_TO_ECOG)))
        lo = int(rng.integers(1, 10)) * 5
        values = {
            "ecog": ecog, "kps": kps, "kps_ecog": _KPS_TO_ECOG[kps],
            "tps": int(rng.integers(0, 101)), "lo": lo, "hi": lo + 10 * int(rng.integers(1, 4)),
            "drug": drug, "Drug": drug.capitalize(), "dose": int(rng.choice([75, 200, 240])),
            "when": when.isoformat(), "alt": str(rng.choice([a for a in _ALTERNATIVES if a != drug])),
            "note_date": note_date.isoformat(),
        }
        sentences = []
        note_id = f"{p.patient_id}-N1"
        for t in templates:
            sentences.append(t.text.format(**values))
            for kind, intent, key in t.labels(values):
                labels.append({"note_id": note_id, "patient_id": p.patient_id, "template": t.name,
                               "kind": kind, "intent": intent, "value": key})
        notes.append(NoteDocument(patient_id=p.patient_id, date=note_date, note_type="progress",
                                  text=" ".join(sentences), note_id=note_id))
    return notes, labels


def _as_tuple(x):
    return tuple(_as_tuple(i) for i in x) if isinstance(x, (list, tuple)) else x


def score_extractions(notes: Sequence[NoteDocument], labels: Sequence[dict], lexicon=None) -> dict:
    """Exact-match precision and recall of the extractors against sidecar labels (as multisets)."""
    from collections import Counter

    from .textstruct import extract_note

    gold = Counter((lab["note_id"], lab["kind"], lab["intent"], _as_tuple(lab["value"])) for lab in labels)
    pred = Counter()
    for note in notes:
        for res in extract_note(note, lexicon):
            pred[(note.note_id, res.kind, res.intent, label_key(res.kind, res.payload))] += 1
    hit = sum((gold & pred).values())
    n_pred, n_gold = sum(pred.values()), sum(gold.values())
    return {
        "precision": hit / n_pred if n_pred else 1.0,
        "recall": hit / n_gold if n_gold else 1.0,
        "n_gold": n_gold, "n_pred": n_pred,
        "missed": sorted(map(repr, gold - pred)), "spurious": sorted(map(repr, pred - gold)),
    }
