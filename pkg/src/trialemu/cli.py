"""Command-line pipeline: generate, extract, build-cohort, impute, emulate, diagnose, report.

Every verb reads its inputs read-only and writes only under ``--out``.
Artifacts are first written with a ``.partial`` suffix and renamed once
the verb succeeds, so a failed stage leaves its partial output marked.
JSON artifacts carry the seed and a hash of the effective configuration
(input file contents, not paths); wall-clock timestamps go to
``run_metadata.json`` so the other artifacts are byte-reproducible.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional

import numpy as np

from . import diagnostics as dg
from .causal import (
    CausalError, compute_ipsw_weights, fit_logistic_propensity, hazard_ratio, standardized_mean_difference,
)
from .cohort import (
    CohortError, EmulationDataset, assemble_cohort, clean_cohort, encode_design_matrix, read_cohort_csv,
    write_cohort_csv, write_exclusions_csv,
)
from .impute import ImputerConfig, ImputerError, impute, train_imputer
from .records import RecordError, read_notes, read_patients, write_notes, write_patients
from .synth import SynthConfig, SynthError, generate_notes, generate_patients
from .textstruct import UnitError, extract_note, structure_patients
from .trialspec import TrialSpecError, bundled_trials, parse_trial_spec

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

log = logging.getLogger(__name__)

SEED_ENV = "TRIALEMU_SEED"
EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC, EXIT_DIAGNOSTICS = 0, 2, 3, 4, 5
METHODS = {"coxph-u": ("CoxPH-U",), "coxph-ipsw": ("CoxPH-IPSW",), "both": ("CoxPH-U", "CoxPH-IPSW")}
STOCHASTIC = {"generate", "impute", "diagnose", "run"}
VERBS = ("generate", "extract", "build-cohort", "impute", "emulate", "diagnose", "report", "run")


class PipelineError(Exception):
    def __init__(self, stage: str, code: int, message: str):
        super().__init__(message)
        self.stage = stage
        self.code = code


@dataclass
class RunConfig:
    out: Path
    patients: Optional[Path] = None
    notes: Optional[Path] = None
    trial: Optional[str] = None
    seed: Optional[int] = None
    method: str = "both"
    eligibility: bool = True
    missing_policy: str = "ignore_criterion"
    synth: dict = field(default_factory=dict)
    imputer: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)
    reference: Optional[dict] = None
    inputs: list = field(default_factory=list)

    def fingerprint(self) -> str:
        """Hash of everything that determines the outputs; input files enter by content."""
        def content(p):
            if p is None:
                return None
            path = Path(p)
            return hashlib.sha256(path.read_bytes()).hexdigest() if path.is_file() else str(p)

        doc = {
            "patients": content(self.patients), "notes": content(self.notes), "trial": content(self.trial),
            "seed": self.seed, "method": self.method, "eligibility": self.eligibility,
            "missing_policy": self.missing_policy, "synth": self.synth, "imputer": self.imputer,
            "diagnostics": self.diagnostics, "reference": self.reference,
        }
        return hashlib.sha256(json.dumps(doc, sort_keys=True, default=str).encode()).hexdigest()[:16]

    def stamp(self) -> dict:
        return {"config_hash": self.fingerprint(), "seed": self.seed}


# --------------------------------------------------------------------------
# artifact writing


class Artifacts:
    """Collects the files of one verb under ``.partial`` names; ``commit`` renames them."""

    def __init__(self, out: Path):
        self.out = out
        self.pending: list[Path] = []
        out.mkdir(parents=True, exist_ok=True)

    def path(self, name: str) -> Path:
        final = self.out / name
        partial = final.with_name(final.name + ".partial")
        self.pending.append(final)
        return partial

    def json(self, name: str, obj) -> None:
        self.path(name).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")

    def commit(self) -> None:
        for final in self.pending:
            os.replace(final.with_name(final.name + ".partial"), final)
        self.pending = []


def _dump_jsonl(path, rows) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in rows:
            fh.write(json.dumps(r, sort_keys=True) + "\n")


def _read_json(path: Path, stage: str):
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise PipelineError(stage, EXIT_CONFIG, f"missing input {path}") from exc


# --------------------------------------------------------------------------
# verbs


def _require(value, what, stage):
    if value is None:
        raise PipelineError(stage, EXIT_CONFIG, f"{what} is required")
    return value


def _load_trial(cfg: RunConfig, stage: str):
    name = _require(cfg.trial, "--trial", stage)
    path = Path(name)
    if path.is_file():
        return parse_trial_spec(path)
    specs = bundled_trials()
    for key, spec in specs.items():
        if key.lower() == name.lower():
            return spec
    raise PipelineError(stage, EXIT_CONFIG, f"trial spec {name!r} is neither a file nor a bundled trial")


def _input_path(p, flag, stage) -> Path:
    path = Path(_require(p, flag, stage))
    if not path.is_file():
        raise PipelineError(stage, EXIT_CONFIG, f"{flag} file {path} does not exist")
    return path


def verb_generate(cfg: RunConfig) -> int:
    synth = SynthConfig(**{**cfg.synth, "seed": cfg.seed})
    patients, truth = generate_patients(synth)
    notes, labels = generate_notes(patients, seed=cfg.seed)
    art = Artifacts(cfg.out)
    write_patients(patients, art.path("patients.jsonl"))
    write_notes(notes, art.path("notes.jsonl"))
    _dump_jsonl(art.path("sidecar_labels.jsonl"), labels)
    art.json("ground_truth.json", {**cfg.stamp(), **truth.to_dict(), "synth_config": asdict(synth)})
    art.commit()
    return EXIT_OK


def verb_extract(cfg: RunConfig) -> int:
    patients = read_patients(_input_path(cfg.patients, "--patients", "extract"))
    notes = read_notes(_input_path(cfg.notes, "--notes", "extract"))
    rows = []
    for note in sorted(notes, key=lambda n: (n.patient_id, n.date, n.note_id)):
        for res in extract_note(note):
            payload = res.payload if isinstance(res.payload, int) else {
                k: (v.isoformat() if hasattr(v, "isoformat") else v) for k, v in asdict(res.payload).items()}
            rows.append({"note_id": note.note_id, "patient_id": note.patient_id, "kind": res.kind,
                         "intent": res.intent, "span": list(res.span), "surface": res.surface,
                         "payload": payload, "promoted": res.promoted})
    structured = structure_patients(patients, notes)
    art = Artifacts(cfg.out)
    _dump_jsonl(art.path("extractions.jsonl"), rows)
    write_patients(structured, art.path("patients_structured.jsonl"))
    art.commit()
    return EXIT_OK


def verb_build_cohort(cfg: RunConfig) -> int:
    spec = _load_trial(cfg, "build-cohort")
    patients = read_patients(_input_path(cfg.patients, "--patients", "build-cohort"))
    ds = assemble_cohort(patients, spec, apply_eligibility=cfg.eligibility, missing_policy=cfg.missing_policy)
    ds = encode_design_matrix(clean_cohort(ds, patients, spec))
    art = Artifacts(cfg.out)
    write_cohort_csv(ds, art.path("cohort.csv"))
    write_exclusions_csv(ds, art.path("exclusions.csv"))
    raw = {k: [v if v is None or isinstance(v, (bool, int, float, str)) else str(v) for v in vals]
           for k, vals in ds.raw.items()}
    art.json("cohort_meta.json", {
        **cfg.stamp(), "trial": spec.name, "eligibility": cfg.eligibility, "n_matched": ds.n_matched,
        "n_included": len(ds), "arm_sizes": {"treatment": ds.arm_sizes()[0], "control": ds.arm_sizes()[1]},
        "covariate_names": ds.covariate_names, "column_kinds": ds.column_kinds,
        "column_groups": ds.column_groups, "raw": raw, "patient_ids": ds.patient_ids,
    })
    art.commit()
    return EXIT_OK


def _load_cohort(out: Path, stage: str, prefer_imputed: bool = True) -> tuple[EmulationDataset, dict]:
    meta = _read_json(out / "cohort_meta.json", stage)
    path = out / "cohort_imputed.csv"
    if not (prefer_imputed and path.is_file()):
        path = out / "cohort.csv"
    if not path.is_file():
        raise PipelineError(stage, EXIT_CONFIG, f"missing input {path}; run build-cohort first")
    ds = read_cohort_csv(path)
    ds.column_kinds = list(meta["column_kinds"])
    ds.column_groups = list(meta["column_groups"])
    ds.raw = meta.get("raw", {})
    ds.n_matched = meta["n_matched"]
    return ds, meta


def verb_impute(cfg: RunConfig) -> int:
    ds, _ = _load_cohort(cfg.out, "impute", prefer_imputed=False)
    art = Artifacts(cfg.out)
    # the imputer sees covariates only; W, Y and D are withheld
    if ds.missing_mask.any():
        icfg = ImputerConfig(**{**cfg.imputer, "seed": cfg.seed})
        spec = ["gaussian" if k == "continuous" else "bernoulli" for k in ds.column_kinds]
        model = train_imputer(ds.X, ds.missing_mask, icfg, feature_spec=spec)
        ds.X = impute(model, ds.X, ds.missing_mask)
        model.save(art.path("imputer.json"))
        status = {"imputed_entries": int(ds.missing_mask.sum()), "final_loss": model.history[-1]}
    else:
        status = {"imputed_entries": 0}
    ds.missing_mask = np.zeros_like(ds.missing_mask)
    write_cohort_csv(ds, art.path("cohort_imputed.csv"))
    art.json("impute.json", {**cfg.stamp(), **status})
    art.commit()
    return EXIT_OK


def verb_emulate(cfg: RunConfig) -> int:
    ds, meta = _load_cohort(cfg.out, "emulate")
    if ds.missing_mask.any():
        log.warning("cohort has missing entries; run impute first for the documented analysis")
    X, names = ds.model_matrix()
    estimates = [hazard_ratio(X, ds.W, ds.Y, ds.D, m) for m in METHODS[cfg.method]]
    weights = compute_ipsw_weights(fit_logistic_propensity(X, ds.W).scores, ds.W)
    balance = standardized_mean_difference(X, ds.W, weights, names)
    art = Artifacts(cfg.out)
    art.json("hr_report.json", {
        **cfg.stamp(), "trial": meta["trial"], "eligibility": meta["eligibility"], "covariates": names,
        "estimates": [e.to_dict() for e in estimates], "balance": balance.to_dict(),
    })
    with open(art.path("forest.csv"), "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["trial", "eligibility", "method", "hr", "ci_low", "ci_high", "n_t", "n_c"])
        for e in estimates:
            wr.writerow([meta["trial"], "yes" if meta["eligibility"] else "no", e.method, repr(e.hr),
                         repr(e.ci95[0]), repr(e.ci95[1]), e.n_treatment, e.n_control])
    art.commit()
    return EXIT_OK


def verb_diagnose(cfg: RunConfig) -> int:
    ds, _ = _load_cohort(cfg.out, "diagnose")
    dcfg = dg.DiagnosticConfig(**{**_tuples(cfg.diagnostics), "seed": cfg.seed})
    report = dg.run_diagnostics(ds, dcfg, reference=cfg.reference)
    art = Artifacts(cfg.out)
    dg.write_diagnostics(report, cfg.out, stamp=cfg.stamp(), path_for=art.path)
    art.commit()
    return EXIT_DIAGNOSTICS if report.any_failed else EXIT_OK


def _tuples(d: dict) -> dict:
    return {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}


def _waterfall(out: Path) -> Optional[dict]:
    meta_path, excl_path = out / "cohort_meta.json", out / "exclusions.csv"
    if not (meta_path.is_file() and excl_path.is_file()):
        return None
    meta = json.loads(meta_path.read_text(encoding="utf-8"))
    with open(excl_path, encoding="utf-8") as fh:
        reasons = [row["reason"] for row in csv.DictReader(fh)]
    matched = meta["n_matched"]
    steps = []
    for reason in dict.fromkeys(reasons):
        if reason == "no_arm_drug":
            continue
        count = reasons.count(reason)
        steps.append({"reason": reason, "count": count, "percent": 100.0 * count / matched if matched else 0.0})
    return {
        "n_matched": matched, "n_unmatched": reasons.count("no_arm_drug"), "excluded": steps,
        "included": {"count": meta["n_included"],
                     "percent": 100.0 * meta["n_included"] / matched if matched else 0.0},
    }


def verb_report(cfg: RunConfig) -> int:
    dirs = [cfg.out, *[Path(p) for p in cfg.inputs]]
    rows, missing = [], []
    for d in dirs:
        hr_path = d / "hr_report.json"
        if not hr_path.is_file():
            missing.append(str(hr_path.name if d == cfg.out else hr_path))
            continue
        rep = json.loads(hr_path.read_text(encoding="utf-8"))
        for e in rep["estimates"]:
            rows.append({"trial": rep["trial"], "eligibility": "yes" if rep["eligibility"] else "no",
                         "method": e["method"], "hr": e["hr"], "ci95": e["ci95"], "n_c": e["n_c"], "n_t": e["n_t"]})
    rows.sort(key=lambda r: (r["trial"], r["method"], r["eligibility"] == "no"))
    sections = {"hr_table": rows or None}
    diag_path = cfg.out / "diagnostics.json"
    diag = json.loads(diag_path.read_text(encoding="utf-8")) if diag_path.is_file() else None
    if diag is None:
        missing.append("diagnostics.json")
    sections["balance"] = diag["tests"]["rebalancing"]["details"] if diag else None
    sections["diagnostics"] = {k: {"status": v["status"], "reason": v["reason"]}
                               for k, v in diag["tests"].items()} if diag else None
    sections["population_summary"] = diag["population_summary"] if diag else None
    sections["exclusion_waterfall"] = _waterfall(cfg.out)
    if sections["exclusion_waterfall"] is None:
        missing.append("cohort_meta.json/exclusions.csv")
    doc = {**cfg.stamp(), "sections": sections,
           "missing": sorted(k for k, v in sections.items() if v is None), "missing_inputs": missing}
    art = Artifacts(cfg.out)
    art.json("report.json", doc)
    with open(art.path("hr_table.csv"), "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["trial", "eligibility", "method", "hr", "ci_low", "ci_high", "n_c", "n_t"])
        for r in rows:
            wr.writerow([r["trial"], r["eligibility"], r["method"], repr(r["hr"]), repr(r["ci95"][0]),
                         repr(r["ci95"][1]), r["n_c"], r["n_t"]])
    art.commit()
    return EXIT_OK


def run_pipeline(cfg: RunConfig) -> int:
    """generate (when no --patients) -> extract -> build-cohort -> impute -> emulate -> diagnose -> report."""
    if cfg.trial is not None:
        _load_trial(cfg, "run")
    if cfg.patients is None:
        _run_stage("generate", verb_generate, cfg)
        cfg = replace(cfg, patients=cfg.out / "patients.jsonl", notes=cfg.out / "notes.jsonl",
                      trial=cfg.trial or "SYNTHETIC")
    if cfg.notes is not None:
        _run_stage("extract", verb_extract, cfg)
        cfg = replace(cfg, patients=cfg.out / "patients_structured.jsonl")
    _run_stage("build-cohort", verb_build_cohort, cfg)
    _run_stage("impute", verb_impute, cfg)
    _run_stage("emulate", verb_emulate, cfg)
    status = _run_stage("diagnose", verb_diagnose, cfg)
    _run_stage("report", verb_report, cfg)
    return status


VERB_FUNCS = {
    "generate": verb_generate, "extract": verb_extract, "build-cohort": verb_build_cohort,
    "impute": verb_impute, "emulate": verb_emulate, "diagnose": verb_diagnose, "report": verb_report,
    "run": run_pipeline,
}

_ERROR_CODES = (
    (PipelineError, None),
    ((TrialSpecError, SynthError, dg.DiagnosticError, FileNotFoundError, TypeError), EXIT_CONFIG),
    ((RecordError, CohortError, ImputerError, UnitError, KeyError), EXIT_DATA),
    ((CausalError, np.linalg.LinAlgError, FloatingPointError), EXIT_NUMERIC),
)


def _run_stage(stage, func, cfg) -> int:
    try:
        return func(cfg)
    except PipelineError:
        raise
    except Exception as exc:
        for types, code in _ERROR_CODES[1:]:
            if isinstance(exc, types):
                raise PipelineError(stage, code, f"{type(exc).__name__}: {exc}") from exc
        raise


# --------------------------------------------------------------------------
# argument handling


def _load_config_file(path: Optional[str]) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.is_file():
        raise PipelineError("config", EXIT_CONFIG, f"config file {p} does not exist")
    try:
        if p.suffix.lower() == ".toml":
            return tomllib.loads(p.read_text(encoding="utf-8"))
        return json.loads(p.read_text(encoding="utf-8"))
    except (ValueError, tomllib.TOMLDecodeError) as exc:
        raise PipelineError("config", EXIT_CONFIG, f"cannot parse {p}: {exc}") from exc


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="trialemu", description="Emulate a clinical trial from patient records.")
    ap.add_argument("verb", choices=VERBS)
    ap.add_argument("--patients")
    ap.add_argument("--notes")
    ap.add_argument("--trial", help="trial spec JSON file or bundled trial name")
    ap.add_argument("--out", required=True)
    ap.add_argument("--seed", type=int)
    ap.add_argument("--method", choices=sorted(METHODS))
    ap.add_argument("--no-eligibility", action="store_true")
    ap.add_argument("--config", help="TOML or JSON file with defaults and module overrides")
    ap.add_argument("--inputs", nargs="*", default=[], help="extra run directories for report")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def config_from_args(args) -> RunConfig:
    file_cfg = _load_config_file(args.config)
    seed = args.seed
    if seed is None:
        seed = file_cfg.get("seed")
    if seed is None and os.environ.get(SEED_ENV):
        try:
            seed = int(os.environ[SEED_ENV])
        except ValueError as exc:
            raise PipelineError("config", EXIT_CONFIG, f"{SEED_ENV} is not an integer") from exc
    if seed is None and args.verb in STOCHASTIC:
        raise PipelineError("config", EXIT_CONFIG, f"{args.verb} needs --seed (or {SEED_ENV})")
    known = {f.name for f in fields(RunConfig)}
    unknown = set(file_cfg) - known - {"no_eligibility"}
    if unknown:
        raise PipelineError("config", EXIT_CONFIG, f"unknown config keys {sorted(unknown)}")
    return RunConfig(
        out=Path(args.out),
        patients=Path(args.patients) if args.patients else file_cfg.get("patients"),
        notes=Path(args.notes) if args.notes else file_cfg.get("notes"),
        trial=args.trial or file_cfg.get("trial"),
        seed=seed,
        method=args.method or file_cfg.get("method", "both"),
        eligibility=not (args.no_eligibility or file_cfg.get("no_eligibility", False)),
        missing_policy=file_cfg.get("missing_policy", "ignore_criterion"),
        synth=file_cfg.get("synth", {}),
        imputer=file_cfg.get("imputer", {}),
        diagnostics=file_cfg.get("diagnostics", {}),
        reference=file_cfg.get("reference"),
        inputs=list(args.inputs),
    )


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    started = datetime.now(timezone.utc).isoformat()
    try:
        cfg = config_from_args(args)
        if cfg.method not in METHODS:
            raise PipelineError("config", EXIT_CONFIG, f"unknown method {cfg.method!r}")
        code = _run_stage(args.verb, VERB_FUNCS[args.verb], cfg)
    except PipelineError as exc:
        print(json.dumps({"stage": exc.stage, "code": exc.code, "error": str(exc)}), file=sys.stderr)
        return exc.code
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "run_metadata.json").write_text(json.dumps({
        "verb": args.verb, "started": started, "finished": datetime.now(timezone.utc).isoformat(),
        "exit_code": code}, indent=2) + "\n", encoding="utf-8")
    return code


if __name__ == "__main__":
    sys.exit(main())
