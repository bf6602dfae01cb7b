"""The five robustness tests and the per-arm population summary.

Each test returns a :class:`TestResult` whose status is ``pass``, ``fail``
or ``skipped`` (with a reason).  Replicate ``i`` of a test draws from the
RNG stream ``(seed, test id, i)``, so replicates can be rerun in isolation
and in any order.
"""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.stats import spearmanr

from .causal import (
    BalanceReport, CausalError, PropensityModel, compute_ipsw_weights, fit_logistic_propensity, hazard_ratio,
    standardized_mean_difference,
)
from .cohort import EmulationDataset

log = logging.getLogger(__name__)

TEST_IDS = {"rebalancing": 1, "overlap": 2, "placebo": 3, "random_confounder": 4, "downsampling": 5}


class DiagnosticError(ValueError):
    pass


@dataclass(frozen=True)
class DiagnosticConfig:
    replicates_placebo: int = 100
    replicates_noise: int = 100
    noise_grid: tuple[float, ...] = tuple(float(t) for t in np.linspace(0.1, 5.0, 10))
    downsample_fractions: tuple[float, ...] = (0.95, 0.90, 0.75, 0.50, 0.25)
    replicates_downsample: int = 100
    overlap_epsilon: float = 0.01
    seed: int = 0
    smd_threshold: float = 0.1
    overlap_threshold: float = 0.95
    drift_tolerance: float = 0.05
    placebo_band: tuple[float, float] = (0.9, 1.1)
    max_failure_fraction: float = 0.1
    min_rows_per_arm: int = 20
    min_events_per_arm: int = 2

    def __post_init__(self):
        if not all(0 < f <= 1 for f in self.downsample_fractions):
            raise DiagnosticError("downsample fractions must lie in (0, 1]")
        if list(self.noise_grid) != sorted(self.noise_grid):
            raise DiagnosticError("noise_grid must be sorted ascending")
        if not 0 < self.overlap_epsilon < 0.5:
            raise DiagnosticError("overlap_epsilon must lie in (0, 0.5)")


@dataclass
class TestResult:
    name: str
    status: str  # pass | fail | skipped
    reason: str = ""
    details: dict = field(default_factory=dict)

    __test__ = False  # not a pytest class

    @property
    def passed(self) -> bool:
        return self.status == "pass"

    def to_dict(self) -> dict:
        return {"name": self.name, "status": self.status, "reason": self.reason, "details": self.details}


def _rng(seed: int, test: str, i: int) -> np.random.Generator:
    return np.random.default_rng([seed, TEST_IDS[test], i])


def _design(ds: EmulationDataset) -> np.ndarray:
    if ds.missing_mask.size and ds.missing_mask.any():
        log.warning("design matrix still has missing entries; placeholders are used as values")
    X, _ = ds.model_matrix()
    return X


def _small_sample(W, D, cfg: DiagnosticConfig) -> Optional[str]:
    for arm, name in ((1, "treatment"), (0, "control")):
        rows = int(np.sum(W == arm))
        events = int(np.sum((W == arm) & (D == 1)))
        if rows < cfg.min_rows_per_arm:
            return f"small sample: {rows} rows in the {name} arm (< {cfg.min_rows_per_arm})"
        if events < cfg.min_events_per_arm:
            return f"small sample: {events} events in the {name} arm (< {cfg.min_events_per_arm})"
    return None


def _ipsw_hr(X, W, Y, D) -> float:
    return hazard_ratio(X, W, Y, D, "CoxPH-IPSW").hr


def _replicates(test: str, r: int, cfg: DiagnosticConfig, draw):
    """Run ``draw(rng)`` for i < r; returns (hrs, n_failed). Failures are logged, not raised."""
    hrs, failed = [], 0
    for i in range(r):
        try:
            hrs.append(draw(_rng(cfg.seed, test, i)))
        except (CausalError, np.linalg.LinAlgError, ValueError) as exc:
            failed += 1
            log.info("%s replicate %d failed: %s", test, i, exc)
    return np.asarray(hrs, dtype=float), failed


def _failure_check(name, failed, r, cfg) -> Optional[TestResult]:
    if failed > cfg.max_failure_fraction * r:
        return TestResult(name, "fail", f"{failed} of {r} replicate fits failed")
    return None


def _q(hrs, q):
    return float(np.quantile(hrs, q)) if hrs.size else math.nan


# --------------------------------------------------------------------------
# the five tests


def test_rebalancing(ds: EmulationDataset, weights=None, cfg: DiagnosticConfig = DiagnosticConfig()) -> TestResult:
    """SMD of every confounder column with and without IPSW weights."""
    X = _design(ds)
    _, names = ds.model_matrix()
    if weights is None:
        weights = compute_ipsw_weights(fit_logistic_propensity(X, ds.W).scores, ds.W)
    bal: BalanceReport = standardized_mean_difference(X, ds.W, weights, names)
    max_u = float(np.max(np.abs(bal.smd_unweighted))) if names else 0.0
    max_w = float(np.max(np.abs(bal.smd_weighted))) if names else 0.0
    ok = bool(np.all(np.abs(bal.smd_weighted) < cfg.smd_threshold))
    details = {**bal.to_dict(), "max_abs_smd_unweighted": max_u, "max_abs_smd_weighted": max_w}
    reason = "" if ok else f"max weighted |SMD| {max_w:.3f} >= {cfg.smd_threshold}"
    return TestResult("rebalancing", "pass" if ok else "fail", reason, details)


def format_percent(fraction: float) -> str:
    return f"{round(100 * fraction)}%"


def test_overlap(propensity, epsilon: float = 0.01, cfg: DiagnosticConfig = DiagnosticConfig()) -> TestResult:
    """Fraction of rows whose propensity lies in [epsilon, 1 - epsilon]."""
    scores = propensity.scores if isinstance(propensity, PropensityModel) else np.asarray(propensity, dtype=float)
    inside = (scores >= epsilon) & (scores <= 1 - epsilon)
    frac = float(np.mean(inside))
    ok = frac > cfg.overlap_threshold
    details = {"fraction": frac, "display": format_percent(frac), "epsilon": epsilon,
               "n_outside": int(np.sum(~inside))}
    reason = "" if ok else f"only {format_percent(frac)} of rows inside [{epsilon}, {1 - epsilon}]"
    return TestResult("overlap", "pass" if ok else "fail", reason, details)


def test_placebo(ds: EmulationDataset, cfg: DiagnosticConfig = DiagnosticConfig()) -> TestResult:
    """Refit on arm labels permuted at random (arm sizes kept); the effect should vanish."""
    r = cfg.replicates_placebo
    if r < 1:
        raise DiagnosticError("placebo test needs at least one replicate")
    skip = _small_sample(ds.W, ds.D, cfg)
    if skip:
        return TestResult("placebo", "skipped", skip)
    X = _design(ds)
    original = _ipsw_hr(X, ds.W, ds.Y, ds.D)
    covers = []

    def draw(rng):
        est = hazard_ratio(X, rng.permutation(ds.W), ds.Y, ds.D, "CoxPH-IPSW")
        covers.append(est.ci95[0] <= 1.0 <= est.ci95[1])
        return est.hr

    hrs, failed = _replicates("placebo", r, cfg, draw)
    details = {"original_hr": original, "hrs": hrs.tolist(), "failed": failed,
               "mean": float(np.mean(hrs)) if hrs.size else math.nan,
               "q05": _q(hrs, 0.05), "q95": _q(hrs, 0.95),
               "ci_coverage_of_one": float(np.mean(covers)) if covers else math.nan}
    bad = _failure_check("placebo", failed, r, cfg)
    if bad:
        bad.details = details
        return bad
    lo, hi = cfg.placebo_band
    contains_one = details["q05"] <= 1.0 <= details["q95"]
    mean_ok = lo <= details["mean"] <= hi
    details["original_outside_band"] = not details["q05"] <= original <= details["q95"]
    ok = contains_one and mean_ok
    reason = "" if ok else (f"permuted mean {details['mean']:.3f}, 5-95% band "
                            f"[{details['q05']:.3f}, {details['q95']:.3f}]")
    return TestResult("placebo", "pass" if ok else "fail", reason, details)


def test_random_confounder(ds: EmulationDataset, cfg: DiagnosticConfig = DiagnosticConfig()) -> TestResult:
    """Append an independent N(0, theta^2) column and refit; the HR should not move."""
    r = cfg.replicates_noise
    if r < 1:
        raise DiagnosticError("random-confounder test needs at least one replicate")
    skip = _small_sample(ds.W, ds.D, cfg)
    if skip:
        return TestResult("random_confounder", "skipped", skip)
    X = _design(ds)
    base = _ipsw_hr(X, ds.W, ds.Y, ds.D)
    n = len(ds)
    rows, failed_total, ok = [], 0, True
    for k, theta in enumerate(cfg.noise_grid):
        def draw(rng, theta=theta):
            return _ipsw_hr(np.column_stack([X, rng.normal(0.0, theta, n)]), ds.W, ds.Y, ds.D)

        hrs, failed = _theta_replicates(k, r, cfg, draw)
        failed_total += failed
        mean = float(np.mean(hrs)) if hrs.size else math.nan
        drift = abs(mean / base - 1.0) if hrs.size else math.inf
        ok &= drift < cfg.drift_tolerance
        rows.append({"theta": float(theta), "mean": mean, "q05": _q(hrs, 0.05), "q95": _q(hrs, 0.95),
                     "drift": drift, "failed": failed})
    details = {"baseline_hr": base, "grid": rows}
    bad = _failure_check("random_confounder", failed_total, r * len(cfg.noise_grid), cfg)
    if bad:
        bad.details = details
        return bad
    worst = max(row["drift"] for row in rows)
    reason = "" if ok else f"mean HR drifts {100 * worst:.1f}% from baseline"
    return TestResult("random_confounder", "pass" if ok else "fail", reason, details)


def _theta_replicates(k, r, cfg, draw):
    """Like :func:`_replicates` but the stream also folds in the grid position ``k``."""
    hrs, failed = [], 0
    for i in range(r):
        rng = np.random.default_rng([cfg.seed, TEST_IDS["random_confounder"], k, i])
        try:
            hrs.append(draw(rng))
        except (CausalError, np.linalg.LinAlgError, ValueError) as exc:
            failed += 1
            log.info("random_confounder theta #%d replicate %d failed: %s", k, i, exc)
    return np.asarray(hrs, dtype=float), failed


def test_downsampling(ds: EmulationDataset, cfg: DiagnosticConfig = DiagnosticConfig()) -> TestResult:
    """Bootstrap at sizes f*n; means should stay put while the spread grows as f shrinks."""
    r = cfg.replicates_downsample
    if r < 1:
        raise DiagnosticError("downsampling test needs at least one replicate")
    skip = _small_sample(ds.W, ds.D, cfg)
    if skip:
        return TestResult("downsampling", "skipped", skip)
    X = _design(ds)
    n = len(ds)
    full = _ipsw_hr(X, ds.W, ds.Y, ds.D)
    rows = [{"fraction": 1.0, "mean": full, "variance": 0.0, "q05": full, "q95": full, "failed": 0,
             "status": "reference"}]
    failed_total = attempted = 0
    events = [int(np.sum((ds.W == a) & (ds.D == 1))) for a in (1, 0)]
    for k, f in enumerate(cfg.downsample_fractions):
        size = int(round(f * n))
        if min(round(f * e) for e in events) < cfg.min_events_per_arm:
            rows.append({"fraction": f, "status": "skipped",
                         "reason": f"expected events per arm below {cfg.min_events_per_arm} at f={f}"})
            continue

        hrs, failed = [], 0
        for i in range(r):
            rng = np.random.default_rng([cfg.seed, TEST_IDS["downsampling"], k, i])
            idx = rng.integers(0, n, size)
            try:
                hrs.append(_ipsw_hr(X[idx], ds.W[idx], ds.Y[idx], ds.D[idx]))
            except (CausalError, np.linalg.LinAlgError, ValueError) as exc:
                failed += 1
                log.info("downsampling f=%s replicate %d failed: %s", f, i, exc)
        hrs = np.asarray(hrs)
        failed_total += failed
        attempted += r
        rows.append({"fraction": f, "mean": float(np.mean(hrs)) if hrs.size else math.nan,
                     "variance": float(np.var(hrs, ddof=1)) if hrs.size > 1 else math.nan,
                     "q05": _q(hrs, 0.05), "q95": _q(hrs, 0.95), "failed": failed, "status": "ok"})
    details = {"full_hr": full, "rows": rows}
    bad = _failure_check("downsampling", failed_total, max(attempted, 1), cfg)
    if bad:
        bad.details = details
        return bad
    used = [row for row in rows if row["status"] == "ok"]
    if not used:
        return TestResult("downsampling", "skipped", "every fraction was skipped", details)
    mean_ok = all(abs(row["mean"] / full - 1.0) < cfg.drift_tolerance for row in used)
    if len(used) > 1:
        rho = float(spearmanr([row["fraction"] for row in used], [row["variance"] for row in used])[0])
    else:
        rho = 0.0
    details["spearman_fraction_variance"] = rho
    ok = mean_ok and rho <= 0
    reasons = []
    if not mean_ok:
        reasons.append(f"a fraction mean deviates >= {100 * cfg.drift_tolerance:g}% from the full-data HR")
    if rho > 0:
        reasons.append(f"variance does not grow as the sample shrinks (Spearman rho {rho:.2f})")
    return TestResult("downsampling", "pass" if ok else "fail", "; ".join(reasons), details)


for _f in (test_rebalancing, test_overlap, test_placebo, test_random_confounder, test_downsampling):
    _f.__test__ = False


# --------------------------------------------------------------------------
# population summary


SUMMARY_CATEGORICALS = ("gender", "ecog", "race", "smoking")


def _percentages(values) -> dict:
    labels = ["unknown" if v is None else str(v).lower() if isinstance(v, bool) else str(v) for v in values]
    total = len(labels)
    out = {}
    for lab in sorted(set(labels)):
        count = labels.count(lab)
        out[lab] = {"count": count, "percent": 100.0 * count / total}
    return out


def summarize_population(ds: EmulationDataset, reference: Optional[dict] = None, raw: Optional[dict] = None,
                         threshold_pp: float = 10.0) -> dict:
    """Per-arm counts, age statistics and categorical breakdowns.

    ``raw`` supplies covariate values when ``ds.raw`` lacks them (for
    example after reading an encoded cohort).  A published ``reference``
    table of the same shape adds a comparison flagging categories whose
    percentages differ by more than ``threshold_pp`` points.
    """
    raw = raw if raw is not None else ds.raw
    table = {}
    for arm, label in ((1, "treatment"), (0, "control")):
        idx = np.where(ds.W == arm)[0]
        entry = {"count": int(idx.size)}
        ages = raw.get("age")
        if ages is not None:
            a = np.array([ages[i] for i in idx if ages[i] is not None], dtype=float)
            if a.size:
                entry["age"] = {"mean": float(a.mean()), "median": float(np.median(a)), "min": float(a.min()),
                                "max": float(a.max())}
        for var in SUMMARY_CATEGORICALS:
            if var in raw and idx.size:
                entry[var] = _percentages([raw[var][i] for i in idx])
        table[label] = entry
    out = {"summary": table}
    if reference:
        flags = []
        for arm in ("treatment", "control"):
            ref, sim = reference.get(arm, {}), table.get(arm, {})
            for var in SUMMARY_CATEGORICALS:
                if var not in ref or var not in sim:
                    continue
                for cat in sorted(set(ref[var]) | set(sim[var])):
                    p_ref = _pct(ref[var].get(cat))
                    p_sim = _pct(sim[var].get(cat))
                    if abs(p_ref - p_sim) > threshold_pp:
                        flags.append({"arm": arm, "variable": var, "category": cat, "reference_percent": p_ref,
                                      "simulated_percent": p_sim})
        out["comparison"] = {"threshold_pp": threshold_pp, "flags": flags}
    return out


def _pct(entry) -> float:
    if entry is None:
        return 0.0
    if isinstance(entry, dict):
        return float(entry["percent"])
    return float(entry)


def render_summary(table: dict) -> list[str]:
    """Lines in the usual publication style, e.g. ``gender female: 256 (58.31 %)``."""
    lines = []
    for arm, entry in table.items():
        lines.append(f"{arm} (n={entry['count']})")
        if "age" in entry:
            a = entry["age"]
            lines.append(f"  age mean {a['mean']:.1f}, median {a['median']:.1f}, range {a['min']:.0f}-{a['max']:.0f}")
        for var in SUMMARY_CATEGORICALS:
            for cat, v in entry.get(var, {}).items():
                lines.append(f"  {var} {cat}: {v['count']} ({v['percent']:.2f} %)")
    return lines


# --------------------------------------------------------------------------
# full report


@dataclass
class DiagnosticReport:
    rebalance: TestResult
    overlap: TestResult
    placebo: TestResult
    random_confounder: TestResult
    downsampling: TestResult
    population_summary: dict

    @property
    def tests(self) -> list[TestResult]:
        return [self.rebalance, self.overlap, self.placebo, self.random_confounder, self.downsampling]

    @property
    def any_failed(self) -> bool:
        return any(t.status == "fail" for t in self.tests)

    def to_dict(self) -> dict:
        return {"tests": {t.name: t.to_dict() for t in self.tests}, "population_summary": self.population_summary}


def run_diagnostics(ds: EmulationDataset, cfg: DiagnosticConfig = DiagnosticConfig(),
                    reference: Optional[dict] = None) -> DiagnosticReport:
    X = _design(ds)
    small = _small_sample(ds.W, ds.D, cfg)
    ps = fit_logistic_propensity(X, ds.W)
    weights = compute_ipsw_weights(ps.scores, ds.W)
    rebalance = test_rebalancing(ds, weights, cfg)
    if small:
        # only the balance check is meaningful on tiny cohorts
        skipped = [TestResult(name, "skipped", small)
                   for name in ("overlap", "placebo", "random_confounder", "downsampling")]
        return DiagnosticReport(rebalance, *skipped, summarize_population(ds, reference))
    return DiagnosticReport(
        rebalance,
        test_overlap(ps, cfg.overlap_epsilon, cfg),
        test_placebo(ds, cfg),
        test_random_confounder(ds, cfg),
        test_downsampling(ds, cfg),
        summarize_population(ds, reference),
    )


def _num(v) -> str:
    return "" if v is None else repr(float(v))


def _write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(header)
        wr.writerows(rows)


def write_diagnostics(report: DiagnosticReport, outdir, stamp: Optional[dict] = None,
                      path_for=None) -> list[Path]:
    """diagnostics.json plus one CSV per panel; returns the written paths.

    ``path_for(name)`` may redirect each file (the CLI uses it for
    ``.partial`` staging).
    """
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    path_for = path_for or (lambda name: out / name)
    doc = report.to_dict()
    if stamp:
        doc = {**stamp, **doc}
    paths = [path_for("diagnostics.json")]
    paths[0].write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")

    pl = report.placebo.details
    paths.append(path_for("placebo_hrs.csv"))
    _write_csv(paths[-1], ["replicate", "hr"], [(i, repr(h)) for i, h in enumerate(pl.get("hrs", []))])

    paths.append(path_for("noise_grid.csv"))
    _write_csv(paths[-1], ["theta", "mean", "q05", "q95", "drift"],
               [(repr(r["theta"]), repr(r["mean"]), repr(r["q05"]), repr(r["q95"]), repr(r["drift"]))
                for r in report.random_confounder.details.get("grid", [])])

    paths.append(path_for("downsample.csv"))
    _write_csv(paths[-1], ["fraction", "status", "mean", "variance", "q05", "q95"],
               [(repr(r["fraction"]), r["status"], *(_num(r.get(k)) for k in ("mean", "variance", "q05", "q95")))
                for r in report.downsampling.details.get("rows", [])])

    paths.append(path_for("smd.csv"))
    _write_csv(paths[-1], ["covariate", "smd_unweighted", "smd_weighted"],
               [(c["name"], repr(c["smd_unweighted"]), repr(c["smd_weighted"]))
                for c in report.rebalance.details.get("covariates", [])])
    return paths
