import json

import numpy as np
import pytest

import trialemu.diagnostics as dg
from trialemu.causal import fit_logistic_propensity
from trialemu.synth import SynthConfig, generate_cohort

FAST = dg.DiagnosticConfig(replicates_placebo=30, replicates_noise=10, replicates_downsample=30)
ZERO = (0.0,) * 6


@pytest.fixture(scope="module")
def default_ds():
    return generate_cohort(SynthConfig(seed=0))[0]


def test_rebalancing_confounded(default_ds):
    res = dg.test_rebalancing(default_ds, cfg=FAST)
    assert res.passed
    assert res.details["max_abs_smd_unweighted"] > 0.1 > res.details["max_abs_smd_weighted"]


def test_rebalancing_randomized():
    ds, _ = generate_cohort(SynthConfig(n=4000, gamma=ZERO, seed=1))
    res = dg.test_rebalancing(ds, cfg=FAST)
    assert res.details["max_abs_smd_unweighted"] < 0.1 and res.details["max_abs_smd_weighted"] < 0.1


def test_overlap_random_assignment():
    res = dg.test_overlap(np.full(100, 0.5), 0.01)
    assert res.passed and res.details["fraction"] == 1.0


def test_overlap_strong_confounding_counts_exactly():
    ds, truth = generate_cohort(SynthConfig(n=1000, gamma=(4.0, -3.0, 2.0, 0, 3.0, 0), seed=2))
    ps = fit_logistic_propensity(ds.X, ds.W)
    res = dg.test_overlap(ps, 0.01)
    expect = np.mean((ps.scores >= 0.01) & (ps.scores <= 0.99))
    assert res.details["fraction"] == expect < 1.0
    assert res.details["n_outside"] == int(round((1 - expect) * 1000))


def test_overlap_percent_format():
    assert dg.format_percent(0.93) == "93%"
    res = dg.test_overlap(np.r_[np.full(93, 0.5), np.full(7, 0.001)], 0.01)
    assert res.details["display"] == "93%" and not res.passed


def test_placebo_null_cohort():
    ds, _ = generate_cohort(SynthConfig(n=1000, true_log_hr=0.0, seed=3))
    res = dg.test_placebo(ds, FAST)
    assert 0.9 <= res.details["mean"] <= 1.1
    assert res.passed


def test_placebo_strong_effect_outside_band():
    ds, _ = generate_cohort(SynthConfig(n=1000, true_log_hr=np.log(0.5), seed=3))
    res = dg.test_placebo(ds, FAST)
    assert res.details["original_outside_band"]
    assert res.details["original_hr"] < res.details["q05"]


def test_placebo_ci_coverage_on_null_data():
    ds, _ = generate_cohort(SynthConfig(n=600, gamma=ZERO, true_log_hr=0.0, seed=4))
    res = dg.test_placebo(ds, dg.DiagnosticConfig(replicates_placebo=100))
    assert res.details["ci_coverage_of_one"] >= 0.90


def test_placebo_zero_replicates():
    ds, _ = generate_cohort(SynthConfig(n=200, seed=3))
    with pytest.raises(dg.DiagnosticError):
        dg.test_placebo(ds, dg.DiagnosticConfig(replicates_placebo=0))


def test_replicate_streams_order_independent(default_ds):
    a = dg.test_placebo(default_ds, dg.DiagnosticConfig(replicates_placebo=6))
    b = dg.test_placebo(default_ds, dg.DiagnosticConfig(replicates_placebo=3))
    assert a.details["hrs"][:3] == b.details["hrs"]


def test_random_confounder_grid(default_ds):
    res = dg.test_random_confounder(default_ds, FAST)
    grid = res.details["grid"]
    assert len(grid) == 10
    assert grid[0]["theta"] == pytest.approx(0.1) and grid[-1]["theta"] == pytest.approx(5.0)
    assert grid[0]["drift"] < 0.01
    assert res.passed


def test_small_sample_skipped():
    ds, _ = generate_cohort(SynthConfig(n=30, seed=1))
    tiny = ds.subset([0, 1, 2])
    assert dg.test_random_confounder(tiny, FAST).status == "skipped"
    assert "small sample" in dg.test_placebo(tiny, FAST).reason


def test_downsampling(default_ds):
    res = dg.test_downsampling(default_ds, FAST)
    rows = res.details["rows"]
    assert rows[0]["fraction"] == 1.0 and rows[0]["mean"] == res.details["full_hr"]
    assert rows[0]["variance"] == 0.0
    assert [r["fraction"] for r in rows[1:]] == [0.95, 0.9, 0.75, 0.5, 0.25]
    var = {r["fraction"]: r["variance"] for r in rows}
    assert var[0.25] > var[0.95]
    assert res.details["spearman_fraction_variance"] <= 0
    assert res.passed


def test_downsampling_fraction_with_too_few_events():
    ds, _ = generate_cohort(SynthConfig(n=200, seed=1))
    keep = np.r_[np.where(ds.D == 0)[0], np.where((ds.D == 1) & (ds.W == 1))[0][:4],
                 np.where((ds.D == 1) & (ds.W == 0))[0][:40]]
    sub = ds.subset(np.sort(keep))
    res = dg.test_downsampling(sub, dg.DiagnosticConfig(replicates_downsample=5))
    skipped = [r for r in res.details["rows"] if r["status"] == "skipped"]
    assert [r["fraction"] for r in skipped] == [0.25]
    assert "events" in skipped[0]["reason"]


def test_summary_age_stats():
    ds, _ = generate_cohort(SynthConfig(n=10, seed=0))
    ds.W = np.array([1, 1] + [0] * 8)
    raw = {"age": [60, 70] + [50] * 8, "gender": ["female", "male"] + ["female"] * 8}
    s = dg.summarize_population(ds, raw=raw)["summary"]
    assert s["treatment"]["age"] == {"mean": 65.0, "median": 65.0, "min": 60.0, "max": 70.0}
    for arm in s.values():
        assert sum(v["percent"] for v in arm["gender"].values()) == pytest.approx(100, abs=0.1)


def test_summary_reference_comparison_and_render():
    ds, _ = generate_cohort(SynthConfig(n=20, seed=0))
    raw = {"gender": ["female" if i % 3 else "male" for i in range(20)]}
    ref = {"treatment": {"gender": {"female": 20.0, "male": 80.0}}}
    out = dg.summarize_population(ds, reference=ref, raw=raw)
    assert out["comparison"]["flags"]
    assert "comparison" not in dg.summarize_population(ds, reference={}, raw=raw)
    table = {"treatment": {"count": 439, "gender": {"female": {"count": 256, "percent": 58.31},
                                                    "male": {"count": 183, "percent": 41.69}}}}
    lines = dg.render_summary(table)
    assert "  gender female: 256 (58.31 %)" in lines


def test_report_complete_and_written(tmp_path, default_ds):
    report = dg.run_diagnostics(default_ds, dg.DiagnosticConfig(replicates_placebo=5, replicates_noise=2,
                                                                replicates_downsample=5))
    doc = report.to_dict()
    assert set(doc["tests"]) == set(dg.TEST_IDS)
    assert all(t["status"] in ("pass", "fail", "skipped") for t in doc["tests"].values())
    paths = dg.write_diagnostics(report, tmp_path)
    assert {p.name for p in paths} == {"diagnostics.json", "placebo_hrs.csv", "noise_grid.csv", "downsample.csv",
                                       "smd.csv"}
    assert json.loads((tmp_path / "diagnostics.json").read_text())["tests"]["overlap"]["status"] == "pass"


def test_small_cohort_report_only_rebalancing():
    ds, _ = generate_cohort(SynthConfig(n=30, seed=1))
    report = dg.run_diagnostics(ds, FAST)
    assert [t.status for t in report.tests[1:]] == ["skipped"] * 4
